use serde::{Deserialize, Serialize};

use crate::data::labels::{DISPLAY_NAMES, NUM_PATHOLOGIES};
use crate::error::{Error, Result};
use crate::model::NUM_LABELS;

/// Per-label AUCs of one fold; `None` where the fold lacks a class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub fold: usize,
    pub aucs: Vec<Option<f64>>,
}

/// Cross-fold summary of one label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelSummary {
    pub mean: Option<f64>,
    /// Sample standard deviation; `None` with fewer than two folds.
    pub std: Option<f64>,
    pub folds: usize,
    pub missing: usize,
}

fn summarize(values: &[f64], missing: usize) -> LabelSummary {
    let n = values.len();
    let mean = (n > 0).then(|| values.iter().sum::<f64>() / n as f64);
    let std = (n > 1).then(|| {
        let m = mean.expect("n > 1");
        (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    });
    LabelSummary {
        mean,
        std,
        folds: n,
        missing,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tag: String,
    /// One entry per label in canonical order; the last is "No Finding".
    pub labels: Vec<LabelSummary>,
    /// Mean over the 14 pathologies of the per-label means and of the
    /// per-label standard deviations.
    pub average: LabelSummary,
}

impl EvalReport {
    fn build(tag: &str, rows: &[EvalRow]) -> Result<EvalReport> {
        if let Some(bad) = rows.iter().find(|r| r.aucs.len() != NUM_LABELS) {
            return Err(Error::Validation(format!(
                "fold {} has {} label entries, expected {NUM_LABELS}",
                bad.fold,
                bad.aucs.len()
            )));
        }
        let labels: Vec<LabelSummary> = (0..NUM_LABELS)
            .map(|k| {
                let values: Vec<f64> = rows.iter().filter_map(|r| r.aucs[k]).collect();
                summarize(&values, rows.len() - values.len())
            })
            .collect();
        let means: Vec<f64> = labels[..NUM_PATHOLOGIES].iter().filter_map(|l| l.mean).collect();
        let stds: Vec<f64> = labels[..NUM_PATHOLOGIES].iter().filter_map(|l| l.std).collect();
        let average = LabelSummary {
            mean: (!means.is_empty()).then(|| means.iter().sum::<f64>() / means.len() as f64),
            std: (!stds.is_empty()).then(|| stds.iter().sum::<f64>() / stds.len() as f64),
            folds: rows.len(),
            missing: NUM_PATHOLOGIES - means.len(),
        };
        Ok(EvalReport {
            tag: tag.to_string(),
            labels,
            average,
        })
    }

    /// Report of a single evaluation (no spread), as for a fixed official
    /// split.
    pub fn single(tag: &str, row: &EvalRow) -> Result<EvalReport> {
        EvalReport::build(tag, std::slice::from_ref(row))
    }

    pub fn write_csv(&self, out: impl std::io::Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["label", "mean", "std", "folds", "missing"])?;
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        let rows = DISPLAY_NAMES[..NUM_PATHOLOGIES]
            .iter()
            .zip(&self.labels)
            .chain(std::iter::once((&"Average", &self.average)))
            .chain(std::iter::once((&DISPLAY_NAMES[NUM_PATHOLOGIES], &self.labels[NUM_PATHOLOGIES])));
        for (name, s) in rows {
            w.write_record([
                name.to_string(),
                fmt(s.mean),
                fmt(s.std),
                s.folds.to_string(),
                s.missing.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<report>", e))?;
        Ok(())
    }
}

/// Mean and sample standard deviation per label over at least two folds.
/// Missing AUCs are excluded and counted.
pub fn aggregate_folds(tag: &str, rows: &[EvalRow]) -> Result<EvalReport> {
    if rows.len() < 2 {
        return Err(Error::Validation(format!(
            "fold aggregation needs at least two folds, got {}",
            rows.len()
        )));
    }
    EvalReport::build(tag, rows)
}
