use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::aggregate::EvalRow;
use super::auc::roc_auc;
use super::spearman::spearman;
use crate::data::labels::LABELS;
use crate::error::{Error, Result};
use crate::model::NUM_LABELS;

pub const MAX_FOLDS: usize = 5;

/// Per-example scores of one model on one fold's test set, with aligned
/// truths.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreSet {
    pub model: String,
    pub fold: usize,
    pub images: Vec<String>,
    /// Row-major `[N, 15]`.
    pub scores: Vec<f32>,
    /// Row-major `[N, 15]` 0/1 values.
    pub truths: Vec<f32>,
}

impl ScoreSet {
    pub fn new(model: &str, fold: usize, images: Vec<String>, scores: Vec<f32>, truths: Vec<f32>) -> Result<ScoreSet> {
        if fold >= MAX_FOLDS {
            return Err(Error::Validation(format!("fold {fold} outside [0, {MAX_FOLDS})")));
        }
        let n = images.len();
        if scores.len() != n * NUM_LABELS || truths.len() != n * NUM_LABELS {
            return Err(Error::Alignment(format!(
                "{n} images need {} scores and truths, got {} and {}",
                n * NUM_LABELS,
                scores.len(),
                truths.len()
            )));
        }
        if let Some(i) = truths.iter().position(|&t| t != 0.0 && t != 1.0) {
            return Err(Error::Validation(format!("truth value at {i} is not binary")));
        }
        Ok(ScoreSet {
            model: model.to_string(),
            fold,
            images,
            scores,
            truths,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn score_column(&self, k: usize) -> Vec<f64> {
        (0..self.len()).map(|i| self.scores[i * NUM_LABELS + k] as f64).collect()
    }

    pub fn truth_column(&self, k: usize) -> Vec<bool> {
        (0..self.len()).map(|i| self.truths[i * NUM_LABELS + k] == 1.0).collect()
    }

    /// Per-label AUCs; labels with a single class in this fold are missing
    /// and reported in the returned warnings.
    pub fn evaluate(&self) -> Result<(EvalRow, Vec<String>)> {
        let mut aucs = Vec::with_capacity(NUM_LABELS);
        let mut warnings = Vec::new();
        for (k, name) in LABELS.iter().enumerate() {
            match roc_auc(&self.score_column(k), &self.truth_column(k)) {
                Ok(a) => aucs.push(Some(a)),
                Err(Error::UndefinedAuc(why)) => {
                    warnings.push(format!("{} fold {}: AUC of {name} undefined ({why})", self.model, self.fold));
                    aucs.push(None);
                }
                Err(e) => return Err(e),
            }
        }
        Ok((EvalRow { fold: self.fold, aucs }, warnings))
    }

    pub fn write_csv(&self, out: impl std::io::Write) -> Result<()> {
        write_score_csv(std::slice::from_ref(self), out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(f)
    }
}

fn header() -> Vec<String> {
    let mut h = vec!["image".to_string(), "fold".into(), "model".into()];
    h.extend(LABELS.iter().map(|l| l.to_string()));
    h.extend(LABELS.iter().map(|l| format!("true:{l}")));
    h
}

/// CSV with columns image, fold, model, 15 scores, 15 truths.
pub fn write_score_csv(sets: &[ScoreSet], out: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header())?;
    for s in sets {
        for i in 0..s.len() {
            let mut rec = vec![s.images[i].clone(), s.fold.to_string(), s.model.clone()];
            let row = i * NUM_LABELS..(i + 1) * NUM_LABELS;
            rec.extend(s.scores[row.clone()].iter().map(|v| format!("{v:e}")));
            rec.extend(s.truths[row].iter().map(|v| format!("{v}")));
            w.write_record(rec)?;
        }
    }
    w.flush().map_err(|e| Error::io("<scores>", e))?;
    Ok(())
}

/// Reads score sets grouped by (model, fold), in first-seen order.
pub fn read_score_csv(input: impl Read) -> Result<Vec<ScoreSet>> {
    let mut r = csv::Reader::from_reader(input);
    let h: Vec<String> = r.headers()?.iter().map(String::from).collect();
    if h != header() {
        return Err(Error::Format("score file header does not match the expected columns".into()));
    }
    let mut order: Vec<(String, usize)> = Vec::new();
    let mut groups: BTreeMap<(String, usize), (Vec<String>, Vec<f32>, Vec<f32>)> = BTreeMap::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let parse = |j: usize| -> Result<f32> {
            rec[j]
                .parse()
                .map_err(|_| Error::Format(format!("row {}: bad number `{}`", line + 2, &rec[j])))
        };
        let fold: usize = rec[1]
            .parse()
            .map_err(|_| Error::Format(format!("row {}: bad fold `{}`", line + 2, &rec[1])))?;
        let key = (rec[2].to_string(), fold);
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        let g = groups.entry(key).or_default();
        g.0.push(rec[0].to_string());
        for j in 0..NUM_LABELS {
            g.1.push(parse(3 + j)?);
            g.2.push(parse(3 + NUM_LABELS + j)?);
        }
    }
    order
        .into_iter()
        .map(|key| {
            let (images, scores, truths) = groups.remove(&key).expect("grouped");
            ScoreSet::new(&key.0, key.1, images, scores, truths)
        })
        .collect()
}

pub fn load_score_csv(path: &Path) -> Result<Vec<ScoreSet>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_score_csv(f)
}

/// How scores are pooled before ranking.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpearmanMode {
    /// One coefficient over all (example, label) scores.
    #[default]
    Flattened,
    /// One coefficient per label, then their mean.
    PerLabel,
}

fn pair_correlation(a: &ScoreSet, b: &ScoreSet, mode: SpearmanMode) -> Result<f64> {
    match mode {
        SpearmanMode::Flattened => {
            let x: Vec<f64> = a.scores.iter().map(|&v| v as f64).collect();
            let y: Vec<f64> = b.scores.iter().map(|&v| v as f64).collect();
            spearman(&x, &y)
        }
        SpearmanMode::PerLabel => {
            let mut sum = 0.0;
            for k in 0..NUM_LABELS {
                sum += spearman(&a.score_column(k), &b.score_column(k))?;
            }
            Ok(sum / NUM_LABELS as f64)
        }
    }
}

/// `K x K` matrix of rank correlations between models, averaged over folds.
/// `models[k]` holds model k's score sets, one per fold; every model must
/// cover the same folds with identical example lists.
pub fn spearman_matrix(models: &[Vec<ScoreSet>], mode: SpearmanMode) -> Result<Vec<Vec<f64>>> {
    let k = models.len();
    if k == 0 {
        return Err(Error::usage("no models to compare"));
    }
    let folds = |m: &[ScoreSet]| -> BTreeMap<usize, usize> { m.iter().enumerate().map(|(i, s)| (s.fold, i)).collect() };
    let reference = folds(&models[0]);
    if reference.is_empty() {
        return Err(Error::usage(format!("model {} has no score sets", 0)));
    }
    for (m, sets) in models.iter().enumerate() {
        let f = folds(sets);
        if f.len() != sets.len() {
            return Err(Error::Alignment(format!("model {m} lists a fold twice")));
        }
        if f.keys().ne(reference.keys()) {
            return Err(Error::Alignment(format!("model {m} covers different folds than model 0")));
        }
        for (fold, &i) in &f {
            if sets[i].images != models[0][reference[fold]].images {
                return Err(Error::Alignment(format!(
                    "model {m} ({}) scored different examples in fold {fold}",
                    sets[i].model
                )));
            }
        }
    }
    let mut matrix = vec![vec![0.0; k]; k];
    for (i, row) in matrix.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for a in 0..k {
        for b in a + 1..k {
            let fa = folds(&models[a]);
            let fb = folds(&models[b]);
            let mut sum = 0.0;
            for (fold, &ia) in &fa {
                sum += pair_correlation(&models[a][ia], &models[b][fb[fold]], mode)?;
            }
            let v = sum / fa.len() as f64;
            matrix[a][b] = v;
            matrix[b][a] = v;
        }
    }
    Ok(matrix)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(model: &str, fold: usize, n: usize, offset: f32) -> ScoreSet {
        let images = (0..n).map(|i| format!("{i}.png")).collect();
        let scores = (0..n * NUM_LABELS).map(|i| ((i * 37 % 101) as f32 / 101.0 + offset).min(1.0)).collect();
        let truths = (0..n * NUM_LABELS).map(|i| ((i * 13 + i / 15) % 3 == 0) as u8 as f32).collect();
        ScoreSet::new(model, fold, images, scores, truths).unwrap()
    }

    #[test]
    fn csv_round_trip() {
        let sets = vec![set("a", 0, 4, 0.0), set("a", 1, 3, 0.0), set("b", 0, 4, 0.01)];
        let mut buf = Vec::new();
        write_score_csv(&sets, &mut buf).unwrap();
        assert_eq!(read_score_csv(buf.as_slice()).unwrap(), sets);
    }

    #[test]
    fn identical_models_correlate_fully() {
        let a = vec![set("a", 0, 6, 0.0), set("a", 1, 6, 0.0)];
        let mut b = a.clone();
        for s in &mut b {
            s.model = "b".into();
        }
        let m = spearman_matrix(&[a, b], SpearmanMode::Flattened).unwrap();
        assert!((m[0][1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn misaligned_examples_rejected() {
        let a = vec![set("a", 0, 6, 0.0)];
        let mut b = vec![set("b", 0, 6, 0.0)];
        b[0].images[2] = "other.png".into();
        assert!(matches!(spearman_matrix(&[a, b], SpearmanMode::Flattened), Err(Error::Alignment(_))));
    }

    #[test]
    fn single_class_label_reported_missing() {
        let mut s = set("a", 0, 5, 0.0);
        for i in 0..5 {
            s.truths[i * NUM_LABELS + 3] = 0.0;
        }
        let (row, warnings) = s.evaluate().unwrap();
        assert_eq!(row.aucs[3], None);
        assert!(warnings.iter().any(|w| w.contains("Hernia")));
    }
}
