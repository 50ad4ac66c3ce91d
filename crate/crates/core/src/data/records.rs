use std::collections::{BTreeSet, HashMap};
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::labels::{Labels, NUM_PATHOLOGIES};
use crate::error::{Error, Result};

/// Ages above this are treated as corpus artifacts and clamped.
pub const MAX_AGE: f32 = 120.0;

pub const COLUMNS: [&str; 7] = [
    "Image Index",
    "Finding Labels",
    "Follow-up #",
    "Patient ID",
    "Patient Age",
    "Patient Gender",
    "View Position",
];

/// One image of the corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    /// File name relative to the image directory.
    pub image: String,
    pub labels: Labels,
    pub patient_id: String,
    pub age_years: f32,
    /// 1 = male, 0 = female.
    pub gender: u8,
    /// 1 = AP, 0 = PA.
    pub view: u8,
    pub follow_up: u32,
    /// Set when the recorded age exceeded [`MAX_AGE`].
    pub age_clamped: bool,
}

fn parse_age(raw: &str) -> Option<f32> {
    let digits: String = raw.trim().chars().take_while(|c| c.is_ascii_digit() || *c == '.').collect();
    let age: f32 = digits.parse().ok()?;
    match raw.trim()[digits.len()..].trim() {
        "" | "Y" | "y" => Some(age),
        "M" | "m" => Some(age / 12.0),
        "D" | "d" => Some(age / 365.0),
        _ => None,
    }
}

pub fn parse_entry_csv(path: &Path) -> Result<Vec<Record>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_entry_csv(file).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Reads the seven metadata columns; any further columns are ignored.
pub fn read_entry_csv(reader: impl Read) -> Result<Vec<Record>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut col = [0usize; 7];
    for (slot, name) in col.iter_mut().zip(COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Format(format!("missing column `{name}`")))?;
    }
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = row + 2;
        let field = |i: usize| -> Result<&str> {
            rec.get(col[i])
                .map(str::trim)
                .ok_or_else(|| Error::Format(format!("row {line}: missing `{}`", COLUMNS[i])))
        };
        let labels = Labels::encode(field(1)?).map_err(|e| Error::Validation(format!("row {line}: {e}")))?;
        let follow_up = field(2)?
            .parse()
            .map_err(|_| Error::Format(format!("row {line}: bad follow-up `{}`", field(2).unwrap_or(""))))?;
        let raw_age = field(4)?;
        let age = parse_age(raw_age).ok_or_else(|| Error::Format(format!("row {line}: bad age `{raw_age}`")))?;
        let gender = match field(5)? {
            "M" | "m" => 1,
            "F" | "f" => 0,
            other => return Err(Error::Format(format!("row {line}: bad gender `{other}`"))),
        };
        let view = match field(6)? {
            "AP" | "ap" => 1,
            "PA" | "pa" => 0,
            other => return Err(Error::Format(format!("row {line}: bad view position `{other}`"))),
        };
        out.push(Record {
            image: field(0)?.to_string(),
            labels,
            patient_id: field(3)?.to_string(),
            age_years: age.min(MAX_AGE),
            gender,
            view,
            follow_up,
            age_clamped: age > MAX_AGE,
        });
    }
    Ok(out)
}

pub fn write_entry_csv(path: &Path, records: &[Record]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(COLUMNS)?;
    for r in records {
        w.write_record([
            r.image.clone(),
            r.labels.decode(),
            r.follow_up.to_string(),
            r.patient_id.clone(),
            format!("{}", r.age_years),
            if r.gender == 1 { "M" } else { "F" }.to_string(),
            if r.view == 1 { "AP" } else { "PA" }.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Corpus-level counts mirroring the label and meta-information overviews.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DatasetStats {
    pub images: usize,
    pub patients: usize,
    /// Positive count per pathology in canonical order.
    pub positives: [usize; NUM_PATHOLOGIES],
    pub no_finding: usize,
    pub female: usize,
    pub male: usize,
    pub pa: usize,
    pub ap: usize,
    pub age_mean: f64,
    /// Sample standard deviation.
    pub age_std: f64,
    pub ages_clamped: usize,
}

impl DatasetStats {
    pub fn compute(records: &[Record]) -> DatasetStats {
        let mut positives = [0usize; NUM_PATHOLOGIES];
        let mut patients = BTreeSet::new();
        let (mut male, mut ap, mut no_finding, mut clamped) = (0, 0, 0, 0);
        let (mut sum, mut sum_sq) = (0.0f64, 0.0f64);
        for r in records {
            for (k, p) in positives.iter_mut().enumerate() {
                *p += r.labels.get(k) as usize;
            }
            no_finding += r.labels.is_no_finding() as usize;
            patients.insert(r.patient_id.as_str());
            male += r.gender as usize;
            ap += r.view as usize;
            clamped += r.age_clamped as usize;
            sum += r.age_years as f64;
        }
        let n = records.len();
        let mean = if n > 0 { sum / n as f64 } else { f64::NAN };
        for r in records {
            sum_sq += (r.age_years as f64 - mean).powi(2);
        }
        DatasetStats {
            images: n,
            patients: patients.len(),
            positives,
            no_finding,
            female: n - male,
            male,
            pa: n - ap,
            ap,
            age_mean: mean,
            age_std: if n > 1 { (sum_sq / (n - 1) as f64).sqrt() } else { f64::NAN },
            ages_clamped: clamped,
        }
    }

    pub fn prevalence(&self, label: usize) -> f64 {
        100.0 * self.positives[label] as f64 / self.images as f64
    }

    /// Female to male image ratio.
    pub fn gender_ratio(&self) -> f64 {
        self.female as f64 / self.male as f64
    }

    /// PA to AP image ratio.
    pub fn view_ratio(&self) -> f64 {
        self.pa as f64 / self.ap as f64
    }
}

/// Images per patient, in first-seen order.
pub fn images_by_patient(records: &[Record]) -> Vec<(String, Vec<usize>)> {
    let mut order: Vec<(String, Vec<usize>)> = Vec::new();
    let mut slot: HashMap<&str, usize> = HashMap::new();
    for (i, r) in records.iter().enumerate() {
        match slot.get(r.patient_id.as_str()) {
            Some(&s) => order[s].1.push(i),
            None => {
                slot.insert(&r.patient_id, order.len());
                order.push((r.patient_id.clone(), vec![i]));
            }
        }
    }
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
Image Index,Finding Labels,Follow-up #,Patient ID,Patient Age,Patient Gender,View Position,OriginalImage[Width,Height]
00000001_000.png,Cardiomegaly,0,1,58,M,PA,2682,2749
00000001_001.png,Cardiomegaly|Emphysema,1,1,058Y,M,PA,2894,2729
00000002_000.png,No Finding,0,2,414,F,AP,2500,2048
";

    #[test]
    fn parses_published_layout() {
        let r = read_entry_csv(SAMPLE.as_bytes()).unwrap();
        assert_eq!(r.len(), 3);
        assert_eq!(r[1].labels.bits(), 0b11);
        assert_eq!(r[1].age_years, 58.0);
        assert_eq!((r[0].gender, r[0].view), (1, 0));
        assert_eq!((r[2].gender, r[2].view), (0, 1));
        assert_eq!(r[2].labels, Labels::NO_FINDING);
        assert!(r[2].age_clamped);
        assert_eq!(r[2].age_years, MAX_AGE);
        let s = DatasetStats::compute(&r);
        assert_eq!((s.images, s.patients, s.positives[0], s.positives[1]), (3, 2, 2, 1));
        assert_eq!((s.female, s.male, s.pa, s.ap), (1, 2, 2, 1));
    }

    #[test]
    fn unknown_token_names_row() {
        let bad = "Image Index,Finding Labels,Follow-up #,Patient ID,Patient Age,Patient Gender,View Position\n\
                   a.png,Edema,0,1,30,F,PA\nb.png,Edema|Gout,0,1,30,F,PA\n";
        let err = read_entry_csv(bad.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("row 3") && err.contains("Gout"), "{err}");
    }

    #[test]
    fn missing_column_is_format_error() {
        let bad = "Image Index,Finding Labels\na.png,Edema\n";
        assert!(matches!(read_entry_csv(bad.as_bytes()), Err(Error::Format(_))));
    }

    #[test]
    fn write_read_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        let mut r = read_entry_csv(SAMPLE.as_bytes()).unwrap();
        r.truncate(2);
        write_entry_csv(&p, &r).unwrap();
        assert_eq!(parse_entry_csv(&p).unwrap(), r);
    }
}
