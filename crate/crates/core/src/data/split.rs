use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::records::{images_by_patient, Record};
use crate::error::{Error, Result};

pub const RESAMPLES: usize = 5;
pub const FRACTIONS: [f64; 3] = [0.7, 0.1, 0.2];
/// Allowed deviation of each subset's image share, in percentage points.
pub const TOLERANCE_PP: f64 = 1.5;
const ATTEMPTS: u64 = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    Train,
    Val,
    Test,
}

impl Subset {
    pub const ALL: [Subset; 3] = [Subset::Train, Subset::Val, Subset::Test];

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Subset::Train => "train",
            Subset::Val => "val",
            Subset::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Resample {
    pub index: usize,
    /// Patient id to subset.
    pub patients: BTreeMap<String, Subset>,
    /// Images per subset (train, val, test).
    pub images: [usize; 3],
    /// Patients per subset (train, val, test).
    pub patient_counts: [usize; 3],
}

impl Resample {
    fn from_assignment(index: usize, patients: BTreeMap<String, Subset>, records: &[Record]) -> Result<Resample> {
        let mut images = [0usize; 3];
        for r in records {
            let s = patients.get(&r.patient_id).ok_or_else(|| {
                Error::Validation(format!("patient `{}` has no subset in re-sample {index}", r.patient_id))
            })?;
            images[s.index()] += 1;
        }
        let mut patient_counts = [0usize; 3];
        for s in patients.values() {
            patient_counts[s.index()] += 1;
        }
        Ok(Resample {
            index,
            patients,
            images,
            patient_counts,
        })
    }

    /// Record indices of `subset`, in record order.
    pub fn indices(&self, records: &[Record], subset: Subset) -> Vec<usize> {
        records
            .iter()
            .enumerate()
            .filter(|(_, r)| self.patients.get(&r.patient_id) == Some(&subset))
            .map(|(i, _)| i)
            .collect()
    }

    /// Image share of each subset in percent.
    pub fn percentages(&self) -> [f64; 3] {
        let total: usize = self.images.iter().sum();
        self.images.map(|c| 100.0 * c as f64 / total as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub seed: u64,
    pub fractions: [f64; 3],
    pub resamples: Vec<Resample>,
}

impl SplitPlan {
    pub fn resample(&self, index: usize) -> Result<&Resample> {
        self.resamples.get(index).ok_or_else(|| {
            Error::Config(format!(
                "re-sample {index} does not exist (plan has {})",
                self.resamples.len()
            ))
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<SplitPlan> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn quotas(total: usize) -> [usize; 3] {
    let train = (FRACTIONS[0] * total as f64).round() as usize;
    let val = (FRACTIONS[1] * total as f64).round() as usize;
    [train, val, total - train - val]
}

/// Assigns whole patients, largest first, each to a subset drawn with
/// probability proportional to its remaining image deficit.
fn assign(groups: &[(String, Vec<usize>)], rng: &mut ChaCha8Rng) -> BTreeMap<String, Subset> {
    let total: usize = groups.iter().map(|g| g.1.len()).sum();
    let mut deficit = quotas(total).map(|q| q as i64);
    let mut order: Vec<usize> = (0..groups.len()).collect();
    order.shuffle(rng);
    order.sort_by_key(|&g| std::cmp::Reverse(groups[g].1.len()));
    let mut out = BTreeMap::new();
    for g in order {
        let size = groups[g].1.len() as i64;
        let open: Vec<usize> = (0..3).filter(|&s| deficit[s] > 0).collect();
        let pick = if open.is_empty() {
            (0..3).max_by_key(|&s| (deficit[s], std::cmp::Reverse(s))).unwrap_or(0)
        } else {
            let weight: i64 = open.iter().map(|&s| deficit[s]).sum();
            let mut r = rng.gen_range(0..weight);
            let mut chosen = open[open.len() - 1];
            for &s in &open {
                if r < deficit[s] {
                    chosen = s;
                    break;
                }
                r -= deficit[s];
            }
            chosen
        };
        deficit[pick] -= size;
        out.insert(groups[g].0.clone(), Subset::ALL[pick]);
    }
    out
}

fn within_tolerance(r: &Resample) -> bool {
    r.percentages()
        .iter()
        .zip(FRACTIONS)
        .all(|(p, f)| (p - 100.0 * f).abs() <= TOLERANCE_PP)
}

/// Five independent patient-disjoint 70/10/20 partitions targeting image
/// counts. Deterministic in `seed`.
pub fn make_splits(records: &[Record], seed: u64) -> Result<SplitPlan> {
    let groups = images_by_patient(records);
    if groups.len() < 3 {
        return Err(Error::Validation(format!(
            "splitting needs at least 3 patients, found {}",
            groups.len()
        )));
    }
    let mut resamples = Vec::with_capacity(RESAMPLES);
    for index in 0..RESAMPLES {
        let mut found = None;
        for attempt in 0..ATTEMPTS {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(index as u64 * ATTEMPTS + attempt);
            let r = Resample::from_assignment(index, assign(&groups, &mut rng), records)?;
            if within_tolerance(&r) {
                found = Some(r);
                break;
            }
        }
        let r = found.ok_or_else(|| {
            Error::Quota(format!(
                "no patient-disjoint assignment within ±{TOLERANCE_PP} points of 70/10/20 after {ATTEMPTS} attempts; \
                 patient sizes are too uneven for this tolerance"
            ))
        })?;
        resamples.push(r);
    }
    Ok(SplitPlan {
        seed,
        fractions: FRACTIONS,
        resamples,
    })
}

fn read_list(path: &Path) -> Result<HashSet<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

/// Single re-sample from externally provided image lists (train+val and
/// test). Validation patients are drawn from the train+val list until they
/// hold one eighth of its images.
pub fn official_split(records: &[Record], train_val_list: &Path, test_list: &Path, seed: u64) -> Result<SplitPlan> {
    let train_val = read_list(train_val_list)?;
    let test = read_list(test_list)?;
    let mut side: BTreeMap<String, bool> = BTreeMap::new();
    for r in records {
        let is_test = match (train_val.contains(&r.image), test.contains(&r.image)) {
            (true, false) => false,
            (false, true) => true,
            (true, true) => return Err(Error::Validation(format!("{} is listed in both lists", r.image))),
            (false, false) => return Err(Error::Validation(format!("{} is in neither list", r.image))),
        };
        if let Some(prev) = side.insert(r.patient_id.clone(), is_test) {
            if prev != is_test {
                return Err(Error::Validation(format!(
                    "patient `{}` appears on both sides of the official split",
                    r.patient_id
                )));
            }
        }
    }
    let groups: Vec<(String, Vec<usize>)> = images_by_patient(records)
        .into_iter()
        .filter(|(p, _)| !side[p])
        .collect();
    let pool: usize = groups.iter().map(|g| g.1.len()).sum();
    let target = (pool as f64 / 8.0).round() as usize;
    let mut order: Vec<usize> = (0..groups.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut patients = BTreeMap::new();
    let mut val = 0usize;
    for g in order {
        let subset = if val < target {
            val += groups[g].1.len();
            Subset::Val
        } else {
            Subset::Train
        };
        patients.insert(groups[g].0.clone(), subset);
    }
    for (p, &is_test) in &side {
        if is_test {
            patients.insert(p.clone(), Subset::Test);
        }
    }
    let r = Resample::from_assignment(0, patients, records)?;
    let total = records.len() as f64;
    Ok(SplitPlan {
        seed,
        fractions: r.images.map(|c| c as f64 / total),
        resamples: vec![r],
    })
}
