//! Synthetic corpora with planted, known dependencies between pixels, labels
//! and patient attributes.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::image::GrayImage;
use super::labels::{Labels, NUM_PATHOLOGIES};
use super::records::{write_entry_csv, Record};
use crate::error::{Error, Result};

/// Bright filled disc drawn wherever its label is positive.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Disc {
    pub radius: usize,
    pub intensity: f32,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedLabel {
    pub label: usize,
    pub prevalence: f64,
    /// `None` leaves the label invisible in the pixels.
    pub motif: Option<Disc>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum PatientSizes {
    Fixed(usize),
    /// Heavy-tailed (Pareto, shape 1.2) counts capped at `max`.
    Skewed { max: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub patients: usize,
    pub images_per_patient: PatientSizes,
    pub image_size: usize,
    pub labels: Vec<PlantedLabel>,
    /// Label whose value is copied from the view bit (AP = positive).
    pub view_label: Option<usize>,
    /// Draw a bright band along the top edge of AP images.
    pub view_in_pixels: bool,
    /// Shift background brightness with patient age.
    pub age_in_pixels: bool,
    /// Standard deviation of per-pixel noise on the 8-bit scale.
    pub noise: f32,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            patients: 32,
            images_per_patient: PatientSizes::Fixed(1),
            image_size: 64,
            labels: vec![PlantedLabel {
                label: 0,
                prevalence: 0.5,
                motif: Some(Disc {
                    radius: 8,
                    intensity: 240.0,
                }),
            }],
            view_label: None,
            view_in_pixels: false,
            age_in_pixels: false,
            noise: 8.0,
        }
    }
}

/// Bounding box of a planted motif, in source-image pixels (inclusive start,
/// exclusive end).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub label: usize,
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BBox {
    pub fn contains(&self, x: f32, y: f32) -> bool {
        x >= self.x0 as f32 && x < self.x1 as f32 && y >= self.y0 as f32 && y < self.y1 as f32
    }
}

pub const AGE_RANGE: (u32, u32) = (20, 90);

#[derive(Clone, Debug)]
pub struct SynthCorpus {
    pub spec: SynthSpec,
    pub seed: u64,
    pub records: Vec<Record>,
    /// Planted motif locations per record.
    pub boxes: Vec<Vec<BBox>>,
    by_name: HashMap<String, usize>,
}

fn patient_size(sizes: PatientSizes, rng: &mut ChaCha8Rng) -> usize {
    match sizes {
        PatientSizes::Fixed(n) => n.max(1),
        PatientSizes::Skewed { max } => {
            let u: f64 = rng.gen_range(f64::EPSILON..1.0);
            (u.powf(-1.0 / 1.2).floor() as usize).clamp(1, max.max(1))
        }
    }
}

pub fn synth_dataset(spec: &SynthSpec, seed: u64) -> Result<SynthCorpus> {
    for p in &spec.labels {
        if p.label >= NUM_PATHOLOGIES || Some(p.label) == spec.view_label {
            return Err(Error::Config(format!("planted label {} is not a free pathology index", p.label)));
        }
        if let Some(d) = p.motif {
            if 2 * d.radius + 4 > spec.image_size {
                return Err(Error::Config(format!("motif radius {} too large for the image", d.radius)));
            }
        }
    }
    if matches!(spec.view_label, Some(l) if l >= NUM_PATHOLOGIES) {
        return Err(Error::Config("view label must be a pathology index".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    let mut boxes = Vec::new();
    for p in 0..spec.patients {
        let n = patient_size(spec.images_per_patient, &mut rng);
        let age = rng.gen_range(AGE_RANGE.0..=AGE_RANGE.1) as f32;
        let gender = rng.gen_range(0..=1u8);
        for k in 0..n {
            let view = rng.gen_range(0..=1u8);
            let mut bits = 0u16;
            let mut planted = Vec::new();
            for pl in &spec.labels {
                if rng.gen_bool(pl.prevalence.clamp(0.0, 1.0)) {
                    bits |= 1 << pl.label;
                    if let Some(d) = pl.motif {
                        let lo = d.radius + 1;
                        let hi = spec.image_size - d.radius - 1;
                        let cx = rng.gen_range(lo..hi);
                        let cy = rng.gen_range(lo..hi);
                        planted.push(BBox {
                            label: pl.label,
                            x0: cx - d.radius,
                            y0: cy - d.radius,
                            x1: cx + d.radius + 1,
                            y1: cy + d.radius + 1,
                        });
                    }
                }
            }
            if let Some(l) = spec.view_label {
                if view == 1 {
                    bits |= 1 << l;
                }
            }
            records.push(Record {
                image: format!("{:08}_{k:03}.png", p + 1),
                labels: Labels::from_pathologies(bits)?,
                patient_id: (p + 1).to_string(),
                age_years: age,
                gender,
                view,
                follow_up: k as u32,
                age_clamped: false,
            });
            boxes.push(planted);
        }
    }
    let by_name = records.iter().enumerate().map(|(i, r)| (r.image.clone(), i)).collect();
    Ok(SynthCorpus {
        spec: spec.clone(),
        seed,
        records,
        boxes,
        by_name,
    })
}

impl SynthCorpus {
    pub fn index_of(&self, image: &str) -> Option<usize> {
        self.by_name.get(image).copied()
    }

    /// Renders record `i`; deterministic in (seed, i).
    pub fn image(&self, i: usize) -> GrayImage {
        let s = self.spec.image_size;
        let r = &self.records[i];
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5EED_0000_0000_0000);
        rng.set_stream(i as u64 + 1);
        let mut base = 90.0f32;
        if self.spec.age_in_pixels {
            let (lo, hi) = AGE_RANGE;
            base = 40.0 + 100.0 * (r.age_years - lo as f32) / (hi - lo) as f32;
        }
        let tilt: f32 = rng.gen_range(-10.0..10.0);
        let normal = rand_distr::Normal::new(0.0f32, self.spec.noise.max(0.0)).expect("finite noise");
        let mut data = Vec::with_capacity(s * s);
        for _ in 0..s {
            for x in 0..s {
                data.push(base + tilt * (x as f32 / s as f32 - 0.5) + rng.sample(normal));
            }
        }
        if self.spec.view_in_pixels && r.view == 1 {
            for v in &mut data[..s * (s / 8).max(1)] {
                *v = 250.0;
            }
        }
        for b in &self.boxes[i] {
            let disc = self
                .spec
                .labels
                .iter()
                .find(|p| p.label == b.label)
                .and_then(|p| p.motif)
                .expect("box implies motif");
            let c = ((b.x0 + b.x1 - 1) as f32 / 2.0, (b.y0 + b.y1 - 1) as f32 / 2.0);
            let r2 = (disc.radius as f32 + 0.5).powi(2);
            for y in b.y0..b.y1 {
                for x in b.x0..b.x1 {
                    if (x as f32 - c.0).powi(2) + (y as f32 - c.1).powi(2) <= r2 {
                        data[y * s + x] = disc.intensity;
                    }
                }
            }
        }
        for v in &mut data {
            *v = v.round().clamp(0.0, 255.0);
        }
        GrayImage {
            width: s,
            height: s,
            data,
        }
    }

    /// Writes `images/*.png`, `Data_Entry.csv` and `boxes.csv` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let images = dir.join("images");
        std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
        for (i, r) in self.records.iter().enumerate() {
            self.image(i).save(&images.join(&r.image))?;
        }
        write_entry_csv(&dir.join("Data_Entry.csv"), &self.records)?;
        let path = dir.join("boxes.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["Image Index", "Label", "x0", "y0", "x1", "y1"])?;
        for (r, bs) in self.records.iter().zip(&self.boxes) {
            for b in bs {
                w.write_record([
                    r.image.clone(),
                    super::labels::LABELS[b.label].to_string(),
                    b.x0.to_string(),
                    b.y0.to_string(),
                    b.x1.to_string(),
                    b.y1.to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_consistent() {
        let spec = SynthSpec::default();
        let a = synth_dataset(&spec, 3).unwrap();
        let b = synth_dataset(&spec, 3).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.image(5), b.image(5));
        for (r, bs) in a.records.iter().zip(&a.boxes) {
            assert_eq!(r.labels.get(0), !bs.is_empty());
            assert_eq!(r.labels.is_no_finding(), !r.labels.get(0));
        }
    }

    #[test]
    fn disc_is_inside_its_box() {
        let c = synth_dataset(&SynthSpec { noise: 0.0, ..SynthSpec::default() }, 1).unwrap();
        let i = c.boxes.iter().position(|b| !b.is_empty()).unwrap();
        let img = c.image(i);
        let b = c.boxes[i][0];
        for y in 0..img.height {
            for x in 0..img.width {
                if img.get(x, y) == 240.0 {
                    assert!(b.contains(x as f32, y as f32));
                }
            }
        }
        let cx = (b.x0 + b.x1) / 2;
        assert_eq!(img.get(cx, (b.y0 + b.y1) / 2), 240.0);
    }

    #[test]
    fn view_label_copies_view_bit() {
        let spec = SynthSpec {
            patients: 50,
            labels: vec![],
            view_label: Some(3),
            ..SynthSpec::default()
        };
        let c = synth_dataset(&spec, 2).unwrap();
        assert!(c.records.iter().all(|r| r.labels.get(3) == (r.view == 1)));
        assert!(c.records.iter().any(|r| r.view == 1) && c.records.iter().any(|r| r.view == 0));
    }

    #[test]
    fn skewed_sizes_vary() {
        let spec = SynthSpec {
            patients: 300,
            images_per_patient: PatientSizes::Skewed { max: 40 },
            ..SynthSpec::default()
        };
        let c = synth_dataset(&spec, 2).unwrap();
        let groups = super::super::records::images_by_patient(&c.records);
        let max = groups.iter().map(|g| g.1.len()).max().unwrap();
        assert!(max > 5 && groups.iter().any(|g| g.1.len() == 1));
    }
}
