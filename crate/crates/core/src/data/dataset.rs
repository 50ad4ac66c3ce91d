use std::path::PathBuf;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::age::AgeScaler;
use super::image::{augment_train, preprocess_eval, GrayImage};
use super::records::Record;
use super::synth::SynthCorpus;
use crate::error::{Error, Result};
use crate::model::{MetaFeatures, NUM_LABELS};
use crate::tensor::Tensor;
use crate::train::{Batch, Samples};

/// Where record images come from.
#[derive(Clone, Debug)]
pub enum ImageSource {
    Directory(PathBuf),
    Synthetic(Arc<SynthCorpus>),
}

impl ImageSource {
    pub fn load(&self, record: &Record) -> Result<GrayImage> {
        match self {
            ImageSource::Directory(dir) => GrayImage::load(&dir.join(&record.image)),
            ImageSource::Synthetic(c) => {
                let i = c
                    .index_of(&record.image)
                    .ok_or_else(|| Error::usage(format!("{} is not part of the synthetic corpus", record.image)))?;
                Ok(c.image(i))
            }
        }
    }
}

/// Records plus the preprocessing needed to turn them into model inputs.
#[derive(Clone, Debug)]
pub struct ImageDataset {
    pub records: Vec<Record>,
    pub source: ImageSource,
    /// Model input side length.
    pub size: usize,
    /// 1, or 3 to replicate the gray channel; 0 skips images entirely.
    pub channels: usize,
    pub scaler: AgeScaler,
}

fn example_seed(seed: u64, position: usize) -> u64 {
    seed ^ (position as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

impl ImageDataset {
    pub fn new(records: Vec<Record>, source: ImageSource, size: usize, channels: usize, scaler: AgeScaler) -> Result<Self> {
        if ![0, 1, 3].contains(&channels) {
            return Err(Error::Config(format!("channels must be 0, 1 or 3, got {channels}")));
        }
        scaler
            .range()
            .ok_or_else(|| Error::State("dataset needs an age scaler fitted on the training subset".into()))?;
        Ok(ImageDataset {
            records,
            source,
            size,
            channels,
            scaler,
        })
    }

    pub fn meta(&self, i: usize) -> Result<MetaFeatures> {
        let r = &self.records[i];
        MetaFeatures::new(self.scaler.scale(r.age_years)?, r.gender, r.view)
    }

    /// Model input for record `i`, `[channels * size * size]`.
    pub fn input(&self, i: usize, augment: Option<u64>) -> Result<Vec<f32>> {
        let img = self.source.load(&self.records[i])?;
        let plane = match augment {
            Some(seed) => augment_train(&img, self.size, &mut ChaCha8Rng::seed_from_u64(seed))?,
            None => preprocess_eval(&img, self.size)?,
        };
        Ok(match self.channels {
            3 => plane.repeat(3),
            _ => plane,
        })
    }
}

impl Samples for ImageDataset {
    fn len(&self) -> usize {
        self.records.len()
    }

    fn batch(&self, indices: &[usize], augment: Option<u64>) -> Result<Batch> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.records.len()) {
            return Err(Error::usage(format!("example {bad} out of range")));
        }
        let n = indices.len();
        let images = if self.channels == 0 {
            None
        } else {
            let planes: Vec<Vec<f32>> = indices
                .par_iter()
                .enumerate()
                .map(|(pos, &i)| self.input(i, augment.map(|s| example_seed(s, pos))))
                .collect::<Result<_>>()?;
            Some(Tensor::new(vec![n, self.channels, self.size, self.size], planes.concat())?)
        };
        let meta = indices.iter().map(|&i| self.meta(i)).collect::<Result<Vec<_>>>()?;
        let mut labels = Vec::with_capacity(n * NUM_LABELS);
        for &i in indices {
            labels.extend(self.records[i].labels.to_vec());
        }
        Ok(Batch {
            images,
            meta: MetaFeatures::batch_tensor(&meta)?,
            labels: Tensor::new(vec![n, NUM_LABELS], labels)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{synth_dataset, SynthSpec};

    fn dataset(channels: usize) -> ImageDataset {
        let c = synth_dataset(&SynthSpec::default(), 0).unwrap();
        let scaler = AgeScaler::fit(c.records.iter().map(|r| r.age_years)).unwrap();
        ImageDataset::new(c.records.clone(), ImageSource::Synthetic(Arc::new(c)), 32, channels, scaler).unwrap()
    }

    #[test]
    fn batch_shapes() {
        let d = dataset(3);
        let b = d.batch(&[0, 4, 2], Some(11)).unwrap();
        assert_eq!(b.images.as_ref().unwrap().shape(), &[3, 3, 32, 32]);
        assert_eq!(b.meta.shape(), &[3, 3]);
        assert_eq!(b.labels.shape(), &[3, 15]);
        let again = d.batch(&[0, 4, 2], Some(11)).unwrap();
        assert_eq!(b.images.unwrap().to_vec(), again.images.unwrap().to_vec());
        assert!(dataset(0).batch(&[1], None).unwrap().images.is_none());
    }

    #[test]
    fn augmented_values_in_unit_range() {
        let d = dataset(1);
        let b = d.batch(&(0..8).collect::<Vec<_>>(), Some(5)).unwrap();
        assert!(b.images.unwrap().to_vec().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn unfitted_scaler_rejected() {
        let c = synth_dataset(&SynthSpec::default(), 0).unwrap();
        let r = ImageDataset::new(c.records.clone(), ImageSource::Synthetic(Arc::new(c)), 32, 1, AgeScaler::default());
        assert!(matches!(r, Err(Error::State(_))));
    }
}
