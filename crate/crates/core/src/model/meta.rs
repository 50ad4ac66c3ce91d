use serde::{Deserialize, Serialize};

use super::config::META_DIM;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Non-image inputs of one study: scaled age, gender and view position.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaFeatures {
    /// Age mapped affinely onto `[0, 1]`.
    pub age_scaled: f32,
    /// 1 = male, 0 = female.
    pub gender: u8,
    /// 1 = AP, 0 = PA.
    pub view_position: u8,
}

impl MetaFeatures {
    pub fn new(age_scaled: f32, gender: u8, view_position: u8) -> Result<Self> {
        let m = MetaFeatures {
            age_scaled,
            gender,
            view_position,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.age_scaled) {
            return Err(Error::Validation(format!(
                "scaled age {} outside [0, 1]",
                self.age_scaled
            )));
        }
        if self.gender > 1 || self.view_position > 1 {
            return Err(Error::Validation(format!(
                "gender {} / view position {} must be 0 or 1",
                self.gender, self.view_position
            )));
        }
        Ok(())
    }

    pub fn to_array(&self) -> [f32; META_DIM] {
        [self.age_scaled, self.gender as f32, self.view_position as f32]
    }

    /// Stacks a batch into an `[N, 3]` tensor.
    pub fn batch_tensor(batch: &[MetaFeatures]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(batch.len() * META_DIM);
        for m in batch {
            m.validate()?;
            data.extend_from_slice(&m.to_array());
        }
        Tensor::new(vec![batch.len(), META_DIM], data)
    }
}
