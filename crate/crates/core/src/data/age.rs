use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Affine map of ages onto `[0, 1]`, fitted on the training portion only.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AgeScaler {
    range: Option<(f32, f32)>,
}

impl AgeScaler {
    pub fn fit(ages: impl IntoIterator<Item = f32>) -> Result<AgeScaler> {
        let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
        for a in ages {
            if !a.is_finite() {
                return Err(Error::Validation(format!("age {a} is not finite")));
            }
            lo = lo.min(a);
            hi = hi.max(a);
        }
        if !(lo < hi) {
            return Err(Error::Validation(
                "age scaling needs at least two distinct training ages".into(),
            ));
        }
        Ok(AgeScaler { range: Some((lo, hi)) })
    }

    pub fn from_range(min_age: f32, max_age: f32) -> Result<AgeScaler> {
        AgeScaler::fit([min_age, max_age])
    }

    pub fn range(&self) -> Option<(f32, f32)> {
        self.range
    }

    fn fitted(&self) -> Result<(f32, f32)> {
        self.range
            .ok_or_else(|| Error::State("age scaler used before fitting on a training subset".into()))
    }

    pub fn scale(&self, age: f32) -> Result<f32> {
        let (lo, hi) = self.fitted()?;
        Ok(((age - lo) / (hi - lo)).clamp(0.0, 1.0))
    }

    /// Converts a distance in scaled units back to years.
    pub fn span_years(&self, scaled: f64) -> Result<f64> {
        let (lo, hi) = self.fitted()?;
        Ok(scaled * (hi - lo) as f64)
    }

    pub fn unscale(&self, scaled: f32) -> Result<f32> {
        let (lo, hi) = self.fitted()?;
        Ok(lo + scaled * (hi - lo))
    }
}
