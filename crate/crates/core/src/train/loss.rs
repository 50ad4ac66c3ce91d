use crate::error::{Error, Result};
use crate::tensor::ops::PROB_CLAMP;

/// Class-averaged binary cross entropy of one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub scalar: f64,
    /// Mean over the batch for every label.
    pub per_label: Vec<f64>,
}

pub(crate) fn check_binary(values: &[f32]) -> Result<()> {
    if let Some(i) = values.iter().position(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Validation(format!(
            "target {} at position {i} is not binary",
            values[i]
        )));
    }
    Ok(())
}

/// `(1/M) sum_m -y log f - (1-y) log(1-f)`, averaged over the batch. `y` and
/// `f` are row-major `[N, M]`; probabilities are clamped to
/// `[1e-7, 1 - 1e-7]`.
pub fn bce_loss(y: &[f32], f: &[f32], num_labels: usize) -> Result<LossValue> {
    if num_labels == 0 || y.len() != f.len() || y.is_empty() || y.len() % num_labels != 0 {
        return Err(Error::shape(format!(
            "bce_loss: {} targets and {} predictions for {num_labels} labels",
            y.len(),
            f.len()
        )));
    }
    check_binary(y)?;
    if let Some(i) = f.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric {
            message: "non-finite prediction".into(),
            index: Some(i),
        });
    }
    let rows = y.len() / num_labels;
    let mut per_label = vec![0.0f64; num_labels];
    for (i, (&t, &p)) in y.iter().zip(f).enumerate() {
        let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP) as f64;
        let t = t as f64;
        per_label[i % num_labels] += -t * p.ln() - (1.0 - t) * (1.0 - p).ln();
    }
    for v in &mut per_label {
        *v /= rows as f64;
    }
    let scalar = per_label.iter().sum::<f64>() / num_labels as f64;
    Ok(LossValue { scalar, per_label })
}
