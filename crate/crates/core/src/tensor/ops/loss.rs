use super::sigmoid_scalar;
use crate::error::{Error, Result};
use crate::tensor::{Backward, Tensor};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before taking
/// logarithms.
pub const PROB_CLAMP: f32 = 1e-7;

fn check_pair(op: &str, pred: &Tensor, target: &Tensor) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(format!(
            "{op}: prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    if pred.numel() == 0 {
        return Err(Error::shape(format!("{op}: empty input")));
    }
    Ok(())
}

struct ElementwiseLossBackward {
    name: &'static str,
    inputs: [Tensor; 2],
    /// d(loss)/d(pred) for a unit upstream gradient.
    local: Vec<f32>,
}

impl Backward for ElementwiseLossBackward {
    fn name(&self) -> &'static str {
        self.name
    }
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }
    fn backward(&self, g: &[f32]) -> Vec<Option<Vec<f32>>> {
        vec![Some(self.local.iter().map(|d| d * g[0]).collect()), None]
    }
}

fn finish(name: &'static str, pred: &Tensor, target: &Tensor, total: f64, local: Vec<f32>) -> Tensor {
    let count = pred.numel() as f64;
    Tensor::from_op(
        vec![1],
        vec![(total / count) as f32],
        Box::new(ElementwiseLossBackward {
            name,
            inputs: [pred.clone(), target.clone()],
            local,
        }),
    )
}

/// Mean binary cross entropy over every element, evaluated from logits.
///
/// Equal to [`bce_with_probs`] applied to `sigmoid(logits)` but without
/// saturation: `max(z, 0) - z*y + ln(1 + e^-|z|)`.
pub fn bce_with_logits(logits: &Tensor, targets: &Tensor) -> Result<Tensor> {
    check_pair("bce_with_logits", logits, targets)?;
    let (z, y) = (logits.data(), targets.data());
    let count = z.len() as f32;
    let mut total = 0.0f64;
    let mut local = Vec::with_capacity(z.len());
    for (&z, &y) in z.iter().zip(y.iter()) {
        let (z64, y64) = (z as f64, y as f64);
        total += z64.max(0.0) - z64 * y64 + (-z64.abs()).exp().ln_1p();
        local.push((sigmoid_scalar(z) - y) / count);
    }
    drop((z, y));
    Ok(finish("bce_with_logits", logits, targets, total, local))
}

/// Mean binary cross entropy over every element of a probability tensor.
pub fn bce_with_probs(probs: &Tensor, targets: &Tensor) -> Result<Tensor> {
    check_pair("bce_with_probs", probs, targets)?;
    let (f, y) = (probs.data(), targets.data());
    let count = f.len() as f32;
    let mut total = 0.0f64;
    let mut local = Vec::with_capacity(f.len());
    for (&f, &y) in f.iter().zip(y.iter()) {
        let fc = f.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        let (fc64, y64) = (fc as f64, y as f64);
        total += -y64 * fc64.ln() - (1.0 - y64) * (1.0 - fc64).ln();
        let inside = (PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&f);
        local.push(if inside {
            ((-y64 / fc64 + (1.0 - y64) / (1.0 - fc64)) / count as f64) as f32
        } else {
            0.0
        });
    }
    drop((f, y));
    Ok(finish("bce_with_probs", probs, targets, total, local))
}

/// Mean absolute error; the subgradient at zero residual is 0.
pub fn mean_abs_error(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    check_pair("mean_abs_error", pred, target)?;
    let (p, t) = (pred.data(), target.data());
    let count = p.len() as f32;
    let mut total = 0.0f64;
    let mut local = Vec::with_capacity(p.len());
    for (&p, &t) in p.iter().zip(t.iter()) {
        let r = p - t;
        total += (r as f64).abs();
        local.push(if r > 0.0 {
            1.0 / count
        } else if r < 0.0 {
            -1.0 / count
        } else {
            0.0
        });
    }
    drop((p, t));
    Ok(finish("mean_abs_error", pred, target, total, local))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ops::sigmoid;

    #[test]
    fn logits_and_probs_agree() {
        let z = Tensor::new(vec![2, 3], vec![-2.0, -0.5, 0.0, 0.3, 1.7, 4.0]).unwrap();
        let y = Tensor::new(vec![2, 3], vec![0.0, 1.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
        let a = bce_with_logits(&z, &y).unwrap().item().unwrap();
        let b = bce_with_probs(&sigmoid(&z), &y).unwrap().item().unwrap();
        assert!((a - b).abs() < 1e-6);
    }

    #[test]
    fn half_probabilities_give_ln2() {
        let f = Tensor::full(vec![1, 15], 0.5);
        let y = Tensor::zeros(vec![1, 15]);
        let l = bce_with_probs(&f, &y).unwrap().item().unwrap();
        assert!((l - std::f32::consts::LN_2).abs() < 1e-6);
    }

    #[test]
    fn absolute_error_value_and_gradient() {
        let p = Tensor::leaf(vec![3], vec![1.0, 5.0, 2.0], true).unwrap();
        let t = Tensor::new(vec![3], vec![2.0, 1.0, 2.0]).unwrap();
        let l = mean_abs_error(&p, &t).unwrap();
        assert!((l.item().unwrap() - 5.0 / 3.0).abs() < 1e-6);
        l.backward().unwrap();
        let g = p.grad().unwrap();
        assert_eq!(g, vec![-1.0 / 3.0, 1.0 / 3.0, 0.0]);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let p = Tensor::zeros(vec![2]);
        let t = Tensor::zeros(vec![3]);
        assert!(bce_with_logits(&p, &t).is_err());
    }
}
