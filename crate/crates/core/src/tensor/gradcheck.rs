//! Central finite-difference verification of backward rules.

use super::{no_grad, Tensor};
use crate::error::{Error, Result};

/// Deviations are relative to `max(|analytic|, |numeric|, DEVIATION_FLOOR)`,
/// so components below unit magnitude are compared absolutely. Single
/// precision finite differences cannot resolve tiny components any better.
pub const DEVIATION_FLOOR: f64 = 1.0;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_deviation: f64,
    pub worst_index: usize,
    pub tolerance: f64,
    pub passed: bool,
    pub analytic: Vec<f32>,
    pub numeric: Vec<f64>,
}

fn eval_scalar<F>(f: &F, x: &Tensor) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let y = f(x)?;
    if y.numel() != 1 {
        return Err(Error::usage(format!(
            "grad_check function must be scalar-valued, got shape {:?}",
            y.shape()
        )));
    }
    Ok(y.item()? as f64)
}

/// Compares the analytic gradient of scalar `f` at `at` with central
/// differences of width `2 * step`.
pub fn grad_check<F>(f: F, at: &Tensor, step: f32, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let x = at.detach_with_grad(true);
    let y = f(&x)?;
    let value = y.item()?;
    if !value.is_finite() {
        return Err(Error::Numeric {
            message: format!("function value {value} is not finite"),
            index: None,
        });
    }
    y.backward()?;
    let analytic = x.grad().unwrap_or_else(|| vec![0.0; x.numel()]);
    if let Some(i) = analytic.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric {
            message: format!("analytic gradient is not finite at index {i}"),
            index: Some(i),
        });
    }

    let base = at.to_vec();
    let mut numeric = Vec::with_capacity(base.len());
    let mut max_deviation = 0.0f64;
    let mut worst_index = 0;
    no_grad(|| -> Result<()> {
        for i in 0..base.len() {
            let mut probe = base.clone();
            probe[i] = base[i] + step;
            let plus = eval_scalar(&f, &Tensor::new(at.shape().to_vec(), probe.clone())?)?;
            probe[i] = base[i] - step;
            let minus = eval_scalar(&f, &Tensor::new(at.shape().to_vec(), probe)?)?;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Numeric {
                    message: format!("non-finite function value when perturbing index {i}"),
                    index: Some(i),
                });
            }
            // Use the perturbation actually representable in f32.
            let width = (base[i] + step) as f64 - (base[i] - step) as f64;
            let n = (plus - minus) / width;
            let a = analytic[i] as f64;
            let dev = (a - n).abs() / a.abs().max(n.abs()).max(DEVIATION_FLOOR);
            if dev > max_deviation {
                max_deviation = dev;
                worst_index = i;
            }
            numeric.push(n);
        }
        Ok(())
    })?;

    Ok(GradCheckReport {
        max_deviation,
        worst_index,
        tolerance,
        passed: max_deviation <= tolerance,
        analytic,
        numeric,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ops;

    #[test]
    fn linear_function_has_no_deviation() {
        let w = Tensor::new(vec![4], vec![0.5, -1.0, 2.0, 0.25]).unwrap();
        let x = Tensor::new(vec![4], vec![1.0, 2.0, -3.0, 0.0]).unwrap();
        let report = grad_check(|t| Ok(ops::sum(&ops::mul(t, &w)?)), &x, 1e-3, 1e-3).unwrap();
        assert!(report.passed);
        assert!(report.max_deviation <= 1e-3, "{}", report.max_deviation);
    }

    #[test]
    fn non_finite_value_reports_index() {
        let x = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let err = grad_check(
            |t| {
                let v = t.to_vec();
                let bad = if v[1] > 2.0 { f32::NAN } else { v[0] + v[1] };
                Ok(ops::scale(&ops::sum(t), bad / (v[0] + v[1])))
            },
            &x,
            1e-3,
            1e-3,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Numeric { index: Some(1), .. }));
    }
}
