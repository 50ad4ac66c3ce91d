use crate::error::{Error, Result};

/// Mean and sample standard deviation of absolute errors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AbsoluteError {
    pub mean: f64,
    pub std: f64,
}

pub fn mae(predictions: &[f64], truths: &[f64]) -> Result<AbsoluteError> {
    if predictions.len() != truths.len() {
        return Err(Error::Alignment(format!(
            "{} predictions for {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Validation("mean absolute error of an empty set".into()));
    }
    let errors: Vec<f64> = predictions.iter().zip(truths).map(|(p, t)| (p - t).abs()).collect();
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let std = if errors.len() > 1 {
        (errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(AbsoluteError { mean, std })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offsets() {
        let t = [1.0, 5.0, -2.0];
        assert_eq!(mae(&t, &t).unwrap().mean, 0.0);
        let shifted: Vec<f64> = t.iter().map(|v| v - 2.5).collect();
        let m = mae(&shifted, &t).unwrap();
        assert_eq!((m.mean, m.std), (2.5, 0.0));
        assert!(mae(&[1.0], &[]).is_err());
    }
}
