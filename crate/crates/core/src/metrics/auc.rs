use super::rank::average_ranks;
use crate::error::{Error, Result};

/// Area under the ROC curve from the Mann-Whitney rank statistic; tied
/// scores count one half.
pub fn roc_auc(scores: &[f64], truths: &[bool]) -> Result<f64> {
    if scores.len() != truths.len() {
        return Err(Error::Alignment(format!(
            "{} scores for {} truths",
            scores.len(),
            truths.len()
        )));
    }
    let positives = truths.iter().filter(|&&t| t).count();
    let negatives = truths.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedAuc(format!(
            "{positives} positives and {negatives} negatives"
        )));
    }
    let ranks = average_ranks(scores)?;
    let rank_sum: f64 = ranks.iter().zip(truths).filter(|(_, &t)| t).map(|(r, _)| r).sum();
    let p = positives as f64;
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * negatives as f64))
}

/// Convenience for f32 model outputs and 0/1 label columns.
pub fn roc_auc_f32(scores: &[f32], labels: &[f32]) -> Result<f64> {
    let s: Vec<f64> = scores.iter().map(|&v| v as f64).collect();
    let t: Vec<bool> = labels.iter().map(|&v| v > 0.5).collect();
    roc_auc(&s, &t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_cases() {
        assert_eq!(roc_auc(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.5; 6], &[true, false, true, false, false, true]).unwrap(), 0.5);
        assert_eq!(roc_auc(&[0.9, 0.8, 0.7, 0.1], &[true, false, true, false]).unwrap(), 0.75);
    }

    #[test]
    fn single_class_is_undefined() {
        assert!(matches!(roc_auc(&[0.1, 0.2], &[true, true]), Err(Error::UndefinedAuc(_))));
    }
}
