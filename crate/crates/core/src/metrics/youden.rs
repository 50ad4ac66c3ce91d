use crate::error::{Error, Result};

/// Threshold maximizing sensitivity + specificity - 1 (positive when
/// `score >= threshold`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

impl OperatingPoint {
    pub fn youden_index(&self) -> f64 {
        self.sensitivity + self.specificity - 1.0
    }
}

/// Confusion counts `(tp, fp, tn, fn)` at `threshold`.
pub fn confusion(scores: &[f64], truths: &[bool], threshold: f64) -> (usize, usize, usize, usize) {
    let mut c = (0, 0, 0, 0);
    for (&s, &t) in scores.iter().zip(truths) {
        match (s >= threshold, t) {
            (true, true) => c.0 += 1,
            (true, false) => c.1 += 1,
            (false, false) => c.2 += 1,
            (false, true) => c.3 += 1,
        }
    }
    c
}

/// Candidate thresholds are the distinct scores; ties in the index go to
/// the lowest threshold.
pub fn youden_operating_point(scores: &[f64], truths: &[bool]) -> Result<OperatingPoint> {
    if scores.len() != truths.len() {
        return Err(Error::Alignment(format!("{} scores for {} truths", scores.len(), truths.len())));
    }
    if let Some(i) = scores.iter().position(|v| v.is_nan()) {
        return Err(Error::Numeric {
            message: "NaN score".into(),
            index: Some(i),
        });
    }
    let positives = truths.iter().filter(|&&t| t).count();
    let negatives = truths.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedAuc(format!(
            "operating point needs both classes ({positives} positives, {negatives} negatives)"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    // Sweep from the highest threshold down; counts at `>= t` after
    // absorbing every example with score t.
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut best: Option<OperatingPoint> = None;
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if truths[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let p = OperatingPoint {
            threshold: t,
            sensitivity: tp as f64 / positives as f64,
            specificity: (negatives - fp) as f64 / negatives as f64,
        };
        if best.map_or(true, |b| p.youden_index() >= b.youden_index()) {
            best = Some(p);
        }
    }
    Ok(best.expect("non-empty input"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_case() {
        let p = youden_operating_point(&[0.9, 0.6, 0.55, 0.1], &[true, true, false, false]).unwrap();
        assert!(p.threshold > 0.55 && p.threshold <= 0.6);
        assert_eq!((p.sensitivity, p.specificity), (1.0, 1.0));
    }

    #[test]
    fn anti_correlated_goes_to_lowest_threshold() {
        let p = youden_operating_point(&[0.1, 0.2, 0.8, 0.9], &[true, true, false, false]).unwrap();
        assert_eq!(p.threshold, 0.1);
        assert_eq!((p.sensitivity, p.specificity), (1.0, 0.0));
    }

    #[test]
    fn counts_agree() {
        let s = [0.3, 0.3, 0.7, 0.1, 0.9, 0.5];
        let t = [true, false, true, false, true, false];
        let p = youden_operating_point(&s, &t).unwrap();
        let (tp, fp, tn, fn_) = confusion(&s, &t, p.threshold);
        assert_eq!(p.sensitivity, tp as f64 / (tp + fn_) as f64);
        assert_eq!(p.specificity, tn as f64 / (tn + fp) as f64);
    }
}
