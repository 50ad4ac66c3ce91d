//! Brute-force reference implementations of the evaluation metrics.

/// Fraction of (positive, negative) pairs ordered correctly, ties counting
/// one half.
pub fn pairwise_auc(scores: &[f64], truths: &[bool]) -> Option<f64> {
    let (mut wins, mut pairs) = (0.0f64, 0u64);
    for (i, &ti) in truths.iter().enumerate() {
        if !ti {
            continue;
        }
        for (j, &tj) in truths.iter().enumerate() {
            if tj {
                continue;
            }
            pairs += 1;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    (pairs > 0).then(|| wins / pairs as f64)
}

/// 1-based ranks by counting, tied values sharing their mean position.
pub fn counting_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&x| {
            let below = v.iter().filter(|&&y| y < x).count() as f64;
            let equal = v.iter().filter(|&&y| y == x).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

pub fn rank_correlation(a: &[f64], b: &[f64]) -> f64 {
    pearson(&counting_ranks(a), &counting_ranks(b))
}

/// `1 - 6 sum d^2 / (n (n^2 - 1))`, exact only without ties.
pub fn squared_rank_difference_formula(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (counting_ranks(a), counting_ranks(b));
    let n = a.len() as f64;
    let d2: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - y).powi(2)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}

/// Best (threshold, sensitivity, specificity) over every distinct score,
/// positives at `score >= threshold`; ties in the index go to the lowest
/// threshold.
pub fn exhaustive_youden(scores: &[f64], truths: &[bool]) -> (f64, f64, f64) {
    let mut candidates: Vec<f64> = scores.to_vec();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let pos = truths.iter().filter(|&&t| t).count() as f64;
    let neg = truths.len() as f64 - pos;
    let mut best = (f64::NAN, 0.0, 0.0);
    let mut best_j = f64::NEG_INFINITY;
    for &t in &candidates {
        let tp = scores.iter().zip(truths).filter(|(&s, &y)| y && s >= t).count() as f64;
        let tn = scores.iter().zip(truths).filter(|(&s, &y)| !y && s < t).count() as f64;
        let (sens, spec) = (tp / pos, tn / neg);
        if sens + spec - 1.0 > best_j {
            best_j = sens + spec - 1.0;
            best = (t, sens, spec);
        }
    }
    best
}

/// Welford's running mean and sample standard deviation.
pub fn streaming_moments(values: impl IntoIterator<Item = f64>) -> (f64, Option<f64>) {
    let (mut n, mut mean, mut m2) = (0.0f64, 0.0f64, 0.0f64);
    for v in values {
        n += 1.0;
        let d = v - mean;
        mean += d / n;
        m2 += d * (v - mean);
    }
    (mean, (n > 1.0).then(|| (m2 / (n - 1.0)).sqrt()))
}
