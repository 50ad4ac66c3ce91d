use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Backward, Tensor};

pub const BN_MOMENTUM: f32 = 0.1;
pub const BN_EPSILON: f32 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    /// Normalize with batch statistics and update the running estimates.
    Train,
    /// Normalize with the running estimates.
    Eval,
}

/// Running statistics of one batch-norm layer. The tensors are plain leaves
/// owned by the model's buffer store.
#[derive(Clone, Debug)]
pub struct BatchNormStats {
    pub mean: Tensor,
    pub var: Tensor,
    /// Number of batches folded into the estimates, as a one-element tensor.
    pub tracked: Tensor,
}

impl BatchNormStats {
    pub fn new(channels: usize) -> Self {
        BatchNormStats {
            mean: Tensor::zeros(vec![channels]),
            var: Tensor::full(vec![channels], 1.0),
            tracked: Tensor::zeros(vec![1]),
        }
    }

    pub fn is_initialized(&self) -> bool {
        self.tracked.data()[0] > 0.0
    }
}

struct BatchNormBackward {
    inputs: [Tensor; 3],
    mode: NormMode,
    mean: Vec<f64>,
    inv_std: Vec<f64>,
    channels: usize,
    area: usize,
}

impl BatchNormBackward {
    fn channel_sums(&self, g: &[f32], x: &[f32]) -> Vec<(f64, f64)> {
        let (c_total, area) = (self.channels, self.area);
        let n = x.len() / (c_total * area);
        (0..c_total)
            .into_par_iter()
            .map(|c| {
                let (mean, inv) = (self.mean[c], self.inv_std[c]);
                let mut sum_g = 0.0f64;
                let mut sum_gx = 0.0f64;
                for b in 0..n {
                    let off = (b * c_total + c) * area;
                    for i in off..off + area {
                        let xhat = (x[i] as f64 - mean) * inv;
                        sum_g += g[i] as f64;
                        sum_gx += g[i] as f64 * xhat;
                    }
                }
                (sum_g, sum_gx)
            })
            .collect()
    }
}

impl Backward for BatchNormBackward {
    fn name(&self) -> &'static str {
        "batchnorm2d"
    }
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }
    fn backward(&self, g: &[f32]) -> Vec<Option<Vec<f32>>> {
        let [x, gamma, beta] = &self.inputs;
        let xd = x.data();
        let sums = self.channel_sums(g, &xd);
        let gd = gamma.data();
        let (c_total, area) = (self.channels, self.area);
        let count = (xd.len() / c_total) as f64;
        let gx = x.requires_grad().then(|| {
            let mut dx = vec![0.0f32; xd.len()];
            dx.par_chunks_mut(area).enumerate().for_each(|(plane, dst)| {
                let c = plane % c_total;
                let (mean, inv) = (self.mean[c], self.inv_std[c]);
                let src = &xd[plane * area..][..area];
                let gsrc = &g[plane * area..][..area];
                match self.mode {
                    NormMode::Train => {
                        let (sum_g, sum_gx) = sums[c];
                        let k = gd[c] as f64 * inv;
                        let (mg, mgx) = (sum_g / count, sum_gx / count);
                        for i in 0..area {
                            let xhat = (src[i] as f64 - mean) * inv;
                            dst[i] = (k * (gsrc[i] as f64 - mg - xhat * mgx)) as f32;
                        }
                    }
                    NormMode::Eval => {
                        let k = (gd[c] as f64 * inv) as f32;
                        for i in 0..area {
                            dst[i] = k * gsrc[i];
                        }
                    }
                }
            });
            dx
        });
        let ggamma = gamma
            .requires_grad()
            .then(|| sums.iter().map(|s| s.1 as f32).collect());
        let gbeta = beta
            .requires_grad()
            .then(|| sums.iter().map(|s| s.0 as f32).collect());
        vec![gx, ggamma, gbeta]
    }
}

/// Per-channel batch normalization of `input[N, C, H, W]`.
pub fn batchnorm2d(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    stats: &BatchNormStats,
    mode: NormMode,
) -> Result<Tensor> {
    let s = input.shape();
    if s.len() != 4 {
        return Err(Error::shape(format!("batchnorm2d expects 4-d input, got {s:?}")));
    }
    let (n, c_total, area) = (s[0], s[1], s[2] * s[3]);
    for (label, t) in [("gamma", gamma), ("beta", beta), ("running mean", &stats.mean), ("running var", &stats.var)] {
        if t.shape() != [c_total] {
            return Err(Error::shape(format!(
                "batchnorm2d: {label} {:?} for {c_total} channels",
                t.shape()
            )));
        }
    }
    let count = n * area;
    if count == 0 {
        return Err(Error::shape("batchnorm2d needs at least one value per channel"));
    }
    let x = input.data();
    let (mean, inv_std): (Vec<f64>, Vec<f64>) = match mode {
        NormMode::Train => {
            let moments: Vec<(f64, f64)> = (0..c_total)
                .into_par_iter()
                .map(|c| {
                    let mut sum = 0.0f64;
                    for b in 0..n {
                        let off = (b * c_total + c) * area;
                        sum += x[off..off + area].iter().map(|&v| v as f64).sum::<f64>();
                    }
                    let mean = sum / count as f64;
                    let mut sq = 0.0f64;
                    for b in 0..n {
                        let off = (b * c_total + c) * area;
                        sq += x[off..off + area]
                            .iter()
                            .map(|&v| (v as f64 - mean).powi(2))
                            .sum::<f64>();
                    }
                    (mean, sq / count as f64)
                })
                .collect();
            {
                let mut rm = stats.mean.data_mut();
                let mut rv = stats.var.data_mut();
                let unbias = if count > 1 {
                    count as f64 / (count - 1) as f64
                } else {
                    1.0
                };
                for (c, &(m, v)) in moments.iter().enumerate() {
                    rm[c] = (1.0 - BN_MOMENTUM) * rm[c] + BN_MOMENTUM * m as f32;
                    rv[c] = (1.0 - BN_MOMENTUM) * rv[c] + BN_MOMENTUM * (v * unbias) as f32;
                }
                stats.tracked.data_mut()[0] += 1.0;
            }
            moments
                .iter()
                .map(|&(m, v)| (m, 1.0 / (v + BN_EPSILON as f64).sqrt()))
                .unzip()
        }
        NormMode::Eval => {
            if !stats.is_initialized() {
                return Err(Error::State(
                    "batchnorm2d in eval mode before any running statistics were recorded".into(),
                ));
            }
            let rm = stats.mean.data().iter().map(|&m| m as f64).collect();
            let inv = stats
                .var
                .data()
                .iter()
                .map(|&v| 1.0 / (v as f64 + BN_EPSILON as f64).sqrt())
                .collect();
            (rm, inv)
        }
    };
    let (gd, bd) = (gamma.data(), beta.data());
    let mut out = vec![0.0f32; x.len()];
    out.par_chunks_mut(area).enumerate().for_each(|(plane, dst)| {
        let c = plane % c_total;
        let src = &x[plane * area..][..area];
        let (m, inv, gm, bt) = (mean[c], inv_std[c], gd[c] as f64, bd[c] as f64);
        for (d, &v) in dst.iter_mut().zip(src) {
            *d = (gm * ((v as f64 - m) * inv) + bt) as f32;
        }
    });
    drop((x, gd, bd));
    Ok(Tensor::from_op(
        s.to_vec(),
        out,
        Box::new(BatchNormBackward {
            inputs: [input.clone(), gamma.clone(), beta.clone()],
            mode,
            mean,
            inv_std,
            channels: c_total,
            area,
        }),
    ))
}
