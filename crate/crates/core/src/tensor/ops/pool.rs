use rayon::prelude::*;

use super::conv::{output_extent, Padding};
use crate::error::{Error, Result};
use crate::tensor::{Backward, Tensor};

struct MaxPoolBackward {
    inputs: [Tensor; 1],
    /// Flat input index of the selected element, per output element.
    argmax: Vec<u32>,
}

impl Backward for MaxPoolBackward {
    fn name(&self) -> &'static str {
        "maxpool2d"
    }
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }
    fn backward(&self, g: &[f32]) -> Vec<Option<Vec<f32>>> {
        let mut dx = vec![0.0; self.inputs[0].numel()];
        for (gv, &idx) in g.iter().zip(&self.argmax) {
            dx[idx as usize] += gv;
        }
        vec![Some(dx)]
    }
}

/// Max pooling with a square window. Padded cells never win; ties go to the
/// first maximum in row-major window order.
pub fn maxpool2d(input: &Tensor, kernel: usize, stride: usize, padding: Padding) -> Result<Tensor> {
    let s = input.shape();
    if s.len() != 4 {
        return Err(Error::shape(format!("maxpool2d expects 4-d input, got {s:?}")));
    }
    if kernel == 0 {
        return Err(Error::shape("maxpool2d kernel must be at least 1"));
    }
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let pad = padding.amount(kernel);
    if pad >= kernel {
        return Err(Error::shape(format!(
            "maxpool2d padding {pad} must be smaller than kernel {kernel}"
        )));
    }
    let oh = output_extent(h, kernel, stride, pad)?;
    let ow = output_extent(w, kernel, stride, pad)?;
    let x = input.data();
    let mut out = vec![0.0f32; n * c * oh * ow];
    let mut argmax = vec![0u32; n * c * oh * ow];
    out.par_chunks_mut(oh * ow)
        .zip(argmax.par_chunks_mut(oh * ow))
        .enumerate()
        .for_each(|(plane, (dst, arg))| {
            let base = plane * h * w;
            let src = &x[base..base + h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_idx = usize::MAX;
                    for ky in 0..kernel {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kernel {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let i = iy as usize * w + ix as usize;
                            if best_idx == usize::MAX || src[i] > best {
                                best = src[i];
                                best_idx = i;
                            }
                        }
                    }
                    dst[oy * ow + ox] = best;
                    arg[oy * ow + ox] = (base + best_idx) as u32;
                }
            }
        });
    drop(x);
    Ok(Tensor::from_op(
        vec![n, c, oh, ow],
        out,
        Box::new(MaxPoolBackward {
            inputs: [input.clone()],
            argmax,
        }),
    ))
}

struct AvgPoolBackward {
    inputs: [Tensor; 1],
    area: usize,
}

impl Backward for AvgPoolBackward {
    fn name(&self) -> &'static str {
        "global_avgpool"
    }
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }
    fn backward(&self, g: &[f32]) -> Vec<Option<Vec<f32>>> {
        let inv = 1.0 / self.area as f32;
        let mut dx = Vec::with_capacity(self.inputs[0].numel());
        for gv in g {
            dx.extend(std::iter::repeat(gv * inv).take(self.area));
        }
        vec![Some(dx)]
    }
}

/// Spatial mean: `[N, C, H, W] -> [N, C]`.
pub fn global_avgpool(input: &Tensor) -> Result<Tensor> {
    let s = input.shape();
    if s.len() != 4 || s[2] == 0 || s[3] == 0 {
        return Err(Error::shape(format!(
            "global_avgpool expects [N, C, H>=1, W>=1], got {s:?}"
        )));
    }
    let area = s[2] * s[3];
    let out: Vec<f32> = input
        .data()
        .chunks(area)
        .map(|plane| (plane.iter().map(|&v| v as f64).sum::<f64>() / area as f64) as f32)
        .collect();
    Ok(Tensor::from_op(
        vec![s[0], s[1]],
        out,
        Box::new(AvgPoolBackward {
            inputs: [input.clone()],
            area,
        }),
    ))
}
