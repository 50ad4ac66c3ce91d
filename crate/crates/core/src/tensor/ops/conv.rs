use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::gemm::{gemm, MatRef};
use crate::tensor::{Backward, Tensor};

/// Zero padding applied to each spatial border.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// `kernel / 2` per side; keeps stride-1 outputs the same size for odd
    /// kernels.
    Same,
    Explicit(usize),
}

impl Padding {
    pub fn amount(self, kernel: usize) -> usize {
        match self {
            Padding::Same => kernel / 2,
            Padding::Explicit(p) => p,
        }
    }
}

pub(crate) fn output_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::shape("stride must be at least 1"));
    }
    if input + 2 * pad < kernel {
        return Err(Error::shape(format!(
            "kernel {kernel} does not fit input {input} with padding {pad}"
        )));
    }
    Ok((input + 2 * pad - kernel) / stride + 1)
}

#[derive(Clone, Copy)]
struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad_h: usize,
    pad_w: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn patch(&self) -> usize {
        self.c * self.kh * self.kw
    }
    fn positions(&self) -> usize {
        self.oh * self.ow
    }
    fn columns(&self) -> usize {
        self.n * self.positions()
    }
}

/// Unfolds receptive fields into a `[C*kh*kw, N*oh*ow]` matrix.
fn im2col(x: &[f32], g: &Geometry) -> Vec<f32> {
    let ncols = g.columns();
    let mut cols = vec![0.0f32; g.patch() * ncols];
    cols.par_chunks_mut(ncols).enumerate().for_each(|(row, dst)| {
        let c = row / (g.kh * g.kw);
        let ky = (row / g.kw) % g.kh;
        let kx = row % g.kw;
        for n in 0..g.n {
            let plane = &x[(n * g.c + c) * g.h * g.w..][..g.h * g.w];
            let out = &mut dst[n * g.positions()..][..g.positions()];
            for oy in 0..g.oh {
                let iy = (oy * g.stride + ky) as isize - g.pad_h as isize;
                if iy < 0 || iy >= g.h as isize {
                    continue;
                }
                let src_row = &plane[iy as usize * g.w..][..g.w];
                let out_row = &mut out[oy * g.ow..][..g.ow];
                for (ox, o) in out_row.iter_mut().enumerate() {
                    let ix = (ox * g.stride + kx) as isize - g.pad_w as isize;
                    if ix >= 0 && ix < g.w as isize {
                        *o = src_row[ix as usize];
                    }
                }
            }
        }
    });
    cols
}

/// Folds column gradients back onto the input layout.
fn col2im(cols: &[f32], g: &Geometry) -> Vec<f32> {
    let ncols = g.columns();
    let mut dx = vec![0.0f32; g.n * g.c * g.h * g.w];
    dx.par_chunks_mut(g.h * g.w).enumerate().for_each(|(nc, plane)| {
        let n = nc / g.c;
        let c = nc % g.c;
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &cols[row * ncols + n * g.positions()..][..g.positions()];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad_h as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * g.w..][..g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad_w as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst_row[ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    });
    dx
}

struct Conv2dBackward {
    inputs: Vec<Tensor>,
    geom: Geometry,
}

impl Backward for Conv2dBackward {
    fn name(&self) -> &'static str {
        "conv2d"
    }
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }
    fn backward(&self, grad: &[f32]) -> Vec<Option<Vec<f32>>> {
        let g = &self.geom;
        let (x, w) = (&self.inputs[0], &self.inputs[1]);
        let p = g.positions();
        let ncols = g.columns();
        // [N, K, P] -> [K, N*P]
        let mut dmat = vec![0.0f32; g.k * ncols];
        dmat.par_chunks_mut(ncols).enumerate().for_each(|(k, row)| {
            for n in 0..g.n {
                row[n * p..(n + 1) * p].copy_from_slice(&grad[(n * g.k + k) * p..][..p]);
            }
        });
        let gw = w.requires_grad().then(|| {
            let cols = im2col(&x.data(), g);
            let mut gw = vec![0.0; g.k * g.patch()];
            gemm(
                g.k,
                ncols,
                g.patch(),
                MatRef::row_major(&dmat, ncols),
                MatRef::transposed(&cols, ncols),
                &mut gw,
                false,
            );
            gw
        });
        let gx = x.requires_grad().then(|| {
            let wd = w.data();
            let mut dcols = vec![0.0; g.patch() * ncols];
            gemm(
                g.patch(),
                g.k,
                ncols,
                MatRef::transposed(&wd, g.patch()),
                MatRef::row_major(&dmat, ncols),
                &mut dcols,
                false,
            );
            col2im(&dcols, g)
        });
        let mut out = vec![gx, gw];
        if let Some(b) = self.inputs.get(2) {
            let gb = b.requires_grad().then(|| {
                dmat.chunks(ncols)
                    .map(|row| row.iter().map(|&v| v as f64).sum::<f64>() as f32)
                    .collect()
            });
            out.push(gb);
        }
        out
    }
}

/// 2-D cross-correlation of `input[N, C, H, W]` with `weight[K, C, kh, kw]`.
pub fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor> {
    let (xs, ws) = (input.shape(), weight.shape());
    if xs.len() != 4 || ws.len() != 4 {
        return Err(Error::shape(format!(
            "conv2d expects 4-d input and weight, got {xs:?} and {ws:?}"
        )));
    }
    if xs[1] != ws[1] {
        return Err(Error::shape(format!(
            "conv2d: input has {} channels, weight expects {}",
            xs[1], ws[1]
        )));
    }
    if let Some(b) = bias {
        if b.shape() != [ws[0]] {
            return Err(Error::shape(format!(
                "conv2d: bias {:?} for {} output channels",
                b.shape(),
                ws[0]
            )));
        }
    }
    let (pad_h, pad_w) = (padding.amount(ws[2]), padding.amount(ws[3]));
    let geom = Geometry {
        n: xs[0],
        c: xs[1],
        h: xs[2],
        w: xs[3],
        k: ws[0],
        kh: ws[2],
        kw: ws[3],
        stride,
        pad_h,
        pad_w,
        oh: output_extent(xs[2], ws[2], stride, pad_h)?,
        ow: output_extent(xs[3], ws[3], stride, pad_w)?,
    };
    let g = &geom;
    let p = g.positions();
    let ncols = g.columns();
    let mut mat = vec![0.0f32; g.k * ncols];
    {
        let cols = im2col(&input.data(), g);
        let wd = weight.data();
        gemm(
            g.k,
            g.patch(),
            ncols,
            MatRef::row_major(&wd, g.patch()),
            MatRef::row_major(&cols, ncols),
            &mut mat,
            false,
        );
    }
    let bias_values = bias.map(|b| b.to_vec());
    let mut out = vec![0.0f32; g.n * g.k * p];
    out.par_chunks_mut(p).enumerate().for_each(|(nk, dst)| {
        let n = nk / g.k;
        let k = nk % g.k;
        dst.copy_from_slice(&mat[k * ncols + n * p..][..p]);
        if let Some(b) = &bias_values {
            dst.iter_mut().for_each(|v| *v += b[k]);
        }
    });
    let mut inputs = vec![input.clone(), weight.clone()];
    if let Some(b) = bias {
        inputs.push(b.clone());
    }
    Ok(Tensor::from_op(
        vec![g.n, g.k, g.oh, g.ow],
        out,
        Box::new(Conv2dBackward { inputs, geom }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop convolution used as the reference.
    fn direct(x: &[f32], xs: [usize; 4], w: &[f32], ws: [usize; 4], stride: usize, pad: usize) -> Vec<f32> {
        let [n, c, h, wd] = xs;
        let [k, _, kh, kw] = ws;
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (wd + 2 * pad - kw) / stride + 1;
        let mut out = vec![0.0; n * k * oh * ow];
        for b in 0..n {
            for o in 0..k {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0f64;
                        for ci in 0..c {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    acc += x[((b * c + ci) * h + iy as usize) * wd + ix as usize] as f64
                                        * w[((o * c + ci) * kh + ky) * kw + kx] as f64;
                                }
                            }
                        }
                        out[((b * k + o) * oh + oy) * ow + ox] = acc as f32;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn stem_output_size() {
        let x = Tensor::zeros(vec![1, 1, 224, 224]);
        let w = Tensor::zeros(vec![64, 1, 7, 7]);
        let y = conv2d(&x, &w, None, 2, Padding::Same).unwrap();
        assert_eq!(y.shape(), &[1, 64, 112, 112]);
    }

    #[test]
    fn unit_pointwise_kernel_is_identity() {
        let data: Vec<f32> = (0..2 * 5 * 5).map(|i| i as f32 * 0.3 - 2.0).collect();
        let x = Tensor::new(vec![2, 1, 5, 5], data.clone()).unwrap();
        let w = Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        assert_eq!(conv2d(&x, &w, None, 1, Padding::Same).unwrap().to_vec(), data);
    }

    #[test]
    fn ones_kernel_on_ramp_is_neighbourhood_sum() {
        let ramp: Vec<f32> = (0..16).map(|v| v as f32).collect();
        let x = Tensor::new(vec![1, 1, 4, 4], ramp.clone()).unwrap();
        let w = Tensor::new(vec![1, 1, 3, 3], vec![1.0; 9]).unwrap();
        let y = conv2d(&x, &w, None, 1, Padding::Same).unwrap().to_vec();
        let want = direct(&ramp, [1, 1, 4, 4], &[1.0; 9], [1, 1, 3, 3], 1, 1);
        assert_eq!(y, want);
        // corner: 0 + 1 + 4 + 5
        assert_eq!(y[0], 10.0);
        // interior (1,1): sum of 0..=2, 4..=6, 8..=10
        assert_eq!(y[5], 45.0);
    }

    #[test]
    fn strided_multichannel_matches_direct() {
        let xs = [2, 3, 9, 7];
        let ws = [4, 3, 3, 3];
        let x: Vec<f32> = (0..xs.iter().product::<usize>()).map(|i| ((i * 37 % 23) as f32 - 11.0) / 7.0).collect();
        let w: Vec<f32> = (0..ws.iter().product::<usize>()).map(|i| ((i * 13 % 19) as f32 - 9.0) / 10.0).collect();
        let xt = Tensor::new(xs.to_vec(), x.clone()).unwrap();
        let wt = Tensor::new(ws.to_vec(), w.clone()).unwrap();
        let got = conv2d(&xt, &wt, None, 2, Padding::Same).unwrap();
        let want = direct(&x, xs, &w, ws, 2, 1);
        assert_eq!(got.shape(), &[2, 4, 5, 4]);
        for (a, b) in got.to_vec().iter().zip(&want) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let x = Tensor::zeros(vec![1, 3, 8, 8]);
        let w = Tensor::zeros(vec![4, 1, 3, 3]);
        assert!(matches!(conv2d(&x, &w, None, 1, Padding::Same), Err(Error::Shape(_))));
    }

    #[test]
    fn oversized_kernel_is_shape_error() {
        let x = Tensor::zeros(vec![1, 1, 2, 2]);
        let w = Tensor::zeros(vec![1, 1, 7, 7]);
        assert!(conv2d(&x, &w, None, 1, Padding::Explicit(0)).is_err());
        assert!(conv2d(&x, &w, None, 0, Padding::Same).is_err());
    }

    #[test]
    fn bias_gradient_counts_positions() {
        let x = Tensor::zeros(vec![2, 1, 3, 3]);
        let w = Tensor::leaf(vec![2, 1, 1, 1], vec![0.5, 0.5], true).unwrap();
        let b = Tensor::leaf(vec![2], vec![0.0, 0.0], true).unwrap();
        let y = conv2d(&x, &w, Some(&b), 1, Padding::Same).unwrap();
        crate::tensor::ops::sum(&y).backward().unwrap();
        assert_eq!(b.grad().unwrap(), vec![18.0, 18.0]);
    }
}
