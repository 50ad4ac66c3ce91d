//! Gradient-weighted class activation maps over the final convolutional stage.

mod export;

pub use export::{heat_color, write_grid_csv, OVERLAY_ALPHA};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::ops::{self, NormMode};
use crate::tensor::{no_grad, Tensor};

/// Scalar that is differentiated with respect to the final activations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CamTarget {
    /// Pre-sigmoid score of the label.
    #[default]
    Logit,
    /// Post-sigmoid probability of the label.
    Probability,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub label: usize,
    pub grid_height: usize,
    pub grid_width: usize,
    /// Rectified weighted channel sum, row-major, all values >= 0.
    pub grid: Vec<f32>,
    /// Side length of the rendering (the model's input size).
    pub size: usize,
    /// Bilinear upsampling of `grid` scaled to `[0, 1]`.
    pub rendering: Vec<f32>,
    pub source: Option<String>,
}

impl Heatmap {
    /// Row and column of the largest raw grid cell (first on ties).
    pub fn peak_cell(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, v) in self.grid.iter().enumerate() {
            if *v > self.grid[best] {
                best = i;
            }
        }
        (best / self.grid_width, best % self.grid_width)
    }

    /// Center of the peak grid cell in image pixel coordinates `(x, y)`.
    pub fn peak(&self) -> (f32, f32) {
        let (r, c) = self.peak_cell();
        (
            (c as f32 + 0.5) * self.size as f32 / self.grid_width as f32,
            (r as f32 + 0.5) * self.size as f32 / self.grid_height as f32,
        )
    }

    pub fn max(&self) -> f32 {
        self.grid.iter().copied().fold(0.0, f32::max)
    }
}

/// Grad-CAM grid from activations and gradients laid out `[C, H, W]`:
/// channel weights are spatial gradient means, the map is the rectified
/// weighted sum of channels.
pub fn cam_from_parts(activations: &[f32], gradients: &[f32], channels: usize, height: usize, width: usize) -> Result<Vec<f32>> {
    let plane = height * width;
    if activations.len() != channels * plane || gradients.len() != channels * plane {
        return Err(Error::shape(format!(
            "activations ({}) and gradients ({}) must both hold {channels}x{height}x{width} values",
            activations.len(),
            gradients.len()
        )));
    }
    let mut map = vec![0.0f64; plane];
    for c in 0..channels {
        let g = &gradients[c * plane..(c + 1) * plane];
        let weight = g.iter().map(|&v| v as f64).sum::<f64>() / plane as f64;
        for (m, &a) in map.iter_mut().zip(&activations[c * plane..(c + 1) * plane]) {
            *m += weight * a as f64;
        }
    }
    Ok(map.into_iter().map(|v| v.max(0.0) as f32).collect())
}

/// Bilinear resampling of a `height x width` grid to `size x size` using
/// pixel-center alignment and edge clamping.
pub fn upsample_bilinear(grid: &[f32], height: usize, width: usize, size: usize) -> Vec<f32> {
    let coord = |i: usize, n: usize| -> (usize, usize, f32) {
        let src = ((i as f32 + 0.5) * n as f32 / size as f32 - 0.5).clamp(0.0, (n - 1) as f32);
        let lo = src.floor() as usize;
        let hi = (lo + 1).min(n - 1);
        (lo, hi, src - lo as f32)
    };
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        let (y0, y1, fy) = coord(y, height);
        for x in 0..size {
            let (x0, x1, fx) = coord(x, width);
            let top = grid[y0 * width + x0] * (1.0 - fx) + grid[y0 * width + x1] * fx;
            let bottom = grid[y1 * width + x0] * (1.0 - fx) + grid[y1 * width + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Divides by the maximum; an all-zero input stays all zero.
pub fn normalize(values: &[f32]) -> Vec<f32> {
    let max = values.iter().copied().fold(0.0f32, f32::max);
    if max > 0.0 {
        values.iter().map(|v| (v / max).clamp(0.0, 1.0)).collect()
    } else {
        vec![0.0; values.len()]
    }
}

/// Grad-CAM of `label` for every image of the batch `[N, C, S, S]`.
/// `meta` is `[N, 3]` for models with metadata fusion.
pub fn grad_cam(model: &Model, images: &Tensor, meta: Option<&Tensor>, label: usize) -> Result<Vec<Heatmap>> {
    grad_cam_with(model, images, meta, label, CamTarget::Logit)
}

pub fn grad_cam_with(
    model: &Model,
    images: &Tensor,
    meta: Option<&Tensor>,
    label: usize,
    target: CamTarget,
) -> Result<Vec<Heatmap>> {
    let outputs = model.architecture().num_outputs();
    if label >= outputs {
        return Err(Error::usage(format!("label index {label} outside [0, {outputs})")));
    }
    let config = model
        .architecture()
        .image_config()
        .ok_or_else(|| Error::usage("Grad-CAM needs a model with an image branch"))?;
    let size = config.input_size;
    let features = no_grad(|| model.features(images, NormMode::Eval))?.0;
    let shape = features.shape().to_vec();
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let leaf = features.detach_with_grad(true);
    let pooled = ops::global_avgpool(&leaf)?;
    let logits = model.head_detached(&pooled, meta)?;
    let scored = match target {
        CamTarget::Logit => logits,
        CamTarget::Probability => ops::sigmoid(&logits),
    };
    // Samples are independent in eval mode, so one sweep yields every map.
    ops::sum(&ops::column(&scored, label)?).backward()?;
    let grads = leaf
        .grad()
        .ok_or_else(|| Error::State("no gradient reached the final activations".into()))?;
    let acts = leaf.to_vec();
    let per = c * h * w;
    (0..n)
        .map(|i| {
            let grid = cam_from_parts(&acts[i * per..(i + 1) * per], &grads[i * per..(i + 1) * per], c, h, w)?;
            let rendering = normalize(&upsample_bilinear(&grid, h, w, size));
            Ok(Heatmap {
                label,
                grid_height: h,
                grid_width: w,
                grid,
                size,
                rendering,
                source: None,
            })
        })
        .collect()
}
