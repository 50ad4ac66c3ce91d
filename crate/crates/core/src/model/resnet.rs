//! Bottleneck ResNet layout and forward pass.

use super::config::ModelConfig;
use super::params::{EntryKind, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::ops::{self, NormMode, Padding};
use crate::tensor::Tensor;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// One bottleneck unit: 1x1 reduce, 3x3, 1x1 expand, plus shortcut.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockSpec {
    /// conv2 .. conv5
    pub stage: usize,
    pub index: usize,
    pub in_channels: usize,
    pub width: usize,
    pub out_channels: usize,
    /// Applied by the reduce convolution and the projection shortcut.
    pub stride: usize,
    pub projection: bool,
}

impl BlockSpec {
    pub fn prefix(&self) -> String {
        format!("conv{}.{}", self.stage, self.index)
    }
}

pub fn block_specs(config: &ModelConfig) -> Vec<BlockSpec> {
    let mut specs = Vec::new();
    let mut in_channels = config.stem_width();
    for (s, (&count, &(width, out))) in config
        .depth
        .blocks()
        .iter()
        .zip(config.stage_widths().iter())
        .enumerate()
    {
        let stage = s + 2;
        for index in 0..count {
            let stride = if index == 0 && stage > 2 { 2 } else { 1 };
            specs.push(BlockSpec {
                stage,
                index,
                in_channels,
                width,
                out_channels: out,
                stride,
                projection: index == 0,
            });
            in_channels = out;
        }
    }
    specs
}

fn he_normal(rng: &mut impl Rng, fan_in: usize, count: usize) -> Vec<f32> {
    let dist = Normal::new(0.0f32, (2.0 / fan_in as f32).sqrt()).expect("finite std");
    (0..count).map(|_| dist.sample(rng)).collect()
}

fn conv_bn(store: &mut ParamStore, rng: &mut impl Rng, prefix: &str, out_c: usize, in_c: usize, k: usize) {
    let fan_in = in_c * k * k;
    store.insert(
        format!("{prefix}.weight"),
        vec![out_c, in_c, k, k],
        he_normal(rng, fan_in, out_c * fan_in),
        EntryKind::Param,
        true,
    );
    store.insert_bn(&format!("{prefix}.bn"), out_c, true);
}

/// Registers every backbone tensor, in forward order.
pub(crate) fn init_backbone(store: &mut ParamStore, config: &ModelConfig, rng: &mut impl Rng) {
    conv_bn(store, rng, "conv1", config.stem_width(), config.input_channels, 7);
    for b in block_specs(config) {
        let p = b.prefix();
        conv_bn(store, rng, &format!("{p}.reduce"), b.width, b.in_channels, 1);
        conv_bn(store, rng, &format!("{p}.spatial"), b.width, b.width, 3);
        conv_bn(store, rng, &format!("{p}.expand"), b.out_channels, b.width, 1);
        if b.projection {
            conv_bn(store, rng, &format!("{p}.shortcut"), b.out_channels, b.in_channels, 1);
        }
    }
}

fn conv_bn_forward(
    store: &ParamStore,
    x: &Tensor,
    prefix: &str,
    stride: usize,
    mode: NormMode,
    relu: bool,
) -> Result<Tensor> {
    let y = ops::conv2d(x, store.get(&format!("{prefix}.weight"))?, None, stride, Padding::Same)?;
    let bn = format!("{prefix}.bn");
    let gamma = store.entry(&format!("{bn}.gamma"))?;
    // Frozen layers keep their statistics.
    let layer_mode = if gamma.trainable { mode } else { NormMode::Eval };
    let y = ops::batchnorm2d(
        &y,
        &gamma.tensor,
        store.get(&format!("{bn}.beta"))?,
        &store.bn_stats(&bn)?,
        layer_mode,
    )?;
    Ok(if relu { ops::relu(&y) } else { y })
}

fn bottleneck(store: &ParamStore, x: &Tensor, b: &BlockSpec, mode: NormMode) -> Result<Tensor> {
    let p = b.prefix();
    let h = conv_bn_forward(store, x, &format!("{p}.reduce"), b.stride, mode, true)?;
    let h = conv_bn_forward(store, &h, &format!("{p}.spatial"), 1, mode, true)?;
    let h = conv_bn_forward(store, &h, &format!("{p}.expand"), 1, mode, false)?;
    let shortcut = if b.projection {
        conv_bn_forward(store, x, &format!("{p}.shortcut"), b.stride, mode, false)?
    } else {
        x.clone()
    };
    Ok(ops::relu(&ops::add(&h, &shortcut)?))
}

/// Intermediate activations of the backbone, recorded for shape inspection.
#[derive(Clone, Debug)]
pub struct StageTrace {
    pub name: String,
    pub shape: Vec<usize>,
}

/// Runs the convolutional trunk; returns the final feature map
/// `[N, 2048/w, g, g]`.
pub(crate) fn backbone_forward(
    store: &ParamStore,
    config: &ModelConfig,
    images: &Tensor,
    mode: NormMode,
    mut trace: Option<&mut Vec<StageTrace>>,
) -> Result<Tensor> {
    let s = images.shape();
    if s.len() != 4 || s[1] != config.input_channels || s[2] != config.input_size || s[3] != config.input_size {
        return Err(Error::shape(format!(
            "model expects images [N, {}, {}, {}], got {s:?}",
            config.input_channels, config.input_size, config.input_size
        )));
    }
    let mut record = |name: &str, t: &Tensor| {
        if let Some(tr) = trace.as_deref_mut() {
            tr.push(StageTrace {
                name: name.to_string(),
                shape: t.shape().to_vec(),
            });
        }
    };
    let mut x = conv_bn_forward(store, images, "conv1", 2, mode, true)?;
    record("conv1", &x);
    x = ops::maxpool2d(&x, 3, 2, Padding::Same)?;
    record("pooling1", &x);
    for b in block_specs(config) {
        x = bottleneck(store, &x, &b, mode)?;
        let last_in_stage = config.depth.blocks()[b.stage - 2] == b.index + 1;
        if b.index == 0 && b.stage > 2 {
            record(&format!("conv{}_0", b.stage), &x);
        }
        if last_in_stage {
            record(&format!("conv{}_x", b.stage), &x);
            if b.stage == 2 && config.extra_pool_after_conv2 {
                x = ops::maxpool2d(&x, 3, 2, Padding::Same)?;
                record("pooling_extra", &x);
            }
        }
    }
    Ok(x)
}
