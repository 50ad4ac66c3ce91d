//! Helpers shared by the integration and acceptance test targets.
#![allow(dead_code)]

pub mod oracle;

use cxray::tensor::gradcheck::{grad_check, GradCheckReport};
use cxray::tensor::ops::{self, BatchNormStats, NormMode, Padding};
use cxray::tensor::Tensor;
use cxray::Result;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f32 = 1e-3;
pub const TOLERANCE: f64 = 1e-3;

pub const PRIMITIVES: &[&str] = &[
    "add",
    "mul",
    "scale",
    "relu",
    "sigmoid",
    "sum",
    "mean",
    "reshape",
    "concat",
    "column",
    "dense",
    "conv2d",
    "maxpool2d",
    "global_avgpool",
    "batchnorm2d",
    "bce_with_logits",
    "bce_with_probs",
    "mean_abs_error",
    "bottleneck",
];

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Values with magnitude in `[0.05, 1)` and random sign.
pub fn off_zero(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n)
        .map(|_| {
            let m = rng.gen_range(0.05f32..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect()
}

pub fn tensor(shape: Vec<usize>, data: Vec<f32>) -> Tensor {
    Tensor::new(shape, data).expect("shape matches data")
}

/// `sum(y * w)` for a fixed random `w`, so every output element matters.
pub fn weighted(y: &Tensor, seed: u64) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    let w = tensor(y.shape().to_vec(), uniform(&mut rng, y.numel(), -1.0, 1.0));
    Ok(ops::sum(&ops::mul(y, &w)?))
}

fn check(f: impl Fn(&Tensor) -> Result<Tensor>, at: &Tensor) -> Result<GradCheckReport> {
    grad_check(f, at, STEP, TOLERANCE)
}

fn dims(rng: &mut ChaCha8Rng, rank: usize, lo: usize, hi: usize) -> Vec<usize> {
    (0..rank).map(|_| rng.gen_range(lo..=hi)).collect()
}

/// Gradient checks of `primitive` at a random shape and point drawn from
/// `seed`: one report per differentiable input.
pub fn check_primitive(primitive: &str, seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = seed;
    match primitive {
        "add" | "mul" => {
            let shape = dims(&mut rng, 2, 1, 4);
            let n: usize = shape.iter().product();
            let a = tensor(shape.clone(), uniform(&mut rng, n, -1.0, 1.0));
            let b = tensor(shape, uniform(&mut rng, n, -1.0, 1.0));
            let op = |x: &Tensor, y: &Tensor| if primitive == "add" { ops::add(x, y) } else { ops::mul(x, y) };
            Ok(vec![
                check(|x| weighted(&op(x, &b)?, s), &a)?,
                check(|y| weighted(&op(&a, y)?, s), &b)?,
            ])
        }
        "scale" => {
            let shape = dims(&mut rng, 3, 1, 3);
            let n = shape.iter().product();
            let k = rng.gen_range(-2.0f32..2.0);
            let a = tensor(shape, uniform(&mut rng, n, -1.0, 1.0));
            Ok(vec![check(|x| weighted(&ops::scale(x, k), s), &a)?])
        }
        "relu" => {
            let shape = dims(&mut rng, 2, 1, 5);
            let n = shape.iter().product();
            let a = tensor(shape, off_zero(&mut rng, n));
            Ok(vec![check(|x| weighted(&ops::relu(x), s), &a)?])
        }
        "sigmoid" => {
            let shape = dims(&mut rng, 2, 1, 5);
            let n = shape.iter().product();
            let a = tensor(shape, uniform(&mut rng, n, -3.0, 3.0));
            Ok(vec![check(|x| weighted(&ops::sigmoid(x), s), &a)?])
        }
        "sum" | "mean" => {
            let shape = dims(&mut rng, 3, 1, 4);
            let n = shape.iter().product();
            let a = tensor(shape, uniform(&mut rng, n, -1.0, 1.0));
            let op = |x: &Tensor| if primitive == "sum" { ops::sum(x) } else { ops::mean(x) };
            Ok(vec![check(|x| Ok(ops::scale(&op(x), 1.7)), &a)?])
        }
        "reshape" => {
            let shape = dims(&mut rng, 3, 1, 4);
            let n = shape.iter().product();
            let a = tensor(shape.clone(), uniform(&mut rng, n, -1.0, 1.0));
            let target = vec![shape[0] * shape[1], shape[2]];
            Ok(vec![check(|x| weighted(&ops::reshape(x, target.clone())?, s), &a)?])
        }
        "concat" => {
            let n = rng.gen_range(1..=3);
            let (da, db) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
            let a = tensor(vec![n, da], uniform(&mut rng, n * da, -1.0, 1.0));
            let b = tensor(vec![n, db], uniform(&mut rng, n * db, -1.0, 1.0));
            Ok(vec![
                check(|x| weighted(&ops::concat(x, &b)?, s), &a)?,
                check(|y| weighted(&ops::concat(&a, y)?, s), &b)?,
            ])
        }
        "column" => {
            let (n, d) = (rng.gen_range(1..=4), rng.gen_range(1..=5));
            let j = rng.gen_range(0..d);
            let a = tensor(vec![n, d], uniform(&mut rng, n * d, -1.0, 1.0));
            Ok(vec![check(|x| weighted(&ops::column(x, j)?, s), &a)?])
        }
        "dense" => {
            let (n, d, o) = (rng.gen_range(1..=4), rng.gen_range(1..=5), rng.gen_range(1..=4));
            let x = tensor(vec![n, d], uniform(&mut rng, n * d, -1.0, 1.0));
            let w = tensor(vec![d, o], uniform(&mut rng, d * o, -1.0, 1.0));
            let b = tensor(vec![o], uniform(&mut rng, o, -1.0, 1.0));
            Ok(vec![
                check(|t| weighted(&ops::dense(t, &w, &b)?, s), &x)?,
                check(|t| weighted(&ops::dense(&x, t, &b)?, s), &w)?,
                check(|t| weighted(&ops::dense(&x, &w, t)?, s), &b)?,
            ])
        }
        "conv2d" => {
            let (n, c, o) = (rng.gen_range(1..=2), rng.gen_range(1..=3), rng.gen_range(1..=3));
            let k = *[1usize, 3, 5].choose(&mut rng).expect("non-empty");
            let stride = rng.gen_range(1..=2);
            let h = rng.gen_range(k.max(3)..=7);
            let w = rng.gen_range(k.max(3)..=7);
            let padding = if rng.gen_bool(0.5) {
                Padding::Same
            } else {
                Padding::Explicit(rng.gen_range(0..=1))
            };
            let x = tensor(vec![n, c, h, w], uniform(&mut rng, n * c * h * w, -1.0, 1.0));
            let wt = tensor(vec![o, c, k, k], uniform(&mut rng, o * c * k * k, -0.5, 0.5));
            let b = tensor(vec![o], uniform(&mut rng, o, -0.5, 0.5));
            Ok(vec![
                check(|t| weighted(&ops::conv2d(t, &wt, Some(&b), stride, padding)?, s), &x)?,
                check(|t| weighted(&ops::conv2d(&x, t, Some(&b), stride, padding)?, s), &wt)?,
                check(|t| weighted(&ops::conv2d(&x, &wt, Some(t), stride, padding)?, s), &b)?,
            ])
        }
        "maxpool2d" => {
            let (n, c) = (rng.gen_range(1..=2), rng.gen_range(1..=2));
            let (h, w) = (rng.gen_range(3..=6), rng.gen_range(3..=6));
            let total = n * c * h * w;
            // Distinct values spaced well beyond the finite-difference step.
            let mut values: Vec<f32> = (0..total).map(|i| i as f32 * 0.05 - 1.0).collect();
            values.shuffle(&mut rng);
            let x = tensor(vec![n, c, h, w], values);
            let stride = rng.gen_range(1..=2);
            Ok(vec![check(|t| weighted(&ops::maxpool2d(t, 3, stride, Padding::Same)?, s), &x)?])
        }
        "global_avgpool" => {
            let shape = vec![rng.gen_range(1..=2), rng.gen_range(1..=3), rng.gen_range(1..=4), rng.gen_range(1..=4)];
            let n = shape.iter().product();
            let x = tensor(shape, uniform(&mut rng, n, -1.0, 1.0));
            Ok(vec![check(|t| weighted(&ops::global_avgpool(t)?, s), &x)?])
        }
        "batchnorm2d" => {
            let (n, c) = (rng.gen_range(2..=3), rng.gen_range(1..=3));
            let (h, w) = (rng.gen_range(2..=3), rng.gen_range(2..=3));
            let x = tensor(vec![n, c, h, w], uniform(&mut rng, n * c * h * w, -1.0, 1.0));
            let gamma = tensor(vec![c], uniform(&mut rng, c, 0.5, 1.5));
            let beta = tensor(vec![c], uniform(&mut rng, c, -0.5, 0.5));
            let stats = BatchNormStats::new(c);
            let bn = |x: &Tensor, g: &Tensor, b: &Tensor| ops::batchnorm2d(x, g, b, &stats, NormMode::Train);
            Ok(vec![
                check(|t| weighted(&bn(t, &gamma, &beta)?, s), &x)?,
                check(|t| weighted(&bn(&x, t, &beta)?, s), &gamma)?,
                check(|t| weighted(&bn(&x, &gamma, t)?, s), &beta)?,
            ])
        }
        "bce_with_logits" | "bce_with_probs" | "mean_abs_error" => {
            let shape = dims(&mut rng, 2, 1, 5);
            let n: usize = shape.iter().product();
            let y = tensor(shape.clone(), (0..n).map(|_| rng.gen_range(0..=1) as f32).collect());
            let x = match primitive {
                "bce_with_logits" => uniform(&mut rng, n, -3.0, 3.0),
                "bce_with_probs" => uniform(&mut rng, n, 0.05, 0.95),
                _ => y.to_vec().iter().zip(off_zero(&mut rng, n)).map(|(t, d)| t + d).collect(),
            };
            let x = tensor(shape, x);
            let f = |t: &Tensor| match primitive {
                "bce_with_logits" => ops::bce_with_logits(t, &y),
                "bce_with_probs" => ops::bce_with_probs(t, &y),
                _ => ops::mean_abs_error(t, &y),
            };
            Ok(vec![check(f, &x)?])
        }
        "bottleneck" => check_bottleneck(&mut rng, s),
        other => panic!("unknown primitive {other}"),
    }
}

pub struct BlockParams {
    pub reduce: Tensor,
    pub spatial: Tensor,
    pub expand: Tensor,
    pub shortcut: Tensor,
    pub gammas: Vec<Tensor>,
    pub betas: Vec<Tensor>,
    pub stride: usize,
}

fn conv_bn(x: &Tensor, w: &Tensor, g: &Tensor, b: &Tensor, stride: usize) -> Result<Tensor> {
    let y = ops::conv2d(x, w, None, stride, Padding::Same)?;
    ops::batchnorm2d(&y, g, b, &BatchNormStats::new(w.shape()[0]), NormMode::Train)
}

/// Projection bottleneck: 1x1 reduce, 3x3, 1x1 expand, each with batch
/// normalization, plus a strided 1x1 shortcut. Also returns every ReLU input.
///
/// Checked at stage-entry shape (stride 2, 2x2 output): with four batch
/// normalizations in series, larger outputs push single precision
/// finite-difference noise up to the 1e-3 tolerance.
pub fn bottleneck_parts(x: &Tensor, p: &BlockParams, reduce: Option<&Tensor>) -> Result<(Tensor, Vec<Tensor>)> {
    let reduce = reduce.unwrap_or(&p.reduce);
    let a = conv_bn(x, reduce, &p.gammas[0], &p.betas[0], p.stride)?;
    let b = conv_bn(&ops::relu(&a), &p.spatial, &p.gammas[1], &p.betas[1], 1)?;
    let h = conv_bn(&ops::relu(&b), &p.expand, &p.gammas[2], &p.betas[2], 1)?;
    let sc = conv_bn(x, &p.shortcut, &p.gammas[3], &p.betas[3], p.stride)?;
    let sum = ops::add(&h, &sc)?;
    Ok((ops::relu(&sum), vec![a, b, sum]))
}

pub fn bottleneck_forward(x: &Tensor, p: &BlockParams, reduce: Option<&Tensor>) -> Result<Tensor> {
    Ok(bottleneck_parts(x, p, reduce)?.0)
}

fn relu_pattern(x: &Tensor, p: &BlockParams, reduce: Option<&Tensor>) -> Result<Vec<bool>> {
    let (_, pre) = bottleneck_parts(x, p, reduce)?;
    Ok(pre.iter().flat_map(|t| t.to_vec()).map(|v| v > 0.0).collect())
}

/// True when no central-difference probe of `x` or of the reduce weight
/// flips a ReLU, i.e. the whole stencil lies in one smooth piece.
fn stencil_is_smooth(x: &Tensor, p: &BlockParams) -> Result<bool> {
    let base = relu_pattern(x, p, None)?;
    let probes = |at: &Tensor, eval: &dyn Fn(&Tensor) -> Result<Vec<bool>>| -> Result<bool> {
        let v = at.to_vec();
        for i in 0..v.len() {
            for d in [STEP, -STEP] {
                let mut probe = v.clone();
                probe[i] += d;
                if eval(&tensor(at.shape().to_vec(), probe))? != base {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    };
    cxray::tensor::no_grad(|| {
        Ok(probes(x, &|t| relu_pattern(t, p, None))? && probes(&p.reduce, &|t| relu_pattern(x, p, Some(t)))?)
    })
}

fn draw_block(rng: &mut ChaCha8Rng) -> (Tensor, BlockParams) {
    let (cin, width, cout) = (rng.gen_range(2..=3), 2, 4);
    let stride = 2;
    let hw = rng.gen_range(3..=4);
    let x = tensor(vec![2, cin, hw, hw], uniform(rng, 2 * cin * hw * hw, -1.0, 1.0));
    let he = |rng: &mut ChaCha8Rng, o: usize, i: usize, k: usize| {
        let bound = (6.0 / (i * k * k) as f32).sqrt();
        tensor(vec![o, i, k, k], uniform(rng, o * i * k * k, -bound, bound))
    };
    let p = BlockParams {
        reduce: he(rng, width, cin, 1),
        spatial: he(rng, width, width, 3),
        expand: he(rng, cout, width, 1),
        shortcut: he(rng, cout, cin, 1),
        gammas: [width, width, cout, cout]
            .iter()
            .map(|&c| tensor(vec![c], uniform(rng, c, 0.5, 1.5)))
            .collect(),
        betas: [width, width, cout, cout]
            .iter()
            .map(|&c| tensor(vec![c], uniform(rng, c, -0.2, 0.2)))
            .collect(),
        stride,
    };
    (x, p)
}

/// The block is piecewise smooth, so points are redrawn until the
/// finite-difference stencil avoids every ReLU kink.
pub fn smooth_block(rng: &mut ChaCha8Rng) -> Result<(Tensor, BlockParams)> {
    loop {
        let (x, p) = draw_block(rng);
        if stencil_is_smooth(&x, &p)? {
            return Ok((x, p));
        }
    }
}

fn check_bottleneck(rng: &mut ChaCha8Rng, s: u64) -> Result<Vec<GradCheckReport>> {
    let (x, p) = smooth_block(rng)?;
    Ok(vec![
        check(|t| weighted(&bottleneck_forward(t, &p, None)?, s), &x)?,
        check(|t| weighted(&bottleneck_forward(&x, &p, Some(t))?, s), &p.reduce)?,
    ])
}

/// Deliberately wrong backward rule: forward `x^2`, backward `x` (drops the
/// factor 2). A correct checker must reject it.
pub struct CorruptedSquare {
    pub inputs: Vec<Tensor>,
}

impl cxray::tensor::Backward for CorruptedSquare {
    fn name(&self) -> &'static str {
        "corrupted_square"
    }
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }
    fn backward(&self, g: &[f32]) -> Vec<Option<Vec<f32>>> {
        let x = self.inputs[0].to_vec();
        vec![Some(g.iter().zip(&x).map(|(g, x)| g * x).collect())]
    }
}

pub fn corrupted_square(x: &Tensor) -> Tensor {
    let data = x.to_vec().iter().map(|v| v * v).collect();
    Tensor::from_op(x.shape().to_vec(), data, Box::new(CorruptedSquare { inputs: vec![x.clone()] }))
}

/// Records of `patients` synthetic patients with heavy-tailed image counts.
pub fn skewed_records(patients: usize, seed: u64) -> Vec<cxray::data::records::Record> {
    use cxray::data::synth::{synth_dataset, PatientSizes, SynthSpec};
    let spec = SynthSpec {
        patients,
        images_per_patient: PatientSizes::Skewed { max: 50 },
        ..SynthSpec::default()
    };
    synth_dataset(&spec, seed).expect("valid spec").records
}

/// Checks every re-sample of `plan` for patient disjointness and the image
/// share tolerance; returns the largest share deviation in points.
pub fn split_violations(
    plan: &cxray::data::split::SplitPlan,
    records: &[cxray::data::records::Record],
) -> std::result::Result<f64, String> {
    use cxray::data::split::{Subset, FRACTIONS};
    use std::collections::{BTreeMap, BTreeSet};
    let patients: BTreeSet<&str> = records.iter().map(|r| r.patient_id.as_str()).collect();
    let mut worst = 0.0f64;
    for r in &plan.resamples {
        let mut seen: BTreeMap<&str, Subset> = BTreeMap::new();
        let mut counts = [0usize; 3];
        for s in Subset::ALL {
            for i in r.indices(records, s) {
                let pid = records[i].patient_id.as_str();
                if let Some(prev) = seen.insert(pid, s) {
                    if prev != s {
                        return Err(format!("re-sample {}: patient {pid} in {prev} and {s}", r.index));
                    }
                }
                counts[s as usize] += 1;
            }
        }
        if seen.len() != patients.len() {
            return Err(format!("re-sample {}: {} of {} patients assigned", r.index, seen.len(), patients.len()));
        }
        let total: usize = counts.iter().sum();
        for (c, f) in counts.iter().zip(FRACTIONS) {
            worst = worst.max((100.0 * *c as f64 / total as f64 - 100.0 * f).abs());
        }
    }
    Ok(worst)
}
