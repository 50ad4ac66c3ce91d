//! Differentiable operations.

mod conv;
mod loss;
mod norm;
mod pool;

pub use conv::{conv2d, Padding};
pub use loss::{bce_with_logits, bce_with_probs, mean_abs_error, PROB_CLAMP};
pub use norm::{batchnorm2d, BatchNormStats, NormMode, BN_EPSILON, BN_MOMENTUM};
pub use pool::{global_avgpool, maxpool2d};

use super::gemm::{gemm, MatRef};
use super::{Backward, Tensor};
use crate::error::{Error, Result};

fn same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "{op}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

struct AddBackward {
    inputs: [Tensor; 2],
}

impl Backward for AddBackward {
    fn name(&self) -> &'static str {
        "add"
    }
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }
    fn backward(&self, g: &[f32]) -> Vec<Option<Vec<f32>>> {
        vec![Some(g.to_vec()), Some(g.to_vec())]
    }
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("add", a, b)?;
    let data: Vec<f32> = a.data().iter().zip(b.data().iter()).map(|(x, y)| x + y).collect();
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        data,
        Box::new(AddBackward {
            inputs: [a.clone(), b.clone()],
        }),
    ))
}

struct MulBackward {
    inputs: [Tensor; 2],
}

impl Backward for MulBackward {
    fn name(&self) -> &'static str {
        "mul"
    }
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }
    fn backward(&self, g: &[f32]) -> Vec<Option<Vec<f32>>> {
        let a = self.inputs[0].data();
        let b = self.inputs[1].data();
        let ga = self.inputs[0]
            .requires_grad()
            .then(|| g.iter().zip(b.iter()).map(|(g, y)| g * y).collect());
        let gb = self.inputs[1]
            .requires_grad()
            .then(|| g.iter().zip(a.iter()).map(|(g, x)| g * x).collect());
        vec![ga, gb]
    }
}

/// Elementwise product.
pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("mul", a, b)?;
    let data: Vec<f32> = a.data().iter().zip(b.data().iter()).map(|(x, y)| x * y).collect();
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        data,
        Box::new(MulBackward {
            inputs: [a.clone(), b.clone()],
        }),
    ))
}

struct ScaleBackward {
    inputs: [Tensor; 1],
    factor: f32,
}

impl Backward for ScaleBackward {
    fn name(&self) -> &'static str {
        "scale"
    }
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }
    fn backward(&self, g: &[f32]) -> Vec<Option<Vec<f32>>> {
        vec![Some(g.iter().map(|v| v * self.factor).collect())]
    }
}

pub fn scale(a: &Tensor, factor: f32) -> Tensor {
    let data = a.data().iter().map(|v| v * factor).collect();
    Tensor::from_op(
        a.shape().to_vec(),
        data,
        Box::new(ScaleBackward {
            inputs: [a.clone()],
            factor,
        }),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pointwise {
    Relu,
    Sigmoid,
}

struct PointwiseBackward {
    inputs: [Tensor; 1],
    kind: Pointwise,
    output: Vec<f32>,
}

impl Backward for PointwiseBackward {
    fn name(&self) -> &'static str {
        match self.kind {
            Pointwise::Relu => "relu",
            Pointwise::Sigmoid => "sigmoid",
        }
    }
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }
    fn backward(&self, g: &[f32]) -> Vec<Option<Vec<f32>>> {
        let grad = match self.kind {
            Pointwise::Relu => g
                .iter()
                .zip(&self.output)
                .map(|(g, y)| if *y > 0.0 { *g } else { 0.0 })
                .collect(),
            Pointwise::Sigmoid => g
                .iter()
                .zip(&self.output)
                .map(|(g, y)| g * y * (1.0 - y))
                .collect(),
        };
        vec![Some(grad)]
    }
}

pub fn sigmoid_scalar(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn pointwise(a: &Tensor, kind: Pointwise) -> Tensor {
    let output: Vec<f32> = match kind {
        Pointwise::Relu => a.data().iter().map(|v| v.max(0.0)).collect(),
        Pointwise::Sigmoid => a.data().iter().map(|v| sigmoid_scalar(*v)).collect(),
    };
    let tracked = super::grad_enabled() && a.requires_grad();
    let saved = if tracked { output.clone() } else { Vec::new() };
    Tensor::from_op(
        a.shape().to_vec(),
        output,
        Box::new(PointwiseBackward {
            inputs: [a.clone()],
            kind,
            output: saved,
        }),
    )
}

pub fn relu(a: &Tensor) -> Tensor {
    pointwise(a, Pointwise::Relu)
}

pub fn sigmoid(a: &Tensor) -> Tensor {
    pointwise(a, Pointwise::Sigmoid)
}

struct SumBackward {
    inputs: [Tensor; 1],
    factor: f32,
}

impl Backward for SumBackward {
    fn name(&self) -> &'static str {
        "sum"
    }
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }
    fn backward(&self, g: &[f32]) -> Vec<Option<Vec<f32>>> {
        vec![Some(vec![g[0] * self.factor; self.inputs[0].numel()])]
    }
}

/// Sum of all elements, accumulated in `f64` in storage order.
pub fn sum(a: &Tensor) -> Tensor {
    let total: f64 = a.data().iter().map(|&v| v as f64).sum();
    Tensor::from_op(
        vec![1],
        vec![total as f32],
        Box::new(SumBackward {
            inputs: [a.clone()],
            factor: 1.0,
        }),
    )
}

pub fn mean(a: &Tensor) -> Tensor {
    let n = a.numel().max(1);
    let total: f64 = a.data().iter().map(|&v| v as f64).sum();
    Tensor::from_op(
        vec![1],
        vec![(total / n as f64) as f32],
        Box::new(SumBackward {
            inputs: [a.clone()],
            factor: 1.0 / n as f32,
        }),
    )
}

struct ReshapeBackward {
    inputs: [Tensor; 1],
}

impl Backward for ReshapeBackward {
    fn name(&self) -> &'static str {
        "reshape"
    }
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }
    fn backward(&self, g: &[f32]) -> Vec<Option<Vec<f32>>> {
        vec![Some(g.to_vec())]
    }
}

pub fn reshape(a: &Tensor, shape: Vec<usize>) -> Result<Tensor> {
    if super::numel(&shape) != a.numel() {
        return Err(Error::shape(format!(
            "cannot reshape {:?} into {shape:?}",
            a.shape()
        )));
    }
    Ok(Tensor::from_op(
        shape,
        a.to_vec(),
        Box::new(ReshapeBackward {
            inputs: [a.clone()],
        }),
    ))
}

struct ConcatBackward {
    inputs: [Tensor; 2],
    rows: usize,
    left: usize,
    right: usize,
}

impl Backward for ConcatBackward {
    fn name(&self) -> &'static str {
        "concat"
    }
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }
    fn backward(&self, g: &[f32]) -> Vec<Option<Vec<f32>>> {
        let width = self.left + self.right;
        let mut ga = Vec::with_capacity(self.rows * self.left);
        let mut gb = Vec::with_capacity(self.rows * self.right);
        for row in g.chunks(width.max(1)).take(self.rows) {
            ga.extend_from_slice(&row[..self.left]);
            gb.extend_from_slice(&row[self.left..]);
        }
        vec![Some(ga), Some(gb)]
    }
}

/// Concatenates two `[N, D]` matrices along the feature axis.
pub fn concat(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape().len() != 2 || b.shape().len() != 2 {
        return Err(Error::shape(format!(
            "concat expects matrices, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (rows, left, right) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    if b.shape()[0] != rows {
        return Err(Error::shape(format!(
            "concat: leading dims {} and {} differ",
            rows,
            b.shape()[0]
        )));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut data = Vec::with_capacity(rows * (left + right));
    for r in 0..rows {
        data.extend_from_slice(&ad[r * left..(r + 1) * left]);
        data.extend_from_slice(&bd[r * right..(r + 1) * right]);
    }
    drop((ad, bd));
    Ok(Tensor::from_op(
        vec![rows, left + right],
        data,
        Box::new(ConcatBackward {
            inputs: [a.clone(), b.clone()],
            rows,
            left,
            right,
        }),
    ))
}

struct ColumnBackward {
    inputs: [Tensor; 1],
    column: usize,
}

impl Backward for ColumnBackward {
    fn name(&self) -> &'static str {
        "column"
    }
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }
    fn backward(&self, g: &[f32]) -> Vec<Option<Vec<f32>>> {
        let cols = self.inputs[0].shape()[1];
        let mut grad = vec![0.0; self.inputs[0].numel()];
        for (r, gv) in g.iter().enumerate() {
            grad[r * cols + self.column] = *gv;
        }
        vec![Some(grad)]
    }
}

/// Column `j` of an `[N, D]` matrix as `[N, 1]`.
pub fn column(a: &Tensor, j: usize) -> Result<Tensor> {
    if a.shape().len() != 2 || j >= a.shape()[1] {
        return Err(Error::shape(format!("column {j} of {:?}", a.shape())));
    }
    let cols = a.shape()[1];
    let data: Vec<f32> = a.data().chunks(cols).map(|row| row[j]).collect();
    Ok(Tensor::from_op(
        vec![a.shape()[0], 1],
        data,
        Box::new(ColumnBackward {
            inputs: [a.clone()],
            column: j,
        }),
    ))
}

struct DenseBackward {
    inputs: [Tensor; 3],
    n: usize,
    d: usize,
    o: usize,
}

impl Backward for DenseBackward {
    fn name(&self) -> &'static str {
        "dense"
    }
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }
    fn backward(&self, g: &[f32]) -> Vec<Option<Vec<f32>>> {
        let (n, d, o) = (self.n, self.d, self.o);
        let [x, w, b] = &self.inputs;
        let gx = x.requires_grad().then(|| {
            let wd = w.data();
            let mut gx = vec![0.0; n * d];
            gemm(n, o, d, MatRef::row_major(g, o), MatRef::transposed(&wd, o), &mut gx, false);
            gx
        });
        let gw = w.requires_grad().then(|| {
            let xd = x.data();
            let mut gw = vec![0.0; d * o];
            gemm(d, n, o, MatRef::transposed(&xd, d), MatRef::row_major(g, o), &mut gw, false);
            gw
        });
        let gb = b.requires_grad().then(|| {
            let mut gb = vec![0.0f32; o];
            for row in g.chunks(o) {
                gb.iter_mut().zip(row).for_each(|(a, v)| *a += v);
            }
            gb
        });
        vec![gx, gw, gb]
    }
}

/// Affine map `x[N, D] * w[D, O] + b[O]`.
pub fn dense(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (xs, ws, bs) = (x.shape(), w.shape(), b.shape());
    if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] || bs != [ws[1]] {
        return Err(Error::shape(format!(
            "dense: input {xs:?}, weight {ws:?}, bias {bs:?}"
        )));
    }
    let (n, d, o) = (xs[0], xs[1], ws[1]);
    let mut out = vec![0.0; n * o];
    {
        let bd = b.data();
        for row in out.chunks_mut(o) {
            row.copy_from_slice(&bd);
        }
        let (xd, wd) = (x.data(), w.data());
        gemm(n, d, o, MatRef::row_major(&xd, d), MatRef::row_major(&wd, o), &mut out, true);
    }
    Ok(Tensor::from_op(
        vec![n, o],
        out,
        Box::new(DenseBackward {
            inputs: [x.clone(), w.clone(), b.clone()],
            n,
            d,
            o,
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Vec<usize>, data: Vec<f32>) -> Tensor {
        Tensor::leaf(shape, data, true).unwrap()
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        let y = sigmoid(&Tensor::scalar(0.0));
        assert_eq!(y.item().unwrap(), 0.5);
    }

    #[test]
    fn sigmoid_stays_open_interval_for_moderate_inputs() {
        let x = Tensor::new(vec![4], vec![-15.0, -3.0, 3.0, 15.0]).unwrap();
        for v in sigmoid(&x).to_vec() {
            assert!(v > 0.0 && v < 1.0);
        }
    }

    #[test]
    fn relu_of_negative_is_zero() {
        let y = relu(&Tensor::new(vec![3], vec![-0.5, -2.0, -1e-3]).unwrap());
        assert_eq!(y.to_vec(), vec![0.0; 3]);
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        let x = t(vec![1], vec![0.0]);
        sum(&sigmoid(&x)).backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.25]);
    }

    #[test]
    fn dense_identity_passthrough() {
        let x = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let mut eye = vec![0.0; 9];
        for i in 0..3 {
            eye[i * 3 + i] = 1.0;
        }
        let w = Tensor::new(vec![3, 3], eye).unwrap();
        let b = Tensor::zeros(vec![3]);
        assert_eq!(dense(&x, &w, &b).unwrap().to_vec(), x.to_vec());
    }

    #[test]
    fn dense_matches_hand_product() {
        // [2x3] x [3x2]
        let x = Tensor::new(vec![2, 3], vec![1.0, -2.0, 0.5, 3.0, 1.0, -1.0]).unwrap();
        let w = Tensor::new(vec![3, 2], vec![0.2, -0.4, 1.5, 0.3, -2.0, 0.7]).unwrap();
        let b = Tensor::new(vec![2], vec![0.1, -0.1]).unwrap();
        let (xd, wd, bd) = (x.to_vec(), w.to_vec(), b.to_vec());
        let mut want = vec![0.0f32; 4];
        for i in 0..2 {
            for j in 0..2 {
                let mut acc = bd[j];
                for k in 0..3 {
                    acc += xd[i * 3 + k] * wd[k * 2 + j];
                }
                want[i * 2 + j] = acc;
            }
        }
        let got = dense(&x, &w, &b).unwrap().to_vec();
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-6);
        }
    }

    #[test]
    fn dense_rejects_mismatch() {
        let x = Tensor::zeros(vec![1, 4]);
        let w = Tensor::zeros(vec![3, 2]);
        let b = Tensor::zeros(vec![2]);
        assert!(matches!(dense(&x, &w, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn fusion_head_width() {
        let x = Tensor::zeros(vec![1, 2051]);
        let w = Tensor::zeros(vec![2051, 15]);
        let b = Tensor::zeros(vec![15]);
        assert_eq!(dense(&x, &w, &b).unwrap().shape(), &[1, 15]);
    }

    #[test]
    fn concat_widths_and_gradient_split() {
        let a = t(vec![1, 2048], vec![0.5; 2048]);
        let b = t(vec![1, 3], vec![1.0, 0.0, 1.0]);
        let c = concat(&a, &b).unwrap();
        assert_eq!(c.shape(), &[1, 2051]);
        sum(&c).backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![1.0; 2048]);
        assert_eq!(b.grad().unwrap(), vec![1.0; 3]);
    }

    #[test]
    fn concat_with_empty_right_is_identity() {
        let a = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(vec![2, 0], vec![]).unwrap();
        let c = concat(&a, &b).unwrap();
        assert_eq!(c.shape(), a.shape());
        assert_eq!(c.to_vec(), a.to_vec());
    }

    #[test]
    fn concat_rejects_row_mismatch() {
        let a = Tensor::zeros(vec![2, 2]);
        let b = Tensor::zeros(vec![3, 1]);
        assert!(matches!(concat(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn column_gradient_is_one_hot() {
        let a = t(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let c = column(&a, 1).unwrap();
        assert_eq!(c.to_vec(), vec![2.0, 5.0]);
        sum(&c).backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![0.0, 1.0, 0.0, 0.0, 1.0, 0.0]);
    }
}
