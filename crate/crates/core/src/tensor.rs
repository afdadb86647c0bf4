//! Minimal deterministic f32 kernels.
//!
//! Everything here is scalar code with a fixed, ascending-index reduction
//! order and no reassociation, so any output row is bit-identical whether it
//! is computed alone or as part of a larger product. The pipelined decoder's
//! exact-equivalence guarantee rests on that property: a token forwarded
//! incrementally must produce the same bits as the same token forwarded
//! inside a baseline run.

use crate::error::{Error, Result};

/// Dense row-major f32 matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2D {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Tensor2D {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                op: "Tensor2D::new",
                detail: format!("{rows}x{cols} needs {} values, got {}", rows * cols, data.len()),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f32] {
        debug_assert!(r < self.rows);
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Single-row view of a slice, for vector-times-matrix products.
    pub fn from_row(v: &[f32]) -> Self {
        Self { rows: 1, cols: v.len(), data: v.to_vec() }
    }
}

/// Standard matrix product with the reduction over the shared dimension
/// performed in ascending index order.
pub fn matmul(a: &Tensor2D, b: &Tensor2D) -> Result<Tensor2D> {
    if a.cols != b.rows {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            detail: format!("{}x{} times {}x{}", a.rows, a.cols, b.rows, b.cols),
        });
    }
    let mut out = vec![0.0f32; a.rows * b.cols];
    for r in 0..a.rows {
        for c in 0..b.cols {
            let mut acc = 0.0f32;
            for k in 0..a.cols {
                acc += a.data[r * a.cols + k] * b.data[k * b.cols + c];
            }
            out[r * b.cols + c] = acc;
        }
    }
    Tensor2D::new(a.rows, b.cols, out)
}

/// Vector times matrix: `v` (length `m.rows()`) against every column of `m`.
pub fn matvec(v: &[f32], m: &Tensor2D) -> Result<Vec<f32>> {
    let row = Tensor2D::from_row(v);
    Ok(matmul(&row, m)?.data)
}

/// Max-subtracted softmax.
pub fn softmax(v: &[f32]) -> Result<Vec<f32>> {
    if v.is_empty() {
        return Err(Error::EmptyInput("softmax"));
    }
    let mut max = v[0];
    for &x in &v[1..] {
        if x > max {
            max = x;
        }
    }
    let mut out: Vec<f32> = v.iter().map(|&x| (x - max).exp()).collect();
    let mut sum = 0.0f32;
    for &e in &out {
        sum += e;
    }
    for e in &mut out {
        *e /= sum;
    }
    Ok(out)
}

/// Layer normalization: zero mean, unit variance, then affine gain/bias.
pub fn layer_norm(v: &[f32], gain: &[f32], bias: &[f32], eps: f32) -> Result<Vec<f32>> {
    if v.is_empty() {
        return Err(Error::EmptyInput("layer_norm"));
    }
    if gain.len() != v.len() || bias.len() != v.len() {
        return Err(Error::ShapeMismatch {
            op: "layer_norm",
            detail: format!("value {} gain {} bias {}", v.len(), gain.len(), bias.len()),
        });
    }
    let n = v.len() as f32;
    let mut mean = 0.0f32;
    for &x in v {
        mean += x;
    }
    mean /= n;
    let mut var = 0.0f32;
    for &x in v {
        let d = x - mean;
        var += d * d;
    }
    var /= n;
    let inv = 1.0f32 / (var + eps).sqrt();
    Ok(v.iter()
        .zip(gain.iter().zip(bias))
        .map(|(&x, (&g, &b))| (x - mean) * inv * g + b)
        .collect())
}

/// GELU, tanh approximation. The one activation used by the toy decoder.
pub fn gelu(v: &[f32]) -> Vec<f32> {
    const SQRT_2_OVER_PI: f32 = 0.797_884_6;
    v.iter()
        .map(|&x| 0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + 0.044715 * x * x * x)).tanh()))
        .collect()
}
