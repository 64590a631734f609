//! Dense row-major tensors (rank 1 or 2) over f64, plus the handful of
//! kernels the autograd primitives are built from.
//!
//! This is deliberately not a general nd-array: every shape in the component
//! is a matrix (batch x features, in x out) or a vector (bias, scalar loss),
//! and the fixed primitive set only ever needs plain matmul in its three
//! transpose flavors, broadcast bias-add, and elementwise maps.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Owned dense tensor. `shape` has length 1 or 2; `data` is row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Build from an explicit shape and row-major data. The element count
    /// must match the shape product and the rank must be 1 or 2.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 2 {
            return Err(Error::contract(format!(
                "tensor rank must be 1 or 2, got shape {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::contract(format!(
                "shape {shape:?} implies {numel} elements but data has {}",
                data.len()
            )));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        Tensor::new(shape, vec![0.0; numel])
    }

    pub fn scalar(x: f64) -> Self {
        Tensor { shape: vec![1], data: vec![x] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Rows of a matrix, or the length of a vector.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Columns of a matrix; a vector is treated as a single row.
    pub fn cols(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[1]
        } else {
            self.shape[0]
        }
    }

    pub fn is_matrix(&self) -> bool {
        self.shape.len() == 2
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::contract(format!(
                "item() needs a one-element tensor, shape is {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Elementwise map into a new tensor.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }
}

fn check_matrix(t: &Tensor, role: &str) -> Result<()> {
    if !t.is_matrix() {
        return Err(Error::contract(format!(
            "{role} must be a matrix, got shape {:?}",
            t.shape()
        )));
    }
    Ok(())
}

/// C = A . B for [m x k] . [k x n]. Inner loops run over contiguous rows
/// (i-k-j order) so the hot path is slice scaling, not strided dots.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_matrix(a, "matmul lhs")?;
    check_matrix(b, "matmul rhs")?;
    let (m, k) = (a.shape[0], a.shape[1]);
    let (k2, n) = (b.shape[0], b.shape[1]);
    if k != k2 {
        return Err(Error::contract(format!(
            "matmul shape mismatch: [{m} x {k}] . [{k2} x {n}]"
        )));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a.data[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let b_row = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
    Ok(Tensor { shape: vec![m, n], data: out })
}

/// C = A . B^T for [m x k] . [n x k]^T -> [m x n]. Used by backward passes.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_matrix(a, "matmul_nt lhs")?;
    check_matrix(b, "matmul_nt rhs")?;
    let (m, k) = (a.shape[0], a.shape[1]);
    let (n, k2) = (b.shape[0], b.shape[1]);
    if k != k2 {
        return Err(Error::contract(format!(
            "matmul_nt shape mismatch: [{m} x {k}] . [{n} x {k2}]^T"
        )));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let a_row = &a.data[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b.data[j * k..(j + 1) * k];
            out[i * n + j] = a_row.iter().zip(b_row).map(|(&x, &y)| x * y).sum();
        }
    }
    Ok(Tensor { shape: vec![m, n], data: out })
}

/// C = A^T . B for [k x m]^T . [k x n] -> [m x n]. Used by backward passes.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_matrix(a, "matmul_tn lhs")?;
    check_matrix(b, "matmul_tn rhs")?;
    let (k, m) = (a.shape[0], a.shape[1]);
    let (k2, n) = (b.shape[0], b.shape[1]);
    if k != k2 {
        return Err(Error::contract(format!(
            "matmul_tn shape mismatch: [{k} x {m}]^T . [{k2} x {n}]"
        )));
    }
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let b_row = &b.data[p * n..(p + 1) * n];
        for i in 0..m {
            let api = a.data[p * m + i];
            if api == 0.0 {
                continue;
            }
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += api * bv;
            }
        }
    }
    Ok(Tensor { shape: vec![m, n], data: out })
}

/// Broadcast-add a length-n bias vector to every row of an [m x n] matrix.
pub fn bias_add(x: &Tensor, bias: &Tensor) -> Result<Tensor> {
    check_matrix(x, "bias_add input")?;
    if bias.shape.len() != 1 {
        return Err(Error::contract(format!(
            "bias must be a vector, got shape {:?}",
            bias.shape()
        )));
    }
    let (m, n) = (x.shape[0], x.shape[1]);
    if bias.numel() != n {
        return Err(Error::contract(format!(
            "bias length {} does not match matrix width {n}",
            bias.numel()
        )));
    }
    let mut out = x.data.clone();
    for i in 0..m {
        for (o, &b) in out[i * n..(i + 1) * n].iter_mut().zip(&bias.data) {
            *o += b;
        }
    }
    Ok(Tensor { shape: vec![m, n], data: out })
}

/// Elementwise max(x, 0). The derivative at exactly 0 is taken as 0.
pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}
