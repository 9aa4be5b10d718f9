//! Dense-tensor values and reverse-mode differentiation.
//!
//! [`Tensor`] is a plain value: shape, flat row-major data, storage dtype.
//! Arithmetic always runs in f64; the dtype controls the precision at which
//! a tensor is *held* between operations. Persistent state (parameters,
//! optimizer moments) uses [`DType::F32`], so the exact in-memory values
//! survive a round trip through the 32-bit checkpoint blob. Gradient checks
//! use [`DType::F64`] end to end.
//!
//! Differentiation lives in [`graph`]: a per-step tape of eagerly evaluated
//! nodes, walked once in reverse topological order by `backward`.

mod graph;
mod gradcheck;
mod optim;

pub use gradcheck::grad_check;
pub use graph::{Graph, Var};
pub use optim::{AdamConfig, OptimizerState};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Storage precision of a tensor between operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    /// Round a value to this storage precision.
    #[inline]
    pub fn quantize(self, x: f64) -> f64 {
        match self {
            DType::F32 => x as f32 as f64,
            DType::F64 => x,
        }
    }
}

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    dtype: DType,
}

impl Tensor {
    pub fn zeros(shape: &[usize], dtype: DType) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
            dtype,
        }
    }

    pub fn scalar(x: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![x],
            dtype: DType::F64,
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>, dtype: DType) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::BadShape {
                op: "from_vec",
                expected: format!("{n} elements"),
                got: vec![data.len()],
            });
        }
        let mut t = Tensor {
            shape: shape.to_vec(),
            data,
            dtype,
        };
        t.quantize_in_place();
        Ok(t)
    }

    /// 2-D f64 tensor from flat row-major data.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::from_vec(&[rows, cols], data, DType::F64)
    }

    /// Gaussian init, N(0, std^2), from the given RNG.
    pub fn randn<R: rand::Rng>(shape: &[usize], std: f64, rng: &mut R, dtype: DType) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let g: f64 = rng.sample(rand_distr::StandardNormal);
                dtype.quantize(g * std)
            })
            .collect();
        Tensor {
            shape: shape.to_vec(),
            data,
            dtype,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dtype(&self) -> DType {
        self.dtype
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

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.iter().all(|&d| d == 1)
    }

    /// Scalar value; panics if not a scalar.
    pub fn item(&self) -> f64 {
        assert!(self.is_scalar(), "item() on non-scalar {:?}", self.shape);
        self.data[0]
    }

    /// Rows of a 2-D tensor (a 1-D tensor counts as one row).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            2 => self.shape[0],
            _ => panic!("rows() on {}-d tensor", self.shape.len()),
        }
    }

    /// Columns of a 2-D tensor (length of a 1-D tensor).
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            2 => self.shape[1],
            _ => panic!("cols() on {}-d tensor", self.shape.len()),
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn get2(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn set2(&mut self, r: usize, c: usize, v: f64) {
        let cols = self.cols();
        self.data[r * cols + c] = self.dtype.quantize(v);
    }

    /// Reinterpret the shape; element count must match.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::BadShape {
                op: "reshape",
                expected: format!("{} elements", self.data.len()),
                got: shape.to_vec(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
            dtype: self.dtype,
        })
    }

    pub fn quantize_in_place(&mut self) {
        if self.dtype == DType::F32 {
            for v in &mut self.data {
                *v = *v as f32 as f64;
            }
        }
    }

    /// Same values retagged to a different storage dtype (quantizing if F32).
    pub fn with_dtype(&self, dtype: DType) -> Tensor {
        let mut t = self.clone();
        t.dtype = dtype;
        t.quantize_in_place();
        t
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn first_nonfinite(&self) -> Option<usize> {
        self.data.iter().position(|v| !v.is_finite())
    }

    /// Little-endian f32 encoding of the data, the checkpoint wire format.
    pub fn to_f32_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len() * 4);
        for &v in &self.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_f32_le_bytes(shape: &[usize], dtype: DType, bytes: &[u8]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if bytes.len() != n * 4 {
            return Err(Error::Checkpoint(format!(
                "tensor byte length {} does not match shape {:?}",
                bytes.len(),
                shape
            )));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        Tensor::from_vec(shape, data, dtype)
    }
}

/// Row-major matmul kernel: C = alpha * A(m x k) * B(k x n) + beta * C.
///
/// `ta`/`tb` treat the buffer as the transpose of a stored row-major
/// (k x m) / (n x k) matrix without copying.
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
