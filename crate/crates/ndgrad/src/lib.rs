//! Minimal dense tensor library with tape-based reverse-mode automatic
//! differentiation. Covers exactly the operations a conditional waveform
//! flow needs: dilated 1-D convolution, per-frame channel mixing, embedding
//! lookup, pointwise math, reductions, and a differentiable log-determinant.
//!
//! Graphs are rebuilt every iteration and replay deterministically; training
//! typically runs in `f32` while verification (finite-difference gradient and
//! Jacobian checks) runs in `f64`.

mod check;
mod error;
mod graph;
mod kernels;
mod param;
mod tensor;

pub use check::{grad_check, GradCheckReport, GradCheckSettings};
pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use param::{accumulate_grads, grad_norm, param_count, zero_grads, ParamModule, Parameter};
pub use tensor::Tensor;

pub mod raw {
    //! Kernels shared with inference paths that run without a tape.
    pub use crate::kernels::{conv1d, invert, logabsdet, matmul_ct};
}

/// Element-type tag used by serialized tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn tag(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Dtype::F32),
            1 => Some(Dtype::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// Floating-point element type of tensors: `f32` for training and inference,
/// `f64` for verification paths.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + std::fmt::Debug
    + std::fmt::Display
    + std::default::Default
    + Send
    + Sync
    + 'static
{
    const DTYPE: Dtype;

    fn of_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const DTYPE: Dtype = Dtype::F32;

    fn of_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Scalar for f64 {
    const DTYPE: Dtype = Dtype::F64;

    fn of_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}
