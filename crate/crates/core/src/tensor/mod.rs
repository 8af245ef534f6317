//! Dense double-precision tensors and a reverse-mode differentiation tape.
//!
//! [`Tensor`] is a plain row-major array. Values that take part in
//! differentiation live on a [`Tape`] and are addressed through copyable
//! [`Var`] handles; parameters enter the tape as tracked leaves, data enters
//! as constants.

mod gradcheck;
mod kernels;
mod tape;

pub use gradcheck::{grad_check, grad_check_many};
pub use tape::{Tape, Var};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("axis {axis} out of range for rank {rank}")]
    AxisOutOfRange { axis: usize, rank: usize },
    #[error("backward root must be scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("{0}")]
    Invalid(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::Invalid(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..len).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Row-major flat offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        index.iter().zip(&self.shape).fold(0, |acc, (&i, &d)| {
            debug_assert!(i < d);
            acc * d + i
        })
    }

    pub fn at(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let o = self.offset(index);
        self.data[o] = value;
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape,
                rhs: shape.to_vec(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(items: &[&Tensor]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| TensorError::Invalid("stack of zero tensors".into()))?;
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(TensorError::ShapeMismatch {
                    op: "stack",
                    lhs: first.shape.clone(),
                    rhs: t.shape.clone(),
                });
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Self { shape, data })
    }

    /// Splits along the leading axis (inverse of [`Tensor::stack`]).
    pub fn unstack(&self) -> Vec<Tensor> {
        let Some((&n, rest)) = self.shape.split_first() else {
            return vec![self.clone()];
        };
        let chunk: usize = rest.iter().product();
        (0..n)
            .map(|i| Tensor {
                shape: rest.to_vec(),
                data: self.data[i * chunk..(i + 1) * chunk].to_vec(),
            })
            .collect()
    }
}

/// `(outer, len, inner)` decomposition of a shape around `axis`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(TensorError::AxisOutOfRange {
            axis,
            rank: shape.len(),
        });
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

/// Numpy-style broadcast of two shapes.
pub(crate) fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(TensorError::ShapeMismatch {
                    op,
                    lhs: a.to_vec(),
                    rhs: b.to_vec(),
                })
            }
        };
    }
    Ok(out)
}

/// For every flat position of `out`, the flat position of the broadcast source.
pub(crate) fn broadcast_offsets(out: &[usize], src: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let pad = rank - src.len();
    let mut strides = vec![0usize; rank];
    let mut acc = 1;
    for i in (0..src.len()).rev() {
        strides[i + pad] = if src[i] == 1 { 0 } else { acc };
        acc *= src[i];
    }
    let total: usize = out.iter().product();
    // Fast paths: `src` matches the trailing axes of `out` (bias-style), or
    // the leading axes followed by size-1 axes (per-row scalars).
    let src_len: usize = src.iter().product();
    let trimmed = src.iter().skip_while(|&&d| d == 1).count();
    if src_len > 0 && out[rank - trimmed..] == src[src.len() - trimmed..] {
        return (0..total).map(|i| i % src_len).collect();
    }
    let kept = src.len() - src.iter().rev().take_while(|&&d| d == 1).count();
    if src_len > 0 && kept + pad <= rank && pad == 0 && out[..kept] == src[..kept] {
        let inner = total / src_len.max(1);
        return (0..total).map(|i| i / inner).collect();
    }
    strided_offsets(out, &strides, total)
}

/// Calls `f(j, off)` for every flat output position `j` and its broadcast
/// source offset, without materializing the offset table in the common cases.
pub(crate) fn for_each_broadcast(out: &[usize], src: &[usize], mut f: impl FnMut(usize, usize)) {
    let rank = out.len();
    let pad = rank - src.len();
    let total: usize = out.iter().product();
    let src_len: usize = src.iter().product();
    if total == 0 || src_len == 0 {
        return;
    }
    let trimmed = src.iter().skip_while(|&&d| d == 1).count();
    if out[rank - trimmed..] == src[src.len() - trimmed..] {
        let mut j = 0;
        for _ in 0..total / src_len {
            for off in 0..src_len {
                f(j, off);
                j += 1;
            }
        }
        return;
    }
    let kept = src.len() - src.iter().rev().take_while(|&&d| d == 1).count();
    if pad == 0 && out[..kept] == src[..kept] {
        let inner = total / src_len;
        let mut j = 0;
        for off in 0..src_len {
            for _ in 0..inner {
                f(j, off);
                j += 1;
            }
        }
        return;
    }
    for (j, off) in broadcast_offsets(out, src).into_iter().enumerate() {
        f(j, off);
    }
}

fn strided_offsets(out: &[usize], strides: &[usize], total: usize) -> Vec<usize> {
    let rank = out.len();
    let mut offsets = Vec::with_capacity(total);
    let mut index = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..total {
        offsets.push(off);
        for d in (0..rank).rev() {
            index[d] += 1;
            off += strides[d];
            if index[d] < out[d] {
                break;
            }
            off -= strides[d] * out[d];
            index[d] = 0;
        }
    }
    offsets
}
