// SPDX-License-Identifier: Apache-2.0

//! Dense row-major `f64` tensors and the numeric kernels the engine needs.

use std::fmt;

use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::signature::TensorShape;

pub type Data = SmallVec<[f64; 4]>;

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: TensorShape,
    data: Data,
}

impl Tensor {
    pub fn new(shape: TensorShape, data: Vec<f64>) -> Result<Self> {
        if shape.numel() != data.len() {
            return Err(Error::ShapeMismatch(format!("{} elements do not fill {shape}", data.len())));
        }
        Ok(Tensor { shape, data: Data::from_vec(data) })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: TensorShape::scalar(), data: smallvec::smallvec![v] }
    }

    pub fn vector(v: &[f64]) -> Self {
        Tensor { shape: TensorShape::vector(v.len()), data: Data::from_slice(v) }
    }

    pub fn filled(shape: TensorShape, v: f64) -> Self {
        let n = shape.numel();
        Tensor { shape, data: smallvec::smallvec![v; n] }
    }

    pub fn zeros(shape: TensorShape) -> Self {
        Self::filled(shape, 0.0)
    }

    /// One-hot tensor with a 1 at row-major position `flat`.
    pub fn basis(shape: TensorShape, flat: usize) -> Self {
        let mut t = Self::zeros(shape);
        t.data[flat] = 1.0;
        t
    }

    /// Identity over `block ++ block`: `I[i, j] = [i == j]` with `i, j` flat
    /// indices into `block`.
    pub fn identity(block: &TensorShape) -> Self {
        let m = block.numel();
        let mut t = Self::zeros(block.concat(block));
        for i in 0..m {
            t.data[i * m + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &TensorShape {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Data {
        self.data
    }

    /// The value of a rank-0 tensor (or the first element otherwise).
    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Full elementwise contraction.
    pub fn dot_all(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Little-endian bytes of shape and data; the canonical cache digest input.
    pub fn write_bytes(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.shape.rank() as u32).to_le_bytes());
        for d in self.shape.dims() {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.shape.is_scalar() {
            write!(f, "{}", self.data[0])
        } else {
            write!(f, "{}{:?}", self.shape, self.data.as_slice())
        }
    }
}

/// Result shape of an elementwise binary op with rank-0 broadcasting.
pub fn broadcast_shape(a: &TensorShape, b: &TensorShape) -> Result<TensorShape> {
    if a == b || b.is_scalar() {
        Ok(a.clone())
    } else if a.is_scalar() {
        Ok(b.clone())
    } else {
        Err(Error::ShapeMismatch(format!("cannot broadcast {a} with {b}")))
    }
}

pub fn zip_with(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    if a.shape == b.shape {
        let data = a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
        Tensor { shape: a.shape.clone(), data }
    } else if b.shape.is_scalar() {
        let y = b.data[0];
        a.map(|x| f(x, y))
    } else {
        let x = a.data[0];
        b.map(|y| f(x, y))
    }
}

pub fn sum(a: &Tensor) -> Tensor {
    Tensor::scalar(a.data.iter().sum())
}

pub fn tensordot_shape(a: &TensorShape, b: &TensorShape, k: usize) -> Result<TensorShape> {
    if k > a.rank() || k > b.rank() || a.dims()[a.rank() - k..] != b.dims()[..k] {
        return Err(Error::ShapeMismatch(format!("cannot contract {k} axes of {a} with {b}")));
    }
    let (p, _) = a.split_at(a.rank() - k);
    let (_, q) = b.split_at(k);
    Ok(p.concat(&q))
}

/// Contract the last `k` axes of `a` with the first `k` axes of `b`.
pub fn tensordot(a: &Tensor, b: &Tensor, k: usize) -> Tensor {
    let (p, kk) = a.shape.split_at(a.shape.rank() - k);
    let (_, q) = b.shape.split_at(k);
    let (np, nk, nq) = (p.numel(), kk.numel(), q.numel());
    let mut data: Data = smallvec::smallvec![0.0; np * nq];
    for i in 0..np {
        for l in 0..nk {
            let av = a.data[i * nk + l];
            if av == 0.0 {
                continue;
            }
            let brow = &b.data[l * nq..(l + 1) * nq];
            let out = &mut data[i * nq..(i + 1) * nq];
            for (o, bv) in out.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor { shape: p.concat(&q), data }
}

fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1; dims.len()];
    for i in (0..dims.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * dims[i + 1];
    }
    s
}

pub fn permute_shape(a: &TensorShape, perm: &[usize]) -> TensorShape {
    TensorShape::new(&perm.iter().map(|&p| a.dims()[p]).collect::<Vec<_>>())
}

/// Output axis `i` is input axis `perm[i]`.
pub fn permute_axes(a: &Tensor, perm: &[usize]) -> Tensor {
    let out_shape = permute_shape(&a.shape, perm);
    let in_strides = strides(a.shape.dims());
    let out_dims = out_shape.dims().to_vec();
    let n = out_shape.numel();
    let mut data: Data = smallvec::smallvec![0.0; n];
    let mut idx = vec![0usize; out_dims.len()];
    for slot in data.iter_mut() {
        let src: usize = idx.iter().zip(perm).map(|(&i, &p)| i * in_strides[p]).sum();
        *slot = a.data[src];
        for ax in (0..idx.len()).rev() {
            idx[ax] += 1;
            if idx[ax] < out_dims[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    Tensor { shape: out_shape, data }
}

/// `R ++ B ++ B -> R`, summing the diagonal of the trailing block pair.
pub fn trace(a: &Tensor, block: &TensorShape) -> Tensor {
    let m = block.numel();
    let r = a.shape.rank() - 2 * block.rank();
    let (rs, _) = a.shape.split_at(r);
    let nr = rs.numel();
    let data = (0..nr).map(|i| (0..m).map(|j| a.data[i * m * m + j * m + j]).sum()).collect();
    Tensor { shape: rs, data }
}

/// Stack `m` tensors of shape `R` into `R ++ tail`, operand `j` at trailing
/// flat index `j`.
pub fn stack_last(parts: &[&Tensor], tail: &TensorShape) -> Tensor {
    let m = parts.len();
    let rshape = parts[0].shape.clone();
    let nr = rshape.numel();
    let mut data: Data = smallvec::smallvec![0.0; nr * m];
    for (j, p) in parts.iter().enumerate() {
        for i in 0..nr {
            data[i * m + j] = p.data[i];
        }
    }
    Tensor { shape: rshape.concat(tail), data }
}

pub fn slice_last(a: &Tensor, tail: &TensorShape, j: usize) -> Tensor {
    let m = tail.numel();
    let (rs, _) = a.shape.split_at(a.shape.rank() - tail.rank());
    let data = (0..rs.numel()).map(|i| a.data[i * m + j]).collect();
    Tensor { shape: rs, data }
}

pub fn reshape(a: &Tensor, shape: &TensorShape) -> Tensor {
    Tensor { shape: shape.clone(), data: a.data.clone() }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::new(TensorShape::new(shape), v.to_vec()).unwrap()
    }

    #[test]
    fn matvec_and_outer() {
        let m = t(&[2, 3], &[1., 2., 3., 4., 5., 6.]);
        let x = t(&[3], &[1., 0., -1.]);
        assert_eq!(tensordot(&m, &x, 1).data(), &[-2., -2.]);
        let o = tensordot(&t(&[2], &[1., 2.]), &t(&[2], &[3., 4.]), 0);
        assert_eq!(o.shape(), &TensorShape::new(&[2, 2]));
        assert_eq!(o.data(), &[3., 4., 6., 8.]);
    }

    #[test]
    fn permute_is_matrix_transpose() {
        let m = t(&[2, 3], &[1., 2., 3., 4., 5., 6.]);
        let mt = permute_axes(&m, &[1, 0]);
        assert_eq!(mt.shape(), &TensorShape::new(&[3, 2]));
        assert_eq!(mt.data(), &[1., 4., 2., 5., 3., 6.]);
    }

    #[test]
    fn trace_of_block() {
        let m = t(&[2, 2], &[1., 2., 3., 4.]);
        assert_eq!(trace(&m, &TensorShape::vector(2)).item(), 5.0);
        assert_eq!(trace(&Tensor::scalar(7.0), &TensorShape::scalar()).item(), 7.0);
    }

    #[test]
    fn stack_then_slice() {
        let a = t(&[2], &[1., 2.]);
        let b = t(&[2], &[3., 4.]);
        let s = stack_last(&[&a, &b], &TensorShape::vector(2));
        assert_eq!(s.data(), &[1., 3., 2., 4.]);
        assert_eq!(slice_last(&s, &TensorShape::vector(2), 1), b);
    }
}
