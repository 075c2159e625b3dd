// SPDX-License-Identifier: Apache-2.0

//! Static shapes of tensors and of function values.
//!
//! A function value has the shape `F[ret, arg0, arg1, ...]`: one return
//! tensor shape followed by the shape of every argument. Functions produced
//! by `zip` return several tensors; their return slot renders as a tuple,
//! `F[(f[],f[3]),f[],f[3]]`.

use std::fmt;

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};

#[derive(Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct TensorShape(SmallVec<[usize; 4]>);

impl TensorShape {
    pub fn scalar() -> Self {
        TensorShape(SmallVec::new())
    }

    pub fn new(dims: &[usize]) -> Self {
        TensorShape(SmallVec::from_slice(dims))
    }

    pub fn vector(n: usize) -> Self {
        Self::new(&[n])
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.0.is_empty()
    }

    /// Number of elements; 1 for a scalar.
    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    pub fn concat(&self, other: &TensorShape) -> TensorShape {
        let mut dims = self.0.clone();
        dims.extend_from_slice(&other.0);
        TensorShape(dims)
    }

    pub fn split_at(&self, mid: usize) -> (TensorShape, TensorShape) {
        let (a, b) = self.0.split_at(mid);
        (TensorShape::new(a), TensorShape::new(b))
    }
}

impl fmt::Display for TensorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "f[")?;
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, "]")
    }
}

impl fmt::Debug for TensorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl From<&[usize]> for TensorShape {
    fn from(dims: &[usize]) -> Self {
        TensorShape::new(dims)
    }
}

#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FunctionSignature {
    rets: Vec<TensorShape>,
    args: Vec<TensorShape>,
}

impl FunctionSignature {
    pub fn new(ret: TensorShape, args: Vec<TensorShape>) -> Result<Self> {
        Self::multi(vec![ret], args)
    }

    pub fn multi(rets: Vec<TensorShape>, args: Vec<TensorShape>) -> Result<Self> {
        if args.is_empty() {
            return Err(Error::ArityMismatch { expected: 1, actual: 0 });
        }
        if rets.is_empty() {
            return Err(Error::ShapeMismatch("a function returns at least one tensor".into()));
        }
        Ok(FunctionSignature { rets, args })
    }

    /// `R -> R`.
    pub fn scalar_fn(nargs: usize) -> Self {
        FunctionSignature { rets: vec![TensorShape::scalar()], args: vec![TensorShape::scalar(); nargs.max(1)] }
    }

    /// The single return shape. Fails for tuple-returning functions.
    pub fn ret(&self) -> Result<&TensorShape> {
        match self.rets.as_slice() {
            [r] => Ok(r),
            _ => Err(Error::Unsupported(format!("{self} returns a tuple; project a component first"))),
        }
    }

    pub fn rets(&self) -> &[TensorShape] {
        &self.rets
    }

    pub fn args(&self) -> &[TensorShape] {
        &self.args
    }

    pub fn arity(&self) -> usize {
        self.args.len()
    }

    pub fn is_tuple(&self) -> bool {
        self.rets.len() > 1
    }
}

impl fmt::Display for FunctionSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "F[")?;
        if let [r] = self.rets.as_slice() {
            write!(f, "{r}")?;
        } else {
            write!(f, "(")?;
            for (i, r) in self.rets.iter().enumerate() {
                if i > 0 {
                    write!(f, ",")?;
                }
                write!(f, "{r}")?;
            }
            write!(f, ")")?;
        }
        for a in &self.args {
            write!(f, ",{a}")?;
        }
        write!(f, "]")
    }
}

impl fmt::Debug for FunctionSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// Shape rule for `compose(outer, inners)`: every inner takes the same
/// arguments, and the inners' return slots, concatenated, feed the outer's
/// arguments in order.
pub fn check_compose(outer: &FunctionSignature, inners: &[FunctionSignature]) -> Result<FunctionSignature> {
    let first = inners.first().ok_or(Error::ArityMismatch { expected: outer.arity(), actual: 0 })?;
    for (i, g) in inners.iter().enumerate().skip(1) {
        if g.args != first.args {
            return Err(Error::ShapeMismatch(format!(
                "inner {i} has signature {g} but inner 0 has {first}; inners must share arguments"
            )));
        }
    }
    let fed: Vec<&TensorShape> = inners.iter().flat_map(|g| g.rets.iter()).collect();
    if fed.len() != outer.arity() {
        return Err(Error::ArityMismatch { expected: outer.arity(), actual: fed.len() });
    }
    for (i, (want, got)) in outer.args.iter().zip(fed).enumerate() {
        if want != got {
            return Err(Error::ShapeMismatch(format!("outer argument {i} expects {want} but the inner returns {got}")));
        }
    }
    Ok(FunctionSignature { rets: outer.rets.clone(), args: first.args.clone() })
}

/// Shape of the derivative function: the differentiated argument's dims are
/// appended to the return dims. Other arguments are unchanged.
pub fn nabla_signature(s: &FunctionSignature, argnum: usize) -> Result<FunctionSignature> {
    let a = s.args.get(argnum).ok_or(Error::IndexOutOfRange { index: argnum, len: s.arity() })?;
    let ret = s.ret()?.concat(a);
    Ok(FunctionSignature { rets: vec![ret], args: s.args.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig(ret: &[usize], args: &[&[usize]]) -> FunctionSignature {
        FunctionSignature::new(TensorShape::new(ret), args.iter().map(|a| TensorShape::new(a)).collect()).unwrap()
    }

    #[test]
    fn renders_bracket_notation() {
        assert_eq!(sig(&[], &[&[3], &[2, 3]]).to_string(), "F[f[],f[3],f[2,3]]");
    }

    #[test]
    fn compose_substitutes_shapes() {
        let out = check_compose(&sig(&[], &[&[3]]), &[sig(&[3], &[&[2]])]).unwrap();
        assert_eq!(out, sig(&[], &[&[2]]));
        let bin = sig(&[], &[&[], &[]]);
        let g = sig(&[], &[&[5]]);
        assert_eq!(check_compose(&bin, &[g.clone(), g]).unwrap(), sig(&[], &[&[5]]));
    }

    #[test]
    fn compose_rejects_mismatch() {
        let err = check_compose(&sig(&[], &[&[3]]), &[sig(&[2], &[&[4]])]).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch(m) if m.contains("f[3]") && m.contains("f[2]")));
        let err = check_compose(&sig(&[], &[&[], &[]]), &[sig(&[], &[&[]])]).unwrap_err();
        assert!(matches!(err, Error::ArityMismatch { expected: 2, actual: 1 }));
    }

    #[test]
    fn compose_with_identity_keeps_signature() {
        let f = sig(&[2], &[&[3]]);
        let id = sig(&[3], &[&[3]]);
        assert_eq!(check_compose(&f, &[id]).unwrap(), f);
    }

    #[test]
    fn nabla_appends_argument_shape() {
        assert_eq!(nabla_signature(&sig(&[], &[&[3]]), 0).unwrap(), sig(&[3], &[&[3]]));
        assert_eq!(nabla_signature(&sig(&[], &[&[]]), 0).unwrap(), sig(&[], &[&[]]));
        assert_eq!(nabla_signature(&sig(&[2], &[&[3]]), 0).unwrap(), sig(&[2, 3], &[&[3]]));
        let h = nabla_signature(&nabla_signature(&sig(&[], &[&[3]]), 0).unwrap(), 0).unwrap();
        assert_eq!(h, sig(&[3, 3], &[&[3]]));
        assert!(matches!(nabla_signature(&sig(&[], &[&[]]), 1), Err(Error::IndexOutOfRange { index: 1, len: 1 })));
    }

    #[test]
    fn empty_args_rejected() {
        assert!(FunctionSignature::new(TensorShape::scalar(), vec![]).is_err());
    }
}
