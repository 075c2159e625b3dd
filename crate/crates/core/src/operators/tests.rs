// SPDX-License-Identifier: Apache-2.0

use super::*;
use crate::quadrature::{inner_product, Grid};
use std::f64::consts::PI;

fn s() -> TensorShape {
    TensorShape::scalar()
}

fn sin() -> FunctionValue {
    FunctionValue::scalar_fn(|x| x.sin())
}

fn exp() -> FunctionValue {
    FunctionValue::scalar_fn(|x| x.exp())
}

fn close(a: f64, b: f64, tol: f64) {
    assert!((a - b).abs() <= tol, "{a} vs {b}");
}

#[test]
fn compose_examples() {
    let square = FunctionValue::scalar_fn(|x| x.powf(2.0));
    close(compose(&square, &[sin()]).unwrap().at(PI / 2.0).unwrap(), 1.0, 1e-15);
    let add2 = FunctionValue::build(vec![s(), s()], |x| x[0].add(&x[1])).unwrap();
    let h = compose(&add2, &[sin(), exp()]).unwrap();
    close(h.at(1.0).unwrap(), 1f64.sin() + 1f64.exp(), 1e-15);
    let id = compose(&sin(), &[FunctionValue::identity(s())]).unwrap();
    for i in 0..100 {
        let x = -3.0 + 0.06 * i as f64;
        close(id.at(x).unwrap(), x.sin(), 1e-15);
    }
}

#[test]
fn compose_shape_errors() {
    let v3 = FunctionValue::build(vec![TensorShape::vector(3)], |x| Ok(x[0].sum())).unwrap();
    let g = FunctionValue::build(vec![TensorShape::vector(4)], |x| x[0].index(0)?.broadcast_to(TensorShape::vector(2)))
        .unwrap();
    assert!(matches!(compose(&v3, &[g]), Err(Error::ShapeMismatch(_))));
}

#[test]
fn nabla_examples() {
    let d = nabla(&sin(), 0).unwrap();
    let dd = nabla(&d, 0).unwrap();
    for x in [-1.0, 0.2, 2.5] {
        close(d.at(x).unwrap(), f64::cos(x), 1e-12);
        close(dd.at(x).unwrap(), -f64::sin(x), 1e-12);
    }
    let norm2 = FunctionValue::build(vec![TensorShape::vector(3)], |x| Ok(x[0].mul(&x[0])?.sum())).unwrap();
    let g = nabla(&norm2, 0).unwrap();
    assert_eq!(g.signature().to_string(), "F[f[3],f[3]]");
    assert_eq!(g.call(&[Tensor::vector(&[1., 2., 3.])]).unwrap(), Tensor::vector(&[2., 4., 6.]));
    assert!(matches!(nabla(&sin(), 1), Err(Error::IndexOutOfRange { .. })));
}

#[test]
fn linearize_examples() {
    let l = linearize(&sin()).unwrap();
    assert_eq!(l.linear_flags(), vec![false, true]);
    close(l.call(&[Tensor::scalar(0.0), Tensor::scalar(1.0)]).unwrap().item(), 1.0, 1e-15);
    let sq = linearize(&FunctionValue::scalar_fn(|x| x.powf(2.0))).unwrap();
    close(sq.call(&[Tensor::scalar(3.0), Tensor::scalar(2.0)]).unwrap().item(), 12.0, 1e-13);
}

#[test]
fn transpose_examples() {
    let m = Tensor::new(TensorShape::new(&[2, 3]), vec![1., 2., 3., 4., 5., 6.]).unwrap();
    let f = FunctionValue::build(vec![TensorShape::vector(3)], |x| Expr::constant(m.clone()).dot(&x[0])).unwrap();
    assert_eq!(f.linear_flags(), vec![true]);
    let t = linear_transpose(&f, 0).unwrap();
    let tt = linear_transpose(&t, 0).unwrap();
    for j in 0..2 {
        let col = t.call(&[Tensor::basis(TensorShape::vector(2), j)]).unwrap();
        assert_eq!(col.data(), &m.data()[j * 3..j * 3 + 3]);
    }
    for j in 0..3 {
        let e = Tensor::basis(TensorShape::vector(3), j);
        assert_eq!(tt.call(std::slice::from_ref(&e)).unwrap(), f.call(&[e]).unwrap());
    }
    assert!(matches!(linear_transpose(&sin(), 0), Err(Error::NotLinear(_))));
    let lt = linear_transpose(&linearize(&sin()).unwrap(), 1).unwrap();
    close(lt.call(&[Tensor::scalar(0.4), Tensor::scalar(2.0)]).unwrap().item(), 2.0 * 0.4f64.cos(), 1e-15);
}

#[test]
fn integrate_examples() {
    let g = Grid::gauss_legendre(0.0, 1.0, 64).unwrap();
    let x = FunctionValue::identity(s());
    let v = integrate(&x, 0, &g).unwrap().into_functional().unwrap().value().unwrap();
    close(v.item(), 0.5, 1e-14);
    let sym = Grid::gauss_legendre(-1.0, 1.0, 4).unwrap();
    let cube = FunctionValue::scalar_fn(|x| x.powf(3.0));
    close(integrate(&cube, 0, &sym).unwrap().into_functional().unwrap().value().unwrap().item(), 0.0, 1e-15);
    let sp = FunctionValue::scalar_fn(|x| x.scale(PI).sin());
    let v = integrate(&sp, 0, &g).unwrap().into_functional().unwrap().value().unwrap();
    close(v.item(), 2.0 / PI, 1e-14);
    let vec_grid = Grid::product(&[g.clone(), g]).unwrap();
    assert!(matches!(integrate(&sp, 0, &vec_grid), Err(Error::ShapeMismatch(_))));
}

#[test]
fn partial_integration_keeps_flags() {
    let g = Grid::gauss_legendre(0.0, 1.0, 8).unwrap();
    // (x, y) -> x * y is linear in y
    let f = FunctionValue::build(vec![s(), s()], |a| a[0].mul(&a[1])).unwrap();
    assert_eq!(f.linear_flags(), vec![true, false]);
    let p = permute_args(&f, &[1, 0]).unwrap();
    assert_eq!(p.linear_flags(), vec![false, true]);
    let r = integrate(&p, 0, &g).unwrap().into_function().unwrap();
    assert_eq!(r.linear_flags(), vec![true]);
    close(r.at(2.0).unwrap(), 1.0, 1e-14);
}

#[test]
fn permute_examples() {
    let sub2 = FunctionValue::build(vec![s(), s()], |x| x[0].sub(&x[1])).unwrap();
    let p = permute_args(&sub2, &[1, 0]).unwrap();
    assert_eq!(p.call(&[Tensor::scalar(2.0), Tensor::scalar(5.0)]).unwrap().item(), 3.0);
    let pp = permute_args(&p, &inverse_permutation(&[1, 0])).unwrap();
    assert_eq!(pp.call(&[Tensor::scalar(2.0), Tensor::scalar(5.0)]).unwrap().item(), -3.0);
    let f = FunctionValue::build(vec![TensorShape::vector(2), TensorShape::vector(3)], |x| x[0].sum().add(&x[1].sum()))
        .unwrap();
    assert_eq!(permute_args(&f, &[1, 0]).unwrap().signature().to_string(), "F[f[],f[3],f[2]]");
    assert!(matches!(permute_args(&f, &[0, 0]), Err(Error::InvalidPermutation(_))));
}

#[test]
fn zip_examples() {
    let z = zip_functions(&sin(), &exp()).unwrap();
    let v = z.eval_in(&[Tensor::scalar(0.0), Tensor::scalar(0.0)], &mut EvalSession::new()).unwrap();
    assert_eq!((v[0].item(), v[1].item()), (0.0, 1.0));
    let g3 = FunctionValue::build(vec![TensorShape::vector(3)], |x| Ok(x[0].sum())).unwrap();
    assert_eq!(zip_functions(&sin(), &g3).unwrap().signature().to_string(), "F[(f[],f[]),f[],f[3]]");
    let first = FunctionValue::build(vec![s(), s()], |x| Ok(x[0].clone())).unwrap();
    let back = compose(&first, &[z]).unwrap();
    close(back.call(&[Tensor::scalar(0.3), Tensor::scalar(9.0)]).unwrap().item(), 0.3f64.sin(), 0.0);
}

#[test]
fn broadcast_examples() {
    let b = broadcast_fn(&sin(), &[s()], &[0]).unwrap();
    close(b.call(&[Tensor::scalar(7.0), Tensor::scalar(PI / 2.0)]).unwrap().item(), 1.0, 1e-15);
    let g = Grid::gauss_legendre(0.0, 1.0, 16).unwrap();
    let one = FunctionValue::build(vec![s(), s()], |_| Ok(Expr::scalar(1.0))).unwrap();
    let ex = exp();
    let t = integral_transform(&one, &ex, &g).unwrap();
    close(t.at(0.3).unwrap(), 1f64.exp() - 1.0, 1e-13);
    assert!(matches!(broadcast_fn(&sin(), &[s()], &[5]), Err(Error::IndexOutOfRange { .. })));
}

#[test]
fn sugar_examples() {
    close(sin().add(&exp()).unwrap().at(0.0).unwrap(), 1.0, 0.0);
    let prod = sin().mul(&exp()).unwrap();
    close(prod.at(0.8).unwrap(), 0.8f64.sin() * 0.8f64.exp(), 1e-15);
    let y = FunctionValue::scalar_fn(|x| x.powf(2.0).neg());
    let num = nabla(&y, 0).unwrap().powf(2.0).unwrap().shift(1.0).unwrap().sqrt().unwrap();
    close(num.at(0.5).unwrap(), 2f64.sqrt(), 1e-15);
}

#[test]
fn inner_products() {
    let g = Grid::gauss_legendre(0.0, 2.0 * PI, 64).unwrap();
    close(inner_product(&sin(), &sin(), &g).unwrap(), PI, 1e-10);
    let zero = FunctionValue::zeros(sin().signature()).unwrap();
    assert_eq!(inner_product(&exp(), &zero, &g).unwrap(), 0.0);
    assert_eq!(inner_product(&sin(), &exp(), &g).unwrap(), inner_product(&exp(), &sin(), &g).unwrap());
}

#[test]
fn lowering_agrees_with_interpreter() {
    let g = Grid::gauss_legendre(0.0, 1.0, 6).unwrap();
    let k = FunctionValue::build(vec![s(), s()], |x| x[0].sin().add(&x[1].cos())).unwrap();
    let f = FunctionValue::scalar_fn(|x| x.scale(4.0 * PI).sin());
    let t = integral_transform(&k, &f, &g).unwrap().tanh().unwrap();
    let e = t.lower_one().unwrap();
    for x in [0.1, 0.6] {
        close(e.eval(&[Tensor::scalar(x)]).unwrap().item(), t.at(x).unwrap(), 1e-14);
    }
}

#[test]
fn graph_dump_lists_nodes() {
    let h = compose(&sin(), &[exp()]).unwrap();
    let j = graph_json(&h);
    assert_eq!(j["nodes"].as_array().unwrap().len(), 3);
    assert_eq!(j["nodes"][2]["primitive"], "compose");
}

#[test]
fn linear_flags_are_sound() {
    let c = FunctionValue::build(vec![s(), s()], |_| Ok(Expr::scalar(1.0))).unwrap();
    assert_eq!(c.linear_flags(), vec![false, false]);
    let z = FunctionValue::zeros(&FunctionSignature::scalar_fn(2)).unwrap();
    assert_eq!(z.linear_flags(), vec![true, true]);
    let y_only = FunctionValue::build(vec![s(), s()], |x| Ok(x[1].scale(3.0))).unwrap();
    assert_eq!(y_only.linear_flags(), vec![true, true]);
    let affine = FunctionValue::scalar_fn(|x| x.add_scalar(1.0));
    assert_eq!(affine.linear_flags(), vec![false]);
    let bilinear = FunctionValue::build(vec![s(), s()], |x| x[0].mul(&x[1])).unwrap();
    let mask = bilinear.linear_mask();
    assert_eq!(mask.count_ones(), 1);
    assert!(linear_transpose(&bilinear, mask.trailing_zeros() as usize).is_ok());
}
