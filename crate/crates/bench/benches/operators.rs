// SPDX-License-Identifier: Apache-2.0

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use opdiff_bench::{nabla_program, semilocal_program, sin};
use opdiff_core::autodiff::{functional_grad, op_vjp, Cotangent, TransposeGrids};
use opdiff_core::memo::{eval_cached, nested_family};
use opdiff_core::operators::EvalSession;
use opdiff_core::quadrature::inner_product;
use opdiff_core::{CallCache, FunctionValue, Grid, Tensor};

fn quadrature(c: &mut Criterion) {
    let mut g = c.benchmark_group("gauss_legendre");
    for n in [16usize, 100, 400] {
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, &n| {
            b.iter(|| Grid::gauss_legendre(-1.0, 1.0, black_box(n)).unwrap())
        });
    }
    g.finish();
}

fn reverse_mode(c: &mut Criterion) {
    let p = nabla_program().unwrap();
    let exp = FunctionValue::scalar_fn(|x| x.exp());
    c.bench_function("vjp_nabla_build", |b| {
        b.iter(|| {
            let vjp = op_vjp(&p, &[sin()]).unwrap();
            vjp.pullback(Cotangent::Function(exp.clone()), &TransposeGrids::default()).unwrap()
        })
    });
    let grid = Grid::gauss_legendre(0.0, 1.0, 64).unwrap();
    let sp = semilocal_program(&grid).unwrap();
    let f = FunctionValue::scalar_fn(|x| x.sin().add_scalar(2.0));
    c.bench_function("functional_grad_semilocal", |b| b.iter(|| functional_grad(&sp, &f).unwrap()));
    let v = functional_grad(&sp, &f).unwrap();
    c.bench_function("functional_grad_eval_64", |b| b.iter(|| inner_product(&v, &v, &grid).unwrap()));
}

fn memoization(c: &mut Criterion) {
    let mut g = c.benchmark_group("nested_depth");
    let x = [Tensor::scalar(0.5)];
    for d in [4usize, 8, 12] {
        let (top, _) = nested_family(d);
        g.bench_with_input(BenchmarkId::new("naive", d), &top, |b, top| {
            b.iter(|| top.eval_in(&x, &mut EvalSession::new()).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("cached", d), &top, |b, top| {
            b.iter(|| eval_cached(top, &x, &mut CallCache::new()).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, quadrature, reverse_mode, memoization);
criterion_main!(benches);
