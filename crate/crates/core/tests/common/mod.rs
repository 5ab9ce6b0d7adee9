//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sill_koopman::simulation::VectorField;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_point(rng: &mut ChaCha8Rng, lo: &[f64], hi: &[f64]) -> Vec<f64> {
    lo.iter().zip(hi).map(|(&a, &b)| rng.gen_range(a..b)).collect()
}

/// Single classical RK4 step; `h` may be negative.
pub fn rk4_step(f: &dyn VectorField<f64>, x: &[f64], h: f64) -> Vec<f64> {
    let add = |a: &[f64], b: &[f64], s: f64| -> Vec<f64> { a.iter().zip(b).map(|(p, q)| p + s * q).collect() };
    let k1 = f.eval(x);
    let k2 = f.eval(&add(x, &k1, h / 2.0));
    let k3 = f.eval(&add(x, &k2, h / 2.0));
    let k4 = f.eval(&add(x, &k3, h));
    (0..x.len())
        .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

/// Plain logistic `1 / (1 + exp(-a (x - mu)))`, written without any
/// overflow guards.
pub fn naive_logistic(x: f64, mu: f64, a: f64) -> f64 {
    1.0 / (1.0 + (-a * (x - mu)).exp())
}

pub fn naive_conjunctive(x: &[f64], v: &[f64], a: f64) -> f64 {
    x.iter().zip(v).map(|(&xi, &mi)| naive_logistic(xi, mi, a)).product()
}

/// Root of a continuous function with a sign change on `[a, b]`.
pub fn bisect(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let mut fa = f(a);
    assert!(fa * f(b) <= 0.0, "no sign change on [{a}, {b}]");
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        let fm = f(m);
        if fm == 0.0 {
            return m;
        }
        if fa * fm < 0.0 {
            b = m;
        } else {
            a = m;
            fa = fm;
        }
    }
    0.5 * (a + b)
}

/// `exp(A) v` by scaling and squaring with a Taylor core.
pub fn expm_apply(a: &nalgebra::DMatrix<f64>, v: &nalgebra::DVector<f64>) -> nalgebra::DVector<f64> {
    let norm = a.abs().row_sum().max();
    let s = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let scaled = a / 2f64.powi(s);
    let n = a.nrows();
    let mut e = nalgebra::DMatrix::<f64>::identity(n, n);
    let mut term = nalgebra::DMatrix::<f64>::identity(n, n);
    for k in 1..=30 {
        term = &term * &scaled / k as f64;
        e += &term;
    }
    for _ in 0..s {
        e = &e * &e;
    }
    e * v
}
