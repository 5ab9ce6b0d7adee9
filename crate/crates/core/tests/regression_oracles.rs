mod common;

use nalgebra::{DMatrix, DVector};
use sill_koopman::dictionary::{build_lattice, Steepness};
use sill_koopman::regression::{fit_weights, make_sample_grid, residual_at, SampleMode};
use sill_koopman::simulation::{benchmark_toggle, FnField};

fn alpha(a: f64) -> Steepness<f64> {
    Steepness::new(a).unwrap()
}

#[test]
fn field_in_span_is_recovered() {
    let d = build_lattice(&[0.0, 0.0], &[2.0, 2.0], &[1.0, 1.0], alpha(2.0)).unwrap();
    let mut rng = common::rng(5);
    let w_true: Vec<Vec<f64>> = (0..2)
        .map(|_| (0..d.n_centers()).map(|_| rand::Rng::gen_range(&mut rng, -2.0..2.0)).collect())
        .collect();
    let dd = d.clone();
    let wt = w_true.clone();
    let f = FnField::new("in-span", 2, move |x: &[f64], out: &mut [f64]| {
        let lam = dd.lambda_block(x).unwrap();
        for (o, row) in out.iter_mut().zip(&wt) {
            *o = row.iter().zip(&lam).map(|(a, b)| a * b).sum();
        }
    });
    let grid = make_sample_grid(&d, 10, SampleMode::Lattice, 0).unwrap();
    let (w, rep) = fit_weights(&f, &d, &grid, 0.0).unwrap();
    assert!(rep.rel_l2_error.iter().all(|&e| e < 1e-10), "{:?}", rep.rel_l2_error);
    for (i, row) in w_true.iter().enumerate() {
        for (k, &v) in row.iter().enumerate() {
            assert!((w.matrix()[(i, k)] - v).abs() < 1e-8);
        }
    }
}

#[test]
fn one_dimensional_fit_is_the_best_approximation() {
    let d = build_lattice(&[-2.0], &[2.0], &[0.5], alpha(3.0)).unwrap();
    let f = FnField::new("sin", 1, |x: &[f64], out: &mut [f64]| out[0] = (1.3 * x[0]).sin() + 0.2 * x[0]);
    let grid = make_sample_grid(&d, 60, SampleMode::Lattice, 0).unwrap();
    let (w, _) = fit_weights(&f, &d, &grid, 0.0).unwrap();
    let nl = d.n_centers();
    let a = DMatrix::from_fn(grid.len(), nl, |s, l| d.lambda_block(&grid.points[s]).unwrap()[l]);
    let b = DVector::from_fn(grid.len(), |s, _| (1.3 * grid.points[s][0]).sin() + 0.2 * grid.points[s][0]);
    let oracle = a.clone().svd(true, true).solve(&b, 1e-14).unwrap();
    for l in 0..nl {
        assert!((w.matrix()[(0, l)] - oracle[l]).abs() < 1e-6 * (1.0 + oracle[l].abs()));
    }
    // residual orthogonal to every basis column
    let r: Vec<f64> = grid.points.iter().map(|x| residual_at(&f, &w, &d, x).unwrap()[0]).collect();
    let r = DVector::from_vec(r);
    let g = a.transpose() * r;
    assert!(g.amax() < 1e-8, "{}", g.amax());
}

#[test]
fn ridge_trades_residual_for_weight_norm() {
    let d = build_lattice(&[0.0, 0.0], &[2.5, 2.5], &[0.5, 0.5], alpha(1.5)).unwrap();
    let t = benchmark_toggle(2.0, 2.0, 3.0, 3.0, 1.0).unwrap();
    let grid = make_sample_grid(&d, 12, SampleMode::Lattice, 0).unwrap();
    let mut last: Option<(f64, f64)> = None;
    for ridge in [0.0, 1e-8, 1e-6, 1e-4, 1e-2, 1.0] {
        let (w, rep) = fit_weights(&t, &d, &grid, ridge).unwrap();
        let err: f64 = rep.rel_l2_error.iter().sum();
        let norm = w.matrix().frobenius_norm();
        if let Some((e0, n0)) = last {
            assert!(err >= e0 * (1.0 - 1e-9), "residual fell at ridge {ridge}");
            assert!(norm <= n0 * (1.0 + 1e-9), "norm grew at ridge {ridge}");
        }
        last = Some((err, norm));
    }
}

#[test]
fn random_and_lattice_sampling_both_fit_the_toggle() {
    let d = build_lattice(&[0.0, 0.0], &[2.5, 2.5], &[0.5, 0.5], alpha(1.5)).unwrap();
    let t = benchmark_toggle(2.0, 2.0, 3.0, 3.0, 1.0).unwrap();
    for mode in [SampleMode::Lattice, SampleMode::Random] {
        let grid = make_sample_grid(&d, 16, mode, 9).unwrap();
        let (_, rep) = fit_weights(&t, &d, &grid, 0.0).unwrap();
        assert!(rep.rel_l2_error.iter().all(|&e| e < 0.03), "{mode:?}: {:?}", rep.rel_l2_error);
    }
}

#[test]
fn random_grid_is_reproducible_from_seed() {
    let d = build_lattice(&[0.0, 0.0], &[1.0, 1.0], &[0.5, 0.5], alpha(1.0)).unwrap();
    let a = make_sample_grid(&d, 5, SampleMode::Random, 42).unwrap();
    let b = make_sample_grid(&d, 5, SampleMode::Random, 42).unwrap();
    let c = make_sample_grid(&d, 5, SampleMode::Random, 43).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.points, c.points);
}

#[test]
fn single_precision_pipeline_tracks_double() {
    let d32 = build_lattice(&[0.0f32, 0.0], &[2.5, 2.5], &[0.5, 0.5], Steepness::new(1.5f32).unwrap()).unwrap();
    let t32 = benchmark_toggle(2.0f32, 2.0, 3.0, 3.0, 1.0).unwrap();
    let g32 = make_sample_grid(&d32, 12, SampleMode::Lattice, 0).unwrap();
    let (w32, r32): (sill_koopman::Weights32, _) = fit_weights(&t32, &d32, &g32, 0.0).unwrap();
    let k32: sill_koopman::Generator32 =
        sill_koopman::generator::assemble_generator(&d32, &w32, &t32, &g32.points, 0.0).unwrap();
    let d = build_lattice(&[0.0, 0.0], &[2.5, 2.5], &[0.5, 0.5], alpha(1.5)).unwrap();
    let t = benchmark_toggle(2.0, 2.0, 3.0, 3.0, 1.0).unwrap();
    let (_, r64) = fit_weights(&t, &d, &make_sample_grid(&d, 12, SampleMode::Lattice, 0).unwrap(), 0.0).unwrap();
    for (a, b) in r32.rel_l2_error.iter().zip(&r64.rel_l2_error) {
        assert!(*a <= 0.02 && (*a as f64 - b).abs() < 0.2 * b, "{a} vs {b}");
    }
    assert!(k32.matrix().row(0).iter().all(|&v| v == 0.0));
}
