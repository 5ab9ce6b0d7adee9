mod common;

use nalgebra::{DMatrix, DVector};
use sill_koopman::dictionary::{build_lattice, Steepness};
use sill_koopman::error_bounds::{pair_error, PairErrorSpec};
use sill_koopman::generator::{
    assemble_generator, closure_residual, edmd_discrete, edmd_objective, join_closure_rhs,
};
use sill_koopman::linalg::Mat;
use sill_koopman::regression::{fit_weights, make_sample_grid, SampleMode};
use sill_koopman::simulation::{benchmark_toggle, integrate_linear, VectorField};

fn to_na(m: &Mat<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn random_mat(rows: usize, cols: usize, seed: u64) -> Mat<f64> {
    let mut rng = common::rng(seed);
    Mat::from_fn(rows, cols, |_, _| rand::Rng::gen_range(&mut rng, -1.0..1.0))
}

#[test]
fn edmd_without_penalty_is_the_pseudoinverse_solution() {
    let prev = random_mat(20, 200, 1);
    let next = random_mat(20, 200, 2);
    let k = edmd_discrete(&prev, &next, 0.0).unwrap().k;
    let p = to_na(&prev);
    let pinv = p.clone().pseudo_inverse(1e-12).unwrap();
    let oracle = to_na(&next) * pinv;
    let diff = (to_na(&k) - &oracle).amax();
    assert!(diff < 1e-10, "{diff}");
}

#[test]
fn edmd_recovers_a_linear_map() {
    let mut k_true = random_mat(8, 8, 3);
    for i in 0..8 {
        for j in 0..8 {
            k_true.row_mut(i)[j] *= 0.3;
        }
    }
    let prev = random_mat(8, 100, 4);
    let next = k_true.matmul(&prev).unwrap();
    let k = edmd_discrete(&prev, &next, 0.0).unwrap().k;
    assert!(k.sub(&k_true).unwrap().max_abs() < 1e-8);
}

#[test]
fn penalized_edmd_descends_and_shrinks() {
    let prev = random_mat(6, 80, 5);
    let next = random_mat(6, 80, 6);
    let small = edmd_discrete(&prev, &next, 0.5).unwrap();
    assert!(small.converged);
    for w in small.objective_trace.windows(2) {
        assert!(w[1] <= w[0] * (1.0 + 1e-12));
    }
    let plain = edmd_discrete(&prev, &next, 0.0).unwrap();
    assert!(small.k.frobenius_norm() < plain.k.frobenius_norm());
    // the penalized minimizer beats the unpenalized solution on its own objective
    let f_small = edmd_objective(&prev, &next, &small.k, 0.5).unwrap();
    let f_plain = edmd_objective(&prev, &next, &plain.k, 0.5).unwrap();
    assert!(f_small <= f_plain + 1e-9);
    let huge = edmd_discrete(&prev, &next, 1e6).unwrap();
    assert_eq!(huge.k.max_abs(), 0.0);
}

fn toggle_model() -> (
    sill_koopman::Dictionary,
    sill_koopman::Weights,
    sill_koopman::Generator,
    Vec<Vec<f64>>,
) {
    let d = build_lattice(&[0.0, 0.0], &[2.5, 2.5], &[0.5, 0.5], Steepness::new(1.5).unwrap()).unwrap();
    let t = benchmark_toggle(2.0, 2.0, 3.0, 3.0, 1.0).unwrap();
    let grid = make_sample_grid(&d, 12, SampleMode::Lattice, 0).unwrap();
    let (w, _) = fit_weights(&t, &d, &grid, 0.0).unwrap();
    let k = assemble_generator(&d, &w, &t, &grid.points, 0.0).unwrap();
    (d, w, k, grid.points)
}

#[test]
fn lambda_rows_are_least_squares_projections() {
    let (d, _, k, pts) = toggle_model();
    let t = benchmark_toggle(2.0, 2.0, 3.0, 3.0, 1.0).unwrap();
    let m = d.lifted_dim();
    let psi = DMatrix::from_fn(pts.len(), m, |s, j| d.lift(&pts[s]).unwrap()[j]);
    let svd = psi.clone().svd(true, true);
    for l in [0usize, 7, 20, 35] {
        let rhs = DVector::from_fn(pts.len(), |s, _| d.lifted_derivative(&pts[s], &t.eval(&pts[s])).unwrap()[3 + l]);
        let oracle = svd.solve(&rhs, 1e-13).unwrap();
        let row = k.matrix().row(3 + l);
        // compare fitted values, which are unique even if coefficients are not
        let fit_ours = &psi * DVector::from_row_slice(row);
        let fit_oracle = &psi * oracle;
        assert!((fit_ours - fit_oracle).amax() < 1e-7);
    }
}

#[test]
fn join_closure_rhs_differs_from_flow_derivative_by_pair_errors() {
    let (d, w, _, _) = toggle_model();
    let a = d.alpha();
    let mut rng = common::rng(8);
    for _ in 0..20 {
        let x = common::uniform_point(&mut rng, &[0.0, 0.0], &[2.5, 2.5]);
        let lam = d.lambda_block(&x).unwrap();
        let fhat = w.apply(&lam);
        for l in [0usize, 14, 35] {
            let exact = d.lifted_derivative(&x, &fhat).unwrap()[3 + l];
            let rhs = join_closure_rhs(&x, l, &d, &w).unwrap();
            let mut gap = 0.0;
            for i in 0..2 {
                let c = sill_koopman::dictionary::logistic_complement(x[i], d.center(l)[i], a.get());
                for k in 0..d.n_centers() {
                    let spec = PairErrorSpec::new(&d, l, k).unwrap();
                    gap += c * w.matrix()[(i, k)] * pair_error(&x, &spec, a).unwrap();
                }
            }
            assert!((exact - rhs - gap).abs() < 1e-9 * (1.0 + exact.abs()), "{exact} {rhs} {gap}");
        }
    }
}

#[test]
fn linear_integration_matches_matrix_exponential() {
    let (d, _, k, _) = toggle_model();
    let z0 = d.lift(&[1.0, 1.2]).unwrap();
    let (times, traj, diverged) = integrate_linear(k.matrix(), &z0, 0.01, 1.0).unwrap();
    assert!(!diverged);
    let last = traj.nrows() - 1;
    let t = times[last];
    let oracle = common::expm_apply(&(to_na(k.matrix()) * t), &DVector::from_vec(z0));
    for j in 0..d.lifted_dim() {
        assert!(
            (traj[(last, j)] - oracle[j]).abs() < 1e-6 * (1.0 + oracle[j].abs()),
            "component {j}"
        );
    }
}

#[test]
fn closure_residual_of_projection_beats_state_only() {
    let (d, w, k, pts) = toggle_model();
    let t = benchmark_toggle(2.0, 2.0, 3.0, 3.0, 1.0).unwrap();
    let proj = closure_residual(&d, &t, &k, &pts).unwrap();
    let so = sill_koopman::generator::assemble_state_only(&d, &w).unwrap();
    let bare = closure_residual(&d, &t, &so, &pts).unwrap();
    assert!(proj.eps_rms < bare.eps_rms);
    assert!(proj.row_rms[0] == 0.0);
}
