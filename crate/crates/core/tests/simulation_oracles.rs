mod common;

use sill_koopman::dictionary::{build_lattice, Steepness};
use sill_koopman::generator::assemble_generator;
use sill_koopman::regression::{fit_weights, make_sample_grid, SampleMode};
use sill_koopman::simulation::{
    benchmark_toggle, benchmark_vdp, integrate_ensemble, integrate_lifted, integrate_nonlinear, VectorField,
};

fn final_error(dt: f64, reference: &[f64]) -> f64 {
    let f = benchmark_vdp(-0.2);
    let tr = integrate_nonlinear(&f, &[1.0, 0.5], dt, 2.0).unwrap();
    let x = tr.final_state().unwrap();
    x.iter().zip(reference).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
}

#[test]
fn rk4_is_fourth_order() {
    let f = benchmark_vdp(-0.2);
    let fine = integrate_nonlinear(&f, &[1.0, 0.5], 1e-4, 2.0).unwrap();
    let reference = fine.final_state().unwrap().to_vec();
    let ratio = final_error(0.1, &reference) / final_error(0.05, &reference);
    assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
}

fn toggle_equilibria(a: f64, n: f64, delta: f64) -> Vec<[f64; 2]> {
    // symmetric toggle: x2 = a/(delta (1 + x1^n)), then x1 - a/(delta (1 + x2^n)) = 0
    let h = |x: f64| a / (delta * (1.0 + x.powf(n)));
    let g = |x1: f64| x1 - h(h(x1));
    let hi = a / delta + 1.0;
    let mut roots = Vec::new();
    let steps = 4000;
    for i in 0..steps {
        let (l, r) = (hi * i as f64 / steps as f64, hi * (i + 1) as f64 / steps as f64);
        if g(l) == 0.0 {
            roots.push(l);
        } else if g(l) * g(r) < 0.0 {
            roots.push(common::bisect(g, l, r));
        }
    }
    roots.into_iter().map(|x1| [x1, h(x1)]).collect()
}

#[test]
fn toggle_equilibria_from_root_finding_are_fixed_points() {
    let t = benchmark_toggle(2.0, 2.0, 3.0, 3.0, 1.0).unwrap();
    let eq = toggle_equilibria(2.0, 3.0, 1.0);
    assert_eq!(eq.len(), 3, "{eq:?}");
    for e in &eq {
        let fx = t.eval(e);
        assert!(fx.iter().all(|v| v.abs() < 1e-8), "{e:?} -> {fx:?}");
        // delta x1 = a1 / (1 + x2^n1)
        assert!((e[0] - 2.0 / (1.0 + e[1].powi(3))).abs() < 1e-10);
    }
    let tr = integrate_nonlinear(&t, &eq[0], 0.01, 10.0).unwrap();
    let end = tr.final_state().unwrap();
    assert!((end[0] - eq[0][0]).abs() < 1e-6 && (end[1] - eq[0][1]).abs() < 1e-6);
}

#[test]
fn toggle_is_bistable_under_basin_sampling() {
    let t = benchmark_toggle(2.0, 2.0, 3.0, 3.0, 1.0).unwrap();
    let eq = toggle_equilibria(2.0, 3.0, 1.0);
    let stable: Vec<[f64; 2]> = eq.iter().copied().filter(|e| (e[0] - e[1]).abs() > 1e-3).collect();
    assert_eq!(stable.len(), 2);
    let mut rng = common::rng(77);
    let ics: Vec<Vec<f64>> = (0..100)
        .map(|_| common::uniform_point(&mut rng, &[0.0, 0.0], &[2.5, 2.5]))
        .collect();
    let runs = integrate_ensemble(&t, &ics, 0.05, 60.0).unwrap();
    let mut hits = [0usize; 2];
    for r in &runs {
        let end = r.final_state().unwrap();
        for (i, s) in stable.iter().enumerate() {
            if (end[0] - s[0]).abs() < 1e-3 && (end[1] - s[1]).abs() < 1e-3 {
                hits[i] += 1;
            }
        }
        assert!(r.states.as_slice().iter().all(|&v| v >= 0.0), "negative concentration");
    }
    assert!(hits[0] > 0 && hits[1] > 0, "{hits:?}");
    assert!(hits[0] + hits[1] >= 98, "{hits:?}");
}

#[test]
fn vdp_from_positive_initial_conditions_stays_bounded() {
    let f = benchmark_vdp(-0.2);
    for x0 in [[1.0, 1.0], [0.5, 0.2], [1.2, 0.3]] {
        let tr = integrate_nonlinear(&f, &x0, 0.01, 20.0).unwrap();
        assert!(!tr.diverged);
        assert!(tr.states.as_slice().iter().all(|v: &f64| v.abs() < 3.0));
        // oscillation: x1 changes sign at least twice
        let xs: Vec<f64> = (0..tr.len()).map(|i| tr.states[(i, 0)]).collect();
        let flips = xs.windows(2).filter(|w| w[0].signum() != w[1].signum()).count();
        assert!(flips >= 2, "{flips}");
    }
}

#[test]
#[allow(clippy::type_complexity)]
fn constant_observable_does_not_drift() {
    let t = benchmark_toggle(2.0, 2.0, 3.0, 3.0, 1.0).unwrap();
    let vdp = benchmark_vdp(-0.2);
    let cases: [(&dyn VectorField<f64>, [f64; 2], [f64; 2], f64, f64); 2] = [
        (&t, [0.0, 0.0], [2.5, 2.5], 0.5, 1.5),
        (&vdp, [-3.0, -3.0], [3.0, 3.0], 1.2, 1.0),
    ];
    for (f, lo, hi, h, a) in cases {
        let d = build_lattice(&lo, &hi, &[h, h], Steepness::new(a).unwrap()).unwrap();
        let grid = make_sample_grid(&d, 12, SampleMode::Lattice, 0).unwrap();
        let (w, _) = fit_weights(f, &d, &grid, 0.0).unwrap();
        let k = assemble_generator(&d, &w, f, &grid.points, 0.0).unwrap();
        let z0 = d.lift(&[0.5 * (lo[0] + hi[0]) + 0.1, 0.5 * (lo[1] + hi[1])]).unwrap();
        let tr = integrate_lifted(&k, &z0, 0.01, 20.0).unwrap();
        for i in 0..tr.lifted.nrows() {
            assert!((tr.lifted[(i, 0)] - 1.0).abs() < 1e-3);
        }
    }
}
