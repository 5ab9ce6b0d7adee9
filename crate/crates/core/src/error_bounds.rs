//! Closure-error terms of the join approximation and the bounds built on
//! them: steepness convergence, empirical sup estimates, the linear-in-time
//! trajectory budget, and the extra terms from imperfect regression.
//!
//! For centers `l`, `k` with join `j`, the pair error is
//! `E_lk(x) = alpha (Lambda_l(x) Lambda_k(x) - Lambda_j(x))`. When `v_l`
//! dominates `v_k` the join is `l` and this is
//! `alpha Lambda_l(x) Lambda_k(x) - alpha Lambda_l(x)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dictionary::{conjunctive, logistic_complement, CenterVector, SillDictionary, Steepness};
use crate::error::{check_dim, Error, Result};
use crate::linalg::Mat;
use crate::regression::WeightMatrix;
use crate::scalar::Real;

/// Mesh spacings added on each side of the domain for sup searches.
pub const SEARCH_PADDING: f64 = 2.0;
pub const MIN_SEARCH_DENSITY: usize = 16;
const REFINE_SWEEPS: usize = 10;
const GOLDEN_STEPS: usize = 60;

/// A pair of dictionary centers together with their join and the padded
/// search box used for sup estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct PairErrorSpec<T> {
    pub l: usize,
    pub k: usize,
    pub join: usize,
    pub v_l: CenterVector<T>,
    pub v_k: CenterVector<T>,
    pub v_join: CenterVector<T>,
    pub search_lo: Vec<T>,
    pub search_hi: Vec<T>,
}

impl<T: Real> PairErrorSpec<T> {
    /// Orders the pair so the dominating center comes first when the two are
    /// comparable.
    pub fn new(dict: &SillDictionary<T>, l: usize, k: usize) -> Result<Self> {
        let join = dict.join(l, k)?;
        let (l, k) = if join == k && join != l { (k, l) } else { (l, k) };
        let pad = T::lit(SEARCH_PADDING);
        let search_lo = dict
            .domain_lo()
            .iter()
            .zip(dict.mesh_spacing())
            .map(|(&lo, &h)| lo - pad * h)
            .collect();
        let search_hi = dict
            .domain_hi()
            .iter()
            .zip(dict.mesh_spacing())
            .map(|(&hi, &h)| hi + pad * h)
            .collect();
        Ok(Self {
            l,
            k,
            join,
            v_l: dict.center(l).clone(),
            v_k: dict.center(k).clone(),
            v_join: dict.center(join).clone(),
            search_lo,
            search_hi,
        })
    }

    /// Pair from explicit centers; `v_l` must dominate `v_k`.
    pub fn from_centers(v_l: Vec<T>, v_k: Vec<T>, search_lo: Vec<T>, search_hi: Vec<T>) -> Result<Self> {
        let n = v_l.len();
        check_dim(n, v_k.len(), "pair centers")?;
        check_dim(n, search_lo.len(), "search box")?;
        check_dim(n, search_hi.len(), "search box")?;
        let v_l = CenterVector::new(v_l)?;
        let v_k = CenterVector::new(v_k)?;
        if !v_l.dominates(&v_k) {
            return Err(Error::Contract("v_l must dominate v_k componentwise".into()));
        }
        Ok(Self {
            l: 0,
            k: usize::from(v_l != v_k),
            join: 0,
            v_join: v_l.clone(),
            v_l,
            v_k,
            search_lo,
            search_hi,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.v_l.len()
    }

    fn eval(&self, x: &[T], alpha: T) -> T {
        let ll = conjunctive(x, &self.v_l, alpha);
        let lk = conjunctive(x, &self.v_k, alpha);
        let lj = if self.join == self.l {
            ll
        } else {
            conjunctive(x, &self.v_join, alpha)
        };
        alpha * (ll * lk - lj)
    }
}

/// Signed pair error at `x`.
pub fn pair_error<T: Real>(x: &[T], spec: &PairErrorSpec<T>, alpha: Steepness<T>) -> Result<T> {
    check_dim(spec.state_dim(), x.len(), "pair_error state")?;
    Ok(spec.eval(x, alpha.get()))
}

/// `|E(x)|` for each steepness in `alphas` (strictly increasing). `x` must
/// be off every coordinate of the pair's centers.
pub fn alpha_convergence_study<T: Real>(x: &[T], spec: &PairErrorSpec<T>, alphas: &[T]) -> Result<Vec<T>> {
    check_dim(spec.state_dim(), x.len(), "alpha_convergence_study state")?;
    let on_center = [&spec.v_l, &spec.v_k, &spec.v_join]
        .iter()
        .any(|v| v.iter().zip(x).any(|(m, xi)| m == xi));
    if on_center {
        return Err(Error::Contract(
            "point lies on a center coordinate; convergence in steepness does not apply".into(),
        ));
    }
    if alphas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Contract("steepness values must be strictly increasing".into()));
    }
    alphas
        .iter()
        .map(|&a| Ok(pair_error(x, spec, Steepness::new(a)?)?.abs()))
        .collect()
}

fn golden_max<T: Real>(mut g: impl FnMut(T) -> T, mut a: T, mut b: T) -> (T, T) {
    let inv_phi = T::lit(0.618_033_988_749_894_9);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut gc = g(c);
    let mut gd = g(d);
    for _ in 0..GOLDEN_STEPS {
        if gc >= gd {
            b = d;
            d = c;
            gd = gc;
            c = b - inv_phi * (b - a);
            gc = g(c);
        } else {
            a = c;
            c = d;
            gc = gd;
            d = a + inv_phi * (b - a);
            gd = g(d);
        }
    }
    if gc >= gd {
        (c, gc)
    } else {
        (d, gd)
    }
}

/// Location and value of the estimated supremum of `|E|`.
#[derive(Clone, Debug, PartialEq)]
pub struct SupEstimate<T> {
    pub value: T,
    pub argmax: Vec<T>,
}

/// Grid search over the padded box (`density` points per axis) followed by
/// coordinate-wise golden-section refinement from the grid argmax.
pub fn estimate_sup_error_at<T: Real>(
    spec: &PairErrorSpec<T>,
    alpha: Steepness<T>,
    density: usize,
) -> Result<SupEstimate<T>> {
    if density < MIN_SEARCH_DENSITY {
        return Err(Error::Contract(format!(
            "search density must be >= {MIN_SEARCH_DENSITY}, got {density}"
        )));
    }
    let n = spec.state_dim();
    let total = (density as f64).powi(n as i32);
    if total > 1e7 {
        return Err(Error::Resource(format!("{density}^{n} search points exceed 1e7")));
    }
    let total = total as usize;
    let a = alpha.get();
    let lo = &spec.search_lo;
    let hi = &spec.search_hi;
    let step: Vec<T> = (0..n)
        .map(|d| (hi[d] - lo[d]) / T::from_count(density - 1))
        .collect();
    let point = |mut idx: usize| -> Vec<T> {
        let mut x = vec![T::zero(); n];
        for d in (0..n).rev() {
            x[d] = lo[d] + step[d] * T::from_count(idx % density);
            idx /= density;
        }
        x
    };
    // deterministic reduction: ties resolve to the lowest linear index
    let (best_idx, best_val) = (0..total)
        .into_par_iter()
        .map(|i| (i, spec.eval(&point(i), a).abs()))
        .reduce(
            || (usize::MAX, -T::one()),
            |p, q| {
                if q.1 > p.1 || (q.1 == p.1 && q.0 < p.0) {
                    q
                } else {
                    p
                }
            },
        );
    let mut x = point(best_idx);
    let mut val = best_val;
    for _ in 0..REFINE_SWEEPS {
        for d in 0..n {
            let left = (x[d] - step[d]).max(lo[d]);
            let right = (x[d] + step[d]).min(hi[d]);
            let mut probe = x.clone();
            let (xd, v) = golden_max(
                |t| {
                    probe[d] = t;
                    spec.eval(&probe, a).abs()
                },
                left,
                right,
            );
            if v > val {
                x[d] = xd;
                val = v;
            }
        }
    }
    Ok(SupEstimate { value: val, argmax: x })
}

pub fn estimate_sup_error<T: Real>(spec: &PairErrorSpec<T>, alpha: Steepness<T>, density: usize) -> Result<T> {
    Ok(estimate_sup_error_at(spec, alpha, density)?.value)
}

/// Sup-error table for a fitted dictionary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBoundReport<T> {
    /// `N_L x N_L` estimated sup of `|E_lk|` (row-major, symmetric).
    pub pair_sup: Vec<Vec<T>>,
    /// Weighted per-row sums bounding the derivative error of each Lambda row.
    pub row_rates: Vec<T>,
    /// `sum_l row_rates[l]`, the rate of the trajectory budget.
    pub total_rate: T,
    pub alpha: T,
    pub search_density: usize,
    pub padding_spacings: T,
}

/// Estimates every pair sup and aggregates row rates
/// `sum_i sum_k c_il |w_ik| M_lk`, with `c_il` the sup of
/// `1 - lambda_{mu_i^l}(x_i)` over the padded search box.
pub fn compute_error_bounds<T: Real>(
    dict: &SillDictionary<T>,
    w: &WeightMatrix<T>,
    density: usize,
) -> Result<ErrorBoundReport<T>> {
    let nl = dict.n_centers();
    let n = dict.state_dim();
    check_dim(n, w.matrix().nrows(), "weight rows")?;
    check_dim(nl, w.matrix().ncols(), "weight columns")?;
    let alpha = dict.alpha();
    let pairs: Vec<(usize, usize)> = (0..nl).flat_map(|l| (l..nl).map(move |k| (l, k))).collect();
    let sups: Vec<T> = pairs
        .par_iter()
        .map(|&(l, k)| {
            let spec = PairErrorSpec::new(dict, l, k)?;
            estimate_sup_error(&spec, alpha, density)
        })
        .collect::<Result<_>>()?;
    let mut table = Mat::zeros(nl, nl);
    for (&(l, k), &s) in pairs.iter().zip(&sups) {
        table[(l, k)] = s;
        table[(k, l)] = s;
    }
    let a = alpha.get();
    let pad = T::lit(SEARCH_PADDING);
    let mut row_rates = Vec::with_capacity(nl);
    for l in 0..nl {
        let vl = dict.center(l);
        let mut rate = T::zero();
        for i in 0..n {
            let x_min = dict.domain_lo()[i] - pad * dict.mesh_spacing()[i];
            let coef = logistic_complement(x_min, vl[i], a);
            let s: T = (0..nl)
                .map(|k| w.matrix()[(i, k)].abs() * table[(l, k)])
                .sum();
            rate += coef * s;
        }
        row_rates.push(rate);
    }
    let total_rate = row_rates.iter().copied().sum();
    Ok(ErrorBoundReport {
        pair_sup: table.to_rows(),
        row_rates,
        total_rate,
        alpha: a,
        search_density: density,
        padding_spacings: pad,
    })
}

/// `t * sum_l M_Lambda_l`
pub fn trajectory_error_budget<T: Real>(report: &ErrorBoundReport<T>, t: T) -> Result<T> {
    if !(t >= T::zero()) {
        return Err(Error::Contract(format!("time must be >= 0, got {t}")));
    }
    Ok(t * report.total_rate)
}

/// Extra per-row derivative error from regression residuals.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaPropagation<T> {
    /// `sum_i sup|delta_i| alpha`
    pub conservative: T,
    /// `sum_i sup|delta_i| alpha / 4`
    pub refined: T,
}

pub fn delta_propagation_bound<T: Real>(delta_sup: &[T], alpha: Steepness<T>) -> Result<DeltaPropagation<T>> {
    if delta_sup.iter().any(|d| !(d.is_finite() && *d >= T::zero())) {
        return Err(Error::Contract("delta sup values must be finite and >= 0".into()));
    }
    let s: T = delta_sup.iter().copied().sum();
    let a = alpha.get();
    Ok(DeltaPropagation {
        conservative: s * a,
        refined: s * a / T::lit(4.0),
    })
}

/// Closure budget plus the regression-residual contribution of every Lambda
/// row, integrated over `[0, t]`.
pub fn combined_state_budget<T: Real>(
    report: &ErrorBoundReport<T>,
    delta: &DeltaPropagation<T>,
    t: T,
) -> Result<T> {
    let rows = T::from_count(report.row_rates.len());
    Ok(trajectory_error_budget(report, t)? + t * rows * delta.conservative)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::build_lattice;

    fn one_d(mu: f64) -> PairErrorSpec<f64> {
        PairErrorSpec::from_centers(vec![mu], vec![mu], vec![mu - 3.0], vec![mu + 3.0]).unwrap()
    }

    #[test]
    fn pair_error_at_shared_center() {
        for a in [1.0, 4.0, 9.0] {
            let e = pair_error(&[0.5], &one_d(0.5), Steepness::new(a).unwrap()).unwrap();
            assert!((e + a / 4.0).abs() < 1e-15);
        }
    }

    #[test]
    fn pair_error_vanishes_far_from_centers() {
        let spec =
            PairErrorSpec::<f64>::from_centers(vec![1.0, 1.0], vec![0.0, 0.0], vec![-3.0; 2], vec![4.0; 2]).unwrap();
        let a = Steepness::new(60.0).unwrap();
        // below a center coordinate
        assert!(pair_error(&[-1.0, 3.0], &spec, a).unwrap().abs() < 1e-12);
        // above everything
        assert!(pair_error(&[3.0, 3.0], &spec, a).unwrap().abs() < 1e-12);
    }

    #[test]
    fn spec_orders_dominating_center_first() {
        let d = build_lattice(&[0.0, 0.0], &[1.0, 1.0], &[1.0, 1.0], Steepness::new(1.0).unwrap()).unwrap();
        // centers: (0,0), (0,1), (1,0), (1,1)
        let s = PairErrorSpec::new(&d, 0, 3).unwrap();
        assert_eq!((s.l, s.k, s.join), (3, 0, 3));
        let inc = PairErrorSpec::new(&d, 1, 2).unwrap();
        assert_eq!(inc.join, 3);
        assert!(PairErrorSpec::<f64>::from_centers(vec![0.0], vec![1.0], vec![-1.0], vec![2.0]).is_err());
    }

    #[test]
    fn convergence_study_preconditions() {
        let spec = one_d(0.0);
        assert!(alpha_convergence_study(&[0.0], &spec, &[1.0, 2.0]).is_err());
        assert!(alpha_convergence_study(&[0.4], &spec, &[2.0, 1.0]).is_err());
        let v = alpha_convergence_study(&[0.4], &spec, &[1.0, 2.0]).unwrap();
        assert_eq!(v.len(), 2);
    }

    #[test]
    fn sup_density_floor() {
        assert!(estimate_sup_error(&one_d(0.0), Steepness::new(1.0).unwrap(), 15).is_err());
    }

    #[test]
    fn budget_linear_in_time() {
        let report = ErrorBoundReport {
            pair_sup: vec![vec![0.1]],
            row_rates: vec![0.3],
            total_rate: 0.3,
            alpha: 1.0,
            search_density: 16,
            padding_spacings: 2.0,
        };
        assert_eq!(trajectory_error_budget(&report, 0.0).unwrap(), 0.0);
        let b1 = trajectory_error_budget(&report, 1.5).unwrap();
        let b2 = trajectory_error_budget(&report, 3.0).unwrap();
        assert_eq!(b2, 2.0 * b1);
        assert!(trajectory_error_budget(&report, -1.0).is_err());
    }

    #[test]
    fn delta_bound_cases() {
        let a = Steepness::new(5.0f64).unwrap();
        let z = delta_propagation_bound(&[0.0, 0.0], a).unwrap();
        assert_eq!(z.conservative, 0.0);
        let d1 = delta_propagation_bound(&[0.01, 0.02], a).unwrap();
        let d3 = delta_propagation_bound(&[0.03, 0.06], a).unwrap();
        assert!((d3.conservative - 3.0 * d1.conservative).abs() < 1e-15);
        assert!((d1.refined - d1.conservative / 4.0).abs() < 1e-15);
        assert!(delta_propagation_bound(&[-0.1], a).is_err());
    }
}
