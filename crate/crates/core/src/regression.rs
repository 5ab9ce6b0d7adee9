//! Least-squares fit of the weight matrix `W` in `f(x) ~ W Lambda(x)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dictionary::SillDictionary;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{norm2, LeastSquares, Mat};
use crate::scalar::Real;
use crate::simulation::VectorField;

const MAX_SAMPLES: f64 = 1e7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleMode {
    Lattice,
    Random,
}

/// Points at which the vector field and the dictionary are sampled.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleGrid<T> {
    pub points: Vec<Vec<T>>,
    pub mode: SampleMode,
    pub per_dim: usize,
    pub seed: u64,
}

impl<T> SampleGrid<T> {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Smallest per-axis count giving roughly four samples per center.
pub fn default_per_dim<T: Real>(dict: &SillDictionary<T>) -> usize {
    let target = 4.0 * dict.n_centers() as f64;
    let p = target.powf(1.0 / dict.state_dim() as f64).ceil() as usize;
    p.max(2)
}

pub fn make_sample_grid<T: Real>(
    dict: &SillDictionary<T>,
    per_dim: usize,
    mode: SampleMode,
    seed: u64,
) -> Result<SampleGrid<T>> {
    make_box_grid(dict.domain_lo(), dict.domain_hi(), per_dim, mode, seed)
}

/// Uniform lattice or seeded uniform-random sample of `per_dim^n` points in a box.
pub fn make_box_grid<T: Real>(
    lo: &[T],
    hi: &[T],
    per_dim: usize,
    mode: SampleMode,
    seed: u64,
) -> Result<SampleGrid<T>> {
    let n = lo.len();
    check_dim(n, hi.len(), "sample box")?;
    if mode == SampleMode::Lattice && per_dim < 2 {
        return Err(Error::Contract(format!("lattice sampling needs per_dim >= 2, got {per_dim}")));
    }
    if per_dim == 0 {
        return Err(Error::Contract("per_dim must be positive".into()));
    }
    if n as f64 * (per_dim as f64).ln() > MAX_SAMPLES.ln() {
        return Err(Error::Resource(format!("{per_dim}^{n} sample points exceed 1e7")));
    }
    let total = per_dim.pow(n as u32);
    let points = match mode {
        SampleMode::Lattice => {
            let denom = T::from_count(per_dim - 1);
            let mut pts = Vec::with_capacity(total);
            let mut idx = vec![0usize; n];
            for _ in 0..total {
                pts.push(
                    (0..n)
                        .map(|d| {
                            if idx[d] == per_dim - 1 {
                                hi[d]
                            } else {
                                lo[d] + (hi[d] - lo[d]) * T::from_count(idx[d]) / denom
                            }
                        })
                        .collect(),
                );
                for d in (0..n).rev() {
                    idx[d] += 1;
                    if idx[d] < per_dim {
                        break;
                    }
                    idx[d] = 0;
                }
            }
            pts
        }
        SampleMode::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..total)
                .map(|_| {
                    (0..n)
                        .map(|d| lo[d] + (hi[d] - lo[d]) * T::lit(rng.gen::<f64>()))
                        .collect()
                })
                .collect()
        }
    };
    Ok(SampleGrid {
        points,
        mode,
        per_dim,
        seed,
    })
}

/// Regression weights, `n x N_L`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightMatrix<T>(pub Mat<T>);

impl<T: Real> WeightMatrix<T> {
    pub fn new(w: Mat<T>, dict: &SillDictionary<T>) -> Result<Self> {
        check_dim(dict.state_dim(), w.nrows(), "weight matrix rows")?;
        check_dim(dict.n_centers(), w.ncols(), "weight matrix columns")?;
        if !w.is_finite() {
            return Err(Error::NonFinite("weight matrix"));
        }
        Ok(Self(w))
    }

    pub fn matrix(&self) -> &Mat<T> {
        &self.0
    }

    /// `W Lambda(x)`
    pub fn apply(&self, lambda: &[T]) -> Vec<T> {
        (0..self.0.nrows())
            .map(|i| crate::linalg::dot(self.0.row(i), lambda))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport<T> {
    /// `|f_i - W_i Lambda|_2 / |f_i|_2` over the grid; absolute when `|f_i|_2 = 0`.
    pub rel_l2_error: Vec<T>,
    /// Components whose target vanishes on the grid.
    pub zero_norm_component: Vec<bool>,
    /// `sup_s |delta_i(x_s)|` per component.
    pub max_abs_residual: Vec<T>,
    pub ridge: T,
    pub rank: usize,
    pub rank_deficient: bool,
    pub n_samples: usize,
}

/// Design matrix whose rows are `Lambda(x_s)` (or `psi(x_s)` when `lifted`).
pub(crate) fn design_matrix<T: Real>(dict: &SillDictionary<T>, points: &[Vec<T>], lifted: bool) -> Mat<T> {
    let cols = if lifted { dict.lifted_dim() } else { dict.n_centers() };
    let rows: Vec<Vec<T>> = points
        .par_iter()
        .map(|x| {
            let mut r = vec![T::zero(); cols];
            if lifted {
                dict.lift_into(x, &mut r);
            } else {
                dict.lambda_into(x, &mut r);
            }
            r
        })
        .collect();
    let mut m = Mat::zeros(points.len(), cols);
    for (i, r) in rows.iter().enumerate() {
        m.row_mut(i).copy_from_slice(r);
    }
    m
}

fn check_grid<T: Real>(dict: &SillDictionary<T>, grid: &SampleGrid<T>) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Contract("sample grid is empty".into()));
    }
    for p in &grid.points {
        check_dim(dict.state_dim(), p.len(), "sample point")?;
        if !dict.contains(p) {
            return Err(Error::Contract(format!("sample point {p:?} outside the dictionary domain")));
        }
    }
    if grid.len() < dict.n_centers() {
        log::warn!(
            "{} samples for {} centers; the fit is underdetermined",
            grid.len(),
            dict.n_centers()
        );
    }
    Ok(())
}

fn field_values<T: Real, F: VectorField<T> + ?Sized>(f: &F, points: &[Vec<T>]) -> Result<Mat<T>> {
    let n = f.state_dim();
    let vals: Vec<Vec<T>> = points.par_iter().map(|x| f.eval(x)).collect();
    let mut m = Mat::zeros(points.len(), n);
    for (i, v) in vals.iter().enumerate() {
        m.row_mut(i).copy_from_slice(v);
    }
    if !m.is_finite() {
        return Err(Error::NonFinite("vector field on the sample grid"));
    }
    Ok(m)
}

/// Minimizes `sum_s |f(x_s) - W Lambda(x_s)|^2 + ridge |W|_F^2`.
pub fn fit_weights<T: Real, F: VectorField<T> + ?Sized>(
    f: &F,
    dict: &SillDictionary<T>,
    grid: &SampleGrid<T>,
    ridge: T,
) -> Result<(WeightMatrix<T>, RegressionReport<T>)> {
    check_dim(dict.state_dim(), f.state_dim(), "vector field dimension")?;
    check_grid(dict, grid)?;
    let design = design_matrix(dict, &grid.points, false);
    let targets = field_values(f, &grid.points)?;
    let ls = LeastSquares::new(&design, ridge)?;
    if ls.is_rank_deficient() && ridge == T::zero() {
        log::warn!("rank-deficient design ({} < {}); using minimum-norm weights", ls.rank(), ls.ncols());
    }
    let w = WeightMatrix::new(ls.solve(&targets)?.transpose(), dict)?;

    let n = dict.state_dim();
    let fitted = design.matmul(&w.0.transpose())?;
    let residual = targets.sub(&fitted)?;
    let mut rel = Vec::with_capacity(n);
    let mut zero = Vec::with_capacity(n);
    let mut sup = Vec::with_capacity(n);
    for i in 0..n {
        let r = residual.col(i);
        let num = norm2(&r);
        let den = norm2(&targets.col(i));
        zero.push(den == T::zero());
        rel.push(if den == T::zero() { num } else { num / den });
        sup.push(r.iter().fold(T::zero(), |m, v| m.max(v.abs())));
    }
    let report = RegressionReport {
        rel_l2_error: rel,
        zero_norm_component: zero,
        max_abs_residual: sup,
        ridge,
        rank: ls.rank(),
        rank_deficient: ls.is_rank_deficient(),
        n_samples: grid.len(),
    };
    Ok((w, report))
}

/// `delta(x) = f(x) - W Lambda(x)`
pub fn residual_at<T: Real, F: VectorField<T> + ?Sized>(
    f: &F,
    w: &WeightMatrix<T>,
    dict: &SillDictionary<T>,
    x: &[T],
) -> Result<Vec<T>> {
    check_dim(dict.state_dim(), x.len(), "residual_at state")?;
    if !dict.contains(x) {
        log::warn!("residual evaluated outside the dictionary domain at {x:?}");
    }
    let approx = w.apply(&dict.lambda_block(x)?);
    Ok(f.eval(x).into_iter().zip(approx).map(|(a, b)| a - b).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::{build_lattice, Steepness};
    use crate::simulation::FnField;

    fn dict2() -> SillDictionary<f64> {
        build_lattice(&[0.0, 0.0], &[1.0, 1.0], &[0.5, 0.5], Steepness::new(4.0).unwrap()).unwrap()
    }

    #[test]
    fn lattice_grid_1d() {
        let d = build_lattice(&[-1.0], &[3.0], &[1.0], Steepness::new(1.0).unwrap()).unwrap();
        let g = make_sample_grid(&d, 3, SampleMode::Lattice, 0).unwrap();
        assert_eq!(g.points, vec![vec![-1.0], vec![1.0], vec![3.0]]);
        assert!(make_sample_grid(&d, 1, SampleMode::Lattice, 0).is_err());
    }

    #[test]
    fn grid_counts_and_determinism() {
        let d = dict2();
        assert_eq!(make_sample_grid(&d, 10, SampleMode::Lattice, 0).unwrap().len(), 100);
        let a = make_sample_grid(&d, 7, SampleMode::Random, 42).unwrap();
        let b = make_sample_grid(&d, 7, SampleMode::Random, 42).unwrap();
        let c = make_sample_grid(&d, 7, SampleMode::Random, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.points, c.points);
        assert!(a.points.iter().all(|p| d.contains(p)));
    }

    #[test]
    fn grid_resource_limit() {
        let d = build_lattice(&[0.0; 4], &[1.0; 4], &[1.0; 4], Steepness::new(1.0).unwrap()).unwrap();
        assert!(matches!(
            make_sample_grid(&d, 100, SampleMode::Lattice, 0),
            Err(Error::Resource(_))
        ));
    }

    #[test]
    fn default_per_dim_targets_four_samples_per_center() {
        let d = build_lattice(&[0.0, 0.0], &[2.5, 2.5], &[0.5, 0.5], Steepness::new(1.0).unwrap()).unwrap();
        assert_eq!(default_per_dim(&d), 12);
    }

    #[test]
    fn zero_field_gives_zero_weights() {
        let d = dict2();
        let f = FnField::new("zero", 2, |_: &[f64], o: &mut [f64]| o.fill(0.0));
        let g = make_sample_grid(&d, 8, SampleMode::Lattice, 0).unwrap();
        let (w, rep) = fit_weights(&f, &d, &g, 0.0).unwrap();
        assert_eq!(w.matrix().max_abs(), 0.0);
        assert_eq!(rep.rel_l2_error, vec![0.0, 0.0]);
        assert_eq!(rep.zero_norm_component, vec![true, true]);
    }

    #[test]
    fn grid_outside_domain_rejected() {
        let d = dict2();
        let f = FnField::new("zero", 2, |_: &[f64], o: &mut [f64]| o.fill(0.0));
        let g = SampleGrid {
            points: vec![vec![2.0, 0.0]],
            mode: SampleMode::Random,
            per_dim: 1,
            seed: 0,
        };
        assert!(fit_weights(&f, &d, &g, 0.0).is_err());
    }

    #[test]
    fn ridge_recorded_and_shrinks_weights() {
        let d = dict2();
        let f = FnField::new("lin", 2, |x: &[f64], o: &mut [f64]| {
            o[0] = x[0] - x[1];
            o[1] = 0.5 * x[0];
        });
        let g = make_sample_grid(&d, 8, SampleMode::Lattice, 0).unwrap();
        let (w0, _) = fit_weights(&f, &d, &g, 0.0).unwrap();
        let (w1, rep) = fit_weights(&f, &d, &g, 1.0).unwrap();
        assert_eq!(rep.ridge, 1.0);
        assert!(w1.matrix().frobenius_norm() < w0.matrix().frobenius_norm());
    }
}
