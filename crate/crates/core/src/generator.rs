//! Constant Koopman generator over the SILL basis, the join-collapsed
//! closure approximation, closure residuals, and the discrete-time EDMD
//! baseline with column-sparse (2,1) regularization.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dictionary::{lambda_derivative, logistic_complement, SillDictionary};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{largest_eigenvalue_psd, norm2, LeastSquares, Mat};
use crate::regression::{design_matrix, WeightMatrix};
use crate::scalar::Real;
use crate::simulation::VectorField;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssemblyMode {
    /// Lambda rows are least-squares projections of the exact lifted derivative.
    Projection,
    /// Lambda rows left at zero; only the regressed state dynamics are kept.
    StateOnly,
}

/// `m x m` generator with `m = 1 + n + N_L`.
///
/// Row 0 belongs to the constant observable, rows `1..=n` to the state and
/// the rest to the conjunctive logistic observables.
#[derive(Clone, Debug, PartialEq)]
pub struct KoopmanGenerator<T> {
    k: Mat<T>,
    state_dim: usize,
    n_centers: usize,
    mode: AssemblyMode,
    rank_deficient: bool,
}

impl<T: Real> KoopmanGenerator<T> {
    /// Wraps an existing matrix after checking the block structure.
    pub fn from_matrix(k: Mat<T>, state_dim: usize, mode: AssemblyMode) -> Result<Self> {
        check_dim(k.nrows(), k.ncols(), "generator must be square")?;
        if k.nrows() < 1 + state_dim {
            return Err(Error::Contract("generator smaller than 1 + n".into()));
        }
        if !k.is_finite() {
            return Err(Error::NonFinite("generator matrix"));
        }
        if k.row(0).iter().any(|&v| v != T::zero()) {
            return Err(Error::Contract("generator row 0 must be zero".into()));
        }
        Ok(Self {
            n_centers: k.nrows() - 1 - state_dim,
            k,
            state_dim,
            mode,
            rank_deficient: false,
        })
    }

    pub fn matrix(&self) -> &Mat<T> {
        &self.k
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn n_centers(&self) -> usize {
        self.n_centers
    }

    pub fn lifted_dim(&self) -> usize {
        self.k.nrows()
    }

    pub fn mode(&self) -> AssemblyMode {
        self.mode
    }

    pub fn rank_deficient(&self) -> bool {
        self.rank_deficient
    }

    /// Records that the projection behind this matrix was rank-deficient.
    pub fn with_rank_deficient(mut self, flag: bool) -> Self {
        self.rank_deficient = flag;
        self
    }

    /// `K psi`
    pub fn apply(&self, psi: &[T]) -> Result<Vec<T>> {
        self.k.matvec(psi)
    }
}

/// Exact lifted derivatives `dLambda_l/dt(x_s)` as an `S x N_L` matrix.
fn lambda_derivatives<T: Real, F: VectorField<T> + ?Sized>(
    dict: &SillDictionary<T>,
    f: &F,
    points: &[Vec<T>],
) -> Result<Mat<T>> {
    let a = dict.alpha().get();
    let rows: Vec<Vec<T>> = points
        .par_iter()
        .map(|x| {
            let fx = f.eval(x);
            dict.centers()
                .iter()
                .map(|c| lambda_derivative(x, &fx, c, a))
                .collect()
        })
        .collect();
    let mat = Mat::from_rows(&rows)?;
    if !mat.is_finite() {
        return Err(Error::NonFinite("lifted derivative on the assembly grid"));
    }
    Ok(mat)
}

fn structural_rows<T: Real>(dict: &SillDictionary<T>, w: &WeightMatrix<T>) -> Result<Mat<T>> {
    let n = dict.state_dim();
    let m = dict.lifted_dim();
    check_dim(n, w.matrix().nrows(), "weight rows")?;
    check_dim(dict.n_centers(), w.matrix().ncols(), "weight columns")?;
    let mut k = Mat::zeros(m, m);
    for i in 0..n {
        k.row_mut(1 + i)[1 + n..].copy_from_slice(w.matrix().row(i));
    }
    Ok(k)
}

/// Assembles `K_G`: row 0 zero, state rows `[0 | 0 | W]`, and each Lambda row
/// the (optionally ridge-regularized) least-squares fit of
/// `dLambda_l/dt(x_s) ~ K_row psi(x_s)` over the grid points.
pub fn assemble_generator<T: Real, F: VectorField<T> + ?Sized>(
    dict: &SillDictionary<T>,
    w: &WeightMatrix<T>,
    f: &F,
    points: &[Vec<T>],
    ridge: T,
) -> Result<KoopmanGenerator<T>> {
    check_dim(dict.state_dim(), f.state_dim(), "vector field dimension")?;
    if points.is_empty() {
        return Err(Error::Contract("assembly grid is empty".into()));
    }
    for p in points {
        check_dim(dict.state_dim(), p.len(), "assembly point")?;
    }
    let n = dict.state_dim();
    let mut k = structural_rows(dict, w)?;
    let psi = design_matrix(dict, points, true);
    let targets = lambda_derivatives(dict, f, points)?;
    let ls = LeastSquares::new(&psi, ridge)?;
    if ls.is_rank_deficient() && ridge == T::zero() {
        log::warn!("rank-deficient lifted design ({} < {})", ls.rank(), ls.ncols());
    }
    // m x N_L, column l is Lambda row l
    let rows = ls.solve(&targets)?;
    for l in 0..dict.n_centers() {
        let dst = k.row_mut(1 + n + l);
        for (j, d) in dst.iter_mut().enumerate() {
            *d = rows[(j, l)];
        }
    }
    if !k.is_finite() {
        return Err(Error::Numerical("non-finite generator entries".into()));
    }
    Ok(KoopmanGenerator {
        k,
        state_dim: n,
        n_centers: dict.n_centers(),
        mode: AssemblyMode::Projection,
        rank_deficient: ls.is_rank_deficient(),
    })
}

/// Generator with only the regressed state rows; Lambda rows are zero.
pub fn assemble_state_only<T: Real>(dict: &SillDictionary<T>, w: &WeightMatrix<T>) -> Result<KoopmanGenerator<T>> {
    Ok(KoopmanGenerator {
        k: structural_rows(dict, w)?,
        state_dim: dict.state_dim(),
        n_centers: dict.n_centers(),
        mode: AssemblyMode::StateOnly,
        rank_deficient: false,
    })
}

/// Join-collapsed approximation of `dLambda_l/dt` at `x`:
/// `sum_i sum_k alpha (1 - lambda_{mu_i^l}(x_i)) w_ik Lambda_{join(l,k)}(x)`.
pub fn join_closure_rhs<T: Real>(
    x: &[T],
    l: usize,
    dict: &SillDictionary<T>,
    w: &WeightMatrix<T>,
) -> Result<T> {
    check_dim(dict.state_dim(), x.len(), "join_closure_rhs state")?;
    check_dim(dict.n_centers(), w.matrix().ncols(), "weight columns")?;
    if l >= dict.n_centers() {
        return Err(Error::Contract(format!("center index {l} out of range")));
    }
    let a = dict.alpha().get();
    let lambda = dict.lambda_block(x)?;
    let vl = dict.center(l);
    let mut joined = vec![T::zero(); dict.n_centers()];
    for (k, slot) in joined.iter_mut().enumerate() {
        *slot = lambda[dict.join(l, k)?];
    }
    let mut total = T::zero();
    for i in 0..dict.state_dim() {
        let coef = a * logistic_complement(x[i], vl[i], a);
        let s: T = w.matrix().row(i).iter().zip(&joined).map(|(&wk, &lj)| wk * lj).sum();
        total += coef * s;
    }
    Ok(total)
}

/// Grid statistics of `eps(x) = |dpsi/dt - K psi|_2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosureResidualReport<T> {
    /// RMS over the grid of each lifted row's residual (`m` entries).
    pub row_rms: Vec<T>,
    pub row_sup: Vec<T>,
    /// `eps(x_s)` for every sample.
    pub eps: Vec<T>,
    /// Norm of the state block of the residual for every sample.
    pub state_eps: Vec<T>,
    pub eps_rms: T,
    pub eps_sup: T,
}

impl<T: Real> ClosureResidualReport<T> {
    /// RMS over the Lambda rows only.
    pub fn lambda_rms(&self, state_dim: usize) -> T {
        let rows = &self.row_rms[1 + state_dim..];
        if rows.is_empty() {
            return T::zero();
        }
        let s: T = rows.iter().map(|&r| r * r).sum();
        (s / T::from_count(rows.len())).sqrt()
    }
}

pub fn closure_residual<T: Real, F: VectorField<T> + ?Sized>(
    dict: &SillDictionary<T>,
    f: &F,
    generator: &KoopmanGenerator<T>,
    points: &[Vec<T>],
) -> Result<ClosureResidualReport<T>> {
    check_dim(dict.lifted_dim(), generator.lifted_dim(), "generator size")?;
    check_dim(dict.state_dim(), f.state_dim(), "vector field dimension")?;
    if points.is_empty() {
        return Err(Error::Contract("evaluation grid is empty".into()));
    }
    let n = dict.state_dim();
    let m = dict.lifted_dim();
    let per_point: Vec<Vec<T>> = points
        .par_iter()
        .map(|x| -> Result<Vec<T>> {
            let psi = dict.lift(x)?;
            let exact = dict.lifted_derivative(x, &f.eval(x))?;
            let model = generator.apply(&psi)?;
            Ok(exact.iter().zip(model).map(|(&a, b)| a - b).collect())
        })
        .collect::<Result<_>>()?;
    let mut sq = vec![T::zero(); m];
    let mut sup = vec![T::zero(); m];
    let mut eps = Vec::with_capacity(points.len());
    let mut state_eps = Vec::with_capacity(points.len());
    for r in &per_point {
        for j in 0..m {
            sq[j] += r[j] * r[j];
            sup[j] = sup[j].max(r[j].abs());
        }
        eps.push(norm2(r));
        state_eps.push(norm2(&r[1..=n]));
    }
    let count = T::from_count(points.len());
    let eps_sq: T = eps.iter().map(|&e| e * e).sum();
    Ok(ClosureResidualReport {
        row_rms: sq.into_iter().map(|s| (s / count).sqrt()).collect(),
        row_sup: sup,
        eps_sup: eps.iter().fold(T::zero(), |a, &b| a.max(b)),
        eps_rms: (eps_sq / count).sqrt(),
        eps,
        state_eps,
    })
}

/// Discrete-time EDMD fit.
#[derive(Clone, Debug, PartialEq)]
pub struct EdmdResult<T> {
    pub k: Mat<T>,
    pub converged: bool,
    pub iterations: usize,
    /// Objective after every iteration (empty for the closed-form path).
    pub objective_trace: Vec<T>,
}

pub const EDMD_MAX_ITER: usize = 10_000;
pub const EDMD_REL_TOL: f64 = 1e-10;

/// `|psi_next - K psi_prev|_F^2 + zeta sum_j |K_{:,j}|_2`
pub fn edmd_objective<T: Real>(prev: &Mat<T>, next: &Mat<T>, k: &Mat<T>, zeta: T) -> Result<T> {
    let r = next.sub(&k.matmul(prev)?)?;
    let fit = r.frobenius_norm();
    let group: T = k.column_norms().into_iter().sum();
    Ok(fit * fit + zeta * group)
}

fn column_shrink<T: Real>(k: &mut Mat<T>, threshold: T) {
    let norms = k.column_norms();
    for i in 0..k.nrows() {
        for (j, v) in k.row_mut(i).iter_mut().enumerate() {
            let nj = norms[j];
            let scale = if nj > threshold { T::one() - threshold / nj } else { T::zero() };
            *v *= scale;
        }
    }
}

/// EDMD from lifted snapshot pairs (`m x T` each). `zeta = 0` gives the
/// minimum-Frobenius-norm least-squares operator `psi_next psi_prev^+`;
/// `zeta > 0` runs monotone accelerated proximal gradient with columnwise
/// soft-thresholding.
pub fn edmd_discrete<T: Real>(prev: &Mat<T>, next: &Mat<T>, zeta: T) -> Result<EdmdResult<T>> {
    check_dim(prev.nrows(), next.nrows(), "snapshot rows")?;
    check_dim(prev.ncols(), next.ncols(), "snapshot count")?;
    if prev.ncols() == 0 {
        return Err(Error::Contract("need at least one snapshot pair".into()));
    }
    if !(zeta >= T::zero() && zeta.is_finite()) {
        return Err(Error::Contract(format!("zeta must be finite and >= 0, got {zeta}")));
    }
    if !(prev.is_finite() && next.is_finite()) {
        return Err(Error::NonFinite("snapshot matrices"));
    }
    if zeta == T::zero() {
        let ls = LeastSquares::new(&prev.transpose(), T::zero())?;
        let kt = ls.solve(&next.transpose())?;
        return Ok(EdmdResult {
            k: kt.transpose(),
            converged: true,
            iterations: 0,
            objective_trace: Vec::new(),
        });
    }

    let m = prev.nrows();
    let pt = prev.transpose();
    let gram = prev.matmul(&pt)?;
    let cross = next.matmul(&pt)?;
    let lip = T::lit(2.0) * largest_eigenvalue_psd(&gram, 1000, T::lit(1e-12))? * T::lit(1.000_001);
    if lip == T::zero() {
        return Ok(EdmdResult {
            k: Mat::zeros(m, m),
            converged: true,
            iterations: 0,
            objective_trace: Vec::new(),
        });
    }
    let step = T::one() / lip;
    let two = T::lit(2.0);
    let four = T::lit(4.0);
    let tol = T::lit(EDMD_REL_TOL);

    let mut x = Mat::zeros(m, m);
    let mut y = x.clone();
    let mut theta = T::one();
    let mut fx = edmd_objective(prev, next, &x, zeta)?;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=EDMD_MAX_ITER {
        iterations = it;
        // gradient of the smooth part at y: 2 (y G - C)
        let grad = y.matmul(&gram)?.sub(&cross)?.scaled(two);
        let mut z = y.sub(&grad.scaled(step))?;
        column_shrink(&mut z, step * zeta);
        let fz = edmd_objective(prev, next, &z, zeta)?;
        let x_old = x.clone();
        let f_old = fx;
        if fz <= fx {
            x = z.clone();
            fx = fz;
        }
        let theta_next = (T::one() + (T::one() + four * theta * theta).sqrt()) / two;
        // y = x + (theta/theta_next)(z - x) + ((theta - 1)/theta_next)(x - x_old)
        y = x
            .add(&z.sub(&x)?.scaled(theta / theta_next))?
            .add(&x.sub(&x_old)?.scaled((theta - T::one()) / theta_next))?;
        theta = theta_next;
        trace.push(fx);
        let rel = (f_old - fx).abs() / f_old.abs().max(T::min_positive_value());
        if fz <= f_old && rel < tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("EDMD proximal gradient hit the {EDMD_MAX_ITER}-iteration cap");
    }
    Ok(EdmdResult {
        k: x,
        converged,
        iterations,
        objective_trace: trace,
    })
}
