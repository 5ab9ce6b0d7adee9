//! Logistic and conjunctive-logistic observables, the state-inclusive
//! lifting `psi(x) = [1; x; Lambda(x)]`, and lattice dictionaries closed
//! under the componentwise maximum of their centers.

use std::cmp::Ordering;
use std::ops::Deref;

use crate::error::{check_dim, Error, Result};
use crate::scalar::Real;

/// Shared logistic steepness, strictly positive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Steepness<T>(T);

impl<T: Real> Steepness<T> {
    pub fn new(alpha: T) -> Result<Self> {
        if alpha.is_finite() && alpha > T::zero() {
            Ok(Self(alpha))
        } else {
            Err(Error::Contract(format!("steepness must be finite and > 0, got {alpha}")))
        }
    }

    pub fn get(self) -> T {
        self.0
    }
}

/// Center of one conjunctive logistic function.
#[derive(Clone, Debug, PartialEq)]
pub struct CenterVector<T>(Vec<T>);

impl<T: Real> CenterVector<T> {
    pub fn new(mu: Vec<T>) -> Result<Self> {
        if mu.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("center vector"));
        }
        Ok(Self(mu))
    }

    pub fn into_inner(self) -> Vec<T> {
        self.0
    }

    /// Componentwise maximum.
    pub fn join(&self, other: &Self) -> Self {
        Self(self.0.iter().zip(&other.0).map(|(&a, &b)| a.max(b)).collect())
    }

    /// True when `self >= other` in every coordinate.
    pub fn dominates(&self, other: &Self) -> bool {
        self.0.iter().zip(&other.0).all(|(a, b)| a >= b)
    }
}

impl<T> Deref for CenterVector<T> {
    type Target = [T];
    fn deref(&self) -> &[T] {
        &self.0
    }
}

fn lex_cmp<T: Real>(a: &[T], b: &[T]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y) {
            Some(Ordering::Equal) | None => continue,
            Some(o) => return o,
        }
    }
    a.len().cmp(&b.len())
}

/// `1 / (1 + exp(-alpha (x - mu)))`, branching on the sign of the exponent
/// so `exp` only ever sees non-positive arguments.
#[inline]
pub fn logistic<T: Real>(x: T, mu: T, alpha: T) -> T {
    let z = alpha * (x - mu);
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// `1 - logistic(x, mu, alpha)` without cancellation.
#[inline]
pub fn logistic_complement<T: Real>(x: T, mu: T, alpha: T) -> T {
    logistic(mu, x, alpha)
}

/// Checked logistic evaluation.
pub fn logistic_eval<T: Real>(x: T, mu: T, alpha: Steepness<T>) -> Result<T> {
    if !x.is_finite() || !mu.is_finite() {
        return Err(Error::NonFinite("logistic argument"));
    }
    Ok(logistic(x, mu, alpha.get()))
}

#[inline]
pub(crate) fn conjunctive<T: Real>(x: &[T], v: &[T], alpha: T) -> T {
    x.iter()
        .zip(v)
        .fold(T::one(), |acc, (&xi, &mi)| acc * logistic(xi, mi, alpha))
}

/// Product of per-coordinate logistic factors centered at `v`.
pub fn conjunctive_eval<T: Real>(x: &[T], v: &CenterVector<T>, alpha: Steepness<T>) -> Result<T> {
    check_dim(v.len(), x.len(), "conjunctive_eval state")?;
    Ok(conjunctive(x, v, alpha.get()))
}

#[inline]
pub(crate) fn gradient_into<T: Real>(x: &[T], v: &[T], alpha: T, out: &mut [T]) {
    let big = conjunctive(x, v, alpha);
    for ((o, &xi), &mi) in out.iter_mut().zip(x).zip(v) {
        *o = alpha * logistic_complement(xi, mi, alpha) * big;
    }
}

/// Gradient of the conjunctive logistic: component `i` is
/// `alpha (1 - lambda_i(x_i)) Lambda(x)`.
pub fn conjunctive_gradient<T: Real>(
    x: &[T],
    v: &CenterVector<T>,
    alpha: Steepness<T>,
) -> Result<Vec<T>> {
    check_dim(v.len(), x.len(), "conjunctive_gradient state")?;
    let mut out = vec![T::zero(); x.len()];
    gradient_into(x, v, alpha.get(), &mut out);
    Ok(out)
}

#[inline]
pub(crate) fn lambda_derivative<T: Real>(x: &[T], fx: &[T], v: &[T], alpha: T) -> T {
    let big = conjunctive(x, v, alpha);
    let s: T = x
        .iter()
        .zip(v)
        .zip(fx)
        .map(|((&xi, &mi), &fi)| logistic_complement(xi, mi, alpha) * fi)
        .sum();
    alpha * big * s
}

/// Time derivative of `Lambda_v` along the flow, `grad Lambda_v(x) . f(x)`.
pub fn exact_lambda_derivative<T: Real>(
    x: &[T],
    fx: &[T],
    v: &CenterVector<T>,
    alpha: Steepness<T>,
) -> Result<T> {
    check_dim(v.len(), x.len(), "exact_lambda_derivative state")?;
    check_dim(v.len(), fx.len(), "exact_lambda_derivative field value")?;
    Ok(lambda_derivative(x, fx, v, alpha.get()))
}

/// State-inclusive logistic lifting dictionary.
///
/// Centers are kept in lexicographic order and are closed under
/// componentwise maximum.
#[derive(Clone, Debug, PartialEq)]
pub struct SillDictionary<T> {
    state_dim: usize,
    alpha: Steepness<T>,
    centers: Vec<CenterVector<T>>,
    domain_lo: Vec<T>,
    domain_hi: Vec<T>,
    mesh_spacing: Vec<T>,
}

impl<T: Real> SillDictionary<T> {
    /// Builds a dictionary from an arbitrary join-closed set of centers.
    pub fn new(
        centers: Vec<Vec<T>>,
        alpha: Steepness<T>,
        domain_lo: Vec<T>,
        domain_hi: Vec<T>,
        mesh_spacing: Vec<T>,
    ) -> Result<Self> {
        let dict = Self::assemble(centers, alpha, domain_lo, domain_hi, mesh_spacing)?;
        for (l, a) in dict.centers.iter().enumerate() {
            for b in &dict.centers[l + 1..] {
                let j = a.join(b);
                if dict.find(&j).is_none() {
                    return Err(Error::Invariant(format!(
                        "join of {:?} and {:?} is not a center",
                        &a[..],
                        &b[..]
                    )));
                }
            }
        }
        Ok(dict)
    }

    fn assemble(
        centers: Vec<Vec<T>>,
        alpha: Steepness<T>,
        domain_lo: Vec<T>,
        domain_hi: Vec<T>,
        mesh_spacing: Vec<T>,
    ) -> Result<Self> {
        let n = domain_lo.len();
        if n == 0 {
            return Err(Error::Contract("state dimension must be positive".into()));
        }
        check_dim(n, domain_hi.len(), "domain_hi")?;
        check_dim(n, mesh_spacing.len(), "mesh_spacing")?;
        if centers.is_empty() {
            return Err(Error::Contract("dictionary needs at least one center".into()));
        }
        for i in 0..n {
            if !(domain_lo[i].is_finite() && domain_hi[i].is_finite()) {
                return Err(Error::NonFinite("dictionary domain"));
            }
            if domain_lo[i] > domain_hi[i] {
                return Err(Error::Contract(format!("domain_lo[{i}] > domain_hi[{i}]")));
            }
        }
        let mut cs = Vec::with_capacity(centers.len());
        for c in centers {
            check_dim(n, c.len(), "center dimension")?;
            if c
                .iter()
                .zip(domain_lo.iter().zip(&domain_hi))
                .any(|(&v, (&lo, &hi))| v < lo || v > hi)
            {
                return Err(Error::Contract(format!("center {c:?} outside the domain")));
            }
            cs.push(CenterVector::new(c)?);
        }
        cs.sort_by(|a, b| lex_cmp(a, b));
        if cs.windows(2).any(|w| lex_cmp(&w[0], &w[1]) == Ordering::Equal) {
            return Err(Error::Contract("centers must be pairwise distinct".into()));
        }
        Ok(Self {
            state_dim: n,
            alpha,
            centers: cs,
            domain_lo,
            domain_hi,
            mesh_spacing,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn alpha(&self) -> Steepness<T> {
        self.alpha
    }

    pub fn centers(&self) -> &[CenterVector<T>] {
        &self.centers
    }

    pub fn center(&self, l: usize) -> &CenterVector<T> {
        &self.centers[l]
    }

    pub fn n_centers(&self) -> usize {
        self.centers.len()
    }

    /// `1 + n + N_L`
    pub fn lifted_dim(&self) -> usize {
        1 + self.state_dim + self.centers.len()
    }

    pub fn domain_lo(&self) -> &[T] {
        &self.domain_lo
    }

    pub fn domain_hi(&self) -> &[T] {
        &self.domain_hi
    }

    pub fn mesh_spacing(&self) -> &[T] {
        &self.mesh_spacing
    }

    /// Same centers and domain with a different steepness.
    pub fn with_alpha(&self, alpha: Steepness<T>) -> Self {
        Self {
            alpha,
            ..self.clone()
        }
    }

    pub fn contains(&self, x: &[T]) -> bool {
        x.iter()
            .zip(self.domain_lo.iter().zip(&self.domain_hi))
            .all(|(&v, (&lo, &hi))| v >= lo && v <= hi)
    }

    fn find(&self, c: &[T]) -> Option<usize> {
        self.centers.binary_search_by(|p| lex_cmp(p, c)).ok()
    }

    /// Index of the center equal to the componentwise max of centers `l` and `k`.
    pub fn join(&self, l: usize, k: usize) -> Result<usize> {
        let n_l = self.centers.len();
        if l >= n_l || k >= n_l {
            return Err(Error::Contract(format!(
                "center index out of range ({l}, {k}) for {n_l} centers"
            )));
        }
        if l == k {
            return Ok(l);
        }
        let j = self.centers[l].join(&self.centers[k]);
        self.find(&j)
            .ok_or_else(|| Error::Invariant(format!("join of centers {l} and {k} missing")))
    }

    /// `Lambda_{v_l}(x)` for every center, in dictionary order.
    pub(crate) fn lambda_into(&self, x: &[T], out: &mut [T]) {
        let a = self.alpha.get();
        for (o, c) in out.iter_mut().zip(&self.centers) {
            *o = conjunctive(x, c, a);
        }
    }

    pub fn lambda_block(&self, x: &[T]) -> Result<Vec<T>> {
        check_dim(self.state_dim, x.len(), "lambda_block state")?;
        let mut out = vec![T::zero(); self.centers.len()];
        self.lambda_into(x, &mut out);
        Ok(out)
    }

    pub(crate) fn lift_into(&self, x: &[T], out: &mut [T]) {
        let n = self.state_dim;
        out[0] = T::one();
        out[1..=n].copy_from_slice(x);
        self.lambda_into(x, &mut out[n + 1..]);
    }

    /// `psi(x) = [1; x; Lambda_{v_1}(x); ...; Lambda_{v_NL}(x)]`
    pub fn lift(&self, x: &[T]) -> Result<Vec<T>> {
        check_dim(self.state_dim, x.len(), "lift state")?;
        let mut out = vec![T::zero(); self.lifted_dim()];
        self.lift_into(x, &mut out);
        Ok(out)
    }

    /// Exact time derivative of the lifted vector: `[0; f(x); dLambda/dt]`.
    pub fn lifted_derivative(&self, x: &[T], fx: &[T]) -> Result<Vec<T>> {
        check_dim(self.state_dim, x.len(), "lifted_derivative state")?;
        check_dim(self.state_dim, fx.len(), "lifted_derivative field value")?;
        let n = self.state_dim;
        let a = self.alpha.get();
        let mut out = vec![T::zero(); self.lifted_dim()];
        out[1..=n].copy_from_slice(fx);
        for (o, c) in out[n + 1..].iter_mut().zip(&self.centers) {
            *o = lambda_derivative(x, fx, c, a);
        }
        Ok(out)
    }
}

/// Full Cartesian lattice `{lo_i, lo_i + eps_i, ...} <= hi_i` per dimension,
/// stored in lexicographic order.
pub fn build_lattice<T: Real>(
    domain_lo: &[T],
    domain_hi: &[T],
    spacing: &[T],
    alpha: Steepness<T>,
) -> Result<SillDictionary<T>> {
    let n = domain_lo.len();
    check_dim(n, domain_hi.len(), "build_lattice domain_hi")?;
    check_dim(n, spacing.len(), "build_lattice spacing")?;
    let mut axes: Vec<Vec<T>> = Vec::with_capacity(n);
    for i in 0..n {
        let (lo, hi, eps) = (domain_lo[i], domain_hi[i], spacing[i]);
        if !(eps.is_finite() && eps > T::zero()) {
            return Err(Error::Contract(format!("spacing[{i}] must be > 0, got {eps}")));
        }
        if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
            return Err(Error::Contract(format!(
                "domain_lo[{i}] must be < domain_hi[{i}] (got {lo}, {hi})"
            )));
        }
        // tolerate representation error in (hi - lo) / eps
        let steps = ((hi - lo) / eps + T::lit(1e-9)).floor();
        let count = steps.to_usize().unwrap_or(usize::MAX).saturating_add(1);
        if count > 1_000_000 {
            return Err(Error::Resource(format!("{count} lattice points along axis {i}")));
        }
        axes.push(
            (0..count)
                .map(|j| (lo + T::from_count(j) * eps).min(hi))
                .collect(),
        );
    }
    let total = axes.iter().try_fold(1usize, |acc, a| acc.checked_mul(a.len()));
    let total = match total {
        Some(t) if t <= 10_000_000 => t,
        _ => return Err(Error::Resource("lattice exceeds 1e7 centers".into())),
    };
    let mut centers = Vec::with_capacity(total);
    let mut idx = vec![0usize; n];
    for _ in 0..total {
        centers.push(idx.iter().enumerate().map(|(d, &j)| axes[d][j]).collect());
        // last axis varies fastest
        for d in (0..n).rev() {
            idx[d] += 1;
            if idx[d] < axes[d].len() {
                break;
            }
            idx[d] = 0;
        }
    }
    SillDictionary::assemble(
        centers,
        alpha,
        domain_lo.to_vec(),
        domain_hi.to_vec(),
        spacing.to_vec(),
    )
}
