//! Ground-truth and lifted-linear integration with fixed-step RK4, the two
//! benchmark vector fields, and trajectory comparison.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::generator::KoopmanGenerator;
use crate::linalg::{norm2, Mat};
use crate::scalar::Real;

/// Right-hand side `f: R^n -> R^n` of an autonomous ODE.
pub trait VectorField<T: Real>: Send + Sync {
    fn name(&self) -> &str;

    fn state_dim(&self) -> usize;

    fn params(&self) -> BTreeMap<String, T> {
        BTreeMap::new()
    }

    /// Writes `f(x)` into `out`; both slices have length `state_dim()`.
    fn eval_into(&self, x: &[T], out: &mut [T]);

    fn eval(&self, x: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.state_dim()];
        self.eval_into(x, &mut out);
        out
    }
}

impl<T: Real, F: VectorField<T> + ?Sized> VectorField<T> for &F {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn state_dim(&self) -> usize {
        (**self).state_dim()
    }
    fn params(&self) -> BTreeMap<String, T> {
        (**self).params()
    }
    fn eval_into(&self, x: &[T], out: &mut [T]) {
        (**self).eval_into(x, out)
    }
}

impl<T: Real, F: VectorField<T> + ?Sized> VectorField<T> for Box<F> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn state_dim(&self) -> usize {
        (**self).state_dim()
    }
    fn params(&self) -> BTreeMap<String, T> {
        (**self).params()
    }
    fn eval_into(&self, x: &[T], out: &mut [T]) {
        (**self).eval_into(x, out)
    }
}

/// Vector field backed by a closure; used for synthetic targets.
pub struct FnField<F> {
    name: String,
    dim: usize,
    f: F,
}

impl<F> FnField<F> {
    pub fn new(name: impl Into<String>, dim: usize, f: F) -> Self {
        Self {
            name: name.into(),
            dim,
            f,
        }
    }
}

impl<T: Real, F> VectorField<T> for FnField<F>
where
    F: Fn(&[T], &mut [T]) + Send + Sync,
{
    fn name(&self) -> &str {
        &self.name
    }
    fn state_dim(&self) -> usize {
        self.dim
    }
    fn eval_into(&self, x: &[T], out: &mut [T]) {
        (self.f)(x, out)
    }
}

/// `x1' = x2`, `x2' = -x1 + a1 (1 - x1^2) x2`.
#[derive(Clone, Debug)]
pub struct VanDerPol<T> {
    pub a1: T,
}

impl<T: Real> Default for VanDerPol<T> {
    fn default() -> Self {
        Self { a1: T::lit(-0.2) }
    }
}

pub fn benchmark_vdp<T: Real>(a1: T) -> VanDerPol<T> {
    VanDerPol { a1 }
}

impl<T: Real> VectorField<T> for VanDerPol<T> {
    fn name(&self) -> &str {
        "vdp"
    }
    fn state_dim(&self) -> usize {
        2
    }
    fn params(&self) -> BTreeMap<String, T> {
        BTreeMap::from([("a1".to_string(), self.a1)])
    }
    fn eval_into(&self, x: &[T], out: &mut [T]) {
        out[0] = x[1];
        out[1] = -x[0] + self.a1 * (T::one() - x[0] * x[0]) * x[1];
    }
}

/// Two-protein mutual repression model.
///
/// Negative concentrations are clamped to zero inside the Hill terms and
/// counted in [`ToggleSwitch::clamp_events`].
#[derive(Debug)]
pub struct ToggleSwitch<T> {
    pub a1: T,
    pub a2: T,
    pub n1: T,
    pub n2: T,
    pub delta: T,
    clamped: AtomicUsize,
}

impl<T: Real> Clone for ToggleSwitch<T> {
    fn clone(&self) -> Self {
        Self {
            a1: self.a1,
            a2: self.a2,
            n1: self.n1,
            n2: self.n2,
            delta: self.delta,
            clamped: AtomicUsize::new(self.clamp_events()),
        }
    }
}

impl<T: Real> ToggleSwitch<T> {
    pub fn clamp_events(&self) -> usize {
        self.clamped.load(Ordering::Relaxed)
    }

    fn hill(&self, alpha: T, repressor: T, n: T) -> T {
        let r = if repressor < T::zero() {
            self.clamped.fetch_add(1, Ordering::Relaxed);
            T::zero()
        } else {
            repressor
        };
        alpha / (T::one() + r.powf(n))
    }
}

pub fn benchmark_toggle<T: Real>(a1: T, a2: T, n1: T, n2: T, delta: T) -> Result<ToggleSwitch<T>> {
    if !(n1 >= T::one() && n2 >= T::one()) {
        return Err(Error::Contract(format!("Hill exponents must be >= 1 (got {n1}, {n2})")));
    }
    if !(delta > T::zero()) {
        return Err(Error::Contract(format!("degradation rate must be > 0 (got {delta})")));
    }
    if !(a1.is_finite() && a2.is_finite() && delta.is_finite()) {
        return Err(Error::NonFinite("toggle parameters"));
    }
    Ok(ToggleSwitch {
        a1,
        a2,
        n1,
        n2,
        delta,
        clamped: AtomicUsize::new(0),
    })
}

impl<T: Real> VectorField<T> for ToggleSwitch<T> {
    fn name(&self) -> &str {
        "toggle"
    }
    fn state_dim(&self) -> usize {
        2
    }
    fn params(&self) -> BTreeMap<String, T> {
        BTreeMap::from([
            ("a1".to_string(), self.a1),
            ("a2".to_string(), self.a2),
            ("delta".to_string(), self.delta),
            ("n1".to_string(), self.n1),
            ("n2".to_string(), self.n2),
        ])
    }
    fn eval_into(&self, x: &[T], out: &mut [T]) {
        out[0] = self.hill(self.a1, x[1], self.n1) - self.delta * x[0];
        out[1] = self.hill(self.a2, x[0], self.n2) - self.delta * x[1];
    }
}

/// Time-stamped state samples, optionally with the lifted state and a
/// reference trajectory plus per-step error norms.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord<T> {
    pub times: Vec<T>,
    pub states: Mat<T>,
    pub lifted: Option<Mat<T>>,
    pub reference: Option<Mat<T>>,
    pub errors: Option<Vec<T>>,
    /// Set when integration hit a non-finite state and was truncated.
    pub diverged: bool,
}

impl<T: Real> TrajectoryRecord<T> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.states.ncols()
    }

    pub fn final_state(&self) -> Option<&[T]> {
        (!self.is_empty()).then(|| self.states.row(self.len() - 1))
    }

    /// Stores `reference` and fills `errors` with `|x_hat(t) - x(t)|_2`.
    pub fn attach_reference(&mut self, reference: &TrajectoryRecord<T>) -> Result<()> {
        check_grids(reference, self)?;
        let errs = (0..self.len())
            .map(|i| {
                let d: Vec<T> = self
                    .states
                    .row(i)
                    .iter()
                    .zip(reference.states.row(i))
                    .map(|(&a, &b)| a - b)
                    .collect();
                norm2(&d)
            })
            .collect();
        self.reference = Some(reference.states.clone());
        self.errors = Some(errs);
        Ok(())
    }

    /// Root mean square of `|x(t)|_2` over the record.
    pub fn rms_amplitude(&self) -> T {
        if self.is_empty() {
            return T::zero();
        }
        let s: T = (0..self.len())
            .map(|i| self.states.row(i).iter().map(|&v| v * v).sum::<T>())
            .sum();
        (s / T::from_count(self.len())).sqrt()
    }

    /// Prefix of the record with `t <= t_max`.
    pub fn truncated(&self, t_max: T) -> Self {
        let keep = self.times.iter().take_while(|&&t| t <= t_max).count();
        let cut = |m: &Mat<T>| {
            Mat::from_fn(keep, m.ncols(), |i, j| m[(i, j)])
        };
        Self {
            times: self.times[..keep].to_vec(),
            states: cut(&self.states),
            lifted: self.lifted.as_ref().map(cut),
            reference: self.reference.as_ref().map(cut),
            errors: self.errors.as_ref().map(|e| e[..keep].to_vec()),
            diverged: self.diverged,
        }
    }
}

/// Lifted trajectory `z(t)` of the linear system `z' = K z`.
#[derive(Clone, Debug, PartialEq)]
pub struct LiftedTrajectory<T> {
    pub times: Vec<T>,
    pub lifted: Mat<T>,
    pub state_dim: usize,
    pub diverged: bool,
}

fn step_count<T: Real>(dt: T, horizon: T) -> Result<usize> {
    if !(dt.is_finite() && dt > T::zero()) {
        return Err(Error::Contract(format!("dt must be > 0, got {dt}")));
    }
    if !(horizon.is_finite() && horizon >= dt) {
        return Err(Error::Contract(format!(
            "horizon must be finite and >= dt (dt={dt}, horizon={horizon})"
        )));
    }
    (horizon / dt + T::lit(1e-9))
        .floor()
        .to_usize()
        .ok_or_else(|| Error::Contract("step count overflow".into()))
}

/// Classical RK4 over `steps` fixed steps; stops at the first non-finite state.
fn rk4<T: Real>(
    rhs: impl Fn(&[T], &mut [T]),
    x0: &[T],
    dt: T,
    steps: usize,
) -> (Vec<T>, Vec<T>, bool) {
    let n = x0.len();
    let half = T::lit(0.5);
    let sixth = T::one() / T::lit(6.0);
    let two = T::lit(2.0);
    let mut times = Vec::with_capacity(steps + 1);
    let mut data = Vec::with_capacity((steps + 1) * n);
    times.push(T::zero());
    data.extend_from_slice(x0);
    let mut x = x0.to_vec();
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) =
        (vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n]);
    for s in 1..=steps {
        rhs(&x, &mut k1);
        for i in 0..n {
            tmp[i] = x[i] + half * dt * k1[i];
        }
        rhs(&tmp, &mut k2);
        for i in 0..n {
            tmp[i] = x[i] + half * dt * k2[i];
        }
        rhs(&tmp, &mut k3);
        for i in 0..n {
            tmp[i] = x[i] + dt * k3[i];
        }
        rhs(&tmp, &mut k4);
        for i in 0..n {
            x[i] += dt * sixth * (k1[i] + two * k2[i] + two * k3[i] + k4[i]);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return (times, data, true);
        }
        times.push(T::from_count(s) * dt);
        data.extend_from_slice(&x);
    }
    (times, data, false)
}

/// Integrates `x' = f(x)` from `x0` on the grid `{0, dt, ..., <= horizon}`.
pub fn integrate_nonlinear<T: Real, F: VectorField<T> + ?Sized>(
    f: &F,
    x0: &[T],
    dt: T,
    horizon: T,
) -> Result<TrajectoryRecord<T>> {
    check_dim(f.state_dim(), x0.len(), "initial condition")?;
    let steps = step_count(dt, horizon)?;
    let (times, data, diverged) = rk4(|x, out| f.eval_into(x, out), x0, dt, steps);
    let rows = times.len();
    if diverged {
        log::warn!("{}: trajectory diverged at t = {}", f.name(), times[rows - 1] + dt);
    }
    Ok(TrajectoryRecord {
        times,
        states: Mat::from_row_major(rows, x0.len(), data)?,
        lifted: None,
        reference: None,
        errors: None,
        diverged,
    })
}

/// Integrates an ensemble of initial conditions in parallel; output order
/// follows input order.
pub fn integrate_ensemble<T: Real, F: VectorField<T> + ?Sized>(
    f: &F,
    initial: &[Vec<T>],
    dt: T,
    horizon: T,
) -> Result<Vec<TrajectoryRecord<T>>> {
    initial
        .par_iter()
        .map(|x0| integrate_nonlinear(f, x0, dt, horizon))
        .collect()
}

/// Integrates `z' = K z` with the same RK4 scheme.
pub fn integrate_linear<T: Real>(
    k: &Mat<T>,
    z0: &[T],
    dt: T,
    horizon: T,
) -> Result<(Vec<T>, Mat<T>, bool)> {
    check_dim(k.nrows(), k.ncols(), "linear system matrix must be square")?;
    check_dim(k.ncols(), z0.len(), "lifted initial condition")?;
    let steps = step_count(dt, horizon)?;
    let (times, data, diverged) = rk4(
        |z, out| {
            for (i, o) in out.iter_mut().enumerate() {
                *o = crate::linalg::dot(k.row(i), z);
            }
        },
        z0,
        dt,
        steps,
    );
    let rows = times.len();
    Ok((times, Mat::from_row_major(rows, z0.len(), data)?, diverged))
}

/// Open-loop integration of the lifted system from `z0 = lift(x0)`.
pub fn integrate_lifted<T: Real>(
    generator: &KoopmanGenerator<T>,
    z0: &[T],
    dt: T,
    horizon: T,
) -> Result<LiftedTrajectory<T>> {
    let (times, lifted, diverged) = integrate_linear(generator.matrix(), z0, dt, horizon)?;
    if diverged {
        log::warn!("lifted trajectory diverged at t = {}", times[times.len() - 1] + dt);
    }
    Ok(LiftedTrajectory {
        times,
        lifted,
        state_dim: generator.state_dim(),
        diverged,
    })
}

/// Predicted state `x_hat(t)`: lifted columns `1..=n`.
pub fn extract_state<T: Real>(lifted: &LiftedTrajectory<T>) -> Result<TrajectoryRecord<T>> {
    let n = lifted.state_dim;
    if lifted.lifted.ncols() < 1 + n {
        return Err(Error::Contract(format!(
            "lifted trajectory has {} columns, need at least {}",
            lifted.lifted.ncols(),
            1 + n
        )));
    }
    let states = Mat::from_fn(lifted.lifted.nrows(), n, |i, j| lifted.lifted[(i, j + 1)]);
    Ok(TrajectoryRecord {
        times: lifted.times.clone(),
        states,
        lifted: Some(lifted.lifted.clone()),
        reference: None,
        errors: None,
        diverged: lifted.diverged,
    })
}

/// Error statistics of a predicted trajectory against a reference.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorSummary<T> {
    /// `sqrt(mean_t |x_hat - x|^2)`
    pub rmse: T,
    pub sup: T,
    pub per_component_rmse: Vec<T>,
    /// `|x_hat(t) - x(t)|_2` at every sample.
    pub per_time: Vec<T>,
}

fn check_grids<T: Real>(a: &TrajectoryRecord<T>, b: &TrajectoryRecord<T>) -> Result<()> {
    check_dim(a.len(), b.len(), "trajectory time grid length")?;
    check_dim(a.state_dim(), b.state_dim(), "trajectory state dimension")?;
    if a.times != b.times {
        return Err(Error::Contract("trajectory time grids differ".into()));
    }
    Ok(())
}

pub fn compare_trajectories<T: Real>(
    reference: &TrajectoryRecord<T>,
    predicted: &TrajectoryRecord<T>,
) -> Result<ErrorSummary<T>> {
    check_grids(reference, predicted)?;
    let n = reference.state_dim();
    let rows = reference.len();
    let mut comp = vec![T::zero(); n];
    let mut per_time = Vec::with_capacity(rows);
    for i in 0..rows {
        let d: Vec<T> = predicted
            .states
            .row(i)
            .iter()
            .zip(reference.states.row(i))
            .map(|(&a, &b)| a - b)
            .collect();
        for (c, &v) in comp.iter_mut().zip(&d) {
            *c += v * v;
        }
        per_time.push(norm2(&d));
    }
    let count = T::from_count(rows.max(1));
    let total: T = comp.iter().copied().sum();
    Ok(ErrorSummary {
        rmse: (total / count).sqrt(),
        sup: per_time.iter().fold(T::zero(), |m, &v| m.max(v)),
        per_component_rmse: comp.into_iter().map(|c| (c / count).sqrt()).collect(),
        per_time,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_field_is_constant() {
        let f = FnField::new("zero", 2, |_: &[f64], out: &mut [f64]| out.fill(0.0));
        let tr = integrate_nonlinear(&f, &[1.5, -2.0], 0.1, 1.0).unwrap();
        assert_eq!(tr.len(), 11);
        for i in 0..tr.len() {
            assert_eq!(tr.states.row(i), &[1.5, -2.0]);
        }
        assert!(!tr.diverged);
    }

    #[test]
    fn exponential_decay_endpoint() {
        let f = FnField::new("decay", 1, |x: &[f64], out: &mut [f64]| out[0] = -x[0]);
        let tr = integrate_nonlinear(&f, &[1.0], 1e-3, 1.0).unwrap();
        assert!((tr.times[tr.len() - 1] - 1.0).abs() < 1e-12);
        assert!((tr.final_state().unwrap()[0] - (-1.0f64).exp()).abs() < 1e-8);
    }

    #[test]
    fn blowup_truncates_and_flags() {
        let f = FnField::new("blowup", 1, |x: &[f64], out: &mut [f64]| out[0] = x[0] * x[0]);
        let tr = integrate_nonlinear(&f, &[1.0], 0.01, 5.0).unwrap();
        assert!(tr.diverged);
        assert!(tr.len() < 501);
        assert!(tr.states.is_finite());
    }

    #[test]
    fn rejects_bad_step() {
        let f = VanDerPol::<f64>::default();
        assert!(integrate_nonlinear(&f, &[0.0, 0.0], 0.0, 1.0).is_err());
        assert!(integrate_nonlinear(&f, &[0.0, 0.0], 2.0, 1.0).is_err());
        assert!(integrate_nonlinear(&f, &[0.0], 0.1, 1.0).is_err());
    }

    #[test]
    fn vdp_hand_values() {
        let f = benchmark_vdp(-0.2);
        assert_eq!(f.eval(&[0.0, 0.0]), vec![0.0, 0.0]);
        assert_eq!(f.eval(&[1.0, 1.0]), vec![1.0, -1.0]);
        assert_eq!(f.eval(&[0.0, 1.0]), vec![1.0, -0.2]);
    }

    #[test]
    fn toggle_at_origin_and_validation() {
        let f = benchmark_toggle(2.0, 3.0, 2.0, 2.0, 1.0).unwrap();
        assert_eq!(f.eval(&[0.0, 0.0]), vec![2.0, 3.0]);
        assert!(benchmark_toggle(2.0, 2.0, 0.5, 2.0, 1.0).is_err());
        assert!(benchmark_toggle(2.0, 2.0, 2.0, 2.0, 0.0).is_err());
    }

    #[test]
    fn toggle_clamps_negative_repressor() {
        let f = benchmark_toggle(2.0f64, 2.0, 2.0, 2.0, 1.0).unwrap();
        let v = f.eval(&[-0.1, 0.0]);
        assert_eq!(f.clamp_events(), 1);
        assert_eq!(v[1], 2.0);
        assert!((v[0] - 2.1).abs() < 1e-15);
    }

    #[test]
    fn linear_decay_coordinate() {
        let mut k = Mat::<f64>::zeros(3, 3);
        k[(1, 1)] = -1.0;
        let (times, z, diverged) = integrate_linear(&k, &[1.0, 1.0, 2.0], 1e-3, 2.0).unwrap();
        assert!(!diverged);
        for (i, &t) in times.iter().enumerate() {
            assert!((z[(i, 1)] - (-t).exp()).abs() < 1e-8);
            assert_eq!(z[(i, 0)], 1.0);
            assert_eq!(z[(i, 2)], 2.0);
        }
    }

    #[test]
    fn compare_identical_and_shifted() {
        let f = VanDerPol::<f64>::default();
        let a = integrate_nonlinear(&f, &[1.0, 0.5], 0.01, 1.0).unwrap();
        let s = compare_trajectories(&a, &a).unwrap();
        assert_eq!(s.rmse, 0.0);
        assert_eq!(s.sup, 0.0);
        let mut b = a.clone();
        let c = 0.3;
        for i in 0..b.len() {
            b.states.row_mut(i).iter_mut().for_each(|v| *v += c);
        }
        let s = compare_trajectories(&a, &b).unwrap();
        assert!((s.sup - c * 2f64.sqrt()).abs() < 1e-12);
        assert!((s.rmse - c * 2f64.sqrt()).abs() < 1e-12);
        b.attach_reference(&a).unwrap();
        assert!(b.errors.as_ref().unwrap().iter().all(|&e| e >= 0.0));
    }

    #[test]
    fn compare_rejects_mismatched_grids() {
        let f = VanDerPol::<f64>::default();
        let a = integrate_nonlinear(&f, &[1.0, 0.5], 0.01, 1.0).unwrap();
        let b = integrate_nonlinear(&f, &[1.0, 0.5], 0.02, 1.0).unwrap();
        assert!(compare_trajectories(&a, &b).is_err());
    }

    #[test]
    fn ensemble_preserves_order() {
        let f = VanDerPol::<f64>::default();
        let ics = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.5]];
        let out = integrate_ensemble(&f, &ics, 0.05, 1.0).unwrap();
        for (tr, x0) in out.iter().zip(&ics) {
            assert_eq!(tr.states.row(0), &x0[..]);
            assert_eq!(tr, &integrate_nonlinear(&f, x0, 0.05, 1.0).unwrap());
        }
    }
}
