//! Experiment configuration, model persistence and the command pipeline
//! behind the `sill` binary.
//!
//! Every command writes its outputs to the configured output directory and
//! is deterministic for a given config.

pub mod config;
pub mod model_file;

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dictionary::{build_lattice, SillDictionary, Steepness};
use crate::error_bounds::{
    combined_state_budget, compute_error_bounds, delta_propagation_bound, pair_error, trajectory_error_budget,
    DeltaPropagation, ErrorBoundReport, PairErrorSpec,
};
use crate::generator::{assemble_generator, closure_residual, ClosureResidualReport, KoopmanGenerator};
use crate::regression::{
    default_per_dim, fit_weights, make_box_grid, make_sample_grid, residual_at, RegressionReport, SampleMode,
    WeightMatrix,
};
use crate::simulation::{
    compare_trajectories, extract_state, integrate_lifted, integrate_nonlinear, TrajectoryRecord, VectorField,
};
use crate::Error;

pub use config::{demo_config, load_config, DemoKind, ExperimentConfig, LoadedConfig, SystemConfig};
pub use model_file::{LoadedModel, ModelFile};

pub const MODEL_FILE: &str = "model.json";
pub const FIT_REPORT_FILE: &str = "fit_report.json";
pub const SIMULATE_SUMMARY_FILE: &str = "simulate_summary.json";
pub const SWEEP_FILE: &str = "sweep_alpha.csv";
pub const ERROR_BOUNDS_FILE: &str = "error_bounds.json";
pub const DEMO_CONFIG_FILE: &str = "config.json";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{location}: {message}")]
    Config { location: String, message: String },
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub(crate) fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }

    /// 2 for configuration, validation and I/O problems, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::Io { .. } => 2,
            CliError::Core(e) => match e {
                Error::DimensionMismatch { .. } | Error::Contract(_) | Error::Resource(_) => 2,
                Error::NonFinite(_) | Error::Invariant(_) | Error::Numerical(_) => 3,
            },
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn write_json<S: Serialize>(path: &Path, value: &S) -> CliResult<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::io(path, e))?;
    s.push('\n');
    fs::write(path, s).map_err(|e| CliError::io(path, e))
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Dictionary of the configured lattice at steepness `alpha`.
pub fn build_dictionary(cfg: &ExperimentConfig, alpha: f64) -> crate::Result<SillDictionary<f64>> {
    build_lattice(
        &cfg.domain.lo,
        &cfg.domain.hi,
        &cfg.dictionary.spacing,
        Steepness::new(alpha)?,
    )
}

/// Everything produced by fitting one configuration.
pub struct FittedModel {
    pub dictionary: SillDictionary<f64>,
    pub weights: WeightMatrix<f64>,
    pub generator: KoopmanGenerator<f64>,
    pub regression: RegressionReport<f64>,
    pub closure: ClosureResidualReport<f64>,
    pub per_dim: usize,
}

pub fn fit_model(cfg: &ExperimentConfig, alpha: f64) -> crate::Result<FittedModel> {
    let system = cfg.system.build()?;
    let f = system.field();
    let dictionary = build_dictionary(cfg, alpha)?;
    let per_dim = cfg.regression.per_dim.unwrap_or_else(|| default_per_dim(&dictionary));
    let grid = make_sample_grid(&dictionary, per_dim, cfg.regression.mode, cfg.regression.seed)?;
    let (weights, regression) = fit_weights(f, &dictionary, &grid, cfg.regression.ridge)?;
    let generator = assemble_generator(&dictionary, &weights, f, &grid.points, cfg.regression.ridge)?;
    let closure = closure_residual(&dictionary, f, &generator, &grid.points)?;
    Ok(FittedModel {
        dictionary,
        weights,
        generator,
        regression,
        closure,
        per_dim,
    })
}

#[derive(Serialize)]
struct ClosureSummary {
    eps_rms: f64,
    eps_sup: f64,
    lambda_rms: f64,
    row_rms: Vec<f64>,
}

#[derive(Serialize)]
struct FitReport<'a> {
    system: &'a SystemConfig,
    n_centers: usize,
    lifted_dim: usize,
    alpha: f64,
    per_dim: usize,
    sample_mode: SampleMode,
    regression: &'a RegressionReport<f64>,
    closure: ClosureSummary,
}

pub struct FitOutput {
    pub model_path: PathBuf,
    pub report_path: PathBuf,
    pub regression: RegressionReport<f64>,
}

pub fn cmd_fit(config_path: &Path) -> CliResult<FitOutput> {
    let loaded = load_config(config_path)?;
    let cfg = &loaded.config;
    let fitted = fit_model(cfg, cfg.dictionary.alpha)?;
    let dir = loaded.output_dir();
    ensure_dir(&dir)?;
    let model = ModelFile::new(
        &fitted.dictionary,
        &fitted.weights,
        &fitted.generator,
        &cfg.system,
        &loaded.text,
    );
    let model_path = dir.join(MODEL_FILE);
    model.save(&model_path)?;
    let report = FitReport {
        system: &cfg.system,
        n_centers: fitted.dictionary.n_centers(),
        lifted_dim: fitted.dictionary.lifted_dim(),
        alpha: cfg.dictionary.alpha,
        per_dim: fitted.per_dim,
        sample_mode: cfg.regression.mode,
        regression: &fitted.regression,
        closure: ClosureSummary {
            eps_rms: fitted.closure.eps_rms,
            eps_sup: fitted.closure.eps_sup,
            lambda_rms: fitted.closure.lambda_rms(fitted.dictionary.state_dim()),
            row_rms: fitted.closure.row_rms.clone(),
        },
    };
    let report_path = dir.join(FIT_REPORT_FILE);
    write_json(&report_path, &report)?;
    log::info!(
        "fit: {} centers, rel_l2_error {:?}",
        fitted.dictionary.n_centers(),
        fitted.regression.rel_l2_error
    );
    Ok(FitOutput {
        model_path,
        report_path,
        regression: fitted.regression,
    })
}

/// Explicit initial conditions followed by the seeded ensemble draws.
pub fn initial_conditions(cfg: &ExperimentConfig) -> Vec<Vec<f64>> {
    let mut out = cfg.simulation.initial_conditions.clone();
    if let Some(e) = &cfg.simulation.ensemble {
        let mut rng = ChaCha8Rng::seed_from_u64(e.seed);
        for _ in 0..e.count {
            out.push(
                cfg.domain
                    .lo
                    .iter()
                    .zip(&cfg.domain.hi)
                    .map(|(&lo, &hi)| rng.gen_range(lo..=hi))
                    .collect(),
            );
        }
    }
    out
}

/// Reference and lifted prediction from one initial condition.
#[derive(Clone, Debug)]
pub struct PredictionRun {
    pub x0: Vec<f64>,
    pub reference: TrajectoryRecord<f64>,
    /// Prediction with `reference` and `errors` attached; shorter than the
    /// reference when the lifted system diverged.
    pub predicted: TrajectoryRecord<f64>,
}

impl PredictionRun {
    /// Reference restricted to the predicted time grid.
    pub fn reference_overlap(&self) -> TrajectoryRecord<f64> {
        if self.predicted.len() == self.reference.len() {
            self.reference.clone()
        } else {
            self.reference.truncated(*self.predicted.times.last().unwrap_or(&0.0))
        }
    }
}

pub fn predict(
    f: &dyn VectorField<f64>,
    dict: &SillDictionary<f64>,
    generator: &KoopmanGenerator<f64>,
    x0: &[f64],
    dt: f64,
    horizon: f64,
) -> crate::Result<PredictionRun> {
    let reference = integrate_nonlinear(f, x0, dt, horizon)?;
    let z0 = dict.lift(x0)?;
    let mut predicted = extract_state(&integrate_lifted(generator, &z0, dt, horizon)?)?;
    let overlap = if predicted.len() == reference.len() {
        reference.clone()
    } else {
        reference.truncated(*predicted.times.last().unwrap_or(&0.0))
    };
    if predicted.len() > overlap.len() {
        predicted = predicted.truncated(*overlap.times.last().unwrap_or(&0.0));
    }
    predicted.attach_reference(&overlap)?;
    Ok(PredictionRun {
        x0: x0.to_vec(),
        reference,
        predicted,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub index: usize,
    pub x0: Vec<f64>,
    pub samples: usize,
    pub predicted_samples: usize,
    pub rmse: f64,
    pub sup_error: f64,
    pub reference_rms_amplitude: f64,
    pub relative_rmse: f64,
    pub reference_diverged: bool,
    pub prediction_diverged: bool,
    pub reference_csv: String,
    pub predicted_csv: String,
}

fn fmt(v: f64) -> String {
    v.to_string()
}

fn write_reference_csv(path: &Path, r: &TrajectoryRecord<f64>) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
    let n = r.state_dim();
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    w.write_record(&header).map_err(|e| CliError::io(path, e))?;
    for (i, t) in r.times.iter().enumerate() {
        let mut rec = vec![fmt(*t)];
        rec.extend(r.states.row(i).iter().map(|&v| fmt(v)));
        w.write_record(&rec).map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn write_predicted_csv(path: &Path, p: &TrajectoryRecord<f64>) -> CliResult<()> {
    let reference = p
        .reference
        .as_ref()
        .ok_or_else(|| Error::Contract("prediction has no reference attached".into()))?;
    let errors = p.errors.as_ref().ok_or_else(|| Error::Contract("prediction has no errors".into()))?;
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
    let n = p.state_dim();
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.extend((1..=n).map(|i| format!("xhat{i}")));
    header.push("err_l2".into());
    w.write_record(&header).map_err(|e| CliError::io(path, e))?;
    for (i, t) in p.times.iter().enumerate() {
        let mut rec = vec![fmt(*t)];
        rec.extend(reference.row(i).iter().map(|&v| fmt(v)));
        rec.extend(p.states.row(i).iter().map(|&v| fmt(v)));
        rec.push(fmt(errors[i]));
        w.write_record(&rec).map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn load_model_for(model_path: &Path, cfg: &ExperimentConfig) -> CliResult<LoadedModel> {
    let model = ModelFile::load(model_path)?.restore()?;
    let n = cfg.system.state_dim();
    if model.dictionary.state_dim() != n {
        return Err(Error::DimensionMismatch {
            expected: model.dictionary.state_dim(),
            actual: n,
            context: "config system vs model",
        }
        .into());
    }
    Ok(model)
}

pub struct SimulateOutput {
    pub summary_path: PathBuf,
    pub runs: Vec<RunSummary>,
}

pub fn cmd_simulate(model_path: &Path, config_path: &Path) -> CliResult<SimulateOutput> {
    let loaded = load_config(config_path)?;
    let cfg = &loaded.config;
    let model = load_model_for(model_path, cfg)?;
    let system = cfg.system.build()?;
    let f = system.field();
    let ics = initial_conditions(cfg);
    let (dt, horizon) = (cfg.simulation.dt, cfg.simulation.horizon);
    let runs: Vec<PredictionRun> = ics
        .par_iter()
        .map(|x0| predict(f, &model.dictionary, &model.generator, x0, dt, horizon))
        .collect::<crate::Result<_>>()?;
    let dir = loaded.output_dir();
    ensure_dir(&dir)?;
    let mut summaries = Vec::with_capacity(runs.len());
    for (i, run) in runs.iter().enumerate() {
        let ref_name = format!("reference_{i:03}.csv");
        let pred_name = format!("predicted_{i:03}.csv");
        write_reference_csv(&dir.join(&ref_name), &run.reference)?;
        write_predicted_csv(&dir.join(&pred_name), &run.predicted)?;
        let overlap = run.reference_overlap();
        let e = compare_trajectories(&overlap, &run.predicted)?;
        let amp = run.reference.rms_amplitude();
        summaries.push(RunSummary {
            index: i,
            x0: run.x0.clone(),
            samples: run.reference.len(),
            predicted_samples: run.predicted.len(),
            rmse: e.rmse,
            sup_error: e.sup,
            reference_rms_amplitude: amp,
            relative_rmse: if amp > 0.0 { e.rmse / amp } else { e.rmse },
            reference_diverged: run.reference.diverged,
            prediction_diverged: run.predicted.diverged,
            reference_csv: ref_name,
            predicted_csv: pred_name,
        });
    }
    let summary_path = dir.join(SIMULATE_SUMMARY_FILE);
    write_json(
        &summary_path,
        &serde_json::json!({ "dt": dt, "horizon": horizon, "runs": summaries }),
    )?;
    Ok(SimulateOutput {
        summary_path,
        runs: summaries,
    })
}

/// One row of the steepness sweep.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub max_pair_error: f64,
    pub closure_residual_l2: f64,
}

/// Interior lattice-cell midpoints; no coordinate coincides with a center.
pub fn cell_midpoints(dict: &SillDictionary<f64>) -> Vec<Vec<f64>> {
    let n = dict.state_dim();
    let axes: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let (lo, hi, h) = (dict.domain_lo()[i], dict.domain_hi()[i], dict.mesh_spacing()[i]);
            let mut v = Vec::new();
            let mut j = 0usize;
            loop {
                let x = lo + (j as f64 + 0.5) * h;
                if x >= hi {
                    break;
                }
                v.push(x);
                j += 1;
            }
            v
        })
        .collect();
    let mut pts = vec![Vec::with_capacity(n)];
    for axis in &axes {
        pts = pts
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&x| {
                    let mut q = p.clone();
                    q.push(x);
                    q
                })
            })
            .collect();
    }
    pts
}

/// `max |E_lk(x)|` over all center pairs and the given points.
pub fn max_pair_error(dict: &SillDictionary<f64>, points: &[Vec<f64>]) -> crate::Result<f64> {
    let nl = dict.n_centers();
    let pairs: Vec<(usize, usize)> = (0..nl).flat_map(|l| (l..nl).map(move |k| (l, k))).collect();
    let alpha = dict.alpha();
    let maxes: Vec<f64> = pairs
        .par_iter()
        .map(|&(l, k)| {
            let spec = PairErrorSpec::new(dict, l, k)?;
            points.iter().try_fold(0.0f64, |m, x| Ok(m.max(pair_error(x, &spec, alpha)?.abs())))
        })
        .collect::<crate::Result<_>>()?;
    Ok(maxes.into_iter().fold(0.0, f64::max))
}

pub fn sweep_alpha(cfg: &ExperimentConfig) -> crate::Result<Vec<SweepRow>> {
    cfg.analysis
        .alphas
        .par_iter()
        .map(|&alpha| {
            let fitted = fit_model(cfg, alpha)?;
            let pts = cell_midpoints(&fitted.dictionary);
            Ok(SweepRow {
                alpha,
                max_pair_error: max_pair_error(&fitted.dictionary, &pts)?,
                closure_residual_l2: fitted.closure.eps_rms,
            })
        })
        .collect()
}

pub struct SweepOutput {
    pub csv_path: PathBuf,
    pub rows: Vec<SweepRow>,
}

pub fn cmd_sweep_alpha(config_path: &Path) -> CliResult<SweepOutput> {
    let loaded = load_config(config_path)?;
    let rows = sweep_alpha(&loaded.config)?;
    let dir = loaded.output_dir();
    ensure_dir(&dir)?;
    let csv_path = dir.join(SWEEP_FILE);
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| CliError::io(&csv_path, e))?;
    w.write_record(["alpha", "max_pair_error", "closure_residual_l2"])
        .map_err(|e| CliError::io(&csv_path, e))?;
    for r in &rows {
        w.write_record([fmt(r.alpha), fmt(r.max_pair_error), fmt(r.closure_residual_l2)])
            .map_err(|e| CliError::io(&csv_path, e))?;
    }
    w.flush().map_err(|e| CliError::io(&csv_path, e))?;
    Ok(SweepOutput { csv_path, rows })
}

/// `sup_x |delta_i(x)|` over a lattice twice as fine as the fit grid.
pub fn delta_sup(
    f: &dyn VectorField<f64>,
    dict: &SillDictionary<f64>,
    w: &WeightMatrix<f64>,
    per_dim: usize,
) -> crate::Result<Vec<f64>> {
    let grid = make_box_grid(dict.domain_lo(), dict.domain_hi(), 2 * per_dim + 1, SampleMode::Lattice, 0)?;
    let rows: Vec<Vec<f64>> = grid
        .points
        .par_iter()
        .map(|x| residual_at(f, w, dict, x))
        .collect::<crate::Result<_>>()?;
    let mut sup = vec![0.0f64; dict.state_dim()];
    for r in rows {
        for (s, v) in sup.iter_mut().zip(r) {
            *s = s.max(v.abs());
        }
    }
    Ok(sup)
}

#[derive(Clone, Debug, Serialize)]
pub struct BudgetRow {
    pub t: f64,
    pub closure_budget: f64,
    pub delta_contribution: f64,
    pub combined: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct MeasuredError {
    pub x0: Vec<f64>,
    pub mesh_interior: bool,
    pub prediction_diverged: bool,
    pub max_state_error: f64,
    pub rmse: f64,
    /// `max_t err(t) / combined(t)` over `t > 0`.
    pub max_budget_ratio: f64,
    pub within_budget: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ErrorBoundsOutputReport {
    pub bounds: ErrorBoundReport<f64>,
    pub delta_sup: Vec<f64>,
    pub delta_propagation: DeltaPropagation<f64>,
    pub budget: Vec<BudgetRow>,
    pub measured: Vec<MeasuredError>,
}

/// Strictly inside the dictionary domain.
pub fn mesh_interior(dict: &SillDictionary<f64>, x: &[f64]) -> bool {
    x.iter()
        .zip(dict.domain_lo().iter().zip(dict.domain_hi()))
        .all(|(&v, (&lo, &hi))| v > lo && v < hi)
}

/// Checks a prediction against the combined budget at every sample.
pub fn measure_against_budget(
    run: &PredictionRun,
    dict: &SillDictionary<f64>,
    bounds: &ErrorBoundReport<f64>,
    delta: &DeltaPropagation<f64>,
) -> crate::Result<MeasuredError> {
    let errors = run.predicted.errors.as_deref().unwrap_or(&[]);
    let mut within = !run.predicted.diverged;
    let mut ratio = 0.0f64;
    for (&t, &e) in run.predicted.times.iter().zip(errors) {
        let b = combined_state_budget(bounds, delta, t)?;
        if e > b {
            within = false;
        }
        if t > 0.0 {
            ratio = ratio.max(e / b);
        }
    }
    let e = compare_trajectories(&run.reference_overlap(), &run.predicted)?;
    Ok(MeasuredError {
        x0: run.x0.clone(),
        mesh_interior: mesh_interior(dict, &run.x0),
        prediction_diverged: run.predicted.diverged,
        max_state_error: e.sup,
        rmse: e.rmse,
        max_budget_ratio: ratio,
        within_budget: within,
    })
}

pub struct ErrorBoundsOutput {
    pub report_path: PathBuf,
    pub report: ErrorBoundsOutputReport,
}

pub fn cmd_error_bounds(model_path: &Path, config_path: &Path) -> CliResult<ErrorBoundsOutput> {
    let loaded = load_config(config_path)?;
    let cfg = &loaded.config;
    let model = load_model_for(model_path, cfg)?;
    let system = cfg.system.build()?;
    let f = system.field();
    let dict = &model.dictionary;
    let bounds = compute_error_bounds(dict, &model.weights, cfg.analysis.sup_density)?;
    let per_dim = cfg.regression.per_dim.unwrap_or_else(|| default_per_dim(dict));
    let dsup = delta_sup(f, dict, &model.weights, per_dim)?;
    let delta = delta_propagation_bound(&dsup, dict.alpha())?;
    let budget = loaded
        .budget_times()
        .into_iter()
        .map(|t| {
            let closure_budget = trajectory_error_budget(&bounds, t)?;
            let combined = combined_state_budget(&bounds, &delta, t)?;
            Ok(BudgetRow {
                t,
                closure_budget,
                delta_contribution: combined - closure_budget,
                combined,
            })
        })
        .collect::<crate::Result<Vec<_>>>()?;
    let (dt, horizon) = (cfg.simulation.dt, cfg.simulation.horizon);
    let measured = initial_conditions(cfg)
        .par_iter()
        .map(|x0| {
            let run = predict(f, dict, &model.generator, x0, dt, horizon)?;
            measure_against_budget(&run, dict, &bounds, &delta)
        })
        .collect::<crate::Result<Vec<_>>>()?;
    let report = ErrorBoundsOutputReport {
        bounds,
        delta_sup: dsup,
        delta_propagation: delta,
        budget,
        measured,
    };
    let dir = loaded.output_dir();
    ensure_dir(&dir)?;
    let report_path = dir.join(ERROR_BOUNDS_FILE);
    write_json(&report_path, &report)?;
    Ok(ErrorBoundsOutput { report_path, report })
}

pub struct DemoOutput {
    pub config_path: PathBuf,
    pub fit: FitOutput,
    pub simulate: SimulateOutput,
    pub error_bounds: ErrorBoundsOutput,
}

/// Writes the canned config into `outdir`, then runs fit, simulate and
/// error-bounds against it.
pub fn cmd_demo(kind: DemoKind, outdir: &Path) -> CliResult<DemoOutput> {
    ensure_dir(outdir)?;
    let cfg = demo_config(kind, Path::new("."));
    let config_path = outdir.join(DEMO_CONFIG_FILE);
    write_json(&config_path, &cfg)?;
    let fit = cmd_fit(&config_path)?;
    let simulate = cmd_simulate(&fit.model_path, &config_path)?;
    let error_bounds = cmd_error_bounds(&fit.model_path, &config_path)?;
    Ok(DemoOutput {
        config_path,
        fit,
        simulate,
        error_bounds,
    })
}
