//! Forecasting: roll trained models forward from unseen initial
//! conditions and score them against ground truth.
//!
//! A rollout is RK4 integration of the learned vector field. It never
//! panics on a bad model: a state component leaving ±1e6, a non-finite
//! value, or a singular transform Jacobian halts the rollout early with a
//! partial trajectory and a divergence note. Scoring compares the forecast
//! against a high-accuracy reference integration on the same time grid and
//! tracks the *true* system energy along the forecast — a model that
//! drifts off the energy surface is visible in `energy_drift` even when
//! its short-horizon trajectory error looks fine.

use std::path::Path;

use thiserror::Error;

use crate::linalg;
use crate::models::{JacobianInversePolicy, Model, ModelError};
use crate::systems::{self, SystemError, SystemSpec};

/// Rollout step used by the standard experiments, finer than the Δt = 0.1
/// sampling of the training data.
pub const DEFAULT_STEP: f64 = 0.01;

/// Any state component beyond this magnitude counts as divergence.
pub const DIVERGENCE_THRESHOLD: f64 = 1e6;

/// Declared forecast horizons for the benchmark systems.
pub fn default_horizon(spec: &SystemSpec) -> f64 {
    match spec {
        SystemSpec::LotkaVolterra { .. } => 20.0,
        SystemSpec::ElasticPendulum { .. } => 20.0,
        SystemSpec::DoublePendulum { .. } => 10.0,
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ForecastError {
    #[error("field evaluation failed at the initial condition: {0}")]
    ImmediateFailure(String),
    #[error("energy scale degenerate (|mean| = {0:.3e} < 1e-12)")]
    DegenerateEnergyScale(f64),
    #[error("empty energy series")]
    EmptySeries,
    #[error("rollout step must be positive and shorter than the horizon, got h = {h}, T = {t}")]
    BadGrid { h: f64, t: f64 },
    #[error("no initial conditions to evaluate")]
    NoInitialConditions,
    #[error("no models to evaluate")]
    NoModels,
    #[error("all {0} rollouts diverged")]
    AllDiverged(usize),
    #[error("field failure: {0}")]
    Field(String),
    #[error("forecast I/O: {0}")]
    Io(String),
}

impl From<ModelError> for ForecastError {
    fn from(e: ModelError) -> Self {
        ForecastError::Field(e.to_string())
    }
}

impl From<SystemError> for ForecastError {
    fn from(e: SystemError) -> Self {
        ForecastError::Field(e.to_string())
    }
}

impl From<crate::mlp::MlpError> for ForecastError {
    fn from(e: crate::mlp::MlpError) -> Self {
        ForecastError::Field(e.to_string())
    }
}

/// A vector field a rollout can integrate: a trained model under an
/// inverse policy, or the ground-truth system itself (the oracle used to
/// calibrate the scoring pipeline).
pub enum FieldSource<'a> {
    Learned {
        model: &'a Model,
        policy: JacobianInversePolicy,
    },
    Oracle { system: &'a SystemSpec },
}

impl FieldSource<'_> {
    pub fn label(&self) -> String {
        match self {
            FieldSource::Learned { model, .. } => model.kind().name().to_string(),
            FieldSource::Oracle { .. } => "oracle".to_string(),
        }
    }

    pub fn velocity(&self, r: &[f64]) -> Result<Vec<f64>, ForecastError> {
        match self {
            FieldSource::Learned { model, policy } => Ok(model.field_numeric(r, policy)?),
            FieldSource::Oracle { system } => Ok(system.vector_field(r)?),
        }
    }
}

/// An integrated learned trajectory, possibly cut short.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// `Some(reason)` when the rollout halted before the full horizon.
    pub diverged: Option<String>,
}

impl Rollout {
    pub fn is_complete(&self) -> bool {
        self.diverged.is_none()
    }
}

fn state_is_bounded(r: &[f64]) -> bool {
    r.iter().all(|c| c.is_finite() && c.abs() <= DIVERGENCE_THRESHOLD)
}

/// RK4-integrate a field source from `r0` over `[0, t_end]` at step `h`.
/// A failure at `r0` itself is an error; any later failure (field error,
/// component beyond ±1e6, non-finite state) ends the rollout early with
/// the partial trajectory and a divergence note.
pub fn rollout(
    source: &FieldSource<'_>,
    r0: &[f64],
    t_end: f64,
    h: f64,
) -> Result<Rollout, ForecastError> {
    if !(h > 0.0) || !(t_end > 0.0) || t_end < h {
        return Err(ForecastError::BadGrid { h, t: t_end });
    }
    source
        .velocity(r0)
        .map_err(|e| ForecastError::ImmediateFailure(e.to_string()))?;
    let n_steps = (t_end / h).round() as usize;
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut states = Vec::with_capacity(n_steps + 1);
    times.push(0.0);
    states.push(r0.to_vec());
    let mut diverged = None;
    let mut field = |r: &[f64]| source.velocity(r);
    for k in 1..=n_steps {
        let next = match systems::rk4_step(&mut field, states.last().unwrap(), h) {
            Ok(next) => next,
            Err(e) => {
                diverged = Some(format!("field failed at step {k}: {e}"));
                break;
            }
        };
        if !state_is_bounded(&next) {
            diverged = Some(format!(
                "state left ±{DIVERGENCE_THRESHOLD:.0e} at step {k}"
            ));
            break;
        }
        times.push(k as f64 * h);
        states.push(next);
    }
    Ok(Rollout {
        times,
        states,
        diverged,
    })
}

/// Energy-conservation statistics of a series E(tₖ).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DriftStats {
    /// std(E) / |mean(E)| (population standard deviation).
    pub relative_std: f64,
    /// max |E(tₖ) − E(t₀)| / |E(t₀)|.
    pub max_relative_deviation: f64,
}

/// Drift statistics of an energy series. Errors when the series is empty
/// or its mean magnitude is below 1e-12 (no meaningful scale to divide
/// by).
pub fn energy_drift(series: &[f64]) -> Result<DriftStats, ForecastError> {
    if series.is_empty() {
        return Err(ForecastError::EmptySeries);
    }
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    if mean.abs() < 1e-12 {
        return Err(ForecastError::DegenerateEnergyScale(mean.abs()));
    }
    let var = series.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
    let e0 = series[0];
    let max_dev = series
        .iter()
        .map(|e| (e - e0).abs())
        .fold(0.0f64, f64::max);
    Ok(DriftStats {
        relative_std: var.sqrt() / mean.abs(),
        max_relative_deviation: max_dev / e0.abs(),
    })
}

/// Everything one (model, initial condition) forecast produced. The
/// reference shares the forecast's time grid (truncated alongside it when
/// the rollout diverged), so every metric is recomputable from the stored
/// series.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ForecastReport {
    pub model: String,
    pub system: String,
    pub initial: Vec<f64>,
    pub horizon: f64,
    pub step: f64,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub reference: Vec<Vec<f64>>,
    /// True system energy on the forecast states, truncated where the
    /// state leaves the energy function's domain.
    pub energy: Vec<f64>,
    /// True system energy on the reference states (near-constant by
    /// construction), truncated like `energy`.
    pub reference_energy: Vec<f64>,
    pub diverged: bool,
    pub divergence: Option<String>,
    /// Mean over samples and components of squared forecast error, over
    /// the (possibly truncated) stored grid. Absent when the rollout
    /// failed at the initial condition.
    pub trajectory_mse: Option<f64>,
    /// |E(tₖ) − E(t₀)| / |E(t₀)|, same truncation as `energy`.
    pub energy_deviation: Vec<f64>,
    pub drift: Option<DriftStats>,
}

impl ForecastReport {
    pub fn save(&self, path: &Path) -> Result<(), ForecastError> {
        let mut text =
            serde_json::to_string_pretty(self).map_err(|e| ForecastError::Io(e.to_string()))?;
        text.push('\n');
        crate::write_atomic(path, text.as_bytes()).map_err(|e| ForecastError::Io(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ForecastError> {
        let text = std::fs::read_to_string(path).map_err(|e| ForecastError::Io(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| ForecastError::Io(e.to_string()))
    }
}

fn trajectory_mse(states: &[Vec<f64>], reference: &[Vec<f64>]) -> f64 {
    let n = states.len().min(reference.len());
    let d = states[0].len();
    let total: f64 = states[..n]
        .iter()
        .zip(&reference[..n])
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>())
        .sum();
    total / (n as f64 * d as f64)
}

fn build_report(
    source: &FieldSource<'_>,
    system: &SystemSpec,
    r0: &[f64],
    t_end: f64,
    h: f64,
    reference_full: &[Vec<f64>],
) -> Result<ForecastReport, ForecastError> {
    let roll = rollout(source, r0, t_end, h)?;
    let reference: Vec<Vec<f64>> = reference_full[..roll.states.len()].to_vec();
    let energy_series = |states: &[Vec<f64>]| {
        let mut out = Vec::with_capacity(states.len());
        for state in states {
            match system.energy(state) {
                Ok(e) => out.push(e),
                Err(_) => break,
            }
        }
        out
    };
    let energy = energy_series(&roll.states);
    let reference_energy = energy_series(&reference);
    let (energy_deviation, drift) = match energy.first() {
        Some(&e0) if e0 != 0.0 => {
            let dev = energy.iter().map(|e| (e - e0).abs() / e0.abs()).collect();
            (dev, energy_drift(&energy).ok())
        }
        _ => (Vec::new(), None),
    };
    Ok(ForecastReport {
        model: source.label(),
        system: system.name().to_string(),
        initial: r0.to_vec(),
        horizon: t_end,
        step: h,
        trajectory_mse: Some(trajectory_mse(&roll.states, &reference)),
        diverged: !roll.is_complete(),
        divergence: roll.diverged,
        times: roll.times,
        states: roll.states,
        reference,
        energy,
        reference_energy,
        energy_deviation,
        drift,
    })
}

/// Forecast one initial condition and score it against a freshly computed
/// reference trajectory.
pub fn forecast_one(
    source: &FieldSource<'_>,
    system: &SystemSpec,
    r0: &[f64],
    t_end: f64,
    h: f64,
) -> Result<ForecastReport, ForecastError> {
    let reference = systems::integrate_sampled(system, r0, t_end, h)?;
    build_report(source, system, r0, t_end, h, &reference)
}

/// Linearly interpolated quantile of a sorted slice (the convention where
/// `p` indexes position (n−1)·p).
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = (n - 1) as f64 * p;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Median and interquartile range; `None` on an empty slice.
pub fn median_iqr(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = quantile(&v, 0.5);
    let iqr = quantile(&v, 0.75) - quantile(&v, 0.25);
    Some((median, iqr))
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvaluationRow {
    /// Index into the model list (restart index for a survivor sweep).
    pub model_index: usize,
    pub ic_index: usize,
    pub report: ForecastReport,
}

/// Pooled forecast quality over (models × initial conditions).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvaluationSummary {
    pub model: String,
    pub system: String,
    pub horizon: f64,
    pub step: f64,
    pub rows: Vec<EvaluationRow>,
    pub diverged_rows: usize,
    pub mse_median: f64,
    pub mse_iqr: f64,
    pub energy_std_median: Option<f64>,
    pub energy_std_iqr: Option<f64>,
    pub energy_dev_median: Option<f64>,
    pub energy_dev_iqr: Option<f64>,
}

impl EvaluationSummary {
    pub fn save(&self, path: &Path) -> Result<(), ForecastError> {
        let mut text =
            serde_json::to_string_pretty(self).map_err(|e| ForecastError::Io(e.to_string()))?;
        text.push('\n');
        crate::write_atomic(path, text.as_bytes()).map_err(|e| ForecastError::Io(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ForecastError> {
        let text = std::fs::read_to_string(path).map_err(|e| ForecastError::Io(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| ForecastError::Io(e.to_string()))
    }
}

/// Roll every model source out from every initial condition and pool the
/// metrics: median and IQR of trajectory MSE and of the energy-drift
/// statistics across all non-diverged rollouts. For a multi-restart sweep,
/// pass the surviving restarts' models — metrics are averaged across runs
/// this way; parameters never are.
pub fn evaluate(
    sources: &[FieldSource<'_>],
    system: &SystemSpec,
    ics: &[Vec<f64>],
    t_end: f64,
    h: f64,
) -> Result<EvaluationSummary, ForecastError> {
    if sources.is_empty() {
        return Err(ForecastError::NoModels);
    }
    if ics.is_empty() {
        return Err(ForecastError::NoInitialConditions);
    }
    let references: Vec<Vec<Vec<f64>>> = ics
        .iter()
        .map(|ic| systems::integrate_sampled(system, ic, t_end, h))
        .collect::<Result<_, _>>()?;
    let mut rows = Vec::with_capacity(sources.len() * ics.len());
    for (model_index, source) in sources.iter().enumerate() {
        for (ic_index, ic) in ics.iter().enumerate() {
            let report = match build_report(source, system, ic, t_end, h, &references[ic_index]) {
                Ok(r) => r,
                Err(ForecastError::ImmediateFailure(reason)) => ForecastReport {
                    model: source.label(),
                    system: system.name().to_string(),
                    initial: ic.clone(),
                    horizon: t_end,
                    step: h,
                    times: vec![0.0],
                    states: vec![ic.clone()],
                    reference: vec![references[ic_index][0].clone()],
                    energy: Vec::new(),
                    reference_energy: Vec::new(),
                    diverged: true,
                    divergence: Some(format!("immediate failure: {reason}")),
                    trajectory_mse: None,
                    energy_deviation: Vec::new(),
                    drift: None,
                },
                Err(e) => return Err(e),
            };
            rows.push(EvaluationRow {
                model_index,
                ic_index,
                report,
            });
        }
    }
    let clean: Vec<&ForecastReport> = rows
        .iter()
        .map(|r| &r.report)
        .filter(|r| !r.diverged)
        .collect();
    let diverged_rows = rows.len() - clean.len();
    if clean.is_empty() {
        return Err(ForecastError::AllDiverged(rows.len()));
    }
    let mses: Vec<f64> = clean.iter().filter_map(|r| r.trajectory_mse).collect();
    let (mse_median, mse_iqr) = median_iqr(&mses).unwrap();
    let stds: Vec<f64> = clean
        .iter()
        .filter_map(|r| r.drift.map(|d| d.relative_std))
        .collect();
    let devs: Vec<f64> = clean
        .iter()
        .filter_map(|r| r.drift.map(|d| d.max_relative_deviation))
        .collect();
    let (energy_std_median, energy_std_iqr) = match median_iqr(&stds) {
        Some((m, i)) => (Some(m), Some(i)),
        None => (None, None),
    };
    let (energy_dev_median, energy_dev_iqr) = match median_iqr(&devs) {
        Some((m, i)) => (Some(m), Some(i)),
        None => (None, None),
    };
    Ok(EvaluationSummary {
        model: sources[0].label(),
        system: system.name().to_string(),
        horizon: t_end,
        step: h,
        rows,
        diverged_rows,
        mse_median,
        mse_iqr,
        energy_std_median,
        energy_std_iqr,
        energy_dev_median,
        energy_dev_iqr,
    })
}

/// Condition estimate of a gHNN's transform Jacobian along a trajectory;
/// `None` entries mark states where the estimate is unavailable.
pub fn jacobian_conditions(
    model: &Model,
    states: &[Vec<f64>],
) -> Result<Vec<Option<f64>>, ForecastError> {
    states
        .iter()
        .map(|s| {
            Ok(match model {
                Model::Ghnn { transform, .. } => {
                    let j = transform.input_jacobian_numeric(s)?;
                    Some(linalg::condition_1norm(&j))
                }
                _ => None,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::Mlp;
    use crate::models::ModelKind;
    use crate::systems::TargetSource;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn lv() -> SystemSpec {
        SystemSpec::lv_unit()
    }

    #[test]
    fn oracle_rollout_retraces_the_integrator_exactly() {
        // Same integrator, same field: the rollout must agree bit for bit
        // with driving rk4_step by hand.
        let system = lv();
        let source = FieldSource::Oracle { system: &system };
        let roll = rollout(&source, &[1.2, 0.7], 2.0, 0.02).unwrap();
        assert!(roll.is_complete());
        assert_eq!(roll.states.len(), 101);
        let mut y = vec![1.2, 0.7];
        let mut field = |r: &[f64]| system.vector_field(r);
        for k in 1..=100 {
            y = systems::rk4_step(&mut field, &y, 0.02).unwrap();
            assert_eq!(roll.states[k], y, "state {k} differs");
        }
    }

    #[test]
    fn oracle_rollout_tracks_the_reference_integration() {
        // Against the 100-substep reference the single-step rollout keeps
        // its O(h⁴) accuracy over the full horizon.
        let system = lv();
        let source = FieldSource::Oracle { system: &system };
        let report = forecast_one(&source, &system, &[0.5, 1.5], 10.0, 0.01).unwrap();
        assert!(!report.diverged);
        let mse = report.trajectory_mse.unwrap();
        assert!(mse < 1e-12, "mse {mse}");
    }

    #[test]
    fn zero_field_model_stays_put() {
        let model = Model::Nn {
            net: Mlp::zeros(&[2, 8, 2]).unwrap(),
        };
        let source = FieldSource::Learned {
            model: &model,
            policy: JacobianInversePolicy::forecast_default(),
        };
        let roll = rollout(&source, &[0.4, 1.1], 1.0, 0.1).unwrap();
        assert!(roll.is_complete());
        for s in &roll.states {
            assert_eq!(s, &vec![0.4, 1.1]);
        }
    }

    fn exploding_model() -> Model {
        // ṙ = 5r: e^{5t} crosses 1e6 near t ≈ 2.76.
        let mut net = Mlp::zeros(&[2, 2]).unwrap();
        net.params_mut()[0] = 5.0;
        net.params_mut()[3] = 5.0;
        Model::Nn { net }
    }

    #[test]
    fn runaway_states_raise_the_divergence_flag() {
        let model = exploding_model();
        let source = FieldSource::Learned {
            model: &model,
            policy: JacobianInversePolicy::forecast_default(),
        };
        let roll = rollout(&source, &[1.0, 1.0], 5.0, 0.01).unwrap();
        assert!(!roll.is_complete());
        assert!(roll.states.len() < 501);
        assert!(roll.diverged.as_deref().unwrap().contains("state left"));
        // Every retained state is still within bounds.
        for s in &roll.states {
            assert!(s.iter().all(|c| c.abs() <= DIVERGENCE_THRESHOLD));
        }
    }

    #[test]
    fn singular_jacobian_at_start_is_an_immediate_error() {
        let model = Model::Ghnn {
            transform: Mlp::zeros(&[2, 4, 2]).unwrap(),
            hamiltonian: Mlp::init_sizes(&[2, 8, 1], 3).unwrap(),
        };
        let source = FieldSource::Learned {
            model: &model,
            policy: JacobianInversePolicy::forecast_default(),
        };
        let err = rollout(&source, &[0.5, 0.5], 1.0, 0.01).unwrap_err();
        assert!(matches!(err, ForecastError::ImmediateFailure(_)));
    }

    #[test]
    fn energy_drift_reference_values() {
        let flat = energy_drift(&[3.0, 3.0, 3.0]).unwrap();
        assert_eq!(flat.relative_std, 0.0);
        assert_eq!(flat.max_relative_deviation, 0.0);
        // Mean −2.0667, population std 0.0943: ratio ≈ 0.0456.
        let d = energy_drift(&[-2.0, -2.0, -2.2]).unwrap();
        assert!((d.relative_std - 0.045_619_8).abs() < 1e-6, "{}", d.relative_std);
        assert!((d.max_relative_deviation - 0.1).abs() < 1e-12);
    }

    #[test]
    fn energy_drift_is_sign_and_scale_invariant() {
        let series = vec![2.0, 2.1, 1.9, 2.05];
        let base = energy_drift(&series).unwrap();
        let negated: Vec<f64> = series.iter().map(|e| -e).collect();
        let flipped = energy_drift(&negated).unwrap();
        assert!((base.relative_std - flipped.relative_std).abs() < 1e-15);
        assert!(
            (base.max_relative_deviation - flipped.max_relative_deviation).abs() < 1e-15
        );
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let c: f64 = rng.random_range(-10.0..10.0);
            if c.abs() < 1e-3 {
                continue;
            }
            let scaled: Vec<f64> = series.iter().map(|e| c * e).collect();
            let s = energy_drift(&scaled).unwrap();
            assert!((base.relative_std - s.relative_std).abs() < 1e-12);
            assert!((base.max_relative_deviation - s.max_relative_deviation).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_energy_scale_is_an_error() {
        assert!(matches!(
            energy_drift(&[1e-13, -1e-13]),
            Err(ForecastError::DegenerateEnergyScale(_))
        ));
        assert_eq!(energy_drift(&[]), Err(ForecastError::EmptySeries));
    }

    #[test]
    fn learned_hamiltonian_is_conserved_along_the_forecast() {
        // Symplectic-structure property, independent of training quality.
        let model = Model::Hnn {
            net: Mlp::init_sizes(&[2, 16, 16, 1], 5).unwrap(),
        };
        let source = FieldSource::Learned {
            model: &model,
            policy: JacobianInversePolicy::forecast_default(),
        };
        let roll = rollout(&source, &[0.5, -0.2], 10.0, 1e-3).unwrap();
        assert!(roll.is_complete());
        let h0 = model.learned_energy(&roll.states[0]).unwrap().unwrap();
        let mut max_rel = 0.0f64;
        for s in roll.states.iter().step_by(100) {
            let h = model.learned_energy(s).unwrap().unwrap();
            max_rel = max_rel.max((h - h0).abs() / h0.abs().max(1e-12));
        }
        assert!(max_rel < 1e-5, "learned-H drift {max_rel}");
    }

    #[test]
    fn halving_the_step_shrinks_error_sixteenfold() {
        // Fourth-order convergence on a smooth learned field: deviations
        // from a much finer rollout should drop by ~2⁴ when h halves.
        let model = Model::Hnn {
            net: Mlp::init_sizes(&[2, 16, 16, 1], 9).unwrap(),
        };
        let source = FieldSource::Learned {
            model: &model,
            policy: JacobianInversePolicy::forecast_default(),
        };
        let r0 = [0.8, 0.3];
        let t = 2.0;
        let h = 0.1;
        let coarse = rollout(&source, &r0, t, h).unwrap();
        let half = rollout(&source, &r0, t, h / 2.0).unwrap();
        let fine = rollout(&source, &r0, t, h / 8.0).unwrap();
        let err = |states: &[Vec<f64>], stride: usize| -> f64 {
            states
                .iter()
                .enumerate()
                .map(|(k, s)| {
                    let truth = &fine.states[k * stride];
                    s.iter()
                        .zip(truth)
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0f64, f64::max)
                })
                .fold(0.0f64, f64::max)
        };
        let e_h = err(&coarse.states, 8);
        let e_half = err(&half.states, 4);
        let ratio = e_h / e_half;
        assert!(
            (8.0..=32.0).contains(&ratio),
            "ratio {ratio} (errors {e_h:.3e}, {e_half:.3e})"
        );
    }

    #[test]
    fn quantile_and_iqr_reference_values() {
        let (median, iqr) = median_iqr(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert!((median - 2.5).abs() < 1e-15);
        assert!((iqr - 1.5).abs() < 1e-15);
        let (median, iqr) = median_iqr(&[5.0]).unwrap();
        assert_eq!((median, iqr), (5.0, 0.0));
        assert!(median_iqr(&[]).is_none());
    }

    #[test]
    fn oracle_evaluation_scores_near_zero_error() {
        let system = lv();
        let sources = [FieldSource::Oracle { system: &system }];
        let ics = vec![vec![0.5, 1.5], vec![1.0, 0.8], vec![2.0, 1.2]];
        let summary = evaluate(&sources, &system, &ics, 5.0, 0.01).unwrap();
        assert_eq!(summary.rows.len(), 3);
        assert_eq!(summary.diverged_rows, 0);
        assert!(summary.mse_median < 1e-10, "mse {}", summary.mse_median);
        // The oracle conserves true energy to integrator accuracy.
        assert!(summary.energy_std_median.unwrap() < 1e-10);
    }

    #[test]
    fn zero_field_evaluation_conserves_energy_trivially() {
        // Constant states sit on the initial energy level forever, while
        // the trajectory error is genuinely bad.
        let system = lv();
        let model = Model::Nn {
            net: Mlp::zeros(&[2, 8, 2]).unwrap(),
        };
        let sources = [FieldSource::Learned {
            model: &model,
            policy: JacobianInversePolicy::forecast_default(),
        }];
        let ics = vec![vec![0.5, 1.5], vec![1.3, 0.6]];
        let summary = evaluate(&sources, &system, &ics, 5.0, 0.05).unwrap();
        // The energy series is a single repeated value; its deviation from
        // E(t₀) is exactly zero, and its std is zero up to the rounding of
        // the mean.
        assert!(summary.energy_std_median.unwrap() < 1e-12);
        assert_eq!(summary.energy_dev_median, Some(0.0));
        assert!(summary.mse_median > 1e-3);
    }

    #[test]
    fn fully_divergent_model_is_an_error() {
        let system = lv();
        let model = exploding_model();
        let sources = [FieldSource::Learned {
            model: &model,
            policy: JacobianInversePolicy::forecast_default(),
        }];
        let ics = vec![vec![1.0, 1.0], vec![2.0, 2.0]];
        let err = evaluate(&sources, &system, &ics, 20.0, 0.01).unwrap_err();
        assert_eq!(err, ForecastError::AllDiverged(2));
    }

    #[test]
    fn immediate_failures_count_as_diverged_rows() {
        let system = lv();
        let broken = Model::Ghnn {
            transform: Mlp::zeros(&[2, 4, 2]).unwrap(),
            hamiltonian: Mlp::init_sizes(&[2, 8, 1], 7).unwrap(),
        };
        let healthy = Model::Nn {
            net: Mlp::zeros(&[2, 8, 2]).unwrap(),
        };
        let policy = JacobianInversePolicy::forecast_default();
        let sources = [
            FieldSource::Learned {
                model: &broken,
                policy,
            },
            FieldSource::Learned {
                model: &healthy,
                policy,
            },
        ];
        let ics = vec![vec![0.5, 1.5]];
        let summary = evaluate(&sources, &system, &ics, 2.0, 0.05).unwrap();
        assert_eq!(summary.diverged_rows, 1);
        let bad = &summary.rows[0].report;
        assert!(bad.diverged);
        assert!(bad.divergence.as_deref().unwrap().contains("immediate"));
    }

    #[test]
    fn evaluation_summary_round_trips_through_disk() {
        let system = lv();
        let sources = [FieldSource::Oracle { system: &system }];
        let ics = vec![vec![0.7, 1.1], vec![1.4, 0.9]];
        let summary = evaluate(&sources, &system, &ics, 1.0, 0.05).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("summary.json");
        summary.save(&path).unwrap();
        let back = EvaluationSummary::load(&path).unwrap();
        assert_eq!(summary, back);
    }

    #[test]
    fn trained_dataset_ics_forecast_cleanly_under_the_oracle() {
        // End-to-end sanity: dataset ICs drive rollouts whose energy stays
        // on the truth level to reference accuracy.
        let system = lv();
        let dataset = crate::systems::generate_dataset(
            &system,
            3,
            2.0,
            0.1,
            0.0,
            11,
            TargetSource::ExactField,
        )
        .unwrap();
        let sources = [FieldSource::Oracle { system: &system }];
        let ics: Vec<Vec<f64>> = dataset
            .trajectories
            .iter()
            .map(|t| t.initial.clone())
            .collect();
        let summary = evaluate(&sources, &system, &ics, 3.0, 0.01).unwrap();
        assert_eq!(summary.diverged_rows, 0);
        assert!(summary.energy_dev_median.unwrap() < 1e-9);
        let _ = ModelKind::Nn;
    }

    #[test]
    fn jacobian_conditions_reported_only_for_transform_models() {
        let hnn = Model::Hnn {
            net: Mlp::init_sizes(&[2, 8, 1], 3).unwrap(),
        };
        let states = vec![vec![0.4, 0.5]];
        assert_eq!(jacobian_conditions(&hnn, &states).unwrap(), vec![None]);
        let ghnn = Model::init(ModelKind::Ghnn, 2, 5).unwrap();
        let conds = jacobian_conditions(&ghnn, &states).unwrap();
        assert!(conds[0].unwrap() >= 1.0);
    }
}
