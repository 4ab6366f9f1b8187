//! Minibatch training, the multi-restart protocol, and outlier rejection.
//!
//! A single run is plain stochastic optimization of the model's loss with
//! per-step reseeded minibatches, recorded on the autodiff tape and pulled
//! back with one value sweep per step. Runs abort loudly — a non-finite
//! loss or gradient terminates with `NanAbort` rather than updating
//! parameters — and the multi-restart layer turns that into robustness:
//! launch several runs from different seeds, drop the failures, drop the
//! completed runs whose full-dataset loss is a κ×median outlier, and keep
//! the best survivor. Runs are compared by their loss over the *entire*
//! dataset at the final parameters, not by the last minibatch draw.
//! Evaluation metrics downstream are aggregated across the surviving
//! runs; parameters themselves are never averaged.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::Tape;
use crate::models::{JacobianInversePolicy, Model, ModelError, ModelKind};
use crate::systems::TrajectoryDataset;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("dataset has no samples")]
    EmptyDataset,
    #[error("bad training config: {0}")]
    BadConfig(String),
    #[error("no surviving runs: {}", causes.join("; "))]
    NoSurvivors { causes: Vec<String> },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("training I/O: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    /// Plain stochastic gradient descent.
    Sgd,
    /// Adaptive-moment estimation with the usual (0.9, 0.999, 1e-8)
    /// constants and bias correction.
    Adam,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    /// Anneal the learning rate linearly from `learning_rate` at the first
    /// step to this value at the last; `None` keeps it constant. Short
    /// runs at an aggressive rate otherwise end wherever the iterate
    /// happened to bounce — the anneal lets every restart settle into its
    /// basin instead.
    #[serde(default)]
    pub lr_final: Option<f64>,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub restarts: usize,
    /// κ in the outlier rule: completed runs whose final loss exceeds
    /// κ × median(final losses) are discarded.
    pub outlier_factor: f64,
    /// Global-norm gradient clip; `None` disables clipping.
    pub gradient_clip: Option<f64>,
}

impl TrainConfig {
    /// Defaults for a model kind: Adam at 1e-3, batch 256, 20000 steps,
    /// κ = 3. Clipping (global norm 10) is enabled for the Hamiltonian
    /// families, whose second-order loss paths occasionally spike, and off
    /// for the direct regression.
    pub fn for_kind(kind: ModelKind) -> Self {
        TrainConfig {
            optimizer: Optimizer::Adam,
            learning_rate: 1e-3,
            lr_final: None,
            batch_size: 256,
            steps: 20_000,
            seed: 0,
            restarts: 10,
            outlier_factor: 3.0,
            gradient_clip: match kind {
                ModelKind::Nn => None,
                ModelKind::Hnn | ModelKind::Ghnn => Some(10.0),
            },
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate > 0.0) {
            return Err(TrainError::BadConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if let Some(end) = self.lr_final {
            if !(end > 0.0) || !end.is_finite() {
                return Err(TrainError::BadConfig(format!(
                    "final learning rate must be positive and finite, got {end}"
                )));
            }
        }
        if self.restarts < 1 {
            return Err(TrainError::BadConfig("restarts must be ≥ 1".into()));
        }
        if !(self.outlier_factor > 1.0) {
            return Err(TrainError::BadConfig(format!(
                "outlier factor must exceed 1, got {}",
                self.outlier_factor
            )));
        }
        if self.batch_size == 0 || self.steps == 0 {
            return Err(TrainError::BadConfig(
                "batch size and step count must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainStatus {
    Completed,
    /// A non-finite loss or gradient appeared; parameters were not updated
    /// with it.
    NanAbort,
    /// The loss itself failed, e.g. a batch exhausted by singular
    /// Jacobians.
    SolverFailure,
}

impl TrainStatus {
    pub fn name(self) -> &'static str {
        match self {
            TrainStatus::Completed => "completed",
            TrainStatus::NanAbort => "nan-abort",
            TrainStatus::SolverFailure => "solver-failure",
        }
    }
}

/// One recorded optimization step (every 100th, plus the final one).
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub grad_norm: f64,
    /// Seconds since the run started. Diagnostic only: it appears in the
    /// training log but never in the run table, which stays
    /// byte-deterministic.
    pub wall_secs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub seed: u64,
    pub status: TrainStatus,
    pub records: Vec<StepRecord>,
    pub final_params: Vec<f64>,
    /// Mean loss over the entire dataset at the final parameters,
    /// evaluated tape-free after the run. Unlike the minibatch losses in
    /// `records`, this is a property of the trained model rather than of
    /// whichever batch came last, so it is the figure runs are compared
    /// by. NaN when no sample was evaluable.
    pub full_loss: f64,
    /// Human-readable cause for non-completed runs.
    pub failure: Option<String>,
}

impl TrainRun {
    /// The run's loss over the full dataset at its final parameters — the
    /// figure the survivor filter and best-run selection use.
    pub fn final_loss(&self) -> f64 {
        self.full_loss
    }

    /// The deterministic (step, loss) view of the records.
    pub fn loss_history(&self) -> Vec<(usize, f64)> {
        self.records.iter().map(|r| (r.step, r.loss)).collect()
    }

    /// Delimited training log: step, loss, gradient norm, wall seconds.
    pub fn write_log(&self, path: &Path) -> Result<(), TrainError> {
        let mut out = String::from("step\tloss\tgrad_norm\twall_secs\n");
        for r in &self.records {
            writeln!(
                out,
                "{}\t{:.16e}\t{:.16e}\t{:.6}",
                r.step, r.loss, r.grad_norm, r.wall_secs
            )
            .unwrap();
        }
        crate::write_atomic(path, out.as_bytes()).map_err(|e| TrainError::Io(e.to_string()))
    }
}

/// Rebuild the trained model a run produced.
pub fn model_from_run(kind: ModelKind, d: usize, run: &TrainRun) -> Result<Model, TrainError> {
    let mut model = Model::init(kind, d, run.seed)?;
    model.set_params_flat(&run.final_params);
    Ok(model)
}

/// Mean loss over every sample at fixed parameters, computed without a
/// tape: per sample the squared field residual is summed over components,
/// then averaged over the samples the field solve succeeded on. NaN when
/// none was evaluable.
pub fn dataset_loss(
    kind: ModelKind,
    d: usize,
    seed: u64,
    params: &[f64],
    samples: &[(&[f64], &[f64])],
    policy: &JacobianInversePolicy,
) -> f64 {
    let Ok(mut model) = Model::init(kind, d, seed) else {
        return f64::NAN;
    };
    model.set_params_flat(params);
    let mut sum = 0.0;
    let mut count = 0usize;
    for (state, target) in samples {
        if let Ok(field) = model.field_numeric(state, policy) {
            sum += field
                .iter()
                .zip(target.iter())
                .map(|(f, t)| (f - t) * (f - t))
                .sum::<f64>();
            count += 1;
        }
    }
    if count == 0 {
        f64::NAN
    } else {
        sum / count as f64
    }
}

/// Learning rate for `step` (1-based) of `steps` under a linear schedule
/// from `start` to `end`; `end = None` keeps the rate constant.
fn scheduled_lr(start: f64, end: Option<f64>, step: usize, steps: usize) -> f64 {
    match end {
        None => start,
        Some(end) if steps <= 1 => end,
        Some(end) => {
            let frac = (step - 1) as f64 / (steps - 1) as f64;
            start * (1.0 - frac) + end * frac
        }
    }
}

/// Scale gradients in place so their global norm is at most `threshold`;
/// returns the pre-clip norm.
pub fn clip_gradients(grads: &mut [f64], threshold: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > threshold {
        let scale = threshold / norm;
        for g in grads.iter_mut() {
            *g *= scale;
        }
    }
    norm
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamState {
    fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * grads[i];
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * grads[i] * grads[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + EPS);
        }
    }
}

/// Train one model of `kind` on the dataset. Initialization and minibatch
/// sampling both derive from `config.seed`, so a run is a pure function of
/// (kind, dataset, config).
pub fn train(
    kind: ModelKind,
    dataset: &TrajectoryDataset,
    config: &TrainConfig,
) -> Result<TrainRun, TrainError> {
    config.validate()?;
    let samples: Vec<(&[f64], &[f64])> = dataset.samples().collect();
    if samples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut model = Model::init(kind, dataset.dim(), config.seed)?;
    let policy = JacobianInversePolicy::training_default();
    let mut params = model.params_flat();
    let mut adam = AdamState::new(params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut tape = Tape::new();
    let mut records = Vec::new();
    let start = Instant::now();

    let finish = |status: TrainStatus,
                  records: Vec<StepRecord>,
                  params: Vec<f64>,
                  failure: Option<String>| {
        let full_loss = dataset_loss(kind, dataset.dim(), config.seed, &params, &samples, &policy);
        TrainRun {
            seed: config.seed,
            status,
            records,
            final_params: params,
            full_loss,
            failure,
        }
    };

    for step in 1..=config.steps {
        let batch: Vec<(&[f64], &[f64])> = (0..config.batch_size)
            .map(|_| samples[rng.random_range(0..samples.len())])
            .collect();
        tape.clear();
        model.set_params_flat(&params);
        let staged = model.stage(&tape);
        let loss = match model.loss(&tape, &staged, &batch, &policy) {
            Ok(l) => l,
            Err(e) => {
                return Ok(finish(
                    TrainStatus::SolverFailure,
                    records,
                    params,
                    Some(format!("step {step}: {e}")),
                ))
            }
        };
        let loss_value = loss.value();
        if !loss_value.is_finite() {
            return Ok(finish(
                TrainStatus::NanAbort,
                records,
                params,
                Some(format!("step {step}: loss {loss_value}")),
            ));
        }
        let adjoints = match tape.backward_values(loss) {
            Ok(a) => a,
            Err(e) => {
                return Ok(finish(
                    TrainStatus::SolverFailure,
                    records,
                    params,
                    Some(format!("step {step}: {e}")),
                ))
            }
        };
        let mut grads: Vec<f64> = staged.iter().map(|&s| adjoints.wrt(s)).collect();
        if grads.iter().any(|g| !g.is_finite()) {
            return Ok(finish(
                TrainStatus::NanAbort,
                records,
                params,
                Some(format!("step {step}: non-finite gradient")),
            ));
        }
        let raw_norm = match config.gradient_clip {
            Some(threshold) => clip_gradients(&mut grads, threshold),
            None => grads.iter().map(|g| g * g).sum::<f64>().sqrt(),
        };
        let lr = scheduled_lr(config.learning_rate, config.lr_final, step, config.steps);
        match config.optimizer {
            Optimizer::Sgd => {
                for (p, g) in params.iter_mut().zip(&grads) {
                    *p -= lr * g;
                }
            }
            Optimizer::Adam => adam.update(&mut params, &grads, lr),
        }
        if step % 100 == 0 || step == config.steps {
            records.push(StepRecord {
                step,
                loss: loss_value,
                grad_norm: raw_norm,
                wall_secs: start.elapsed().as_secs_f64(),
            });
        }
    }
    Ok(finish(TrainStatus::Completed, records, params, None))
}

/// The survivor mask of the κ×median rule over completed-run final losses.
/// Positions with non-finite losses never survive. Scale-consistent: the
/// mask depends only on loss ratios.
pub fn survivor_filter(final_losses: &[f64], kappa: f64) -> Vec<bool> {
    let mut finite: Vec<f64> = final_losses.iter().copied().filter(|l| l.is_finite()).collect();
    if finite.is_empty() {
        return vec![false; final_losses.len()];
    }
    finite.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = finite.len();
    let median = if n % 2 == 1 {
        finite[n / 2]
    } else {
        0.5 * (finite[n / 2 - 1] + finite[n / 2])
    };
    final_losses
        .iter()
        .map(|l| l.is_finite() && *l <= kappa * median)
        .collect()
}

/// Everything a restart sweep produced: all runs by restart index, the
/// survivor mask, and the index of the best (minimum-final-loss) survivor.
#[derive(Debug, Clone, PartialEq)]
pub struct RestartOutcome {
    pub runs: Vec<TrainRun>,
    pub survivors: Vec<bool>,
    pub best: usize,
}

impl RestartOutcome {
    pub fn best_run(&self) -> &TrainRun {
        &self.runs[self.best]
    }

    pub fn surviving_runs(&self) -> impl Iterator<Item = (usize, &TrainRun)> {
        self.runs
            .iter()
            .enumerate()
            .filter(|(i, _)| self.survivors[*i])
    }
}

/// Apply the survivor rules to a finished set of runs: drop non-completed
/// runs, drop κ×median outliers among the completed, pick the minimum-loss
/// survivor (lowest restart index on ties).
pub fn select_runs(runs: Vec<TrainRun>, kappa: f64) -> Result<RestartOutcome, TrainError> {
    let completed_losses: Vec<f64> = runs
        .iter()
        .map(|r| {
            if r.status == TrainStatus::Completed {
                r.final_loss()
            } else {
                f64::NAN
            }
        })
        .collect();
    let survivors = survivor_filter(&completed_losses, kappa);
    if !survivors.iter().any(|&s| s) {
        let causes = runs
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let detail = match &r.failure {
                    Some(f) => format!(" ({f})"),
                    None => String::new(),
                };
                format!("restart {i} seed {}: {}{detail}", r.seed, r.status.name())
            })
            .collect();
        return Err(TrainError::NoSurvivors { causes });
    }
    let best = (0..runs.len())
        .filter(|&i| survivors[i])
        .min_by(|&a, &b| {
            runs[a]
                .final_loss()
                .partial_cmp(&runs[b].final_loss())
                .unwrap()
        })
        .unwrap();
    Ok(RestartOutcome {
        runs,
        survivors,
        best,
    })
}

/// Launch `config.restarts` runs with seeds `seed + i` and apply the
/// survivor rules.
pub fn multi_restart(
    kind: ModelKind,
    dataset: &TrajectoryDataset,
    config: &TrainConfig,
) -> Result<RestartOutcome, TrainError> {
    config.validate()?;
    let mut runs = Vec::with_capacity(config.restarts);
    for i in 0..config.restarts {
        let mut run_config = config.clone();
        run_config.seed = config.seed.wrapping_add(i as u64);
        runs.push(train(kind, dataset, &run_config)?);
    }
    select_runs(runs, config.outlier_factor)
}

/// The run table: per-restart seed, status, final loss, survivor flag.
/// Wall times are deliberately excluded so the document is
/// byte-deterministic for a given (kind, dataset, config).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RunTable {
    pub rows: Vec<RunRow>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RunRow {
    pub restart: usize,
    pub seed: u64,
    pub status: TrainStatus,
    /// Final recorded loss; absent when the run recorded nothing finite.
    pub final_loss: Option<f64>,
    pub survivor: bool,
}

impl RunTable {
    pub fn from_outcome(outcome: &RestartOutcome) -> Self {
        let rows = outcome
            .runs
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let loss = r.final_loss();
                RunRow {
                    restart: i,
                    seed: r.seed,
                    status: r.status,
                    final_loss: loss.is_finite().then_some(loss),
                    survivor: outcome.survivors[i],
                }
            })
            .collect();
        RunTable { rows }
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| TrainError::Io(e.to_string()))?;
        text.push('\n');
        crate::write_atomic(path, text.as_bytes()).map_err(|e| TrainError::Io(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path).map_err(|e| TrainError::Io(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| TrainError::Io(e.to_string()))
    }
}
