//! Command-line driver: dataset generation, training, forecasting,
//! evaluation, and plot emission, all steered by one experiment config so
//! a stored config re-runs an experiment identically.
//!
//! Exit codes are a stable contract: 0 success, 2 invalid config or
//! arguments, 3 domain error during generation, 4 training left no
//! surviving runs, 5 every rollout diverged, 1 anything else.

pub mod config;
pub mod plot;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::forecast::{self, EvaluationSummary, FieldSource, ForecastReport};
use crate::models::{JacobianInversePolicy, Model, ModelKind};
use crate::systems::{self, SystemSpec, TrajectoryDataset};
use crate::training::{self, RunTable, TrainError};

pub use config::ExperimentConfig;
use plot::Series;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CliError {
    /// Invalid configuration or arguments (exit 2).
    #[error("{0}")]
    Invalid(String),
    /// Domain error while integrating a dataset (exit 3).
    #[error("generation failed: {0}")]
    Generation(String),
    /// Training produced no surviving runs (exit 4).
    #[error("training exhausted: {0}")]
    Exhausted(String),
    /// Every forecast rollout diverged (exit 5).
    #[error("forecast divergence: {0}")]
    Divergence(String),
    /// Everything else (exit 1).
    #[error("{0}")]
    Failure(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 2,
            CliError::Generation(_) => 3,
            CliError::Exhausted(_) => 4,
            CliError::Divergence(_) => 5,
            CliError::Failure(_) => 1,
        }
    }
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Failure(format!("{}: {e}", path.display()))
}

/// Learn and forecast dynamical systems with Hamiltonian-structured
/// neural networks.
#[derive(Debug, Parser)]
#[command(name = "ghnn", version, about)]
pub struct Cli {
    /// Print the experiment configuration schema and exit.
    #[arg(long)]
    pub print_schema: bool,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate trajectories and write the dataset files.
    Generate {
        /// Experiment configuration (TOML).
        #[arg(long)]
        config: PathBuf,
    },
    /// Train the configured model with restarts; write checkpoints, the
    /// run table, and the best run's training log.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Dataset directory; defaults to <output>/dataset.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Roll a single forecast from one initial condition; write the
    /// report, raw series, and plots.
    Forecast {
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint file; defaults to <output>/<kind>/checkpoint.txt.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Integrate the ground-truth field instead of a checkpoint.
        #[arg(long)]
        oracle: bool,
        /// Initial condition as comma-separated components; defaults to
        /// the first unseen initial condition.
        #[arg(long)]
        ic: Option<String>,
    },
    /// Forecast from every unseen initial condition and pool the metrics.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        /// Evaluate this single checkpoint instead of the surviving
        /// restarts recorded in the run table.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Evaluate the ground-truth field (pipeline calibration).
        #[arg(long)]
        oracle: bool,
        /// Evaluate every trained model kind and rank them by energy
        /// drift.
        #[arg(long)]
        compare: bool,
    },
    /// Re-emit plots from a stored forecast or evaluation report.
    Plot {
        /// A forecast.json or evaluation.json file.
        #[arg(long)]
        report: PathBuf,
        /// Output directory; defaults to the report's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    if cli.print_schema {
        print!("{}", config::SCHEMA);
        return Ok(());
    }
    match cli.command {
        Some(Command::Generate { config }) => cmd_generate(&config),
        Some(Command::Train { config, dataset }) => cmd_train(&config, dataset.as_deref()),
        Some(Command::Forecast {
            config,
            checkpoint,
            oracle,
            ic,
        }) => cmd_forecast(&config, checkpoint.as_deref(), oracle, ic.as_deref()),
        Some(Command::Evaluate {
            config,
            checkpoint,
            oracle,
            compare,
        }) => cmd_evaluate(&config, checkpoint.as_deref(), oracle, compare),
        Some(Command::Plot { report, out }) => cmd_plot(&report, out.as_deref()),
        None => Err(CliError::Invalid(
            "no subcommand given; run with --help".to_string(),
        )),
    }
}

// ---------------------------------------------------------------- generate

/// Maximum relative drift of the true energy along clean re-integrations
/// of every initial condition in the dataset — the generation sanity
/// check. The dataset's own states may be noisy; the check probes the
/// integrator, so it always re-runs at σ = 0.
fn conservation_drift(
    system: &SystemSpec,
    dataset: &TrajectoryDataset,
) -> Result<f64, CliError> {
    let mut worst: f64 = 0.0;
    for traj in &dataset.trajectories {
        let states = systems::integrate_sampled(system, &traj.initial, dataset.t_end, dataset.dt)
            .map_err(|e| CliError::Generation(e.to_string()))?;
        let energies: Vec<f64> = states
            .iter()
            .map(|s| system.energy(s))
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::Generation(e.to_string()))?;
        let e0 = energies[0];
        let scale = e0.abs().max(1e-12);
        for e in &energies {
            worst = worst.max((e - e0).abs() / scale);
        }
    }
    Ok(worst)
}

const CONSERVATION_TOLERANCE: f64 = 1e-6;

fn cmd_generate(config_path: &Path) -> Result<(), CliError> {
    let cfg = ExperimentConfig::load(config_path)?;
    let d = &cfg.dataset;
    let dataset = systems::generate_dataset(
        &cfg.system,
        d.n_traj,
        d.t_end,
        d.dt,
        d.sigma,
        d.seed,
        d.targets,
    )
    .map_err(|e| CliError::Generation(e.to_string()))?;
    let dir = cfg.dataset_dir();
    dataset.save(&dir).map_err(|e| io_failure(&dir, e))?;
    let drift = conservation_drift(&cfg.system, &dataset)?;
    let verdict = if drift < CONSERVATION_TOLERANCE {
        "pass"
    } else {
        "FAIL"
    };
    println!(
        "generated {} trajectories ({} samples) for {} -> {}",
        dataset.trajectories.len(),
        dataset.n_samples(),
        cfg.system.name(),
        dir.display()
    );
    println!("conservation check: max relative energy drift {drift:.3e} ({verdict})");
    Ok(())
}

// ------------------------------------------------------------------- train

fn load_dataset(cfg: &ExperimentConfig, dataset_dir: Option<&Path>) -> Result<TrajectoryDataset, CliError> {
    let dir = dataset_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.dataset_dir());
    let dataset = TrajectoryDataset::load(&dir).map_err(|e| {
        CliError::Invalid(format!("cannot load dataset from {}: {e}", dir.display()))
    })?;
    if dataset.system != cfg.system {
        return Err(CliError::Invalid(format!(
            "dataset in {} was generated for {} with different parameters than [system] in the config",
            dir.display(),
            dataset.system.name()
        )));
    }
    Ok(dataset)
}

fn cmd_train(config_path: &Path, dataset_dir: Option<&Path>) -> Result<(), CliError> {
    let cfg = ExperimentConfig::load(config_path)?;
    let dataset = load_dataset(&cfg, dataset_dir)?;
    let kind = cfg.model.kind;
    let train_config = cfg.training.resolve(kind);
    train_config
        .validate()
        .map_err(|e| CliError::Invalid(e.to_string()))?;

    let outcome = training::multi_restart(kind, &dataset, &train_config).map_err(|e| match e {
        TrainError::NoSurvivors { .. } => CliError::Exhausted(e.to_string()),
        TrainError::EmptyDataset | TrainError::BadConfig(_) => CliError::Invalid(e.to_string()),
        other => CliError::Failure(other.to_string()),
    })?;

    let dir = cfg.model_dir(kind);
    std::fs::create_dir_all(&dir).map_err(|e| io_failure(&dir, e))?;
    for (i, run) in outcome.surviving_runs() {
        let model = training::model_from_run(kind, dataset.dim(), run)
            .map_err(|e| CliError::Failure(e.to_string()))?;
        let path = dir.join(format!("restart-{i}.ckpt"));
        model
            .save(&path, run.seed)
            .map_err(|e| io_failure(&path, e))?;
    }
    let best = outcome.best_run();
    let best_model = training::model_from_run(kind, dataset.dim(), best)
        .map_err(|e| CliError::Failure(e.to_string()))?;
    let ckpt = dir.join("checkpoint.txt");
    best_model
        .save(&ckpt, best.seed)
        .map_err(|e| io_failure(&ckpt, e))?;
    RunTable::from_outcome(&outcome)
        .save(&dir.join("runs.json"))
        .map_err(|e| CliError::Failure(e.to_string()))?;
    best.write_log(&dir.join("train.log"))
        .map_err(|e| CliError::Failure(e.to_string()))?;

    for (i, run) in outcome.runs.iter().enumerate() {
        let survivor = if outcome.survivors[i] {
            if i == outcome.best {
                " [best]"
            } else {
                " [survivor]"
            }
        } else {
            ""
        };
        let loss = run.final_loss();
        let loss = if loss.is_finite() {
            format!("{loss:.6e}")
        } else {
            "-".to_string()
        };
        println!(
            "restart {i} seed {}: {} final loss {loss}{survivor}",
            run.seed,
            run.status.name()
        );
    }
    println!(
        "trained {} on {} samples; checkpoint -> {}",
        kind.name(),
        dataset.n_samples(),
        ckpt.display()
    );
    Ok(())
}

// ------------------------------------------------- forecasting & reports

fn parse_ic(text: &str, dim: usize) -> Result<Vec<f64>, CliError> {
    let ic: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Invalid(format!("cannot parse --ic `{text}`: {e}")))?;
    if ic.len() != dim {
        return Err(CliError::Invalid(format!(
            "--ic has {} components, system needs {dim}",
            ic.len()
        )));
    }
    if !ic.iter().all(|c| c.is_finite()) {
        return Err(CliError::Invalid(format!("--ic `{text}` must be finite")));
    }
    Ok(ic)
}

fn load_checkpoint(cfg: &ExperimentConfig, path: Option<&Path>) -> Result<Model, CliError> {
    let path = path
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.model_dir(cfg.model.kind).join("checkpoint.txt"));
    let (model, _) = Model::load(&path).map_err(|e| {
        CliError::Invalid(format!("cannot load checkpoint {}: {e}", path.display()))
    })?;
    if model.dim() != cfg.system.dim() {
        return Err(CliError::Invalid(format!(
            "checkpoint {} is {}-dimensional, system {} needs {}",
            path.display(),
            model.dim(),
            cfg.system.name(),
            cfg.system.dim()
        )));
    }
    Ok(model)
}

fn map_forecast_error(e: forecast::ForecastError) -> CliError {
    use forecast::ForecastError::*;
    match e {
        ImmediateFailure(_) | AllDiverged(_) => CliError::Divergence(e.to_string()),
        BadGrid { .. } | NoInitialConditions | NoModels | EmptySeries => {
            CliError::Invalid(e.to_string())
        }
        other => CliError::Failure(other.to_string()),
    }
}

fn phase_points(states: &[Vec<f64>]) -> Vec<(f64, f64)> {
    states.iter().map(|s| (s[0], s[1])).collect()
}

fn energy_points(times: &[f64], energy: &[f64]) -> Vec<(f64, f64)> {
    // zip truncates to the shorter series, which handles energies cut off
    // when a diverged trajectory leaves the energy function's domain.
    times.iter().zip(energy).map(|(&t, &e)| (t, e)).collect()
}

fn tsv_cell(value: Option<&f64>) -> String {
    match value {
        Some(v) => format!("{v:.16e}"),
        None => "nan".to_string(),
    }
}

/// Write one forecast's raw series: time, forecast state, reference
/// state, and both energy traces, tab-separated.
fn write_series_tsv(path: &Path, report: &ForecastReport) -> Result<(), CliError> {
    let d = report.initial.len();
    let mut out = String::new();
    out.push('t');
    for i in 0..d {
        out.push_str(&format!("\tr{i}"));
    }
    for i in 0..d {
        out.push_str(&format!("\tref_r{i}"));
    }
    out.push_str("\tenergy\tref_energy\n");
    for (k, t) in report.times.iter().enumerate() {
        out.push_str(&format!("{t:.16e}"));
        for v in &report.states[k] {
            out.push_str(&format!("\t{v:.16e}"));
        }
        for v in &report.reference[k] {
            out.push_str(&format!("\t{v:.16e}"));
        }
        out.push('\t');
        out.push_str(&tsv_cell(report.energy.get(k)));
        out.push('\t');
        out.push_str(&tsv_cell(report.reference_energy.get(k)));
        out.push('\n');
    }
    crate::write_atomic(path, out.as_bytes()).map_err(|e| io_failure(path, e))
}

/// Emit the two standard plots for a set of reports sharing one model:
/// phase plane (first two state components) and energy versus time, with
/// the reference dashed. Only the first report of each role gets a legend
/// entry.
fn emit_plots(dir: &Path, label: &str, system: &str, reports: &[&ForecastReport]) -> Result<(), CliError> {
    let mut phase = Vec::new();
    let mut energy = Vec::new();
    for (i, r) in reports.iter().enumerate() {
        let mut fwd = Series::new(label, phase_points(&r.states));
        let mut rf = Series::reference("reference", phase_points(&r.reference));
        let mut fwd_e = Series::new(label, energy_points(&r.times, &r.energy));
        let mut ref_e = Series::reference("reference", energy_points(&r.times, &r.reference_energy));
        if i > 0 {
            fwd.label.clear();
            rf.label.clear();
            fwd_e.label.clear();
            ref_e.label.clear();
        }
        phase.push(fwd);
        phase.push(rf);
        energy.push(fwd_e);
        energy.push(ref_e);
    }
    plot::write_plot(
        &dir.join("phase.svg"),
        &format!("{label} on {system}: phase plane"),
        "r0",
        "r1",
        &phase,
    )?;
    plot::write_plot(
        &dir.join("energy.svg"),
        &format!("{label} on {system}: energy along the forecast"),
        "t",
        "E",
        &energy,
    )
}

fn cmd_forecast(
    config_path: &Path,
    checkpoint: Option<&Path>,
    oracle: bool,
    ic: Option<&str>,
) -> Result<(), CliError> {
    let cfg = ExperimentConfig::load(config_path)?;
    let r0 = match ic {
        Some(text) => parse_ic(text, cfg.system.dim())?,
        None => cfg.unseen_ics().swap_remove(0),
    };
    let stored;
    let source = if oracle {
        FieldSource::Oracle {
            system: &cfg.system,
        }
    } else {
        stored = load_checkpoint(&cfg, checkpoint)?;
        FieldSource::Learned {
            model: &stored,
            policy: JacobianInversePolicy::forecast_default(),
        }
    };
    let label = source.label();
    let report = forecast::forecast_one(
        &source,
        &cfg.system,
        &r0,
        cfg.forecast_horizon(),
        cfg.forecast.step,
    )
    .map_err(map_forecast_error)?;

    let dir = cfg.output_dir().join(&label);
    std::fs::create_dir_all(&dir).map_err(|e| io_failure(&dir, e))?;
    report
        .save(&dir.join("forecast.json"))
        .map_err(|e| CliError::Failure(e.to_string()))?;
    write_series_tsv(&dir.join("forecast.tsv"), &report)?;
    emit_plots(&dir, &label, cfg.system.name(), &[&report])?;

    println!(
        "forecast {label} on {} from {:?} over T={} (h={})",
        cfg.system.name(),
        r0,
        report.horizon,
        report.step
    );
    match &report.divergence {
        Some(reason) => println!("DIVERGED: {reason} (partial trajectory retained)"),
        None => {
            if let (Some(mse), Some(drift)) = (report.trajectory_mse, &report.drift) {
                println!(
                    "trajectory mse {mse:.6e}, relative energy std {:.6e}",
                    drift.relative_std
                );
            }
        }
    }
    println!("report -> {}", dir.join("forecast.json").display());
    Ok(())
}

// ---------------------------------------------------------------- evaluate

/// The models an evaluation scores: an explicit checkpoint when given,
/// otherwise every surviving restart recorded in the kind's run table,
/// falling back to the single best checkpoint when no run table exists.
fn load_evaluation_models(
    cfg: &ExperimentConfig,
    kind: ModelKind,
    checkpoint: Option<&Path>,
) -> Result<Vec<Model>, CliError> {
    if let Some(path) = checkpoint {
        return Ok(vec![load_checkpoint(cfg, Some(path))?]);
    }
    let dir = cfg.model_dir(kind);
    let runs = dir.join("runs.json");
    if !runs.exists() {
        let mut cfg_for_kind = cfg.clone();
        cfg_for_kind.model.kind = kind;
        return Ok(vec![load_checkpoint(&cfg_for_kind, None)?]);
    }
    let table = RunTable::load(&runs).map_err(|e| CliError::Invalid(e.to_string()))?;
    let mut models = Vec::new();
    for row in table.rows.iter().filter(|r| r.survivor) {
        let path = dir.join(format!("restart-{}.ckpt", row.restart));
        let (model, _) = Model::load(&path).map_err(|e| {
            CliError::Invalid(format!("cannot load checkpoint {}: {e}", path.display()))
        })?;
        models.push(model);
    }
    if models.is_empty() {
        return Err(CliError::Invalid(format!(
            "run table {} lists no survivors",
            runs.display()
        )));
    }
    Ok(models)
}

/// First-model reports per initial condition — the representative set the
/// per-IC series files and plots are drawn from.
fn representative_reports(summary: &EvaluationSummary) -> Vec<&ForecastReport> {
    summary
        .rows
        .iter()
        .filter(|r| r.model_index == 0)
        .map(|r| &r.report)
        .collect()
}

fn write_evaluation_files(
    dir: &Path,
    label: &str,
    system: &str,
    summary: &EvaluationSummary,
) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
    summary
        .save(&dir.join("evaluation.json"))
        .map_err(|e| CliError::Failure(e.to_string()))?;
    for row in summary.rows.iter().filter(|r| r.model_index == 0) {
        write_series_tsv(&dir.join(format!("series-ic{}.tsv", row.ic_index)), &row.report)?;
    }
    emit_plots(dir, label, system, &representative_reports(summary))
}

fn print_summary_line(label: &str, summary: &EvaluationSummary) {
    let energy = match summary.energy_std_median {
        Some(s) => format!("{s:.6e}"),
        None => "-".to_string(),
    };
    println!(
        "{label}: mse median {:.6e}, relative energy std median {energy}, {}/{} rollouts diverged",
        summary.mse_median,
        summary.diverged_rows,
        summary.rows.len()
    );
}

fn cmd_evaluate(
    config_path: &Path,
    checkpoint: Option<&Path>,
    oracle: bool,
    compare: bool,
) -> Result<(), CliError> {
    let cfg = ExperimentConfig::load(config_path)?;
    let ics = cfg.unseen_ics();
    let t_end = cfg.forecast_horizon();
    let h = cfg.forecast.step;
    if compare {
        return cmd_compare(&cfg, &ics, t_end, h);
    }

    let stored;
    let sources: Vec<FieldSource<'_>> = if oracle {
        vec![FieldSource::Oracle {
            system: &cfg.system,
        }]
    } else {
        stored = load_evaluation_models(&cfg, cfg.model.kind, checkpoint)?;
        stored
            .iter()
            .map(|model| FieldSource::Learned {
                model,
                policy: JacobianInversePolicy::forecast_default(),
            })
            .collect()
    };
    let label = sources[0].label();
    let summary =
        forecast::evaluate(&sources, &cfg.system, &ics, t_end, h).map_err(map_forecast_error)?;
    let dir = cfg.output_dir().join(&label);
    write_evaluation_files(&dir, &label, cfg.system.name(), &summary)?;
    print_summary_line(&label, &summary);
    println!("report -> {}", dir.join("evaluation.json").display());
    Ok(())
}

// ----------------------------------------------------------------- compare

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ComparisonEntry {
    pub model: String,
    pub restarts_evaluated: usize,
    pub rows: usize,
    pub diverged_rows: usize,
    pub mse_median: Option<f64>,
    pub energy_std_median: Option<f64>,
    pub energy_dev_median: Option<f64>,
    /// Set when every rollout of this model diverged; such a model ranks
    /// last.
    pub all_diverged: bool,
}

/// The combined comparison document: one entry per evaluated model kind,
/// ordered from best (smallest median relative energy std) to worst.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ComparisonReport {
    pub system: String,
    pub horizon: f64,
    pub step: f64,
    pub ranking: Vec<ComparisonEntry>,
}

impl ComparisonReport {
    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Failure(e.to_string()))?;
        text.push('\n');
        crate::write_atomic(path, text.as_bytes()).map_err(|e| io_failure(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
        serde_json::from_str(&text).map_err(|e| io_failure(path, e))
    }
}

/// Order entries by median relative energy std ascending; models with no
/// usable energy statistic (all diverged, or degenerate scale) sort last.
fn rank_entries(entries: &mut [ComparisonEntry]) {
    entries.sort_by(|a, b| match (a.energy_std_median, b.energy_std_median) {
        (Some(x), Some(y)) => x.partial_cmp(&y).unwrap(),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.model.cmp(&b.model),
    });
}

fn cmd_compare(
    cfg: &ExperimentConfig,
    ics: &[Vec<f64>],
    t_end: f64,
    h: f64,
) -> Result<(), CliError> {
    let kinds = [ModelKind::Nn, ModelKind::Hnn, ModelKind::Ghnn];
    let mut entries = Vec::new();
    let mut combined_energy: Vec<Series> = Vec::new();
    let mut reference_energy: Option<Series> = None;
    let mut found = 0usize;
    for kind in kinds {
        let dir = cfg.model_dir(kind);
        if !dir.join("runs.json").exists() && !dir.join("checkpoint.txt").exists() {
            continue;
        }
        found += 1;
        let models = load_evaluation_models(cfg, kind, None)?;
        let sources: Vec<FieldSource<'_>> = models
            .iter()
            .map(|model| FieldSource::Learned {
                model,
                policy: JacobianInversePolicy::forecast_default(),
            })
            .collect();
        match forecast::evaluate(&sources, &cfg.system, ics, t_end, h) {
            Ok(summary) => {
                write_evaluation_files(&dir, kind.name(), cfg.system.name(), &summary)?;
                print_summary_line(kind.name(), &summary);
                if let Some(report) = representative_reports(&summary).first() {
                    combined_energy.push(Series::new(
                        kind.name(),
                        energy_points(&report.times, &report.energy),
                    ));
                    if reference_energy.is_none() {
                        reference_energy = Some(Series::reference(
                            "reference",
                            energy_points(&report.times, &report.reference_energy),
                        ));
                    }
                }
                entries.push(ComparisonEntry {
                    model: kind.name().to_string(),
                    restarts_evaluated: models.len(),
                    rows: summary.rows.len(),
                    diverged_rows: summary.diverged_rows,
                    mse_median: Some(summary.mse_median),
                    energy_std_median: summary.energy_std_median,
                    energy_dev_median: summary.energy_dev_median,
                    all_diverged: false,
                });
            }
            Err(forecast::ForecastError::AllDiverged(n)) => {
                println!("{}: all {n} rollouts diverged", kind.name());
                entries.push(ComparisonEntry {
                    model: kind.name().to_string(),
                    restarts_evaluated: models.len(),
                    rows: n,
                    diverged_rows: n,
                    mse_median: None,
                    energy_std_median: None,
                    energy_dev_median: None,
                    all_diverged: true,
                });
            }
            Err(e) => return Err(map_forecast_error(e)),
        }
    }
    if found == 0 {
        return Err(CliError::Invalid(format!(
            "no trained models under {}; run `train` first",
            cfg.output_dir().display()
        )));
    }
    if entries.iter().all(|e| e.all_diverged) {
        return Err(CliError::Divergence(format!(
            "every rollout of every model diverged ({} models)",
            entries.len()
        )));
    }
    rank_entries(&mut entries);

    let out = cfg.output_dir();
    let report = ComparisonReport {
        system: cfg.system.name().to_string(),
        horizon: t_end,
        step: h,
        ranking: entries,
    };
    report.save(&out.join("comparison.json"))?;
    if let Some(reference) = reference_energy {
        combined_energy.push(reference);
        plot::write_plot(
            &out.join("comparison-energy.svg"),
            &format!("energy along forecasts on {}", cfg.system.name()),
            "t",
            "E",
            &combined_energy,
        )?;
    }
    println!("ranking (best energy conservation first):");
    for (place, entry) in report.ranking.iter().enumerate() {
        let stat = match entry.energy_std_median {
            Some(s) => format!("relative energy std median {s:.6e}"),
            None => "no surviving rollouts".to_string(),
        };
        println!("  {}. {} — {stat}", place + 1, entry.model);
    }
    println!("report -> {}", out.join("comparison.json").display());
    Ok(())
}

// -------------------------------------------------------------------- plot

fn cmd_plot(report_path: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let dir = out
        .map(Path::to_path_buf)
        .or_else(|| report_path.parent().map(Path::to_path_buf))
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).map_err(|e| io_failure(&dir, e))?;
    if let Ok(report) = ForecastReport::load(report_path) {
        emit_plots(&dir, &report.model, &report.system, &[&report])?;
        println!("plots -> {}", dir.display());
        return Ok(());
    }
    let summary = EvaluationSummary::load(report_path).map_err(|e| {
        CliError::Invalid(format!(
            "{} is neither a forecast nor an evaluation report: {e}",
            report_path.display()
        ))
    })?;
    let reports = representative_reports(&summary);
    if reports.is_empty() {
        return Err(CliError::Invalid(format!(
            "{} contains no rollouts to plot",
            report_path.display()
        )));
    }
    emit_plots(&dir, &summary.model, &summary.system, &reports)?;
    println!("plots -> {}", dir.display());
    Ok(())
}
