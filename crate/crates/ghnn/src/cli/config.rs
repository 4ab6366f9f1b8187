//! Experiment configuration: one TOML document drives dataset generation,
//! training, forecasting, and evaluation, so a stored config re-runs an
//! experiment identically.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::forecast;
use crate::models::ModelKind;
use crate::systems::{self, SystemSpec, TargetSource};
use crate::training::{Optimizer, TrainConfig};

use super::CliError;

/// Environment variable naming the directory experiment outputs default
/// into (each experiment gets a subdirectory named after it).
pub const OUTPUT_ROOT_VAR: &str = "GHNN_OUTPUT_ROOT";

/// The documented configuration schema, printed by `--print-schema`.
pub const SCHEMA: &str = r#"# Experiment configuration schema (TOML)
#
# Unknown keys are rejected. Every omitted key takes the default shown.

name = "experiment"            # required; names the output subdirectory
# output = "path/.."           # optional explicit output directory.
                               # Default: $GHNN_OUTPUT_ROOT/<name> if the
                               # variable is set, else runs/<name>.

[system]                       # required
kind = "lotka-volterra"        # lotka-volterra | elastic-pendulum | double-pendulum
alpha = 1.0                    # lotka-volterra: alpha, beta, gamma, delta
beta = 1.0
gamma = 1.0
delta = 1.0
# elastic-pendulum: m, g, k, l0
# double-pendulum:  m1, m2, l1, l2, g

[dataset]
n_traj = 20                    # trajectories to integrate (>= 1)
dt = 0.1                       # sampling interval (> 0)
t_end = 10.0                   # time span per trajectory (>= dt)
sigma = 0.0                    # additive Gaussian noise on states and targets (>= 0)
seed = 1                       # RNG seed for initial conditions and noise
targets = "exact-field"        # exact-field | finite-difference

[model]
kind = "ghnn"                  # nn | hnn | ghnn

[training]                     # all keys optional; defaults depend on model kind
# optimizer = "adam"           # sgd | adam
# learning_rate = 1e-3         # > 0
# lr_final = 0                 # anneal linearly down to this rate; 0 = constant
# batch_size = 256             # >= 1
# steps = 20000                # >= 1
# seed = 0                     # base seed; restart i trains with seed + i
# restarts = 10                # >= 1
# outlier_factor = 3.0         # kappa in the kappa x median survivor rule (> 1)
# gradient_clip = 10.0         # global-norm clip; 0 disables.
                               # Default: off for nn, 10.0 for hnn/ghnn.

[forecast]
# t_end = 20.0                 # horizon; default 20 (10 for double-pendulum)
step = 0.01                    # rollout step (> 0)
n_ics = 5                      # unseen initial conditions to sample (>= 1)
# ic_seed = 1001               # seed for unseen ICs; default dataset.seed + 1000
# ics = [[0.5, 1.5], ...]      # explicit initial conditions instead of sampling
"#;

fn default_n_traj() -> usize {
    20
}
fn default_dt() -> f64 {
    0.1
}
fn default_t_end() -> f64 {
    10.0
}
fn default_seed() -> u64 {
    1
}
fn default_targets() -> TargetSource {
    TargetSource::ExactField
}
fn default_step() -> f64 {
    forecast::DEFAULT_STEP
}
fn default_n_ics() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(default = "default_n_traj")]
    pub n_traj: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    #[serde(default)]
    pub sigma: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_targets")]
    pub targets: TargetSource,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            n_traj: default_n_traj(),
            dt: default_dt(),
            t_end: default_t_end(),
            sigma: 0.0,
            seed: default_seed(),
            targets: default_targets(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::Ghnn,
        }
    }
}

/// Training overrides; anything omitted falls back to the per-kind
/// defaults of [`TrainConfig::for_kind`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub optimizer: Option<Optimizer>,
    pub learning_rate: Option<f64>,
    /// Anneal the rate linearly down to this value at the last step;
    /// `0` (or omitted) keeps it constant.
    pub lr_final: Option<f64>,
    pub batch_size: Option<usize>,
    pub steps: Option<usize>,
    pub seed: Option<u64>,
    pub restarts: Option<usize>,
    pub outlier_factor: Option<f64>,
    /// `0` disables clipping; omitted keeps the family default.
    pub gradient_clip: Option<f64>,
}

impl TrainingConfig {
    pub fn resolve(&self, kind: ModelKind) -> TrainConfig {
        let mut config = TrainConfig::for_kind(kind);
        if let Some(o) = self.optimizer {
            config.optimizer = o;
        }
        if let Some(lr) = self.learning_rate {
            config.learning_rate = lr;
        }
        if let Some(end) = self.lr_final {
            config.lr_final = (end > 0.0).then_some(end);
        }
        if let Some(b) = self.batch_size {
            config.batch_size = b;
        }
        if let Some(s) = self.steps {
            config.steps = s;
        }
        if let Some(s) = self.seed {
            config.seed = s;
        }
        if let Some(r) = self.restarts {
            config.restarts = r;
        }
        if let Some(k) = self.outlier_factor {
            config.outlier_factor = k;
        }
        if let Some(c) = self.gradient_clip {
            config.gradient_clip = (c > 0.0).then_some(c);
        }
        config
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForecastConfig {
    /// Horizon; defaults to the per-system declared choice.
    pub t_end: Option<f64>,
    #[serde(default = "default_step")]
    pub step: f64,
    #[serde(default = "default_n_ics")]
    pub n_ics: usize,
    /// Seed for the unseen initial conditions; defaults to
    /// dataset.seed + 1000 so they never coincide with the training draws.
    pub ic_seed: Option<u64>,
    /// Explicit initial conditions; overrides sampling when present.
    pub ics: Option<Vec<Vec<f64>>>,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        ForecastConfig {
            t_end: None,
            step: default_step(),
            n_ics: default_n_ics(),
            ic_seed: None,
            ics: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub output: Option<PathBuf>,
    pub system: SystemSpec,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub forecast: ForecastConfig,
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Invalid(msg.into())
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid(format!("cannot read config {}: {e}", path.display())))?;
        let config: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| invalid(format!("config {}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.name.is_empty() || self.name.contains(std::path::is_separator) {
            return Err(invalid(
                "name must be a non-empty string without path separators",
            ));
        }
        let positive_params: &[(&str, f64)] = match self.system {
            SystemSpec::LotkaVolterra {
                alpha,
                beta,
                gamma,
                delta,
            } => &[
                ("system.alpha", alpha),
                ("system.beta", beta),
                ("system.gamma", gamma),
                ("system.delta", delta),
            ],
            SystemSpec::ElasticPendulum { m, g, k, l0 } => &[
                ("system.m", m),
                ("system.g", g),
                ("system.k", k),
                ("system.l0", l0),
            ],
            SystemSpec::DoublePendulum { m1, m2, l1, l2, g } => &[
                ("system.m1", m1),
                ("system.m2", m2),
                ("system.l1", l1),
                ("system.l2", l2),
                ("system.g", g),
            ],
        };
        for (field, value) in positive_params {
            if !(*value > 0.0) {
                return Err(invalid(format!("{field} must be positive, got {value}")));
            }
        }
        let d = &self.dataset;
        if d.n_traj < 1 {
            return Err(invalid("dataset.n_traj must be >= 1"));
        }
        if !(d.dt > 0.0) {
            return Err(invalid(format!("dataset.dt must be positive, got {}", d.dt)));
        }
        if d.t_end < d.dt {
            return Err(invalid(format!(
                "dataset.t_end must be at least dataset.dt, got {} < {}",
                d.t_end, d.dt
            )));
        }
        if !(d.sigma >= 0.0) {
            return Err(invalid(format!(
                "dataset.sigma must be non-negative, got {}",
                d.sigma
            )));
        }
        let t = &self.training;
        if let Some(lr) = t.learning_rate {
            if !(lr > 0.0) {
                return Err(invalid(format!(
                    "training.learning_rate must be positive, got {lr}"
                )));
            }
        }
        if let Some(end) = t.lr_final {
            if !(end >= 0.0) {
                return Err(invalid(format!(
                    "training.lr_final must be non-negative, got {end}"
                )));
            }
        }
        if t.batch_size == Some(0) {
            return Err(invalid("training.batch_size must be >= 1"));
        }
        if t.steps == Some(0) {
            return Err(invalid("training.steps must be >= 1"));
        }
        if t.restarts == Some(0) {
            return Err(invalid("training.restarts must be >= 1"));
        }
        if let Some(k) = t.outlier_factor {
            if !(k > 1.0) {
                return Err(invalid(format!(
                    "training.outlier_factor must exceed 1, got {k}"
                )));
            }
        }
        if let Some(c) = t.gradient_clip {
            if !(c >= 0.0) {
                return Err(invalid(format!(
                    "training.gradient_clip must be non-negative, got {c}"
                )));
            }
        }
        let f = &self.forecast;
        if !(f.step > 0.0) {
            return Err(invalid(format!(
                "forecast.step must be positive, got {}",
                f.step
            )));
        }
        let horizon = self.forecast_horizon();
        if horizon < f.step {
            return Err(invalid(format!(
                "forecast.t_end must be at least forecast.step, got {horizon} < {}",
                f.step
            )));
        }
        match &f.ics {
            Some(ics) => {
                if ics.is_empty() {
                    return Err(invalid("forecast.ics must not be empty when given"));
                }
                for (i, ic) in ics.iter().enumerate() {
                    if ic.len() != self.system.dim() {
                        return Err(invalid(format!(
                            "forecast.ics[{i}] has length {}, expected {}",
                            ic.len(),
                            self.system.dim()
                        )));
                    }
                    if !ic.iter().all(|c| c.is_finite()) {
                        return Err(invalid(format!("forecast.ics[{i}] must be finite")));
                    }
                }
            }
            None => {
                if f.n_ics < 1 {
                    return Err(invalid("forecast.n_ics must be >= 1"));
                }
            }
        }
        Ok(())
    }

    /// Output directory: explicit `output`, else `$GHNN_OUTPUT_ROOT/name`,
    /// else `runs/name`.
    pub fn output_dir(&self) -> PathBuf {
        if let Some(out) = &self.output {
            return out.clone();
        }
        match std::env::var(OUTPUT_ROOT_VAR) {
            Ok(root) if !root.is_empty() => PathBuf::from(root).join(&self.name),
            _ => PathBuf::from("runs").join(&self.name),
        }
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.output_dir().join("dataset")
    }

    pub fn model_dir(&self, kind: ModelKind) -> PathBuf {
        self.output_dir().join(kind.name())
    }

    pub fn forecast_horizon(&self) -> f64 {
        self.forecast
            .t_end
            .unwrap_or_else(|| forecast::default_horizon(&self.system))
    }

    /// The unseen initial conditions: the explicit list when present,
    /// otherwise `n_ics` fresh draws from the system's IC distribution
    /// under `ic_seed`.
    pub fn unseen_ics(&self) -> Vec<Vec<f64>> {
        if let Some(ics) = &self.forecast.ics {
            return ics.clone();
        }
        let seed = self
            .forecast
            .ic_seed
            .unwrap_or_else(|| self.dataset.seed.wrapping_add(1000));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        systems::sample_initial_conditions(&self.system, self.forecast.n_ics, &mut rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_toml() -> &'static str {
        r#"
            name = "probe"
            [system]
            kind = "lotka-volterra"
            alpha = 1.0
            beta = 1.0
            gamma = 1.0
            delta = 1.0
        "#
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let config: ExperimentConfig = toml::from_str(minimal_toml()).unwrap();
        config.validate().unwrap();
        assert_eq!(config.dataset.n_traj, 20);
        assert_eq!(config.dataset.dt, 0.1);
        assert_eq!(config.model.kind, ModelKind::Ghnn);
        assert_eq!(config.forecast.step, 0.01);
        assert_eq!(config.forecast_horizon(), 20.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let top_level = format!("not_a_key = 3\n{}", minimal_toml());
        assert!(toml::from_str::<ExperimentConfig>(&top_level).is_err());
        let in_section = format!("{}\n[dataset]\nnot_a_key = 3\n", minimal_toml());
        assert!(toml::from_str::<ExperimentConfig>(&in_section).is_err());
    }

    #[test]
    fn validation_names_the_offending_field() {
        let mut config: ExperimentConfig = toml::from_str(minimal_toml()).unwrap();
        config.dataset.n_traj = 0;
        let err = config.validate().unwrap_err();
        assert!(err.to_string().contains("n_traj"), "{err}");
        let mut config: ExperimentConfig = toml::from_str(minimal_toml()).unwrap();
        config.system = SystemSpec::LotkaVolterra {
            alpha: -1.0,
            beta: 1.0,
            gamma: 1.0,
            delta: 1.0,
        };
        let err = config.validate().unwrap_err();
        assert!(err.to_string().contains("system.alpha"), "{err}");
    }

    #[test]
    fn training_overrides_merge_with_family_defaults() {
        let mut config: ExperimentConfig = toml::from_str(minimal_toml()).unwrap();
        config.training.steps = Some(500);
        let hnn = config.training.resolve(ModelKind::Hnn);
        assert_eq!(hnn.steps, 500);
        assert_eq!(hnn.gradient_clip, Some(10.0));
        assert_eq!(hnn.learning_rate, 1e-3);
        config.training.gradient_clip = Some(0.0);
        let hnn = config.training.resolve(ModelKind::Hnn);
        assert_eq!(hnn.gradient_clip, None);
        assert_eq!(hnn.lr_final, None);
        config.training.lr_final = Some(2e-4);
        assert_eq!(config.training.resolve(ModelKind::Hnn).lr_final, Some(2e-4));
        config.training.lr_final = Some(0.0);
        assert_eq!(config.training.resolve(ModelKind::Hnn).lr_final, None);
    }

    #[test]
    fn config_round_trips_through_toml() {
        let config: ExperimentConfig = toml::from_str(minimal_toml()).unwrap();
        let text = toml::to_string(&config).unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(config, back);
    }

    #[test]
    fn unseen_ics_are_deterministic_and_in_domain() {
        let config: ExperimentConfig = toml::from_str(minimal_toml()).unwrap();
        let a = config.unseen_ics();
        let b = config.unseen_ics();
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
        for ic in &a {
            assert!(ic.iter().all(|&c| c > 0.0), "LV ICs must be positive");
        }
    }

    #[test]
    fn explicit_ics_must_match_the_system_dimension() {
        let mut config: ExperimentConfig = toml::from_str(minimal_toml()).unwrap();
        config.forecast.ics = Some(vec![vec![0.5, 1.5, 1.0]]);
        assert!(config.validate().is_err());
        config.forecast.ics = Some(vec![vec![0.5, 1.5]]);
        config.validate().unwrap();
        assert_eq!(config.unseen_ics(), vec![vec![0.5, 1.5]]);
    }

    #[test]
    fn schema_mentions_every_section() {
        for section in ["[system]", "[dataset]", "[model]", "[training]", "[forecast]"] {
            assert!(SCHEMA.contains(section), "schema is missing {section}");
        }
    }
}
