//! Ground-truth benchmark dynamics and dataset generation.
//!
//! Three conservative systems, each expressed in the coordinates an
//! experimenter would plausibly measure (which are *not* canonical):
//!
//! * Lotka-Volterra predator-prey populations (n₁, n₂) with the conserved
//!   pseudo-energy that fails to generate the raw-coordinate dynamics, plus
//!   the exponential map to coordinates where it *is* a Hamiltonian;
//! * an elastic pendulum in (ℓ, θ, ℓ̇, θ̇);
//! * a double pendulum in (θ₁, θ₂, θ̇₁, θ̇₂), restricted to librations.
//!
//! The pendulum equations of motion come from the Euler-Lagrange equations
//! of the stated Lagrangians; the test suite re-derives them independently
//! (finite-difference Euler-Lagrange residuals, and for the double pendulum
//! an autodiff-built mass-matrix solve) so the hand-derived forms are never
//! trusted on their own.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SystemError {
    #[error("population must be strictly positive, got ({0}, {1})")]
    NonPositivePopulation(f64, f64),
    #[error("pendulum length must be strictly positive, got {0}")]
    NonPositiveLength(f64),
    #[error("parameter {name} must be strictly positive, got {value}")]
    NonPositiveParameter { name: &'static str, value: f64 },
    #[error("state has length {got} but the system has dimension {expect}")]
    StateDimension { got: usize, expect: usize },
    #[error("operation only defined for {0}")]
    WrongSystem(&'static str),
    #[error("need at least 3 samples for finite differences, got {0}")]
    TooFewSamples(usize),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DatasetError {
    #[error("trajectory {index}: {source}")]
    Trajectory { index: usize, source: SystemError },
    #[error(transparent)]
    System(#[from] SystemError),
    #[error("dataset I/O: {0}")]
    Io(String),
    #[error("dataset table line {line}: {reason}")]
    Table { line: usize, reason: String },
    #[error("dataset manifest: {0}")]
    Manifest(String),
}

/// A benchmark system and its physical parameters. State layouts:
/// LV `(n₁, n₂)`, elastic pendulum `(ℓ, θ, ℓ̇, θ̇)`, double pendulum
/// `(θ₁, θ₂, θ̇₁, θ̇₂)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SystemSpec {
    LotkaVolterra {
        alpha: f64,
        beta: f64,
        gamma: f64,
        delta: f64,
    },
    ElasticPendulum {
        m: f64,
        g: f64,
        k: f64,
        l0: f64,
    },
    DoublePendulum {
        m1: f64,
        m2: f64,
        l1: f64,
        l2: f64,
        g: f64,
    },
}

impl SystemSpec {
    /// Unit-parameter Lotka-Volterra (α=β=γ=δ=1), the benchmark default.
    pub fn lv_unit() -> Self {
        SystemSpec::LotkaVolterra {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            delta: 1.0,
        }
    }

    /// Elastic pendulum with m=g=ℓ₀=1, k=4, the benchmark default.
    pub fn ep_default() -> Self {
        SystemSpec::ElasticPendulum {
            m: 1.0,
            g: 1.0,
            k: 4.0,
            l0: 1.0,
        }
    }

    /// Double pendulum with all parameters 1, the benchmark default.
    pub fn dp_unit() -> Self {
        SystemSpec::DoublePendulum {
            m1: 1.0,
            m2: 1.0,
            l1: 1.0,
            l2: 1.0,
            g: 1.0,
        }
    }

    /// Phase-space dimension.
    pub fn dim(&self) -> usize {
        match self {
            SystemSpec::LotkaVolterra { .. } => 2,
            SystemSpec::ElasticPendulum { .. } | SystemSpec::DoublePendulum { .. } => 4,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SystemSpec::LotkaVolterra { .. } => "lotka-volterra",
            SystemSpec::ElasticPendulum { .. } => "elastic-pendulum",
            SystemSpec::DoublePendulum { .. } => "double-pendulum",
        }
    }

    /// Check that every physical parameter is strictly positive.
    pub fn validate(&self) -> Result<(), SystemError> {
        let check = |name: &'static str, value: f64| {
            if value > 0.0 && value.is_finite() {
                Ok(())
            } else {
                Err(SystemError::NonPositiveParameter { name, value })
            }
        };
        match *self {
            SystemSpec::LotkaVolterra {
                alpha,
                beta,
                gamma,
                delta,
            } => {
                check("alpha", alpha)?;
                check("beta", beta)?;
                check("gamma", gamma)?;
                check("delta", delta)
            }
            SystemSpec::ElasticPendulum { m, g, k, l0 } => {
                check("m", m)?;
                check("g", g)?;
                check("k", k)?;
                check("l0", l0)
            }
            SystemSpec::DoublePendulum { m1, m2, l1, l2, g } => {
                check("m1", m1)?;
                check("m2", m2)?;
                check("l1", l1)?;
                check("l2", l2)?;
                check("g", g)
            }
        }
    }

    fn check_state(&self, r: &[f64]) -> Result<(), SystemError> {
        if r.len() != self.dim() {
            return Err(SystemError::StateDimension {
                got: r.len(),
                expect: self.dim(),
            });
        }
        Ok(())
    }

    /// Time derivative ṙ of the state.
    pub fn vector_field(&self, r: &[f64]) -> Result<Vec<f64>, SystemError> {
        self.check_state(r)?;
        match *self {
            SystemSpec::LotkaVolterra {
                alpha,
                beta,
                gamma,
                delta,
            } => {
                let (n1, n2) = (r[0], r[1]);
                if n1 <= 0.0 || n2 <= 0.0 {
                    return Err(SystemError::NonPositivePopulation(n1, n2));
                }
                Ok(vec![
                    alpha * n1 - beta * n1 * n2,
                    -gamma * n2 + delta * n1 * n2,
                ])
            }
            SystemSpec::ElasticPendulum { m, g, k, l0 } => {
                let (l, th, ld, thd) = (r[0], r[1], r[2], r[3]);
                if l <= 0.0 {
                    return Err(SystemError::NonPositiveLength(l));
                }
                // Euler-Lagrange of L = ½m(ℓ̇² + ℓ²θ̇²) + mgℓcosθ − ½k(ℓ−ℓ₀)².
                let ldd = l * thd * thd + g * th.cos() - (k / m) * (l - l0);
                let thdd = -(g * th.sin() + 2.0 * ld * thd) / l;
                Ok(vec![ld, thd, ldd, thdd])
            }
            SystemSpec::DoublePendulum { m1, m2, l1, l2, g } => {
                let (t1, t2, w1, w2) = (r[0], r[1], r[2], r[3]);
                let (s, c) = (t1 - t2).sin_cos();
                // Mass-matrix form of the Euler-Lagrange equations:
                // M(θ)·(θ̈₁, θ̈₂) = f(θ, θ̇), with M symmetric positive
                // definite for real angles, so the 2×2 solve never fails.
                let m11 = (m1 + m2) * l1 * l1;
                let m12 = m2 * l1 * l2 * c;
                let m22 = m2 * l2 * l2;
                let f1 = -(m1 + m2) * g * l1 * t1.sin() - m2 * l1 * l2 * w2 * w2 * s;
                let f2 = m2 * l1 * l2 * w1 * w1 * s - m2 * g * l2 * t2.sin();
                let det = m11 * m22 - m12 * m12;
                let a1 = (m22 * f1 - m12 * f2) / det;
                let a2 = (m11 * f2 - m12 * f1) / det;
                Ok(vec![w1, w2, a1, a2])
            }
        }
    }

    /// The conserved quantity tracked in every experiment: total energy for
    /// the pendulums, the pseudo-energy for Lotka-Volterra.
    pub fn energy(&self, r: &[f64]) -> Result<f64, SystemError> {
        self.check_state(r)?;
        match *self {
            SystemSpec::LotkaVolterra {
                alpha,
                beta,
                gamma,
                delta,
            } => {
                let (n1, n2) = (r[0], r[1]);
                if n1 <= 0.0 || n2 <= 0.0 {
                    return Err(SystemError::NonPositivePopulation(n1, n2));
                }
                Ok(alpha * n2.ln() - beta * n2 + gamma * n1.ln() - delta * n1)
            }
            SystemSpec::ElasticPendulum { m, g, k, l0 } => {
                let (l, th, ld, thd) = (r[0], r[1], r[2], r[3]);
                if l <= 0.0 {
                    return Err(SystemError::NonPositiveLength(l));
                }
                Ok(0.5 * m * (ld * ld + l * l * thd * thd) - m * g * l * th.cos()
                    + 0.5 * k * (l - l0) * (l - l0))
            }
            SystemSpec::DoublePendulum { m1, m2, l1, l2, g } => {
                let (t1, t2, w1, w2) = (r[0], r[1], r[2], r[3]);
                let c = (t1 - t2).cos();
                let kinetic = 0.5 * (m1 + m2) * l1 * l1 * w1 * w1
                    + 0.5 * m2 * l2 * l2 * w2 * w2
                    + m2 * l1 * l2 * w1 * w2 * c;
                let potential = -(m1 + m2) * g * l1 * t1.cos() - m2 * g * l2 * t2.cos();
                Ok(kinetic + potential)
            }
        }
    }

    /// Lotka-Volterra only: the exponential change of variables
    /// Q = log n₁, P = log n₂ and the Hamiltonian that generates the
    /// dynamics there. Validation and sanity suites only — never used to
    /// train the transform-learning model.
    pub fn canonical_oracle(&self, r: &[f64]) -> Result<(f64, f64, f64), SystemError> {
        let SystemSpec::LotkaVolterra {
            alpha,
            beta,
            gamma,
            delta,
        } = *self
        else {
            return Err(SystemError::WrongSystem("lotka-volterra"));
        };
        self.check_state(r)?;
        let (n1, n2) = (r[0], r[1]);
        if n1 <= 0.0 || n2 <= 0.0 {
            return Err(SystemError::NonPositivePopulation(n1, n2));
        }
        let q = n1.ln();
        let p = n2.ln();
        let h = alpha * p - beta * p.exp() + gamma * q - delta * q.exp();
        Ok((q, p, h))
    }

    /// Conjugate momenta ∂L/∂q̇ for the pendulum systems — deliberately not
    /// "mass times velocity". Validation oracle only.
    pub fn conjugate_momenta(&self, r: &[f64]) -> Result<Vec<f64>, SystemError> {
        self.check_state(r)?;
        match *self {
            SystemSpec::LotkaVolterra { .. } => Err(SystemError::WrongSystem("a pendulum system")),
            SystemSpec::ElasticPendulum { m, .. } => {
                let (l, ld, thd) = (r[0], r[2], r[3]);
                if l <= 0.0 {
                    return Err(SystemError::NonPositiveLength(l));
                }
                Ok(vec![m * ld, m * l * l * thd])
            }
            SystemSpec::DoublePendulum {
                m1, m2, l1, l2, ..
            } => {
                let (t1, t2, w1, w2) = (r[0], r[1], r[2], r[3]);
                let c = (t1 - t2).cos();
                Ok(vec![
                    (m1 + m2) * l1 * l1 * w1 + m2 * l1 * l2 * w2 * c,
                    m2 * l2 * l2 * w2 + m2 * l1 * l2 * w1 * c,
                ])
            }
        }
    }
}

/// One classical Runge-Kutta step of size `h`. Generic over the field's
/// error type so learned fields can reuse it.
pub fn rk4_step<E>(
    field: &mut impl FnMut(&[f64]) -> Result<Vec<f64>, E>,
    y: &[f64],
    h: f64,
) -> Result<Vec<f64>, E> {
    let k1 = field(y)?;
    let mid1: Vec<f64> = y.iter().zip(&k1).map(|(a, k)| a + 0.5 * h * k).collect();
    let k2 = field(&mid1)?;
    let mid2: Vec<f64> = y.iter().zip(&k2).map(|(a, k)| a + 0.5 * h * k).collect();
    let k3 = field(&mid2)?;
    let end: Vec<f64> = y.iter().zip(&k3).map(|(a, k)| a + h * k).collect();
    let k4 = field(&end)?;
    Ok(y.iter()
        .enumerate()
        .map(|(i, a)| a + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

/// Substeps of the internal integration grid per sampling interval.
pub const SUBSTEPS_PER_SAMPLE: usize = 100;

/// Integrate from `ic` over `[0, t_end]`, sampling every `dt` while
/// stepping internally at `dt / SUBSTEPS_PER_SAMPLE`. Returns one state per
/// sample time `k·dt`, the initial state included.
pub fn integrate_sampled(
    spec: &SystemSpec,
    ic: &[f64],
    t_end: f64,
    dt: f64,
) -> Result<Vec<Vec<f64>>, SystemError> {
    let n_samples = (t_end / dt).round() as usize + 1;
    let h = dt / SUBSTEPS_PER_SAMPLE as f64;
    let mut field = |y: &[f64]| spec.vector_field(y);
    let mut states = Vec::with_capacity(n_samples);
    let mut y = ic.to_vec();
    spec.check_state(ic)?;
    states.push(y.clone());
    for _ in 1..n_samples {
        for _ in 0..SUBSTEPS_PER_SAMPLE {
            y = rk4_step(&mut field, &y, h)?;
        }
        states.push(y.clone());
    }
    Ok(states)
}

/// Where the training targets ṙ come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetSource {
    /// Evaluate the true vector field at each sample state.
    ExactField,
    /// Finite-difference the (possibly noisy) sampled states — the
    /// observation-only pipeline.
    FiniteDifference,
}

/// One sampled trajectory: uniform times, states, and derivative targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// The clean initial condition handed to the integrator.
    pub initial: Vec<f64>,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

/// A full training corpus plus the provenance needed to regenerate it.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    pub system: SystemSpec,
    pub dt: f64,
    pub t_end: f64,
    pub sigma: f64,
    pub seed: u64,
    pub target_source: TargetSource,
    pub trajectories: Vec<Trajectory>,
}

/// Serialized header of a dataset; the numeric table lives beside it.
#[derive(Debug, Serialize, Deserialize)]
struct DatasetManifest {
    system: SystemSpec,
    dt: f64,
    t_end: f64,
    sigma: f64,
    seed: u64,
    target_source: TargetSource,
    n_trajectories: usize,
    samples_per_trajectory: usize,
    initial_conditions: Vec<Vec<f64>>,
    columns: Vec<String>,
}

impl TrajectoryDataset {
    /// Total number of (state, target) samples across all trajectories.
    pub fn n_samples(&self) -> usize {
        self.trajectories.iter().map(|t| t.states.len()).sum()
    }

    pub fn dim(&self) -> usize {
        self.system.dim()
    }

    /// All (state, target) pairs in trajectory order.
    pub fn samples(&self) -> impl Iterator<Item = (&[f64], &[f64])> {
        self.trajectories.iter().flat_map(|t| {
            t.states
                .iter()
                .zip(&t.targets)
                .map(|(s, d)| (s.as_slice(), d.as_slice()))
        })
    }

    fn columns(&self) -> Vec<String> {
        let d = self.dim();
        let mut cols = vec!["traj_id".to_string(), "t".to_string()];
        cols.extend((0..d).map(|i| format!("r{i}")));
        cols.extend((0..d).map(|i| format!("rdot{i}")));
        cols
    }

    /// Write `manifest.json` and `table.csv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), DatasetError> {
        std::fs::create_dir_all(dir).map_err(|e| DatasetError::Io(e.to_string()))?;
        let manifest = DatasetManifest {
            system: self.system,
            dt: self.dt,
            t_end: self.t_end,
            sigma: self.sigma,
            seed: self.seed,
            target_source: self.target_source,
            n_trajectories: self.trajectories.len(),
            samples_per_trajectory: self
                .trajectories
                .first()
                .map_or(0, |t| t.states.len()),
            initial_conditions: self.trajectories.iter().map(|t| t.initial.clone()).collect(),
            columns: self.columns(),
        };
        let json = serde_json::to_string_pretty(&manifest)
            .map_err(|e| DatasetError::Manifest(e.to_string()))?;
        crate::write_atomic(&dir.join("manifest.json"), json.as_bytes())
            .map_err(|e| DatasetError::Io(e.to_string()))?;

        let mut table = String::new();
        writeln!(table, "{}", self.columns().join(",")).unwrap();
        for (id, traj) in self.trajectories.iter().enumerate() {
            for ((t, state), target) in traj.times.iter().zip(&traj.states).zip(&traj.targets) {
                write!(table, "{id},{t:.16e}").unwrap();
                for v in state.iter().chain(target) {
                    write!(table, ",{v:.16e}").unwrap();
                }
                table.push('\n');
            }
        }
        crate::write_atomic(&dir.join("table.csv"), table.as_bytes())
            .map_err(|e| DatasetError::Io(e.to_string()))
    }

    /// Read a dataset saved by [`TrajectoryDataset::save`].
    pub fn load(dir: &Path) -> Result<Self, DatasetError> {
        let json = std::fs::read_to_string(dir.join("manifest.json"))
            .map_err(|e| DatasetError::Io(e.to_string()))?;
        let manifest: DatasetManifest =
            serde_json::from_str(&json).map_err(|e| DatasetError::Manifest(e.to_string()))?;
        let d = manifest.system.dim();
        let table = std::fs::read_to_string(dir.join("table.csv"))
            .map_err(|e| DatasetError::Io(e.to_string()))?;
        let mut trajectories: Vec<Trajectory> = manifest
            .initial_conditions
            .iter()
            .map(|ic| Trajectory {
                initial: ic.clone(),
                times: Vec::new(),
                states: Vec::new(),
                targets: Vec::new(),
            })
            .collect();
        for (lineno, line) in table.lines().enumerate().skip(1) {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 2 + 2 * d {
                return Err(DatasetError::Table {
                    line: lineno + 1,
                    reason: format!("expected {} fields, got {}", 2 + 2 * d, fields.len()),
                });
            }
            let bad = |tok: &str| DatasetError::Table {
                line: lineno + 1,
                reason: format!("bad number `{tok}`"),
            };
            let id: usize = fields[0].parse().map_err(|_| bad(fields[0]))?;
            if id >= trajectories.len() {
                return Err(DatasetError::Table {
                    line: lineno + 1,
                    reason: format!("trajectory id {id} out of range"),
                });
            }
            let mut nums = Vec::with_capacity(1 + 2 * d);
            for tok in &fields[1..] {
                nums.push(tok.parse::<f64>().map_err(|_| bad(tok))?);
            }
            let traj = &mut trajectories[id];
            traj.times.push(nums[0]);
            traj.states.push(nums[1..1 + d].to_vec());
            traj.targets.push(nums[1 + d..1 + 2 * d].to_vec());
        }
        Ok(TrajectoryDataset {
            system: manifest.system,
            dt: manifest.dt,
            t_end: manifest.t_end,
            sigma: manifest.sigma,
            seed: manifest.seed,
            target_source: manifest.target_source,
            trajectories,
        })
    }
}

/// Draw `n` initial conditions from the per-system default distributions:
/// LV log-uniform populations in [0.3, 3]; elastic pendulum ℓ ∈ [0.8, 1.6],
/// θ ∈ [−1, 1], released from rest; double pendulum angles in [−0.8, 0.8]
/// from rest, rejecting candidates energetic enough to lift the outer bob
/// to horizontal (E ≥ −(m₁+m₂)gℓ₁), which keeps the motion librational.
pub fn sample_initial_conditions(
    spec: &SystemSpec,
    n: usize,
    rng: &mut impl Rng,
) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| match *spec {
            SystemSpec::LotkaVolterra { .. } => {
                let lo = 0.3f64.ln();
                let hi = 3.0f64.ln();
                vec![
                    rng.random_range(lo..hi).exp(),
                    rng.random_range(lo..hi).exp(),
                ]
            }
            SystemSpec::ElasticPendulum { .. } => vec![
                rng.random_range(0.8..1.6),
                rng.random_range(-1.0..1.0),
                0.0,
                0.0,
            ],
            SystemSpec::DoublePendulum { m1, m2, l1, g, .. } => loop {
                let ic = vec![
                    rng.random_range(-0.8..0.8),
                    rng.random_range(-0.8..0.8),
                    0.0,
                    0.0,
                ];
                let threshold = -(m1 + m2) * g * l1;
                if spec.energy(&ic).expect("rest state is in-domain") < threshold {
                    break ic;
                }
            },
        })
        .collect()
}

/// Generate a dataset from explicitly supplied initial conditions.
/// Derivative targets are exact field evaluations at the clean sample
/// states unless `target_source` asks for finite differences, in which case
/// they are differenced from the stored (noisy when σ > 0) states — the
/// observation-only pipeline. Gaussian noise of standard deviation σ is
/// added to states, and to exact-field targets, when σ > 0.
pub fn generate_from_ics(
    spec: &SystemSpec,
    ics: &[Vec<f64>],
    t_end: f64,
    dt: f64,
    sigma: f64,
    seed: u64,
    target_source: TargetSource,
) -> Result<TrajectoryDataset, DatasetError> {
    spec.validate()?;
    let mut trajectories = Vec::with_capacity(ics.len());
    for (index, ic) in ics.iter().enumerate() {
        let wrap = |source: SystemError| DatasetError::Trajectory { index, source };
        let clean = integrate_sampled(spec, ic, t_end, dt).map_err(wrap)?;
        let times: Vec<f64> = (0..clean.len()).map(|k| k as f64 * dt).collect();
        // Exact targets are computed at the clean states regardless of σ:
        // noise is measurement error, applied after the physics.
        let exact: Vec<Vec<f64>> = clean
            .iter()
            .map(|s| spec.vector_field(s).map_err(wrap))
            .collect::<Result<_, _>>()?;
        // Per-trajectory noise stream, so generation order is irrelevant.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1 + index as u64);
        let normal = Normal::new(0.0, sigma).expect("sigma validated by caller");
        let mut states = clean;
        let mut targets = exact;
        if sigma > 0.0 {
            for s in states.iter_mut().flatten() {
                *s += normal.sample(&mut rng);
            }
            if target_source == TargetSource::ExactField {
                for t in targets.iter_mut().flatten() {
                    *t += normal.sample(&mut rng);
                }
            }
        }
        if target_source == TargetSource::FiniteDifference {
            targets = finite_difference_derivatives(&states, dt).map_err(wrap)?;
        }
        trajectories.push(Trajectory {
            initial: ic.clone(),
            times,
            states,
            targets,
        });
    }
    Ok(TrajectoryDataset {
        system: *spec,
        dt,
        t_end,
        sigma,
        seed,
        target_source,
        trajectories,
    })
}

/// Generate `n_traj` trajectories with initial conditions drawn from the
/// system's default distribution. Deterministic in `seed`.
pub fn generate_dataset(
    spec: &SystemSpec,
    n_traj: usize,
    t_end: f64,
    dt: f64,
    sigma: f64,
    seed: u64,
    target_source: TargetSource,
) -> Result<TrajectoryDataset, DatasetError> {
    spec.validate()?;
    // Stream 0 is reserved for initial conditions; noise uses 1 + index.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    let ics = sample_initial_conditions(spec, n_traj, &mut rng);
    generate_from_ics(spec, &ics, t_end, dt, sigma, seed, target_source)
}

/// Second-order finite differences of a uniformly sampled series: central
/// in the interior, one-sided three-point stencils at the ends.
pub fn finite_difference_derivatives(
    states: &[Vec<f64>],
    dt: f64,
) -> Result<Vec<Vec<f64>>, SystemError> {
    let n = states.len();
    if n < 3 {
        return Err(SystemError::TooFewSamples(n));
    }
    let d = states[0].len();
    let mut out = vec![vec![0.0; d]; n];
    for j in 0..d {
        out[0][j] = (-3.0 * states[0][j] + 4.0 * states[1][j] - states[2][j]) / (2.0 * dt);
        for k in 1..n - 1 {
            out[k][j] = (states[k + 1][j] - states[k - 1][j]) / (2.0 * dt);
        }
        out[n - 1][j] =
            (3.0 * states[n - 1][j] - 4.0 * states[n - 2][j] + states[n - 3][j]) / (2.0 * dt);
    }
    Ok(out)
}
