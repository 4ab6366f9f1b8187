//! The three learnable model families and their losses.
//!
//! * **NN** — a direct regression of the vector field: ṙ ≈ v_w(r).
//! * **HNN** — a scalar network H_w over phase space; the field is the
//!   symplectic gradient S∇H, so the *learned flow* conserves H_w exactly
//!   by construction, whatever training did.
//! * **gHNN** — a transform network R(r) feeding a Hamiltonian network
//!   H_w(R); the field in the observed coordinates is J⁻¹S∇_R H with
//!   J = ∂R/∂r, trained end-to-end through the Jacobian solve.
//!
//! Each loss is recorded on the autodiff tape, so the input-gradients it
//! contains (∇_R H, and the elimination steps of the J-solve) stay
//! differentiable with respect to every weight. The `*_numeric` field
//! evaluators are tape-free fast paths for forecasting; unit tests pin them
//! to the recorded versions.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::autodiff::{AdError, Tape, Var};
use crate::linalg::{self, Mat};
use crate::mlp::{ArchitectureSpec, Mlp, MlpError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("state has length {got} but the model expects {expect}")]
    Dimension { got: usize, expect: usize },
    #[error("singular Jacobian (condition estimate {condition:.3e})")]
    SingularJacobian { condition: f64 },
    #[error("batch exhausted by singular Jacobians ({skipped} samples skipped)")]
    BatchExhausted { skipped: usize },
    #[error("policy regularization must satisfy 0 ≤ ε < 1e-3, got {0}")]
    BadEpsilon(f64),
    #[error(transparent)]
    Network(#[from] MlpError),
    #[error(transparent)]
    Autodiff(#[from] AdError),
    #[error(transparent)]
    Linalg(#[from] linalg::LinalgError),
    #[error("checkpoint parse error at line {line}: {reason}")]
    Checkpoint { line: usize, reason: String },
    #[error("checkpoint I/O: {0}")]
    Io(String),
}

/// The block matrix S = [[0, I], [−I, 0]] in (Q, P) block order, applied
/// without ever materializing the zeros: S·(a, b) = (b, −a).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SymplecticMatrix {
    d: usize,
}

impl SymplecticMatrix {
    pub fn new(d: usize) -> Result<Self, ModelError> {
        if d == 0 || d % 2 != 0 {
            return Err(ModelError::Network(MlpError::OddDimension(d)));
        }
        Ok(SymplecticMatrix { d })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn apply_numeric(&self, v: &[f64]) -> Vec<f64> {
        let half = self.d / 2;
        let mut out = Vec::with_capacity(self.d);
        out.extend_from_slice(&v[half..]);
        out.extend(v[..half].iter().map(|x| -x));
        out
    }

    pub fn apply_vars<'t>(&self, v: &[Var<'t>]) -> Vec<Var<'t>> {
        let half = self.d / 2;
        let mut out = Vec::with_capacity(self.d);
        out.extend_from_slice(&v[half..]);
        out.extend(v[..half].iter().map(|&x| -x));
        out
    }

    /// Dense form, for the structural identities in tests.
    pub fn dense(&self) -> Mat {
        let half = self.d / 2;
        let mut m = vec![vec![0.0; self.d]; self.d];
        for i in 0..half {
            m[i][half + i] = 1.0;
            m[half + i][i] = -1.0;
        }
        m
    }
}

/// How a gHNN turns S∇_R H back into observed-coordinate velocities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InverseMode {
    /// LU solve; reject Jacobians whose condition estimate exceeds 1/ε.
    ExactSolve,
    /// SVD pseudo-inverse with singular values below ε·σ_max dropped.
    /// Numeric only: gradients do not flow through the truncated inverse.
    PseudoInverse,
}

/// What to do when a sample's Jacobian fails the active inverse mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureAction {
    Error,
    SkipSample,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JacobianInversePolicy {
    pub mode: InverseMode,
    pub epsilon: f64,
    pub on_failure: FailureAction,
    /// Record the J-solve on the tape so weight-gradients flow through the
    /// inverse (the d(J⁻¹) = −J⁻¹ dJ J⁻¹ path). Only honoured in
    /// [`InverseMode::ExactSolve`]; the truncated SVD is not differentiated.
    pub through_inverse: bool,
}

impl JacobianInversePolicy {
    pub fn new(
        mode: InverseMode,
        epsilon: f64,
        on_failure: FailureAction,
    ) -> Result<Self, ModelError> {
        if !(0.0..1e-3).contains(&epsilon) {
            return Err(ModelError::BadEpsilon(epsilon));
        }
        Ok(JacobianInversePolicy {
            mode,
            epsilon,
            on_failure,
            through_inverse: true,
        })
    }

    /// Training default: exact solve, ε = 1e-10, skip bad samples.
    pub fn training_default() -> Self {
        Self::new(InverseMode::ExactSolve, 1e-10, FailureAction::SkipSample).unwrap()
    }

    /// Forecasting default: as training, but a singular Jacobian is an
    /// error, which the rollout reports as divergence.
    pub fn forecast_default() -> Self {
        Self::new(InverseMode::ExactSolve, 1e-10, FailureAction::Error).unwrap()
    }
}

impl Default for JacobianInversePolicy {
    fn default() -> Self {
        Self::training_default()
    }
}

/// Invert a Jacobian under the active policy (numeric path).
pub fn invert_jacobian(j: &[Vec<f64>], policy: &JacobianInversePolicy) -> Result<Mat, ModelError> {
    match policy.mode {
        InverseMode::ExactSolve => {
            let inv = linalg::invert(j).map_err(|_| ModelError::SingularJacobian {
                condition: f64::INFINITY,
            })?;
            let condition = linalg::norm1(j) * linalg::norm1(&inv);
            if condition > 1.0 / policy.epsilon {
                return Err(ModelError::SingularJacobian { condition });
            }
            Ok(inv)
        }
        InverseMode::PseudoInverse => Ok(linalg::pinv(j, policy.epsilon)?),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Nn,
    Hnn,
    Ghnn,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Nn => "nn",
            ModelKind::Hnn => "hnn",
            ModelKind::Ghnn => "ghnn",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "nn" => Ok(ModelKind::Nn),
            "hnn" => Ok(ModelKind::Hnn),
            "ghnn" => Ok(ModelKind::Ghnn),
            other => Err(format!("unknown model kind `{other}`")),
        }
    }
}

/// A trainable model: kind plus its network(s).
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Nn { net: Mlp },
    Hnn { net: Mlp },
    Ghnn { transform: Mlp, hamiltonian: Mlp },
}

/// Seed offset separating a gHNN's two sub-network initializations.
const HAMILTONIAN_SEED_OFFSET: u64 = 0x9E37_79B9_7F4A_7C15;

impl Model {
    /// Standard-architecture model for phase dimension `d`, §-catalogue
    /// shapes: NN d:50:50:d, HNN d:200:200:1, gHNN both.
    pub fn init(kind: ModelKind, d: usize, seed: u64) -> Result<Self, ModelError> {
        Ok(match kind {
            ModelKind::Nn => Model::Nn {
                net: Mlp::init(ArchitectureSpec::Dynamics { d }, seed)?,
            },
            ModelKind::Hnn => Model::Hnn {
                net: Mlp::init(ArchitectureSpec::Hamiltonian { d }, seed)?,
            },
            ModelKind::Ghnn => Model::Ghnn {
                transform: Mlp::init(ArchitectureSpec::Transform { d }, seed)?,
                hamiltonian: Mlp::init(
                    ArchitectureSpec::Hamiltonian { d },
                    seed.wrapping_add(HAMILTONIAN_SEED_OFFSET),
                )?,
            },
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Nn { .. } => ModelKind::Nn,
            Model::Hnn { .. } => ModelKind::Hnn,
            Model::Ghnn { .. } => ModelKind::Ghnn,
        }
    }

    /// Phase-space dimension the model consumes.
    pub fn dim(&self) -> usize {
        match self {
            Model::Nn { net } | Model::Hnn { net } => net.input_dim(),
            Model::Ghnn { transform, .. } => transform.input_dim(),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Model::Nn { net } | Model::Hnn { net } => net.param_count(),
            Model::Ghnn {
                transform,
                hamiltonian,
            } => transform.param_count() + hamiltonian.param_count(),
        }
    }

    /// All parameters, gHNN transform first.
    pub fn params_flat(&self) -> Vec<f64> {
        match self {
            Model::Nn { net } | Model::Hnn { net } => net.params().to_vec(),
            Model::Ghnn {
                transform,
                hamiltonian,
            } => {
                let mut p = transform.params().to_vec();
                p.extend_from_slice(hamiltonian.params());
                p
            }
        }
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) {
        match self {
            Model::Nn { net } | Model::Hnn { net } => net.set_params(flat),
            Model::Ghnn {
                transform,
                hamiltonian,
            } => {
                let split = transform.param_count();
                transform.set_params(&flat[..split]);
                hamiltonian.set_params(&flat[split..]);
            }
        }
    }

    /// Register all parameters as tape leaves, in `params_flat` order.
    pub fn stage<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        match self {
            Model::Nn { net } | Model::Hnn { net } => net.stage(tape),
            Model::Ghnn {
                transform,
                hamiltonian,
            } => {
                let mut staged = transform.stage(tape);
                staged.extend(hamiltonian.stage(tape));
                staged
            }
        }
    }

    /// Learned vector field at `r`, tape-free.
    pub fn field_numeric(
        &self,
        r: &[f64],
        policy: &JacobianInversePolicy,
    ) -> Result<Vec<f64>, ModelError> {
        match self {
            Model::Nn { net } => Ok(net.forward_numeric(r)?),
            Model::Hnn { net } => hnn_field_numeric(net, r),
            Model::Ghnn {
                transform,
                hamiltonian,
            } => ghnn_field_numeric(transform, hamiltonian, r, policy),
        }
    }

    /// The learned conserved quantity, where the family has one: H_w(r)
    /// for an HNN, H_w(R(r)) for a gHNN.
    pub fn learned_energy(&self, r: &[f64]) -> Result<Option<f64>, ModelError> {
        match self {
            Model::Nn { .. } => Ok(None),
            Model::Hnn { net } => Ok(Some(net.forward_numeric(r)?[0])),
            Model::Ghnn {
                transform,
                hamiltonian,
            } => {
                let latent = transform.forward_numeric(r)?;
                Ok(Some(hamiltonian.forward_numeric(&latent)?[0]))
            }
        }
    }

    /// Condition estimate of the transform Jacobian at `r` (gHNN only).
    pub fn jacobian_condition(&self, r: &[f64]) -> Result<Option<f64>, ModelError> {
        match self {
            Model::Ghnn { transform, .. } => {
                let j = transform.input_jacobian_numeric(r)?;
                Ok(Some(linalg::condition_1norm(&j)))
            }
            _ => Ok(None),
        }
    }

    /// Batch loss on the tape. `staged` must come from [`Model::stage`] on
    /// the same tape and parameter values.
    pub fn loss<'t>(
        &self,
        tape: &'t Tape,
        staged: &[Var<'t>],
        batch: &[(&[f64], &[f64])],
        policy: &JacobianInversePolicy,
    ) -> Result<Var<'t>, ModelError> {
        match self {
            Model::Nn { net } => nn_loss(tape, net, staged, batch),
            Model::Hnn { net } => hnn_loss(tape, net, staged, batch),
            Model::Ghnn {
                transform,
                hamiltonian,
            } => {
                let split = transform.param_count();
                ghnn_loss(
                    tape,
                    transform,
                    hamiltonian,
                    &staged[..split],
                    &staged[split..],
                    batch,
                    policy,
                )
            }
        }
    }

    /// Write a checkpoint file (single network, or both for a gHNN).
    pub fn save(&self, path: &Path, seed: u64) -> Result<(), ModelError> {
        let mut out = String::new();
        writeln!(out, "ghnn-checkpoint v1").unwrap();
        writeln!(out, "kind {}", self.kind().name()).unwrap();
        writeln!(out, "seed {seed}").unwrap();
        match self {
            Model::Nn { net } | Model::Hnn { net } => net.write_block(&mut out),
            Model::Ghnn {
                transform,
                hamiltonian,
            } => {
                writeln!(out, "net transform").unwrap();
                transform.write_block(&mut out);
                writeln!(out, "net hamiltonian").unwrap();
                hamiltonian.write_block(&mut out);
            }
        }
        crate::write_atomic(path, out.as_bytes()).map_err(|e| ModelError::Io(e.to_string()))
    }

    /// Read a checkpoint written by [`Model::save`].
    pub fn load(path: &Path) -> Result<(Self, u64), ModelError> {
        let text = std::fs::read_to_string(path).map_err(|e| ModelError::Io(e.to_string()))?;
        let mut lines = text.lines();
        let mut lineno = 0usize;
        take_line(&mut lines, &mut lineno, "ghnn-checkpoint v1")?;
        let kind_str = take_line(&mut lines, &mut lineno, "kind ")?;
        let kind: ModelKind = kind_str.parse().map_err(|reason| ModelError::Checkpoint {
            line: lineno,
            reason,
        })?;
        let seed_str = take_line(&mut lines, &mut lineno, "seed ")?;
        let seed: u64 = seed_str.parse().map_err(|_| ModelError::Checkpoint {
            line: lineno,
            reason: format!("bad seed `{seed_str}`"),
        })?;
        let model = match kind {
            ModelKind::Nn => Model::Nn {
                net: Mlp::read_block(&mut lines, &mut lineno)?,
            },
            ModelKind::Hnn => Model::Hnn {
                net: Mlp::read_block(&mut lines, &mut lineno)?,
            },
            ModelKind::Ghnn => {
                take_line(&mut lines, &mut lineno, "net transform")?;
                let transform = Mlp::read_block(&mut lines, &mut lineno)?;
                take_line(&mut lines, &mut lineno, "net hamiltonian")?;
                let hamiltonian = Mlp::read_block(&mut lines, &mut lineno)?;
                Model::Ghnn {
                    transform,
                    hamiltonian,
                }
            }
        };
        Ok((model, seed))
    }
}

fn take_line(
    lines: &mut std::str::Lines<'_>,
    lineno: &mut usize,
    prefix: &str,
) -> Result<String, ModelError> {
    *lineno += 1;
    let got = lines.next().ok_or(ModelError::Checkpoint {
        line: *lineno,
        reason: "unexpected end of checkpoint".into(),
    })?;
    got.strip_prefix(prefix)
        .map(|rest| rest.trim().to_string())
        .ok_or_else(|| ModelError::Checkpoint {
            line: *lineno,
            reason: format!("expected `{prefix}…`, got `{got}`"),
        })
}

fn check_batch(batch: &[(&[f64], &[f64])], d: usize) -> Result<(), ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    for (r, rdot) in batch {
        if r.len() != d || rdot.len() != d {
            return Err(ModelError::Dimension {
                got: r.len().max(rdot.len()),
                expect: d,
            });
        }
    }
    Ok(())
}

/// Sum of squared components of `target − field`, as a tape node.
fn squared_residual<'t>(tape: &'t Tape, field: &[Var<'t>], target: &[f64]) -> Var<'t> {
    let terms: Vec<Var> = field
        .iter()
        .zip(target)
        .map(|(&f, &t)| (tape.constant(t) - f).square())
        .collect();
    tape.sum(&terms)
}

/// Mean of per-sample losses.
fn batch_mean<'t>(tape: &'t Tape, per_sample: &[Var<'t>]) -> Var<'t> {
    tape.sum(per_sample) * tape.constant(1.0 / per_sample.len() as f64)
}

/// Direct-regression loss: mean over the batch of ‖ṙ − v_w(r)‖².
pub fn nn_loss<'t>(
    tape: &'t Tape,
    net: &Mlp,
    staged: &[Var<'t>],
    batch: &[(&[f64], &[f64])],
) -> Result<Var<'t>, ModelError> {
    check_batch(batch, net.input_dim())?;
    let mut per_sample = Vec::with_capacity(batch.len());
    for (r, rdot) in batch {
        let inputs: Vec<Var> = r.iter().map(|&v| tape.leaf(v)).collect();
        let field = net.forward(tape, staged, &inputs)?;
        per_sample.push(squared_residual(tape, &field, rdot));
    }
    Ok(batch_mean(tape, &per_sample))
}

/// Symplectic-gradient field of a Hamiltonian network, on the tape. The
/// returned components stay differentiable with respect to the staged
/// weights (and the inputs).
pub fn hnn_field<'t>(
    tape: &'t Tape,
    net: &Mlp,
    staged: &[Var<'t>],
    inputs: &[Var<'t>],
) -> Result<Vec<Var<'t>>, ModelError> {
    let s = SymplecticMatrix::new(net.input_dim())?;
    let h = net.forward(tape, staged, inputs)?[0];
    let grads = tape.gradient(h, inputs)?;
    Ok(s.apply_vars(&grads))
}

/// Tape-free S∇H evaluation.
pub fn hnn_field_numeric(net: &Mlp, r: &[f64]) -> Result<Vec<f64>, ModelError> {
    let s = SymplecticMatrix::new(net.input_dim())?;
    let grad = net.input_gradient_numeric(r, 0)?;
    Ok(s.apply_numeric(&grad))
}

/// Hamiltonian-matching loss: mean over the batch of ‖Ṙ − S∇_R H_w‖².
/// Weight-gradients of this loss traverse ∇_R H, i.e. second-order
/// autodiff.
pub fn hnn_loss<'t>(
    tape: &'t Tape,
    net: &Mlp,
    staged: &[Var<'t>],
    batch: &[(&[f64], &[f64])],
) -> Result<Var<'t>, ModelError> {
    check_batch(batch, net.input_dim())?;
    let mut per_sample = Vec::with_capacity(batch.len());
    for (r, rdot) in batch {
        let inputs: Vec<Var> = r.iter().map(|&v| tape.leaf(v)).collect();
        let field = hnn_field(tape, net, staged, &inputs)?;
        per_sample.push(squared_residual(tape, &field, rdot));
    }
    Ok(batch_mean(tape, &per_sample))
}

/// Transform-net output and its input Jacobian, both differentiable.
pub fn ghnn_transform<'t>(
    tape: &'t Tape,
    transform: &Mlp,
    staged_t: &[Var<'t>],
    inputs: &[Var<'t>],
) -> Result<(Vec<Var<'t>>, Vec<Vec<Var<'t>>>), ModelError> {
    let latent = transform.forward(tape, staged_t, inputs)?;
    let jac = tape.jacobian(&latent, inputs)?;
    Ok((latent, jac))
}

/// Tape-free gHNN field: v = J⁻¹ S ∇_R H at r, under the inverse policy.
pub fn ghnn_field_numeric(
    transform: &Mlp,
    hamiltonian: &Mlp,
    r: &[f64],
    policy: &JacobianInversePolicy,
) -> Result<Vec<f64>, ModelError> {
    let s = SymplecticMatrix::new(transform.input_dim())?;
    let latent = transform.forward_numeric(r)?;
    let jac = transform.input_jacobian_numeric(r)?;
    let rhs = s.apply_numeric(&hamiltonian.input_gradient_numeric(&latent, 0)?);
    let inv = invert_jacobian(&jac, policy)?;
    Ok(linalg::mat_vec(&inv, &rhs))
}

/// Generalized loss: mean over the batch of ‖ṙ − J⁻¹S∇_R H_w‖², with the
/// transform Jacobian J = ∂R/∂r. With `policy.through_inverse` (exact-solve
/// mode only) the linear solve is recorded on the tape, so gradients reach
/// the transform weights through J itself; otherwise the inverse is a
/// per-step constant. The observable-coordinate variant of the loss is this
/// same computation with the batch relabeled.
pub fn ghnn_loss<'t>(
    tape: &'t Tape,
    transform: &Mlp,
    hamiltonian: &Mlp,
    staged_t: &[Var<'t>],
    staged_h: &[Var<'t>],
    batch: &[(&[f64], &[f64])],
    policy: &JacobianInversePolicy,
) -> Result<Var<'t>, ModelError> {
    let d = transform.input_dim();
    check_batch(batch, d)?;
    let s = SymplecticMatrix::new(d)?;
    let mut per_sample = Vec::with_capacity(batch.len());
    let mut skipped = 0usize;
    for (r, rdot) in batch {
        let inputs: Vec<Var> = r.iter().map(|&v| tape.leaf(v)).collect();
        let (latent, jac) = ghnn_transform(tape, transform, staged_t, &inputs)?;
        let h = hamiltonian.forward(tape, staged_h, &latent)?[0];
        // Interior-node gradient: ∂H/∂R at the transform outputs. The
        // emitted nodes keep their links into both networks' weights.
        let grads = tape.gradient(h, &latent)?;
        let rhs = s.apply_vars(&grads);
        let jac_values: Mat = jac
            .iter()
            .map(|row| row.iter().map(|v| v.value()).collect())
            .collect();
        let velocity = match solve_under_policy(tape, &jac, &jac_values, &rhs, policy) {
            Ok(v) => v,
            Err(e) => match policy.on_failure {
                FailureAction::SkipSample => {
                    skipped += 1;
                    continue;
                }
                FailureAction::Error => return Err(e),
            },
        };
        per_sample.push(squared_residual(tape, &velocity, rdot));
    }
    if per_sample.is_empty() {
        return Err(ModelError::BatchExhausted { skipped });
    }
    Ok(batch_mean(tape, &per_sample))
}

/// One sample's J⁻¹·rhs under the policy, on the tape.
fn solve_under_policy<'t>(
    tape: &'t Tape,
    jac: &[Vec<Var<'t>>],
    jac_values: &[Vec<f64>],
    rhs: &[Var<'t>],
    policy: &JacobianInversePolicy,
) -> Result<Vec<Var<'t>>, ModelError> {
    if policy.mode == InverseMode::ExactSolve && policy.through_inverse {
        // Reject ill-conditioned Jacobians up front so the recorded solve
        // mirrors the numeric policy exactly.
        let condition = linalg::condition_1norm(jac_values);
        if condition > 1.0 / policy.epsilon {
            return Err(ModelError::SingularJacobian { condition });
        }
        return linalg::solve_var(jac, rhs).map_err(|_| ModelError::SingularJacobian {
            condition: f64::INFINITY,
        });
    }
    // Constant-inverse path: invert numerically, contract against the
    // still-differentiable right-hand side.
    let inv = invert_jacobian(jac_values, policy)?;
    Ok(inv
        .iter()
        .map(|row| {
            let coeffs: Vec<Var> = row.iter().map(|&c| tape.constant(c)).collect();
            tape.dot(&coeffs, rhs)
        })
        .collect())
}
