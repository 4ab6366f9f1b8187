//! Dense linear algebra for the small matrices this crate meets.
//!
//! Every Jacobian here is d×d with d ∈ {2, 4}, so the implementations favour
//! clarity over asymptotics: LU with partial pivoting for solves, an exact
//! 1-norm condition number from the explicit inverse, and a one-sided Jacobi
//! SVD for the pseudo-inverse fallback.
//!
//! [`solve_var`] is the differentiable counterpart: Gaussian elimination
//! recorded on the autodiff tape, so gradients flow through the solution of
//! `J x = b` exactly (the pivot *choice* is made from current values, which
//! is the usual piecewise-smooth convention).

use thiserror::Error;

use crate::autodiff::{AdError, Var};

/// Row-major dense matrix.
pub type Mat = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("singular matrix (condition estimate {condition:.3e})")]
    Singular { condition: f64 },
    #[error("SVD did not converge within {sweeps} sweeps")]
    SvdFailure { sweeps: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

pub fn identity(n: usize) -> Mat {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

pub fn mat_vec(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    a.iter()
        .map(|row| row.iter().zip(x).map(|(r, v)| r * v).sum())
        .collect()
}

pub fn mat_mul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for l in 0..k {
            let ail = a[i][l];
            for j in 0..m {
                out[i][j] += ail * b[l][j];
            }
        }
    }
    out
}

pub fn transpose(a: &[Vec<f64>]) -> Mat {
    let (n, m) = (a.len(), a[0].len());
    (0..m).map(|j| (0..n).map(|i| a[i][j]).collect()).collect()
}

/// Largest absolute entry of `a - b`; panics on shape mismatch.
pub fn max_abs_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max)
}

/// Maximum absolute column sum.
pub fn norm1(a: &[Vec<f64>]) -> f64 {
    let m = a[0].len();
    (0..m)
        .map(|j| a.iter().map(|row| row[j].abs()).sum())
        .fold(0.0, f64::max)
}

/// LU factorization with partial pivoting, returned compactly.
struct Lu {
    /// L below the diagonal (unit diagonal implicit), U on and above.
    lu: Mat,
    perm: Vec<usize>,
}

fn lu_factor(a: &[Vec<f64>]) -> Result<Lu, LinalgError> {
    let n = a.len();
    if a.iter().any(|row| row.len() != n) {
        return Err(LinalgError::Dimension("LU needs a square matrix".into()));
    }
    let mut lu: Mat = a.to_vec();
    let mut perm: Vec<usize> = (0..n).collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| lu[i][col].abs().total_cmp(&lu[j][col].abs()))
            .unwrap();
        if lu[pivot][col] == 0.0 {
            return Err(LinalgError::Singular {
                condition: f64::INFINITY,
            });
        }
        lu.swap(col, pivot);
        perm.swap(col, pivot);
        for row in col + 1..n {
            let f = lu[row][col] / lu[col][col];
            lu[row][col] = f;
            for j in col + 1..n {
                lu[row][j] -= f * lu[col][j];
            }
        }
    }
    Ok(Lu { lu, perm })
}

impl Lu {
    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 1..n {
            for j in 0..i {
                x[i] -= self.lu[i][j] * x[j];
            }
        }
        for i in (0..n).rev() {
            for j in i + 1..n {
                x[i] -= self.lu[i][j] * x[j];
            }
            x[i] /= self.lu[i][i];
        }
        x
    }
}

/// Solve `a x = b` by LU with partial pivoting.
pub fn solve(a: &[Vec<f64>], b: &[f64]) -> Result<Vec<f64>, LinalgError> {
    if b.len() != a.len() {
        return Err(LinalgError::Dimension(format!(
            "matrix is {}x{} but right-hand side has length {}",
            a.len(),
            a.first().map_or(0, Vec::len),
            b.len()
        )));
    }
    Ok(lu_factor(a)?.solve(b))
}

/// Explicit inverse by solving against each unit vector.
pub fn invert(a: &[Vec<f64>]) -> Result<Mat, LinalgError> {
    let n = a.len();
    let lu = lu_factor(a)?;
    let mut inv = vec![vec![0.0; n]; n];
    let mut e = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        let col = lu.solve(&e);
        e[j] = 0.0;
        for i in 0..n {
            inv[i][j] = col[i];
        }
    }
    Ok(inv)
}

/// Exact 1-norm condition number ‖A‖₁·‖A⁻¹‖₁ (cheap at these sizes).
pub fn condition_1norm(a: &[Vec<f64>]) -> f64 {
    match invert(a) {
        Ok(inv) => norm1(a) * norm1(&inv),
        Err(_) => f64::INFINITY,
    }
}

/// One-sided Jacobi SVD of a square matrix: `a = u * diag(s) * vᵀ` with
/// orthogonal `u`, `v` and `s` sorted descending.
pub fn svd(a: &[Vec<f64>]) -> Result<(Mat, Vec<f64>, Mat), LinalgError> {
    let n = a.len();
    if a.iter().any(|row| row.len() != n) {
        return Err(LinalgError::Dimension("SVD needs a square matrix".into()));
    }
    // Work on columns: w starts as A, V accumulates the rotations.
    let mut w = a.to_vec();
    let mut v = identity(n);
    let max_sweeps = 60;
    let tol = 1e-14;
    let mut converged = false;
    for _ in 0..max_sweeps {
        let mut off = 0.0f64;
        for i in 0..n {
            for j in i + 1..n {
                let mut alpha = 0.0;
                let mut beta = 0.0;
                let mut gamma = 0.0;
                for r in 0..n {
                    alpha += w[r][i] * w[r][i];
                    beta += w[r][j] * w[r][j];
                    gamma += w[r][i] * w[r][j];
                }
                let scale = (alpha * beta).sqrt();
                if scale == 0.0 || gamma.abs() <= tol * scale {
                    continue;
                }
                off = off.max(gamma.abs() / scale);
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for r in 0..n {
                    let (wi, wj) = (w[r][i], w[r][j]);
                    w[r][i] = c * wi - s * wj;
                    w[r][j] = s * wi + c * wj;
                    let (vi, vj) = (v[r][i], v[r][j]);
                    v[r][i] = c * vi - s * vj;
                    v[r][j] = s * vi + c * vj;
                }
            }
        }
        if off == 0.0 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(LinalgError::SvdFailure { sweeps: max_sweeps });
    }
    // Singular values are the column norms of the rotated matrix.
    let mut sigma: Vec<f64> = (0..n)
        .map(|j| (0..n).map(|r| w[r][j] * w[r][j]).sum::<f64>().sqrt())
        .collect();
    let mut u = identity(n);
    for j in 0..n {
        if sigma[j] > 0.0 {
            for r in 0..n {
                u[r][j] = w[r][j] / sigma[j];
            }
        }
        // A zero column leaves the identity column in u; it multiplies a
        // zero singular value, so any unit vector is valid there.
    }
    // Sort descending by singular value, permuting u and v alongside.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]));
    let permute = |m: &Mat| -> Mat {
        (0..n)
            .map(|r| order.iter().map(|&c| m[r][c]).collect())
            .collect()
    };
    let (u, v) = (permute(&u), permute(&v));
    sigma = order.iter().map(|&c| sigma[c]).collect();
    Ok((u, sigma, v))
}

/// Moore-Penrose pseudo-inverse; singular values below
/// `rel_eps * max(sigma)` are treated as zero.
pub fn pinv(a: &[Vec<f64>], rel_eps: f64) -> Result<Mat, LinalgError> {
    let (u, sigma, v) = svd(a)?;
    let n = a.len();
    let smax = sigma.first().copied().unwrap_or(0.0);
    let cutoff = rel_eps * smax;
    // A⁺ = V diag(1/σ) Uᵀ with the cut singular directions dropped.
    let mut out = vec![vec![0.0; n]; n];
    for k in 0..n {
        if sigma[k] <= cutoff || sigma[k] == 0.0 {
            continue;
        }
        let inv_s = 1.0 / sigma[k];
        for i in 0..n {
            for j in 0..n {
                out[i][j] += v[i][k] * inv_s * u[j][k];
            }
        }
    }
    Ok(out)
}

/// Solve `a x = b` with the arithmetic recorded on the tape, so the result
/// is differentiable with respect to every entry of `a` and `b`. A zero
/// pivot surfaces as [`AdError::DivisionByZero`]; callers map that to their
/// singular-Jacobian policy.
pub fn solve_var<'t>(a: &[Vec<Var<'t>>], b: &[Var<'t>]) -> Result<Vec<Var<'t>>, AdError> {
    let n = b.len();
    assert!(
        a.len() == n && a.iter().all(|row| row.len() == n),
        "solve_var needs a square system matching the right-hand side"
    );
    let mut m: Vec<Vec<Var<'t>>> = a.to_vec();
    let mut x: Vec<Var<'t>> = b.to_vec();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[i][col].value().abs().total_cmp(&m[j][col].value().abs()))
            .unwrap();
        m.swap(col, pivot);
        x.swap(col, pivot);
        for row in col + 1..n {
            let f = m[row][col].div(m[col][col])?;
            for j in col + 1..n {
                m[row][j] = m[row][j] - f * m[col][j];
            }
            x[row] = x[row] - f * x[col];
        }
    }
    for i in (0..n).rev() {
        for j in i + 1..n {
            x[i] = x[i] - m[i][j] * x[j];
        }
        x[i] = x[i].div(m[i][i])?;
    }
    Ok(x)
}
