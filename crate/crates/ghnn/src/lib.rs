//! Hamiltonian-structured learning of conservative dynamics from data.
//!
//! The crate trains three kinds of models on trajectory data from
//! low-dimensional mechanical systems and compares their forecasts:
//!
//! * a plain multilayer perceptron that regresses the time derivative,
//! * a Hamiltonian neural network that learns a scalar energy function and
//!   takes its symplectic gradient as the vector field,
//! * a generalised Hamiltonian neural network that additionally learns a
//!   coordinate transform into canonical coordinates, so the Hamiltonian
//!   structure can be exploited in coordinates where it is not apparent.
//!
//! Everything runs on a custom reverse-mode tape ([`autodiff`]) whose
//! backward pass records onto the same tape, so losses that contain input
//! gradients of a network remain differentiable with respect to the weights.

pub mod autodiff;
pub mod cli;
pub mod forecast;
pub mod linalg;
pub mod mlp;
pub mod models;
pub mod systems;
pub mod training;

use std::io::Write as _;
use std::path::Path;

/// Write a file atomically: stage the bytes in a sibling temp file, then
/// rename over the destination, so readers never observe a half-written
/// document.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = match dir {
        Some(d) => tempfile::NamedTempFile::new_in(d)?,
        None => tempfile::NamedTempFile::new_in(".")?,
    };
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
