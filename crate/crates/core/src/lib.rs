//! Numerical laboratory for the cross-immunoreactivity virus/antibody model.
//!
//! A population of `n` viral variants `x_i` raises `n` antibody responses
//! `r_i`. Cross-reactivity between variants is a directed graph whose
//! adjacency matrix `A` fixes the neutralization matrix `U = Id + beta A^T`
//! and the stimulation matrix `V = Id + alpha A`.
//!
//! Modules:
//! - [`network`]: graphs, the topology catalog, parameters, immune matrices
//! - [`dynamics`]: right-hand side, integration, node roles
//! - [`fixedpoint`]: closed-form fixed-point families
//! - [`stability`]: Jacobians, spectra, characteristic-polynomial factors
//! - [`experiments`]: random dandelion batches and `x1` sweeps
//! - [`io`]: JSON/CSV formats

pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod fixedpoint;
pub mod io;
pub mod linalg;
pub mod network;
pub mod rng;
pub mod stability;

pub use error::{CrinError, Result};
