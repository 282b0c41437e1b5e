//! Leaky echo state networks with non-smooth activations, plus the
//! diagnostics used to study when they keep the echo state property:
//! two-trajectory convergence tests, symbol-lock checks for quantized
//! activations, attractor enumeration, empirical Lipschitz estimates and
//! deterministic parameter sweeps.
//!
//! ```
//! use esplab_core::activations::{ActivationSpec, Family};
//! use esplab_core::esp::{run_pair, EspTestSpec};
//!
//! let mut spec = EspTestSpec::new(ActivationSpec::new(Family::Tanh));
//! spec.reservoir.n = 20;
//! let result = run_pair(&spec, 7).unwrap();
//! assert!(result.converged);
//! ```

// NaN-rejecting range checks are written as `!(x > lo)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod activations;
pub mod analysis;
pub mod config;
pub mod error;
pub mod esp;
pub mod io;
pub mod reservoir;
pub mod rng;
pub mod sweep;

pub use error::{EspError, Result};
