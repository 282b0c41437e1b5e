use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = EspError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum EspError {
    /// A parameter or configuration value violates a stated invariant.
    #[error("invalid {name}: {reason}")]
    Invalid { name: &'static str, reason: String },

    /// The operation is not defined for the given activation family.
    #[error("{operation} is not supported for the {family} activation")]
    UnsupportedFamily {
        operation: &'static str,
        family: &'static str,
    },

    #[error("eigenvalue computation did not converge for a {n}x{n} matrix")]
    EigenNonConvergence { n: usize },

    #[error("could not draw a reservoir with a nonzero spectral radius after {attempts} attempts")]
    DegenerateReservoir { attempts: u32 },

    /// The quantized state space walk exceeded its budget. `visited` is the
    /// number of distinct states seen before giving up.
    #[error("attractor enumeration exceeded its budget of {budget} states ({visited} visited)")]
    StateBudgetExceeded { budget: usize, visited: usize },

    #[error("failed to parse {what}: {reason}")]
    Parse { what: String, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl EspError {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        EspError::Invalid {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        EspError::Io {
            path: path.into(),
            source,
        }
    }
}
