use thiserror::Error;

/// Errors raised by the simulation, transport and envelope routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("CFL violation: dt = {dt} with support radius {support_radius} exceeds spacing {spacing}")]
    Cfl {
        dt: f64,
        support_radius: f64,
        spacing: f64,
    },

    #[error("negative density {min_density} detected at t = {time} (pre-blowup)")]
    NegativeDensity { min_density: f64, time: f64 },

    #[error("incompressibility constraint drift {drift} exceeds {tolerance}")]
    ConstraintDrift { drift: f64, tolerance: f64 },

    #[error("mass mismatch between measures: {0}")]
    MassMismatch(f64),

    #[error("problem size {size} exceeds cap {cap}")]
    SizeCap { size: usize, cap: usize },

    #[error("{method} did not converge: {detail}")]
    NonConvergence { method: &'static str, detail: String },

    #[error("empty ensemble")]
    EmptyEnsemble,

    #[error("snapshot format error: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
