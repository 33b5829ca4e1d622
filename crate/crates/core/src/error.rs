use std::path::PathBuf;

use thiserror::Error;

use crate::qp::QpError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid limit band: {band}[{joint}] min {min} >= max {max}")]
    InvalidLimitBand {
        band: &'static str,
        joint: usize,
        min: f64,
        max: f64,
    },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid tool transform: {0}")]
    InvalidTransform(String),

    #[error("time {t} s outside trajectory window [{t0}, {tf}]")]
    OutsideWindow { t: f64, t0: f64, tf: f64 },

    #[error("duration must be positive, got {0}")]
    NonPositiveDuration(f64),

    #[error("free-fall degeneracy: |a + g| = {norm} <= {eps}")]
    FreeFall { norm: f64, eps: f64 },

    #[error("gimbal degeneracy: |z x x_tilde| = {norm} <= {eps}")]
    Gimbal { norm: f64, eps: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("inverse kinematics did not converge after {iterations} iterations (e_p = {e_p:.3e} m, e_R = {e_r:.3e} rad)")]
    IkNonConvergence {
        iterations: usize,
        e_p: f64,
        e_r: f64,
    },

    #[error("QP solver failed: {source}")]
    Solver {
        #[source]
        source: QpError,
        /// Plain-text dump of the failing problem.
        dump: Box<String>,
    },

    #[error("step at t = {t:.4} s failed: {source}")]
    AtStep {
        t: f64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Qp(#[from] QpError),

    #[error("degeneracy storm: {flagged} of {total} steps flagged")]
    DegeneracyStorm { flagged: usize, total: usize },

    #[error("run log is empty or has fewer than two samples")]
    EmptyLog,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
