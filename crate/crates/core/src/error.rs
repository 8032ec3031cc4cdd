use std::path::PathBuf;

use thiserror::Error;

/// Every failure the laboratory can report. Variants carry enough
/// coordinates (stage, node, time) to locate the problem in a run.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("exponent p = {p} is outside the energy-subcritical range for N = {n_dim}")]
    SupercriticalExponent { p: f64, n_dim: usize },

    #[error("k = {k} violates the flatness bound k >= {bound}")]
    FlatnessOrder { k: u32, bound: f64 },

    #[error("time must be positive, got t = {0}")]
    NonPositiveTime(f64),

    #[error("singular evaluation: {0}")]
    Singular(String),

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("invalid compact set: {0}")]
    CompactSet(String),

    #[error("ansatz construction failed at level {level}: {reason}")]
    Construction { level: usize, reason: String },

    #[error("cutoff search exhausted at level {level}: worst node x = {x}, t = {t}, excess ratio {excess}")]
    CutoffSearch {
        level: usize,
        x: f64,
        t: f64,
        excess: f64,
    },

    #[error("time {t} outside stack range [{lo}, {hi}]")]
    OutOfRange { t: f64, lo: f64, hi: f64 },

    #[error("truncation level B_n = {0} must exceed 1 (n too small)")]
    TruncationLevel(f64),

    #[error("CFL violation: dt/dx = {0} must lie in (0, 1)")]
    Cfl(f64),

    #[error("solver instability at t = {t} (step {step}): non-finite value at node {node}")]
    Instability { t: f64, step: usize, node: usize },

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("ball exits the domain: center {center}, radius {radius}, domain half-width {half_width}")]
    BallOutsideDomain {
        center: f64,
        radius: f64,
        half_width: f64,
    },

    #[error("ambiguous verdict at probe {probe}: {detail}")]
    Ambiguous { probe: f64, detail: String },

    #[error("missing {what} artifact: {}", path.display())]
    MissingArtifact { what: String, path: PathBuf },

    #[error("malformed artifact {}: {reason}", path.display())]
    Artifact { path: PathBuf, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn in_stage(self, stage: &str) -> Error {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }
}
