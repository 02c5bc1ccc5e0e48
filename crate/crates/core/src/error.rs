use std::path::PathBuf;

use thiserror::Error;

use crate::solver::Solution;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate argument: {0}")]
    DegenerateArgument(&'static str),

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("point ({x}, {y}) lies outside the closed cone")]
    OutsideCone { x: f64, y: f64 },

    #[error("polygon is not simple: {0}")]
    NonSimplePolygon(String),

    #[error("set has zero weighted volume")]
    ZeroVolume,

    #[error("geometry failure: {0}")]
    Geometry(String),

    #[error("mesh generation failed: {0}")]
    Mesh(String),

    #[error("condition (b) certificate failed: {0}")]
    ConditionB(String),

    #[error("solver did not converge: {reason}")]
    NonConvergence {
        reason: String,
        last: Box<Solution>,
    },

    #[error("empty level set at t = {0}")]
    EmptyLevel(f64),

    #[error("degenerate solution: {0}")]
    DegenerateSolution(String),

    #[error("not enough data: {0}")]
    InsufficientData(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
