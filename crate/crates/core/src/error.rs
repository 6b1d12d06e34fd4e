use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported input: {0}")]
    Unsupported(String),

    #[error("capacity exceeded: {size} atoms > cap {cap}; use w2_sliced for large clouds")]
    Capacity { size: usize, cap: usize },

    #[error("non-finite value in {context} at {point:?}")]
    Numeric { context: String, point: Vec<f64> },

    #[error("grid mismatch: {0}")]
    Grid(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("CFL condition violated: dt = {dt:.6e} exceeds the stable bound {required:.6e}; use at least {substeps} substeps per interval")]
    Cfl {
        dt: f64,
        required: f64,
        substeps: usize,
    },

    #[error("divergence: {0}")]
    Divergence(String),

    #[error("{reflected} of {total} particles left the grid box (limit 5%); enlarge grid.x_max")]
    ParticleEscape { reflected: usize, total: usize },

    #[error("invalid comparison: {0}")]
    InvalidComparison(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn numeric(context: impl Into<String>, point: &[f64]) -> Self {
        Error::Numeric {
            context: context.into(),
            point: point.to_vec(),
        }
    }
}

pub(crate) fn ensure_finite(values: &[f64], context: &str, point: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::numeric(context, point))
    }
}
