use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid instance: {field}: {reason}")]
    InvalidInstance { field: &'static str, reason: String },

    /// No control reaches the required final level. `largest_final_level` is
    /// the highest level reachable at the last step, if any level is.
    #[error("infeasible instance: {}", describe_infeasible(*.largest_final_level, *.required))]
    Infeasible {
        largest_final_level: Option<f64>,
        required: f64,
    },

    #[error(
        "capacity margin infeasible: shrunken capacity {shrunken} kWh is not above {floor} kWh (rounding budget {eps_tot:.6} kWh)"
    )]
    MarginInfeasible {
        shrunken: f64,
        floor: f64,
        eps_tot: f64,
    },

    #[error("unsupported: {0}")]
    Unsupported(&'static str),

    #[error("enumeration budget exceeded: {required} nodes required, budget is {budget}")]
    BudgetExceeded { required: u128, budget: u64 },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },

    #[error("{0}")]
    Data(String),

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn describe_infeasible(largest: Option<f64>, required: f64) -> String {
    match largest {
        Some(level) => format!(
            "largest reachable final level is {level} kWh, required at least {required} kWh"
        ),
        None => format!("no fill level is reachable at the last step (required {required} kWh)"),
    }
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn instance(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidInstance {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for outcomes that describe the instance rather than the invocation.
    pub fn is_infeasibility(&self) -> bool {
        matches!(
            self,
            Error::Infeasible { .. } | Error::MarginInfeasible { .. }
        )
    }
}
