use std::path::PathBuf;

use thiserror::Error;

use crate::convex::InfeasibilityReport;
use crate::milp::MilpError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("assignment infeasible by construction: {0}")]
    AssignmentInfeasible(String),

    #[error("user {user} has an all-zero effective channel")]
    ZeroEffectiveChannel { user: usize },

    #[error("CI precoding infeasible: {0}")]
    CiInfeasible(Box<InfeasibilityReport>),

    #[error("effective channel rank deficient: {users} users but rank {rank}")]
    RankDeficient { users: usize, rank: usize },

    #[error("{stage} stage: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Milp(#[from] MilpError),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Innermost error with stage annotations peeled off.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}
