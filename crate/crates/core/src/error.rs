use thiserror::Error;

use crate::intersection::DegeneracyReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("point is behind the camera (depth {depth:.3e} m)")]
    BehindCamera { depth: f64 },

    #[error("degenerate ray geometry (singular value ratio {min_singular_ratio:.3e})")]
    DegenerateGeometry { min_singular_ratio: f64 },

    #[error("underdetermined system: {equations} equations for {unknowns} unknowns")]
    Underdetermined { equations: usize, unknowns: usize },

    #[error("ill-conditioned design matrix (condition number {condition:.3e})")]
    IllConditioned {
        condition: f64,
        report: Box<DegeneracyReport>,
    },

    #[error("residual or jacobian is not finite at the initial point")]
    InvalidStart,

    #[error("damping grew past {damping:.1e} without an acceptable step")]
    Stalled { damping: f64 },

    #[error("scene configuration: {0}")]
    Config(String),
}

impl Error {
    /// True for the geometry/counting failures the CLI reports with exit code 3.
    pub fn is_geometric(&self) -> bool {
        matches!(
            self,
            Error::DegenerateGeometry { .. }
                | Error::Underdetermined { .. }
                | Error::IllConditioned { .. }
        )
    }

    pub fn is_solver_failure(&self) -> bool {
        matches!(self, Error::InvalidStart | Error::Stalled { .. })
    }
}
