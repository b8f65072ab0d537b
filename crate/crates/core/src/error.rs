use thiserror::Error;

/// Errors raised by the numerical routines.
///
/// The CLI maps [`Error::is_numerical_contract`] failures to exit code 3 and
/// everything else to exit code 2.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid volatility band: {0}")]
    InvalidParams(String),

    #[error("degenerate volatility band (sigma_lo = 0): {0}")]
    DegenerateBand(&'static str),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("CFL violation: dt*sigma_hi^2/dx^2 = {ratio:.6} > 1")]
    CflViolation { ratio: f64 },

    #[error("initial data not bounded on the grid: sup |phi| = {sup:e} exceeds cap {cap:e}")]
    Unbounded { sup: f64, cap: f64 },

    #[error("query (t = {t}, x = {x}) outside the solved domain")]
    OutOfDomain { t: f64, x: f64 },

    #[error("derivative probe at (t = {t}, x = {x}) too close to the grid boundary")]
    BoundaryProximity { t: f64, x: f64 },

    #[error("forward solve leaked {leaked:e} of mass through the boundary")]
    MassLeakage { leaked: f64 },

    #[error("eigenfunction overflow: |phi| = {value:e} at x = {x}")]
    Overflow { x: f64, value: f64 },

    #[error("lattice too coarse: spacing {spacing} > sigma_lo*sqrt(dt) = {limit}")]
    LatticeTooCoarse { spacing: f64, limit: f64 },
}

impl Error {
    /// True for violations of a numerical contract (CFL, boundedness, leakage)
    /// as opposed to malformed input.
    pub fn is_numerical_contract(&self) -> bool {
        matches!(
            self,
            Error::CflViolation { .. }
                | Error::Unbounded { .. }
                | Error::MassLeakage { .. }
                | Error::Overflow { .. }
                | Error::LatticeTooCoarse { .. }
                | Error::BoundaryProximity { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
