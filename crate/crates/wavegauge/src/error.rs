use thiserror::Error;

/// Breakdown modes of the continuation principle: the evolution stops with
/// one of these instead of producing NaNs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BreakdownCase {
    /// g_00 reached 0 somewhere (loss of the time-like direction).
    MetricTimeDegenerate = 1,
    /// smallest eigenvalue of the spatial metric reached 0.
    MetricSpaceDegenerate = 2,
    /// the (rescaled) pressure reached 0.
    VacuumPressure = 3,
    /// sup-norm blowup of the fields or their first derivatives.
    SupNormBlowup = 4,
}

impl std::fmt::Display for BreakdownCase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let (n, what) = match self {
            BreakdownCase::MetricTimeDegenerate => (1, "g_00 -> 0"),
            BreakdownCase::MetricSpaceDegenerate => (2, "spatial metric degenerate"),
            BreakdownCase::VacuumPressure => (3, "pressure -> 0"),
            BreakdownCase::SupNormBlowup => (4, "sup-norm blowup"),
        };
        write!(f, "continuation-criterion case {n} ({what})")
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("numerical breakdown at t = {t}: {case} at grid point ({i}, {j}, {k}); {detail}")]
    Breakdown {
        case: BreakdownCase,
        t: f64,
        i: usize,
        j: usize,
        k: usize,
        detail: String,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("non-finite value in field '{0}'")]
    NonFinite(String),

    #[error("decay-rate fit needs positive values; found {0} in the window")]
    NonPositiveSeries(f64),

    #[error("{0}")]
    Diagnostics(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
