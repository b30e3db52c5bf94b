use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid system parameters: {0}")]
    InvalidParams(String),

    #[error("monomial is not number-conserving (p + q = {p} + {q} != r + s = {r} + {s})")]
    NotNumberConserving { p: u32, q: u32, r: u32, s: u32 },

    #[error("dimension mismatch: operator on n = {op_n}, state on n = {state_n}")]
    DimensionMismatch { op_n: usize, state_n: usize },

    #[error("band matrix entry overflow at (l' = {row}, l = {col}); rescale the operator coefficients")]
    EntryOverflow { row: i64, col: i64 },

    #[error("negative variance beyond rounding tolerance: {value:.3e} (scale {scale:.3e})")]
    NegativeVariance { value: f64, scale: f64 },

    #[error("mode order m = {m} outside 0..={k}")]
    ModeOrderOutOfRange { m: usize, k: usize },

    #[error("particle order k = {k} exceeds cap {cap}")]
    OrderTooLarge { k: usize, cap: usize },

    #[error("invalid mode pair: {0}")]
    InvalidModes(String),

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("quadrature did not converge: relative change {rel:.3e} after {points} points")]
    QuadratureNonConvergence { rel: f64, points: usize },

    #[error("no interior maximum found in convolution profile")]
    NoInteriorMaximum,

    #[error("observable is not typical; no scaling regime applies")]
    NotTypical,

    #[error("internal consistency failure: {0}")]
    Inconsistency(String),

    #[error("fit did not converge: {0}")]
    FitNonConvergence(String),

    #[error("degenerate fit: need at least {need} points, got {got}")]
    DegenerateFit { need: usize, got: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}
