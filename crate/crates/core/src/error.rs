use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("wave index k = (0, 0) is not a basis mode")]
    ZeroWaveIndex,

    #[error("wave index ({0}, {1}) lies outside the truncation |k|_inf <= {2}")]
    OutsideTruncation(i32, i32, usize),

    #[error("truncation N = {0} is out of range (1..={max})", max = crate::spectral::MAX_TRUNC)]
    BadTruncation(usize),

    #[error("coefficient vector has length {got}, expected {expected}")]
    CoefficientLength { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("numerical blow-up at t = {t}: |u|_L2 = {norm} exceeds bound {bound}")]
    BlowUp { t: f64, norm: f64, bound: f64 },

    #[error("degenerate two-point state: x and y coincide (|w| = {0:e})")]
    DegenerateTwoPoint(f64),

    #[error("particle grid of {grid} points per side cannot resolve bandwidth {bandwidth}")]
    Nyquist { grid: usize, bandwidth: usize },

    #[error("fit window has {0} usable points, at least 5 are required")]
    TooFewPoints(usize),
}

pub type Result<T> = std::result::Result<T, Error>;
