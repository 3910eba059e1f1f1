use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("static window too short: {span:.3} s < required {required:.3} s")]
    WindowTooShort { span: f64, required: f64 },

    #[error("device not stationary: gyro variance {gyro_var:.3e} (limit {gyro_limit:.3e}), accel-norm variance {accel_var:.3e} (limit {accel_limit:.3e})")]
    NotStationary {
        gyro_var: f64,
        gyro_limit: f64,
        accel_var: f64,
        accel_limit: f64,
    },

    #[error("need at least {required} IMU samples, got {got}")]
    TooFewSamples { required: usize, got: usize },

    #[error("IMU timestamps not strictly increasing at index {index} (t = {t})")]
    NonMonotonic { index: usize, t: f64 },

    #[error("IMU gap of {gap:.4} s at t = {t} exceeds {max_gap:.4} s")]
    ImuGap { t: f64, gap: f64, max_gap: f64 },

    #[error("time {t} outside window [{start}, {end}]")]
    OutOfWindow { t: f64, start: f64, end: f64 },

    #[error("bias change {delta:.3e} exceeds re-linearization threshold {threshold:.3e}")]
    RelinearizationRequired { delta: f64, threshold: f64 },

    #[error("degenerate scan: {found} correspondences < {required}")]
    DegenerateScan { found: usize, required: usize },

    #[error("normal equations singular (condition estimate {condition:.3e})")]
    Singular { condition: f64 },

    #[error("empty simulation world")]
    EmptyWorld,

    #[error("invalid config: {0}")]
    Config(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("no associable timestamp pairs")]
    NoAssociation,

    #[error(transparent)]
    Io(#[from] IoError),
}

/// `std::io::Error` is neither `Clone` nor `PartialEq`; keep its message.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("{0}")]
pub struct IoError(pub String);

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(IoError(e.to_string()))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
