use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degenerate grid: quadrature needs at least one bin")]
    DegenerateGrid,

    #[error("non-finite density at bin {bin}")]
    NonFiniteDensity { bin: usize },

    #[error("negative density: {count} bin(s), first at {first}")]
    NegativeDensity { first: usize, count: usize },

    #[error("density not normalized: mean {mean} differs from 1")]
    NotNormalized { mean: f64 },

    #[error("kernel is not strictly positive (lower bound {lower})")]
    KernelNotPositive { lower: f64 },

    #[error("probability overflow: rho * C_ub = {value} > 1 and clipping not allowed")]
    ProbabilityOverflow { value: f64 },

    #[error("disconnected vertex {node}: empty in-neighborhood")]
    DisconnectedVertex { node: usize },

    #[error("exact OT size cap: combined support {size} exceeds {cap}")]
    OtSizeCap { size: usize, cap: usize },

    #[error("not probability: total mass {mass}")]
    NotProbability { mass: f64 },

    #[error("depth mismatch: {left} vs {right}")]
    DepthMismatch { left: usize, right: usize },

    #[error("conditional kernel ambiguous: nodes {first} and {second} share an initial state")]
    ConditionalKernelAmbiguous { first: usize, second: usize },

    #[error("pi undefined: measure has no mass on w = 1")]
    PiUndefined,

    #[error("blow-up: non-finite state at node {node}, step {step}")]
    BlowUp { node: usize, step: usize },

    #[error("lmgf overflow: max h = {max_h}")]
    LmgfOverflow { max_h: f64 },

    #[error("infeasible thresholds: sum {sum} must be < 1 with each in [0, 1)")]
    InfeasibleThresholds { sum: f64 },

    #[error("size cap: {what} ({size} > {cap})")]
    SizeCap {
        what: &'static str,
        size: usize,
        cap: usize,
    },

    #[error("enumeration cap: joint support {size} exceeds {cap}")]
    EnumerationCap { size: usize, cap: usize },

    #[error("no convergence at cap: m = {steps}, achieved gap {gap}")]
    NoConvergence { steps: usize, gap: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl Error {
    /// Errors raised because an input exceeded a hard computational cap.
    pub fn is_cap(&self) -> bool {
        matches!(
            self,
            Error::OtSizeCap { .. } | Error::SizeCap { .. } | Error::EnumerationCap { .. }
        )
    }
}
