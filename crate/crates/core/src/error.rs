use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension must be >= 3 (got {0})")]
    Dimension(usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("vector is not unit length (norm {0})")]
    NotUnit(f64),

    #[error("frame vectors are not orthonormal")]
    FrameNotOrthonormal,

    #[error("rotation between antipodal directions is not unique")]
    Antipodal,

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("kernel has zero total mass; no collisions can be sampled")]
    ZeroMassKernel,

    #[error("kernel has infinite total mass; apply a Grad cut-off eps > 0")]
    InfiniteMass,

    #[error("at least {min} particles are required (got {got})")]
    TooFewParticles { min: usize, got: usize },

    #[error("state violates the conservation laws: momentum residual {momentum:e}, energy residual {energy:e}")]
    Conservation { momentum: f64, energy: f64 },

    #[error("conservation drift at t = {time}: momentum residual {momentum:e}, energy residual {energy:e}")]
    InvariantDrift { time: f64, momentum: f64, energy: f64 },

    #[error("coupling distance increased at event {event} (t = {time}): +{increase:e}")]
    MonotonicityViolation { event: u64, time: f64, increase: f64 },

    #[error("particle counts differ: {0} vs {1}")]
    SizeMismatch(usize, usize),

    #[error("assignment problem with N = {n} exceeds the limit {limit}")]
    TooLarge { n: usize, limit: usize },

    #[error("matrix is not symmetric (asymmetry {0:e})")]
    Asymmetric(f64),

    #[error("no particle in the radial window [{r_minus}, {r_plus}]; retry with a larger N")]
    EmptyWindow { r_minus: f64, r_plus: f64 },

    #[error("invalid sample specification: {0}")]
    InvalidSpec(String),

    #[error("inequality violated: {0}")]
    Violation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl Error {
    /// Errors that signal a broken invariant rather than bad input.
    pub fn is_invariant_violation(&self) -> bool {
        matches!(
            self,
            Error::Conservation { .. }
                | Error::InvariantDrift { .. }
                | Error::MonotonicityViolation { .. }
                | Error::Violation(_)
        )
    }
}
