use thiserror::Error;

/// Errors produced by the control and simulation layers.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// A pairwise distance entering a 1/r^3 term fell at or below the
    /// singularity floor. Clamping would silently corrupt the Jacobians
    /// the controller depends on, so we refuse instead.
    #[error("separation {dist:.3e} m between {a} and {b} is at or below the {min:.1e} m floor")]
    SingularSeparation {
        a: String,
        b: String,
        dist: f64,
        min: f64,
    },

    /// A gain-condition denominator (h or v at t = 0) is exactly zero.
    #[error("degenerate denominator {quantity} = 0 at t = 0 for sheep {sheep}, zone {zone}")]
    DegenerateDenominator {
        quantity: &'static str,
        sheep: usize,
        zone: usize,
    },

    /// An active-set linear solve exceeded the conditioning limit.
    #[error("active-set Gram matrix condition number {cond:.3e} exceeds {limit:.1e}")]
    IllConditioned { cond: f64, limit: f64 },

    /// A 1v1 state does not respect the declared certificate bounds.
    #[error("state violates declared bound {bound}: {actual:.6} vs limit {limit:.6}")]
    BoundsViolated {
        bound: &'static str,
        actual: f64,
        limit: f64,
    },

    /// Rejection sampling failed to produce a valid initial state.
    #[error("initial-state sampler exhausted after {attempts} rejections")]
    SamplerExhausted { attempts: usize },

    /// Unicycle mapping requested with a zero offset distance.
    #[error("unicycle offset distance d must be positive, got {0}")]
    DegenerateOffset(f64),

    /// A configuration value is missing, malformed, or out of range.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Reading or writing an artifact file failed.
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
