use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("mismatch: {0}")]
    Mismatch(String),

    #[error("size guard exceeded: {0}")]
    SizeGuard(String),

    #[error("chain stuck: acceptance rate {rate:.2e} below {min:.1e} over burn-in")]
    ChainStuck { rate: f64, min: f64 },

    #[error("density amplitude underflow: |rho| = {magnitude:.3e} at a sampled configuration")]
    AmplitudeUnderflow { magnitude: f64 },

    #[error("all sample weights vanish")]
    ZeroWeights,

    #[error("sign problem: mean sign {mean:.3e} is within 3 standard errors ({std_error:.3e}) of zero")]
    SignProblem { mean: f64, std_error: f64 },

    #[error("step size underflow: eta = {eta:.3e} fell below {min:.1e} at iteration {iter}")]
    StepSizeUnderflow { eta: f64, min: f64, iter: usize },

    #[error(
        "degenerate steady state: second-smallest singular value {second:.3e} \
         under threshold {threshold:.3e}"
    )]
    DegenerateSteadyState { second: f64, threshold: f64 },

    #[error("steady-state extraction failed: {0}")]
    SteadyState(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("optimization failed at iteration {iter}: {source}")]
    Optimization {
        iter: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Attach optimizer iteration context to an inner failure.
    pub fn at_iteration(self, iter: usize) -> Error {
        Error::Optimization {
            iter,
            source: Box::new(self),
        }
    }
}
