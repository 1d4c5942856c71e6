use thiserror::Error;

/// Errors raised across the calculus.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("symbol evaluated at the origin (xi', mu) = 0 where the excision does not vanish")]
    Domain,
    #[error("limit extraction did not converge: {0}")]
    NonConvergent(String),
    #[error("regularity number overstated: rescaled values diverge ({0})")]
    RegularityOverstated(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no decaying mode: Re sigma = {0} <= 0")]
    NoDecayingMode(f64),
    #[error("square root branch cut hit: eigenvalue {re}+{im}i lies on (-inf, 0]")]
    BranchCut { re: f64, im: f64 },
    #[error("reduced boundary matrix singular at xi'={xi:?}, mu={mu} (smallest singular value {min_sv:e})")]
    NotElliptic { xi: Vec<f64>, mu: f64, min_sv: f64 },
    #[error("kernel does not decay: tail estimate {0:e}")]
    NonDecay(f64),
    #[error("aliasing estimate {estimate:e} above threshold; try at least {suggested} circle samples")]
    Aliasing { estimate: f64, suggested: usize },
    #[error("weights are not composable: {0}")]
    NotComposable(String),
    #[error("adjoint is only defined for type 0, got type {0}")]
    AdjointType(usize),
    #[error("frequency cutoff too small: tail estimate {tail:e} at cutoff {cutoff}")]
    EnlargeGrid { cutoff: f64, tail: f64 },
    #[error("power iteration did not converge after {0} steps")]
    PowerIteration(usize),
    #[error("ill-posed fit: design condition number {0:e}")]
    IllPosedFit(f64),
    #[error("order condition violated: {0}")]
    Order(String),
    #[error("rank deficient restriction: numerical rank {rank}, expected {expected}")]
    RankDeficient { rank: usize, expected: usize },
    #[error("not a projection: |pi^2 - pi| = {0:e}")]
    NotIdempotent(f64),
}

pub type Result<T> = std::result::Result<T, Error>;
