use thiserror::Error;

/// Errors raised by the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("sampler produced no usable points")]
    EmptySample,
    #[error("point at distance {distance:.3e} from C exceeds the projection radius {radius:.3e}")]
    OutsideProxRadius { distance: f64, radius: f64 },
    #[error("unknown instance `{0}`")]
    UnknownInstance(String),
    #[error("instance `{0}` has no registered closed-form optimum")]
    NoClosedForm(String),
    #[error("gamma {gamma} must exceed 2*Mbar/eta = {threshold}")]
    GammaTooSmall { gamma: f64, threshold: f64 },
    #[error("non-finite value encountered at t = {t}")]
    NonFinite { t: f64 },
    #[error("integration failed at t = {t}: {reason}")]
    BlowUp { t: f64, reason: String },
    #[error("trajectory left C at t = {t} (psi = {psi:.3e})")]
    LeftC { t: f64, psi: f64 },
    #[error("gradient of psi vanishes at boundary node {index}")]
    ZeroGradientOnBoundary { index: usize },
    #[error("grids do not match")]
    GridMismatch,
    #[error("control set and trust region do not intersect at t = {t}")]
    EmptyIntersection { t: f64 },
    #[error("endpoint cost is infinite")]
    GInfinite,
    #[error("optimizer stalled{}: {reason}", stage.map(|k| format!(" at stage {k}")).unwrap_or_default())]
    Stalled { stage: Option<usize>, reason: String },
    #[error("lambda must be nonnegative, got {0}")]
    NegativeLambda(f64),
    #[error("atom at t = {t} has no matching partner")]
    UnmatchedAtom { t: f64 },
    #[error("{which} endpoint is {distance:.3e} away from its endpoint set")]
    EndpointInfeasible { which: &'static str, distance: f64 },
    #[error("unsupported set kind: {0}")]
    UnsupportedSetKind(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },
    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;
