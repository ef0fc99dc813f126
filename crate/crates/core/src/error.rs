use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("field violates reality symmetry at mode ({0}, {1})")]
    RealityViolation(i32, i32),

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("Picard iteration did not converge after {iterations} iterations (last update {update:.3e}); reduce dt")]
    PicardDiverged { iterations: usize, update: f64 },

    #[error("no-slip residual {residual:.3e} exceeds {bound:.3e} at t = {t}")]
    NoSlipViolation { t: f64, residual: f64, bound: f64 },

    #[error("CFL number {cfl:.3} > 1 at t = {t}; reduce dt below {suggested_dt:.3e}")]
    Cfl { t: f64, cfl: f64, suggested_dt: f64 },

    #[error("tail mass fraction {fraction:.3e} above {bound:.3e}; increase z_max")]
    TailMass { fraction: f64, bound: f64 },

    #[error("time {t} outside admissible range (0, {t_max})")]
    TimeOutOfRange { t: f64, t_max: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// True for failures of the numerics (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_)
                | Error::PicardDiverged { .. }
                | Error::NoSlipViolation { .. }
                | Error::Cfl { .. }
                | Error::TailMass { .. }
        )
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
