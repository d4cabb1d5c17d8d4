use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the library can report.
///
/// Variants fall into three groups that map onto CLI exit codes: input
/// problems (config syntax, schema, model validation, discretization
/// planning), runtime problems (a step leaving the admissible set, bad
/// comparisons between trajectories) and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("class {class} initial density {value} at cell {cell} outside [0, {max_density}]")]
    InvalidDensityRange {
        class: usize,
        cell: usize,
        value: f64,
        max_density: f64,
    },

    #[error("total initial density {total} at cell {cell} exceeds common maximum {max_density}")]
    SimplexViolation {
        cell: usize,
        total: f64,
        max_density: f64,
    },

    #[error("total-density coupling needs equal maximal densities, got {0:?}")]
    MixedMaxDensity(Vec<f64>),

    #[error("kernel support {length} is not an integer multiple of dx = {dx}")]
    NonCommensurateSupport { length: f64, dx: f64 },

    #[error("domain length {length} is not an integer multiple of dx = {dx}")]
    NonCommensurateDomain { length: f64, dx: f64 },

    #[error("no time step in [{dt_min}, {dt_max}] aligns delays {delays:?} and horizon {t_final}")]
    DelayAlignmentFailure {
        delays: Vec<f64>,
        t_final: f64,
        dt_min: f64,
        dt_max: f64,
    },

    #[error("lambda = {lambda} exceeds the CFL bound {bound}")]
    CflViolation { lambda: f64, bound: f64 },

    #[error("kernel spans {support} cells but the periodic domain has only {n_cells}")]
    KernelWiderThanDomain { support: usize, n_cells: usize },

    #[error("step {step}: class {class} cell {cell} value {value} left [0, {max_density}]")]
    BoundViolation {
        step: usize,
        class: usize,
        cell: usize,
        value: f64,
        max_density: f64,
    },

    #[error("output time {time} outside [0, {t_final}]")]
    OutputTimeOutOfRange { time: f64, t_final: f64 },

    #[error("entropy inequality is only available for per-class saturation coupling")]
    CouplingUnsupported,

    #[error("trajectory carries no total-variation series")]
    MissingTvSeries,

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("grids are not nested by a factor of two: {0}")]
    NonNestedGrids(String),

    #[error("penetration rate {0} leaves [0, 1]")]
    PenetrationOutOfRange(f64),

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by the input rather than by running it.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse(_)
                | Error::Schema(_)
                | Error::InvalidParameter { .. }
                | Error::InvalidDensityRange { .. }
                | Error::SimplexViolation { .. }
                | Error::MixedMaxDensity(_)
                | Error::NonCommensurateSupport { .. }
                | Error::NonCommensurateDomain { .. }
                | Error::DelayAlignmentFailure { .. }
                | Error::CflViolation { .. }
                | Error::KernelWiderThanDomain { .. }
                | Error::PenetrationOutOfRange(_)
                | Error::UnknownPreset(_)
                | Error::OutputTimeOutOfRange { .. }
                | Error::NonNestedGrids(_)
        )
    }
}
