use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("port {port} outside supported range [{min}, {max}]")]
    PortOutOfRange { port: i32, min: i32, max: i32 },

    #[error("port {0} listed more than once")]
    DuplicatePort(i32),

    #[error("target port list is empty")]
    EmptyTargets,

    #[error("invalid {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("mode {0} is not in the fiber mode set")]
    ModeNotInSet(i32),

    #[error(
        "modes {a} and {b} are separated by {separation_ns} ns, not resolvable with {bin_width_ns} ns bins"
    )]
    Unresolvable {
        a: i32,
        b: i32,
        separation_ns: f64,
        bin_width_ns: f64,
    },

    #[error("LFSR seed must be a nonzero 12-bit value, got {0}")]
    InvalidSeed(u16),

    #[error("entropy exhausted at pulse {pulse}")]
    EntropyExhausted { pulse: usize },

    #[error("interferometer delay {delay_ps} ps does not match bin separation {bin_separation_ps} ps")]
    DelayMismatch {
        delay_ps: f64,
        bin_separation_ps: f64,
    },

    #[error("gating window {window_ps} ps exceeds the qubit period {period_ps} ps")]
    GateTooWide { window_ps: f64, period_ps: f64 },

    #[error("invalid tally: {0}")]
    InvalidTally(String),

    #[error("no feasible point in the intensity grid")]
    EmptyGrid,

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("decode error: {0}")]
    Decode(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// Short machine-readable tag, used in the CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::PortOutOfRange { .. } => "port_out_of_range",
            Error::DuplicatePort(_) => "duplicate_port",
            Error::EmptyTargets => "empty_targets",
            Error::InvalidParameter { .. } => "invalid_parameter",
            Error::ModeNotInSet(_) => "mode_not_in_set",
            Error::Unresolvable { .. } => "unresolvable",
            Error::InvalidSeed(_) => "invalid_seed",
            Error::EntropyExhausted { .. } => "entropy_exhausted",
            Error::DelayMismatch { .. } => "delay_mismatch",
            Error::GateTooWide { .. } => "gate_too_wide",
            Error::InvalidTally(_) => "invalid_tally",
            Error::EmptyGrid => "empty_grid",
            Error::Config { .. } => "config",
            Error::Decode(_) => "decode",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
