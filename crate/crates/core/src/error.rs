use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by the calibration pipeline and its file formats.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("insufficient inliers: best model has {found}, need {required}")]
    InsufficientInliers { found: usize, required: usize },

    #[error("length mismatch: {left} vs {right} points")]
    LengthMismatch { left: usize, right: usize },

    #[error("ambiguous x axis: first dot projects onto the origin")]
    AmbiguousAxis,

    #[error("dot order mismatch: {0}")]
    OrderMismatch(String),

    #[error("unknown tool `{0}`")]
    UnknownTool(String),

    #[error("invalid decomposition: total error {total} is below intrinsic error {intrinsic}")]
    InvalidDecomposition { total: f64, intrinsic: f64 },

    #[error("invalid board: {0}")]
    InvalidBoard(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("tool `{tool}`: {source}")]
    Tool {
        tool: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {message}")]
    Parse { path: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse error classes, used by the command line to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Input,
    Geometry,
    Lookup,
}

impl Error {
    pub fn for_tool(tool: impl Into<String>, source: Error) -> Self {
        Error::Tool {
            tool: tool.into(),
            source: Box::new(source),
        }
    }

    pub fn parse(path: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Tool { source, .. } => source.class(),
            Error::UnknownTool(_) => ErrorClass::Lookup,
            Error::EmptyInput
            | Error::DegenerateInput(_)
            | Error::InsufficientInliers { .. }
            | Error::LengthMismatch { .. }
            | Error::AmbiguousAxis
            | Error::OrderMismatch(_)
            | Error::InvalidDecomposition { .. } => ErrorClass::Geometry,
            Error::InvalidBoard(_)
            | Error::InvalidInput(_)
            | Error::Parse { .. }
            | Error::Io { .. } => ErrorClass::Input,
        }
    }
}
