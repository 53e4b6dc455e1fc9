use thiserror::Error;

/// Every failure the library can report.
///
/// The variants line up with the CLI exit-code classes: configuration and
/// contract problems are usage errors, shape and data problems come from the
/// inputs, and numeric failures cover non-finite values and failed gradient
/// checks.
#[derive(Debug, Error)]
pub enum FnrError {
    #[error("shape mismatch in {op}: {left_rows}x{left_cols} vs {right_rows}x{right_cols}")]
    Shape {
        op: &'static str,
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl FnrError {
    pub fn shape(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        FnrError::Shape {
            op,
            left_rows: left.0,
            left_cols: left.1,
            right_rows: right.0,
            right_cols: right.1,
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        FnrError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code for this error class: 1 usage/config, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            FnrError::Config(_) | FnrError::Contract(_) => 1,
            FnrError::Data(_) | FnrError::Shape { .. } | FnrError::Io { .. } => 2,
            FnrError::Numeric(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, FnrError>;
