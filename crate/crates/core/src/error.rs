//! Error type shared by every pipeline stage.
//!
//! Variants are grouped by how a front end should react to them, and
//! [`PipelineError::exit_code`] encodes that grouping as a process exit
//! status: `2` for configuration mistakes, `3` for missing upstream
//! artifacts, `4` for malformed or out-of-contract data, and `5` for
//! numerical failures. Exit code `1` is left to the harness for panics.

use thiserror::Error;

/// Convenient alias used throughout the crate.
pub type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Debug, Error)]
pub enum PipelineError {
    /// A configuration file or CLI flag violates the config schema.
    #[error("config error: {0}")]
    Config(String),

    /// A function argument is outside its documented domain.
    #[error("argument error: {0}")]
    Argument(String),

    /// A filter design request is unrealizable (e.g. cutoff at or above
    /// Nyquist).
    #[error("design error: {0}")]
    Design(String),

    /// Input data violates a structural invariant (lengths, label ranges,
    /// non-finite samples, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// A table or model was produced under a different column schema.
    #[error("schema error: {0}")]
    Schema(String),

    /// A text record could not be parsed; coordinates are 1-based.
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    /// A binary stream does not start with the expected magic/version.
    #[error("format error: {0}")]
    Format(String),

    /// The format itself is recognized but uses a feature we do not read
    /// (e.g. MAT cell arrays); the message names the offending construct.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// A named variable, column, or file is absent from its container.
    #[error("lookup error: {0}")]
    Lookup(String),

    /// A stream failed an integrity check (checksum, decompression).
    #[error("corrupt input: {0}")]
    Corrupt(String),

    /// A stored artifact is newer than this build understands.
    #[error("version error: {0}")]
    Version(String),

    /// Input is degenerate for the requested operation (constant signal,
    /// empty class, zero-power spectrum where a value is required).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// An upstream stage artifact the current stage depends on is missing.
    #[error("dependency error: {0}")]
    Dependency(String),

    /// A numerical procedure failed to converge or produced non-finite
    /// values despite valid inputs.
    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    /// Process exit status a CLI should use for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::Argument(_) | PipelineError::Design(_) => 2,
            PipelineError::Dependency(_) => 3,
            PipelineError::Numerical(_) => 5,
            _ => 4,
        }
    }

    /// Shorthand constructors keep call sites readable.
    pub fn config(msg: impl Into<String>) -> Self {
        PipelineError::Config(msg.into())
    }
    pub fn argument(msg: impl Into<String>) -> Self {
        PipelineError::Argument(msg.into())
    }
    pub fn design(msg: impl Into<String>) -> Self {
        PipelineError::Design(msg.into())
    }
    pub fn validation(msg: impl Into<String>) -> Self {
        PipelineError::Validation(msg.into())
    }
    pub fn schema(msg: impl Into<String>) -> Self {
        PipelineError::Schema(msg.into())
    }
    pub fn format(msg: impl Into<String>) -> Self {
        PipelineError::Format(msg.into())
    }
    pub fn unsupported(msg: impl Into<String>) -> Self {
        PipelineError::Unsupported(msg.into())
    }
    pub fn lookup(msg: impl Into<String>) -> Self {
        PipelineError::Lookup(msg.into())
    }
    pub fn corrupt(msg: impl Into<String>) -> Self {
        PipelineError::Corrupt(msg.into())
    }
    pub fn version(msg: impl Into<String>) -> Self {
        PipelineError::Version(msg.into())
    }
    pub fn degenerate(msg: impl Into<String>) -> Self {
        PipelineError::Degenerate(msg.into())
    }
    pub fn dependency(msg: impl Into<String>) -> Self {
        PipelineError::Dependency(msg.into())
    }
    pub fn numerical(msg: impl Into<String>) -> Self {
        PipelineError::Numerical(msg.into())
    }

    /// Prefixes `context` to the message while keeping the variant, so
    /// callers can localize an error (which window, which channel, ...)
    /// without changing its category or exit code.
    pub fn with_context(self, context: impl AsRef<str>) -> Self {
        let ctx = context.as_ref();
        match self {
            PipelineError::Config(m) => PipelineError::Config(format!("{ctx}: {m}")),
            PipelineError::Argument(m) => PipelineError::Argument(format!("{ctx}: {m}")),
            PipelineError::Design(m) => PipelineError::Design(format!("{ctx}: {m}")),
            PipelineError::Validation(m) => PipelineError::Validation(format!("{ctx}: {m}")),
            PipelineError::Schema(m) => PipelineError::Schema(format!("{ctx}: {m}")),
            PipelineError::Parse {
                row,
                column,
                message,
            } => PipelineError::Parse {
                row,
                column,
                message: format!("{ctx}: {message}"),
            },
            PipelineError::Format(m) => PipelineError::Format(format!("{ctx}: {m}")),
            PipelineError::Unsupported(m) => PipelineError::Unsupported(format!("{ctx}: {m}")),
            PipelineError::Lookup(m) => PipelineError::Lookup(format!("{ctx}: {m}")),
            PipelineError::Corrupt(m) => PipelineError::Corrupt(format!("{ctx}: {m}")),
            PipelineError::Version(m) => PipelineError::Version(format!("{ctx}: {m}")),
            PipelineError::Degenerate(m) => PipelineError::Degenerate(format!("{ctx}: {m}")),
            PipelineError::Dependency(m) => PipelineError::Dependency(format!("{ctx}: {m}")),
            PipelineError::Numerical(m) => PipelineError::Numerical(format!("{ctx}: {m}")),
            PipelineError::Io(e) => {
                let kind = e.kind();
                PipelineError::Io(std::io::Error::new(kind, format!("{ctx}: {e}")))
            }
        }
    }
}
