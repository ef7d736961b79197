use std::path::PathBuf;

/// Errors produced anywhere in the generation pipeline.
#[derive(thiserror::Error, Debug)]
pub enum ForgeError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(
        "degenerate C-arm orbit: viewing direction is parallel to the patient axis (cran/caud = {cran_caud_deg} deg)"
    )]
    DegenerateOrbit { cran_caud_deg: f64 },

    #[error("point projects from behind the source (depth {depth_mm:.6} mm)")]
    BehindSource { depth_mm: f64 },

    #[error("mesh degeneracy: {0}")]
    MeshDegenerate(String),

    #[error("voxelization integrity: {odd_rows} of {total_rows} rows have odd crossing parity")]
    VoxelizationIntegrity { odd_rows: usize, total_rows: usize },

    #[error("incompatible grids: {0}")]
    IncompatibleGrids(String),

    #[error("wrong volume kind: expected {expected}, got {actual}")]
    WrongKind { expected: String, actual: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("no detection: belief map has no positive response")]
    NoDetection,

    #[error("parse error in `{field}`: {message}")]
    Parse { field: String, message: String },

    #[error("unsupported `{field}`: {value}")]
    Unsupported { field: String, value: String },

    #[error("truncated data in {path}: expected {expected} bytes, found {actual}")]
    Truncated { path: PathBuf, expected: u64, actual: u64 },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("record validation failed for {path}: {message}")]
    InvalidRecord { path: PathBuf, message: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("image encoding: {0}")]
    Image(String),
}

impl ForgeError {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        ForgeError::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn parse(field: impl Into<String>, message: impl Into<String>) -> Self {
        ForgeError::Parse {
            field: field.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by bad input data rather than misuse of the API.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            ForgeError::Parse { .. }
                | ForgeError::Unsupported { .. }
                | ForgeError::Truncated { .. }
                | ForgeError::InvalidRecord { .. }
                | ForgeError::Io { .. }
                | ForgeError::Json(_)
                | ForgeError::Config(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, ForgeError>;
