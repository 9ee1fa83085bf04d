use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the audit pipeline can surface.
///
/// Variants are grouped by the stage that raises them; [`Error::stage`] names
/// that stage and [`Error::exit_code`] maps it to a process exit status.
#[derive(Debug, Error)]
pub enum Error {
    // interchange
    #[error("manifest is missing attribution maps for model {0}")]
    MissingModel(String),
    #[error("image id lists differ between models: {0}")]
    IdMismatch(String),
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch { expected: Vec<usize>, found: Vec<usize> },
    #[error("attribution map has zero mass after clamping")]
    DegenerateMap,
    #[error("malformed array file {path}: {reason}")]
    Npy { path: PathBuf, reason: String },
    #[error("invalid manifest: {0}")]
    BadManifest(String),

    // partitioning
    #[error("axis of length {len} is not divisible by block size {block}")]
    NotDivisible { len: usize, block: usize },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("expected a 2-D array, got {0} dimensions")]
    Not2D(usize),
    #[error("requested {k} regions for {pixels} pixels")]
    BadK { k: usize, pixels: usize },
    #[error("label map contains only background")]
    NoForeground,

    // statistics
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("vector has zero variance")]
    ZeroVariance,
    #[error("degenerate profile: {0}")]
    DegenerateProfile(&'static str),
    #[error("need at least {need} regions, got {got}")]
    TooFewRegions { need: usize, got: usize },
    #[error("every bootstrap replicate was degenerate")]
    AllDegenerate,

    // rcs / attenuation
    #[error("no displacement of at least {min_shift} cells exists on a {rows}x{cols} map")]
    Infeasible { rows: usize, cols: usize, min_shift: usize },
    #[error("bad shape: {0}")]
    BadShape(String),
    #[error("group (y={y}, a={a}) has no samples")]
    EmptyGroup { y: u8, a: u8 },
    #[error("search grid is empty")]
    EmptyGrid,

    #[error("bad configuration: {0}")]
    BadConfig(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("image encoding error: {0}")]
    Image(#[from] image::ImageError),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("zip archive error: {0}")]
    Zip(#[from] zip::result::ZipError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn npy(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Npy {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Name of the pipeline stage that raises this error.
    pub fn stage(&self) -> &'static str {
        use Error::*;
        match self {
            MissingModel(_) | IdMismatch(_) | ShapeMismatch { .. } | DegenerateMap | Npy { .. } | BadManifest(_) => {
                "interchange"
            }
            NotDivisible { .. } | Not2D(_) | BadK { .. } | NoForeground => "partitioning",
            EmptyInput(_) => "input",
            LengthMismatch(..) | ZeroVariance | DegenerateProfile(_) | TooFewRegions { .. } => "correlations",
            AllDegenerate => "inference",
            Infeasible { .. } => "rcs",
            BadShape(_) | EmptyGroup { .. } | EmptyGrid => "attenuation",
            BadConfig(_) => "config",
            Io { .. } | Json(_) | Image(_) | Csv(_) | Zip(_) => "io",
        }
    }

    /// Process exit status for the CLI, one per error class.
    pub fn exit_code(&self) -> i32 {
        match self.stage() {
            "config" => 2,
            "io" => 3,
            "interchange" => 10,
            "partitioning" => 11,
            "input" => 12,
            "correlations" => 13,
            "inference" => 14,
            "rcs" => 15,
            "attenuation" => 16,
            _ => 1,
        }
    }
}
