use std::path::PathBuf;

use thiserror::Error;

/// Which camera of the rig a quantity belongs to.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Left,
    Right,
}

impl View {
    pub const BOTH: [View; 2] = [View::Left, View::Right];

    pub fn as_str(self) -> &'static str {
        match self {
            View::Left => "left",
            View::Right => "right",
        }
    }
}

impl std::fmt::Display for View {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("point behind camera (depth {depth:.3e} m){}", context_suffix(*.view, *.corner))]
    PointBehindCamera {
        depth: f64,
        view: Option<View>,
        corner: Option<usize>,
    },

    #[error("degenerate matrix: singular values {0:?}")]
    DegenerateMatrix([f64; 3]),

    #[error("degenerate stereo baseline (norm {0:.3e} m)")]
    DegenerateBaseline(f64),

    #[error("insufficient observations: {0}")]
    InsufficientObservations(String),

    #[error("objective became non-finite at iteration {0}")]
    NonFiniteObjective(usize),

    #[error("mask dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),

    #[error("degenerate polygon (area {0:.3e})")]
    DegeneratePolygon(f64),

    #[error("invalid polygon: {0}")]
    InvalidPolygon(&'static str),

    #[error("scene sampling exhausted after {0} attempts")]
    SamplingExhausted(usize),

    #[error("invalid {what}: {reason}")]
    InvalidValue { what: &'static str, reason: String },

    #[error("parse error in {file}: {path}: {message}")]
    Parse {
        file: PathBuf,
        path: String,
        message: String,
    },

    #[error("duplicate corner {corner} in {view} view of frame {frame}")]
    DuplicateCorner {
        frame: String,
        view: View,
        corner: usize,
    },

    #[error("missing ground truth for frame {0}")]
    MissingTruth(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn context_suffix(view: Option<View>, corner: Option<usize>) -> String {
    match (view, corner) {
        (Some(v), Some(c)) => format!(" in {v} view, corner {c}"),
        (Some(v), None) => format!(" in {v} view"),
        (None, Some(c)) => format!(", corner {c}"),
        (None, None) => String::new(),
    }
}

impl Error {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidValue {
            what,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attach view/corner context to a `PointBehindCamera` error.
    pub(crate) fn at(self, view: View, corner: usize) -> Self {
        match self {
            Error::PointBehindCamera { depth, .. } => Error::PointBehindCamera {
                depth,
                view: Some(view),
                corner: Some(corner),
            },
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
