use std::path::PathBuf;

use thiserror::Error;

use crate::model::TissueClass;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid slice: {0}")]
    InvalidSlice(String),

    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("invalid tissue class code {0}")]
    InvalidClassCode(u32),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("fuzzy c-means needs at least 2 centroids, got {0}")]
    TooFewCentroids(usize),

    #[error("duplicate centroid value {0}")]
    DuplicateCentroids(f64),

    #[error("need at least {required} distinct intensity values, found {found}")]
    InsufficientDistinctValues { required: usize, found: usize },

    #[error("cluster {cluster} has zero total membership weight")]
    DegenerateCluster { cluster: usize },

    #[error("clustering degenerated at iteration {iteration}: {source}")]
    DegenerateIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("empty body: no pixel at or above {threshold_hu} HU")]
    EmptyBody { threshold_hu: f64 },

    #[error("wall regions overlap in {pixels} pixels")]
    OverlappingRegions { pixels: usize },

    #[error("{class} contour does not enclose any interior")]
    OpenContour { class: TissueClass },

    #[error("no labeled donor pixels available for nearest-label fill")]
    NoDonors,

    #[error("class {0} has no rank in the fusion precedence")]
    UnrankedClass(TissueClass),

    #[error("empty tissue: class {0} has no pixels")]
    EmptyTissue(TissueClass),

    #[error("need at least 2 subjects, got {0}")]
    TooFewSubjects(usize),

    #[error(
        "inconsistent measurement rows: expected {expected} values per subject, found {found}"
    )]
    RaggedRows { expected: usize, found: usize },

    #[error("subject {subject}: shifted mean {mean} is not positive")]
    NonPositiveMean { subject: usize, mean: f64 },

    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("no scan in the cohort was processed successfully ({failures} failures)")]
    NoSuccessfulScans { failures: usize },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Name of the pipeline stage this error was raised in, if tagged.
    pub fn stage(&self) -> Option<&'static str> {
        match self {
            Error::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }
}

/// Attaches a stage name to the error side of a result.
pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|source| Error::Stage {
            stage,
            source: Box::new(source),
        })
    }
}
