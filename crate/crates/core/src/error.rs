use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),
    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("plane passes through the reference camera center")]
    DegeneratePlane,
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid plane hypothesis: {0}")]
    InvalidHypothesis(String),
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFiniteInput(String),
    #[error("scene has no surfels")]
    EmptyScene,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("pixel ({x}, {y}) is too close to the image border")]
    OutOfBounds { x: usize, y: usize },
    #[error("volume contains no admissible zero crossing")]
    EmptySurface,
    #[error("metric input is empty")]
    EmptyInput,
    #[error("non-finite loss at step {step} (view {view}): {detail}")]
    NonFiniteLoss { step: usize, view: usize, detail: String },
    #[error("unsupported camera model `{0}`")]
    UnsupportedCameraModel(String),
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("{file}:{line}: {msg}")]
    MalformedLine { file: PathBuf, line: usize, msg: String },
    #[error("invalid synthetic scene spec: {0}")]
    InvalidSpec(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dataset has {got} views, at least {needed} required")]
    TooFewViews { needed: usize, got: usize },
    #[error("volume of {0} voxels exceeds the allocation limit")]
    VolumeTooLarge(usize),
    #[error("malformed {kind} file {path}: {msg}")]
    Format {
        kind: &'static str,
        path: PathBuf,
        msg: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    /// True for failures caused by numerical breakdown rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFiniteLoss { .. })
    }
}
