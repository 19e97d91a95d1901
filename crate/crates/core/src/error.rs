use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("point has non-positive depth {depth}")]
    NonPositiveDepth { depth: f64 },
    #[error("segment endpoints coincide")]
    DegenerateSegment,
    #[error("line pencil is rank deficient ({0})")]
    RankDeficient(&'static str),
    #[error("insufficient keypoint correspondences: {usable} usable, need {required}")]
    InsufficientCorrespondences { usable: usize, required: usize },
    #[error("imaginary focal length (f^2 = {focal_squared})")]
    ImaginaryFocal { focal_squared: f64 },
    #[error("vanishing point lies at infinity")]
    VanishingPointAtInfinity,
    #[error("vanishing-point triangle is degenerate")]
    DegenerateTriangle,
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("dimension mismatch: expected {expected}, got {actual} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("invalid skeleton template: {0}")]
    InvalidTemplate(String),
    #[error("no valid joint pairs for the symmetry term")]
    NoValidPairs,
    #[error("insufficient keypoints for {subject}: {confident} confident, need {required}")]
    InsufficientKeypoints {
        subject: &'static str,
        confident: usize,
        required: usize,
    },
    #[error("calibration failed: {0}")]
    CalibrationFailed(String),
    #[error("objective is not finite ({value}) at parameters {params:?}")]
    NonFiniteLoss { value: f64, params: Vec<f64> },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("scene sampling exhausted after {attempts} attempts")]
    SamplingExhausted { attempts: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}
