use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("insufficient samples: need at least {need}, got {got}")]
    InsufficientSamples { need: usize, got: usize },
    #[error("unknown class {class} (model has {num_classes} classes)")]
    UnknownClass { class: usize, num_classes: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("gradient overflow: non-finite gradient entry")]
    GradientOverflow,
    #[error("guidance needs a class")]
    GuidanceNeedsClass,
    #[error("invalid variance split at t={t}, t_prev={t_prev}")]
    InvalidVarianceSplit { t: usize, t_prev: usize },
    #[error("timestep {t} out of range 1..={t_max}")]
    TimestepOutOfRange { t: usize, t_max: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("empty evaluation")]
    EmptyEvaluation,
    #[error("metric out of range: {0}")]
    MetricOutOfRange(String),
    #[error("incongruent parameter structures")]
    IncongruentParams,
    #[error("checkpoint corrupt: {0}")]
    CheckpointCorrupt(String),
    #[error("splits overlap: {0}")]
    SplitOverlap(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
