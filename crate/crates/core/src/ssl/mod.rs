//! Sound-source localization: a GCC-PHAT oracle over the binaural clip and
//! a small two-ear network that turns one second of audio plus 16 video
//! frames into a fixation density map.

mod dataset;
mod features;
mod net;
mod oracle;
mod train;

pub use dataset::{
    build_ssl_samples, export_ssl_dataset, read_ssl_manifest, render_ssl_trial, scene_geometry, ManifestRow,
    SslDatasetConfig, SslSample, SslTrial, MANIFEST_HEADER,
};
pub use features::LogMel;
pub use net::{ssl_forward, SslConfig, SslInput, SslModel, SslObjective, VIDEO_PREFIX};
pub use oracle::{gcc_phat, gcc_phat_with, InterauralEstimate, DEFAULT_MAX_LAG_S, MIN_CLIP_MS, SILENCE_RMS};
pub use train::{evaluate_ssl, train_ssl, SslEval};

use crate::actuation::ActuationError;
use crate::numerics::NumericsError;
use crate::stimulus::StimulusError;

#[derive(Debug, thiserror::Error)]
pub enum SslError {
    #[error("clip of {samples} samples is shorter than the {needed} required")]
    ClipTooShort { samples: usize, needed: usize },
    #[error("no signal: both channels are silent")]
    NoSignal,
    #[error("expected {expected} video frames, got {got}")]
    Arity { expected: usize, got: usize },
    #[error("{0}")]
    Config(String),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Stimulus(#[from] StimulusError),
    #[error(transparent)]
    Actuation(#[from] ActuationError),
    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
