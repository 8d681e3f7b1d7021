//! Configuration, run manifests, the batch pipelines behind the CLI, and the
//! session service that runs human participants through the same protocol
//! the robot sees.

mod config;
mod manifest;
mod pipeline;
mod session;

pub use config::{HarnessConfig, DEFAULT_SESSIONS};
pub use manifest::{digest_file, read_manifests, FileDigest, RunManifest, MANIFEST_FILE};
pub use pipeline::{
    analyze_files, export_stimuli, load_models, simulate, train, ExportOutcome, SimulateOutcome, TrainOutcome,
    HeldOut, TrainTarget, FUSION_CHECKPOINT, GAZE_DIR, REPORT_CSV, REPORT_TXT, ROBOT_CSV, SSL_CHECKPOINT,
};
pub use session::{
    AdvanceOutcome, Clock, CreateSession, Phase, ResponseAck, ResponseSubmission, SessionCreated, SessionService,
    SessionStatus, TrialDescriptor,
};

use crate::actuation::ActuationError;
use crate::analysis::AnalysisError;
use crate::fusion::FusionError;
use crate::kv::KvError;
use crate::numerics::NumericsError;
use crate::protocol::ProtocolError;
use crate::ssl::SslError;
use crate::stimulus::StimulusError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("unknown session `{0}`")]
    NotFound(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("missing checkpoint {path}; run `{command}` first")]
    MissingCheckpoint { path: String, command: String },
    #[error("digest mismatch for {path}: manifest {expected}, file {actual}")]
    Digest {
        path: String,
        expected: String,
        actual: String,
    },
    #[error(transparent)]
    Kv(#[from] KvError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Ssl(#[from] SslError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Stimulus(#[from] StimulusError),
    #[error(transparent)]
    Actuation(#[from] ActuationError),
    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{path}: {source}")]
    File { path: String, source: std::io::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    pub(crate) fn file(path: &std::path::Path, source: std::io::Error) -> Self {
        HarnessError::File {
            path: path.display().to_string(),
            source,
        }
    }
}
