//! Late fusion of the social-cue maps, the raw frame and the SSL map into
//! one fixation density map, and the robot loop around it.

mod model;
mod robot;
mod stack;
mod train;

pub use model::{largmu_forward, FusionConfig, FusionModel, FusionObjective};
pub use robot::{
    build_fusion_samples, draw_fusion_design, robot_participant_id, run_robot_trial, simulate_robot_session,
    timestep_frames, CaptureNoise, FixationState, FusionDatasetConfig, FusionSample, RobotModels, RobotRunner,
    RobotSession, RobotTrialOutcome, StackBuilder,
};
pub use stack::{dam_weights, FeatureMapStack, StackEntry, CUE_STREAMS, CUE_WINDOW, SSL_STREAM, SSL_WINDOW, STREAMS};
pub use train::{evaluate_fusion, evaluate_fusion_without_ssl, train_fusion, FusionEval};

use crate::actuation::ActuationError;
use crate::numerics::NumericsError;
use crate::protocol::ProtocolError;
use crate::ssl::SslError;
use crate::stimulus::StimulusError;

#[derive(Debug, thiserror::Error)]
pub enum FusionError {
    #[error("expected {expected} timesteps, got {got}")]
    Timesteps { expected: usize, got: usize },
    #[error("{0}")]
    Shape(String),
    #[error("{0}")]
    Config(String),
    #[error("the {0} model is untrained")]
    Untrained(&'static str),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Ssl(#[from] SslError),
    #[error(transparent)]
    Stimulus(#[from] StimulusError),
    #[error(transparent)]
    Actuation(#[from] ActuationError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}
