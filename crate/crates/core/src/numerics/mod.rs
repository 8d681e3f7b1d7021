//! Double-precision tensor kernel with hand-written forward and backward
//! passes for the layers the attention models need.
//!
//! Every reduction runs in a fixed order, so identical inputs give
//! bit-identical outputs.

mod adam;
mod attention;
mod checkpoint;
mod conv;
mod gmu;
mod gradcheck;
mod loss;
mod lstm;
pub mod ops;
mod params;
mod tensor;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use attention::{attentive_step, attentive_step_backward, register_attention, AttentionCache};
pub use checkpoint::{load_params, read_params, save_params, write_params, CHECKPOINT_MAGIC};
pub use conv::{conv2d, conv2d_backward, ConvGrads};
pub use gmu::{gmu_fuse, gmu_fuse_backward, register_gmu, GmuCache};
pub use gradcheck::{grad_check, GradCheckReport, Objective};
pub use loss::{kl_from_logits, kl_loss, KL_FLOOR};
pub use lstm::{convlstm_step, convlstm_step_backward, register_convlstm, LstmCache};
pub use params::{InitSpec, ParamSet};
pub use tensor::Tensor;
pub use train::{epoch_batches, TrainConfig, TrainHistory};

#[derive(Debug, thiserror::Error)]
pub enum NumericsError {
    #[error("{op}: dimension mismatch: {detail}")]
    Dimension { op: &'static str, detail: String },
    #[error("non-finite value in {what}")]
    NonFinite { what: String },
    #[error("duplicate parameter path `{0}`")]
    DuplicateParam(String),
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("{op}: domain error: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("{op}: expected {expected}, got {got}")]
    Arity {
        op: &'static str,
        expected: String,
        got: usize,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Parameter path under a layer prefix.
pub(crate) fn path(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub(crate) fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(), NumericsError> {
    if a.shape() != b.shape() {
        return Err(NumericsError::Dimension {
            op,
            detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
        });
    }
    Ok(())
}
