//! Per-primitive stochastic sequence-to-sequence dynamics models.

mod bank;
mod model;
mod train;

pub use bank::{renormalize_quaternions, ModelBank};
pub use model::{
    sample_latent, DynamicsArch, DynamicsModel, EncodedVars, LatentDistribution, LatentMode, DECODER_GROUP,
    ENCODER_GROUP, LOGVAR_MAX, LOGVAR_MIN, SCALE_FLOOR,
};
pub use train::{segment_batch_loss, segments_by_primitive, train_dynamics, DynamicsTrainConfig, EncoderFeeding};
