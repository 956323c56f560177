//! The embedding model, the source-contrastive loss and the training loop.

mod loss;
mod model;
mod report;
mod train;

pub use loss::{sce_loss, sce_loss_value};
pub use model::{Encoder, LossNorm, ModelConfig, SceModel, SpeakerEmbeddingTable};
pub use report::{cosine_separation_report, CosineReport};
pub use train::{
    batch_from_tensors, batch_loss, batch_rng, loss_gradients, train, train_step,
    validation_batches, StepRecord, TrainConfig, TrainOutcome,
};
