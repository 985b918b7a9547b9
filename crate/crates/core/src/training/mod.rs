//! Backbone pretraining, stage-1 LoRA fine-tuning and stage-2 projection
//! training, plus the no-grad loss evaluators used to track them.

mod config;
mod engine;
mod loss;
mod mask;
mod stages;

pub use config::TrainConfig;
pub use engine::{write_loss_csv, LossCurve, StepLoss};
pub use loss::{eval_answer_loss, mean_answer_loss, stage2_eval_loss};
pub use mask::answer_mask;
pub use stages::{
    icl_training_plan, jitter_offset, pretrain, stage1_trainable, stage2_start, stage2_trainable, train_stage1,
    train_stage2,
    Neighbors, Stage2Outcome, TrainOutcome,
};
