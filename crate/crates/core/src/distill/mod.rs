//! Block distillation: sink tokens, block-dropout KL, token weighting and
//! the combined loss, trained against a frozen full-attention teacher.

mod config;
mod loss;
mod sinks;
mod train;

pub use config::DistillConfig;
pub use loss::{
    block_dropout_kl, block_dropout_kl_grad, distillation_loss, distillation_loss_grad, per_token_ce, token_weights,
    weighted_ce, weighted_ce_grad, LossBreakdown, LossInputs,
};
pub use sinks::{insert_sink_tokens, strip_sink_tokens, Augmented, SinkLayout};
pub use train::{
    evaluate, sample_loss_and_grad, teacher_pass, train_language_model, DistillSample, Distiller, EvalReport,
    LmTrainConfig, StepMetrics, TeacherPass,
};
