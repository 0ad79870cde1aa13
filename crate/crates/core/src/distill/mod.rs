//! Fast pretraining distillation: the teacher pass writes sparse soft
//! labels and augmentation seeds once; students replay them without the
//! teacher.

mod config;
mod correlation;
mod engine;
mod gradcheck;
mod loss;
mod optim;
mod trace;

pub use config::RunConfig;
pub use correlation::{class_correlation, CorrelationMatrix};
pub use engine::{
    batch_checksum, evaluate, open_cache, predict, render_sample, student_train_online,
    student_train_replay, teacher_epoch, teacher_labels, teacher_save, train_supervised,
    Rendered, SavedEpoch, Trainer,
};
pub use gradcheck::{gradient_check, GradCheckReport, LinearToy, ModelObjective, Objective};
pub use loss::distill_loss;
pub use optim::{AdamW, OptimConfig};
pub use trace::{LossTrace, TraceEntry};
