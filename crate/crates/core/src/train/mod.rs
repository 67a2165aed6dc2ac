//! Multi-task loss, Adam, rate schedules, gradual unfreezing and transfer.

pub mod eval;
pub mod loss;
pub mod optim;
pub mod schedule;
mod trainer;

pub use eval::{evaluate, score_predictions, EvalReport};
pub use loss::{add_l2_gradients, l2_sum, total_loss, total_loss_from_parts, LossConfig};
pub use optim::{discriminative_scale, Adam, AdamConfig};
pub use schedule::{gradual_unfreeze, stlr, unfreeze_groups, FinetuneSchedule, Plateau, StlrConfig};
pub use trainer::{
    dataset_loss, encode_all, train, train_with, transfer, transfer_with, EpochMetrics, SchedulerKind,
    TrainConfig, TrainOutcome, TransferMode,
};
