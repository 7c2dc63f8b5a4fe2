//! Loss composition, the optimization loop and checkpoints.

mod checkpoint;
mod losses;
mod trainer;

pub use checkpoint::{write_json, Checkpoint};
pub use losses::{
    check_labels, classification_losses, classification_losses_rows, mcl_features, total_loss,
    warmup_schedule, ActiveLosses, LossBreakdown, LossNodes,
};
pub use trainer::{evaluate, log_loss, train, train_dataset, EpochRecord, TrainOutcome};
