//! Adam optimization, the mini-batch training loop, and checkpoints.

mod adam;
mod checkpoint;
mod trainer;

pub use adam::AdamState;
pub use checkpoint::{Checkpoint, CheckpointMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use trainer::{batch_step, train, TrainReport};
