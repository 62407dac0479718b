//! Staged optimisation, checkpoints and the loss log.

pub mod checkpoint;
pub mod objective;
pub mod schedule;
pub mod train;

pub use checkpoint::{load_checkpoint, manifest_len, read_state, save_checkpoint, TrainState};
pub use schedule::{Stage, StageKind, StageSchedule, Term};
pub use train::{
    checkpoint_dir, probe_set, sample_batch, train, Models, StageReport, StepOutcome, TrainReport, Trainer, LOSS_LOG,
};
