//! Adagrad optimization, initialization and layer transfer, the
//! train/fine-tune loop and the checkpoint format.

pub mod checkpoint;
pub mod init;
pub mod optimizer;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, ModelCheckpoint, Provenance, TransferOrigin};
pub use init::{init_model, init_params, transfer_initialize};
pub use optimizer::{adagrad_step, OptimizerState};
pub use train::{corpus_char_ppl, mix_seed, train, EpochRecord, TrainConfig, TrainingHistory};
