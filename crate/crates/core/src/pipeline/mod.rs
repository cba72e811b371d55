//! Synthetic data, configuration, training, checkpoints and ablations.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod run;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{Ablation, PruneMode, PruneSchedule, TrainConfig, SEED_ENV};
pub use data::{global_snr_db, load_pair_dir, synth_dataset, NoiseKind, NoisyPair, SynthDatasetSpec};
pub use run::{
    ablation_table_text, enhance_file, evaluate, param_table, param_table_text, run_ablations, AblationRow, DatasetSource, ParamRow,
};
pub use train::{EpochRecord, EvalSummary, History, Model, Prepared, PruneEvent, StepRecord, Trainer};
