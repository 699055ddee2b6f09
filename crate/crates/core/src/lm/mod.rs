//! Language modeling on top of the cells: vocabularies, truncated-BPTT
//! batching, training, evaluation, and checkpoints.

pub mod batch;
pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod metrics;
pub mod model;
pub mod train;
pub mod vocab;

pub use batch::{batch_stream, BatchStream, Block};
pub use checkpoint::{decode_checkpoint, load_checkpoint, AnyCheckpoint, Checkpoint};
pub use config::TrainConfig;
pub use eval::{evaluate, evaluate_ids, EvalReport};
pub use metrics::EpochMetrics;
pub use model::LanguageModel;
pub use train::{read_corpus, train, train_from_paths, TrainOutcome, Trainer};
pub use vocab::{TokenMode, Vocabulary};

#[cfg(test)]
mod tests;
