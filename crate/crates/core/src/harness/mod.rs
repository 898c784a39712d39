//! End-to-end pipeline: configuration, synthetic data, training loop,
//! evaluation and ρ sweeps.

pub mod config;
pub mod eval;
pub mod instance;
pub mod synthetic;
pub mod train;

pub use config::{learning_rate, Scale, TrainConfig};
pub use eval::{evaluate, evaluate_model, summarize, sweep_rho, DocScore, EvalReport, RhoRow, RhoSweep};
pub use instance::{build_eval_inputs, build_selection_cache, build_training_instance, derive_seed, Built, EncoderInput, TrainingInstance};
pub use synthetic::{generate_synthetic_corpus, write_synthetic_corpus};
pub use train::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, Optimizer, StepLog, TrainSummary, Trainer};

use crate::corpus::{make_splits, Corpus, CorpusSplit};
use crate::error::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
/// More than half of the training documents were skipped.
pub const EXIT_DEGENERATE: i32 = 3;

/// Fraction of skipped training documents above which a run is refused.
pub const MAX_SKIP_FRACTION: f64 = 0.5;

/// Process exit code for an error surfaced by the command line.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Parse { .. } | Error::Validation(_) | Error::UnknownId(_) | Error::Config(_) => EXIT_VALIDATION,
        Error::DegenerateGraph(_) | Error::DegenerateDegree(_) | Error::DegeneratePool => EXIT_DEGENERATE,
        _ => EXIT_FAILURE,
    }
}

/// The split a configuration describes: BFS regions of the configured sizes
/// in the configured mode, seeded by `rng_seed`.
pub fn split_for(corpus: &Corpus, config: &TrainConfig) -> Result<CorpusSplit> {
    make_splits(
        corpus.graph(),
        (config.train_docs, config.val_docs, config.test_docs),
        config.mode,
        config.rng_seed,
    )
}
