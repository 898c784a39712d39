//! Memorize an 8-document synthetic corpus at desk scale.
//!
//! ```text
//! cargo run --release --example overfit_synthetic -- [key=value ...]
//! ```
//!
//! Keys are `TrainConfig` fields; `total_steps` defaults to 2000.

use std::time::Instant;

use citegcl::corpus::{Corpus, CorpusSplit, SplitRole};
use citegcl::harness::{build_selection_cache, generate_synthetic_corpus, TrainConfig, Trainer};

fn main() -> citegcl::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let mut config = TrainConfig::desk();
    config.total_steps = 2000;
    config.rng_seed = 7;
    for arg in std::env::args().skip(1) {
        let (k, v) = arg
            .split_once('=')
            .ok_or_else(|| citegcl::Error::Config(format!("expected key=value, got `{arg}`")))?;
        config.set(k, v)?;
    }
    let steps = config.total_steps;

    let corpus = Corpus::from_documents(generate_synthetic_corpus(8, 120, 1.5, config.rng_seed)?)?;
    let split = CorpusSplit::train_only(corpus.graph());
    let cache = build_selection_cache(&corpus, &split, config.max_sentences)?;
    let mut trainer = Trainer::new(&corpus, &split, &cache, config)?;
    println!("{} instances, {} skipped", trainer.instances().len(), trainer.skipped.len());

    let start = Instant::now();
    let mut best = 0.0;
    let mut window = Vec::new();
    while trainer.step < steps {
        let log = trainer.train_step::<true>()?;
        window.push(log.total);
        if trainer.step % 100 == 0 {
            let mean_loss = window.iter().sum::<f64>() / window.len() as f64;
            window.clear();
            let report = trainer.evaluate(SplitRole::Train, "in-memory")?;
            best = f64::max(best, report.mean_rouge1);
            println!(
                "step {:>5}  mean loss {:>9.4}  nll {:>7.4}  dra {:>8.4}  tra {:>9.4}  R-1 {:.4}  {:>6.1}s",
                trainer.step,
                mean_loss,
                log.nll,
                log.dra,
                log.tra,
                report.mean_rouge1,
                start.elapsed().as_secs_f64()
            );
        }
    }
    let report = trainer.evaluate(SplitRole::Train, "in-memory")?;
    print!("{}", report.to_text());
    println!("best ROUGE-1 {best:.4} after {} steps in {:.1}s", trainer.step, start.elapsed().as_secs_f64());
    Ok(())
}
