//! Train and score one model per edge threshold on a synthetic corpus.
//!
//! ```text
//! cargo run --release --example rho_sweep -- [steps] [rho ...]
//! ```

use citegcl::corpus::{Corpus, SplitRole};
use citegcl::harness::{build_selection_cache, generate_synthetic_corpus, split_for, sweep_rho, TrainConfig};

fn main() -> citegcl::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let mut args = std::env::args().skip(1);
    let mut config = TrainConfig::desk();
    config.total_steps = args.next().and_then(|s| s.parse().ok()).unwrap_or(200);
    config.checkpoint_every = config.total_steps;
    (config.train_docs, config.val_docs, config.test_docs) = (30, 5, 5);
    let mut rhos: Vec<f64> = args.map(|s| s.parse().map_err(|_| citegcl::Error::Config(format!("bad rho `{s}`")))).collect::<Result<_, _>>()?;
    if rhos.is_empty() {
        rhos = vec![0.5, 0.6, 0.7, 0.8];
    }
    let corpus = Corpus::from_documents(generate_synthetic_corpus(40, 400, 2.0, 0)?)?;
    let split = split_for(&corpus, &config)?;
    let cache = build_selection_cache(&corpus, &split, config.max_sentences)?;
    let sweep = sweep_rho(&corpus, &split, &cache, &config, &rhos, SplitRole::Test, None)?;
    print!("{}", sweep.to_text());
    Ok(())
}
