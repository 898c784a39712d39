//! The per-document citation graph and document-token graph one training
//! instance is built from.
//!
//! ```text
//! cargo run --example hierarchical_graph -- [rho]
//! ```

use citegcl::corpus::{Corpus, CorpusSplit};
use citegcl::harness::{build_selection_cache, build_training_instance, generate_synthetic_corpus, Built, TrainConfig};
use citegcl::vocab::Vocab;

fn main() -> citegcl::Result<()> {
    let mut config = TrainConfig::desk();
    if let Some(rho) = std::env::args().nth(1) {
        config.set("rho", &rho)?;
    }
    let corpus = Corpus::from_documents(generate_synthetic_corpus(20, 120, 2.0, 1)?)?;
    let split = CorpusSplit::train_only(corpus.graph());
    let cache = build_selection_cache(&corpus, &split, config.max_sentences)?;
    let vocab = Vocab::from_documents(corpus.documents());

    for id in split.train_ids.iter().take(4) {
        let inst = match build_training_instance(&corpus, &split, &cache, &vocab, &config, id)? {
            Built::Instance(i) => i,
            Built::Skipped(reason) => {
                println!("{id}: skipped ({reason})\n");
                continue;
            }
        };
        let g = &inst.graph;
        println!(
            "{id}: {} neighbours ({} above rho = {}), {} negatives",
            g.num_neighbors,
            g.surviving_neighbors(),
            g.rho,
            g.num_negatives
        );
        print!("{:>6}", "");
        for n in &g.node_ids {
            print!(" {n:>6}");
        }
        println!();
        for (i, row) in g.weights.rows().into_iter().enumerate() {
            print!("{:>6}", g.node_ids[i]);
            for w in row {
                print!(" {w:>6.3}");
            }
            println!();
        }
        let b = &inst.bipartite;
        println!(
            "tokens: {} positive, {} negative; positive coefficients {:.3}..{:.3}\n",
            b.num_positive,
            b.num_negative(),
            inst.tra.numerator.iter().filter(|&&c| c > 0.0).fold(f64::INFINITY, |a, &c| a.min(c)),
            inst.tra.numerator.iter().fold(0.0f64, |a, &c| a.max(c)),
        );
    }
    Ok(())
}
