//! BFS train/validation/test regions in both split modes.
//!
//! ```text
//! cargo run --example citation_splits -- [docs] [seed]
//! ```

use citegcl::corpus::{make_splits, Corpus, SplitMode, SplitRole};
use citegcl::harness::generate_synthetic_corpus;

fn main() -> citegcl::Result<()> {
    let mut args = std::env::args().skip(1);
    let docs: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(60);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let corpus = Corpus::from_documents(generate_synthetic_corpus(docs, 300, 2.0, seed)?)?;
    let sizes = (docs * 2 / 3, docs / 6, docs - docs * 2 / 3 - docs / 6);
    println!("{} documents, {} citation edges, sizes {:?}", corpus.len(), corpus.graph().edge_count(), sizes);
    for mode in [SplitMode::Inductive, SplitMode::Transductive] {
        let split = make_splits(corpus.graph(), sizes, mode, seed)?;
        println!(
            "{mode:?}: {} retained edges, {} cross-split",
            split.retained_edges.len(),
            split.cross_split_edges()
        );
        for role in [SplitRole::Train, SplitRole::Val, SplitRole::Test] {
            let ids = split.ids(role);
            let visible = split.visible_graph(role);
            let mean_degree = ids.iter().map(|id| visible.degree(id)).sum::<usize>() as f64 / ids.len().max(1) as f64;
            println!("  {:<5} {:>3} docs  mean visible degree {mean_degree:.2}", role.to_string(), ids.len());
        }
    }
    Ok(())
}
