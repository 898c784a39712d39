//! Greedy sentence selection against a target, step by step, and how the
//! result ranks among every subset of the same size. Candidates are the first
//! 12 sentences of the reference.
//!
//! ```text
//! cargo run --example oracle_selection -- [seed]
//! ```

use citegcl::harness::generate_synthetic_corpus;
use citegcl::rouge::mean_rouge_12;
use citegcl::selection::{greedy_select, selection_target};
use citegcl::corpus::SplitRole;

fn main() -> citegcl::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let docs = generate_synthetic_corpus(6, 120, 1.5, seed)?;
    let (source, reference) = (&docs[0], &docs[1]);
    let target = selection_target(source, SplitRole::Train)?;
    let mut sentences = reference.sentence_tokens();
    sentences.truncate(12);
    println!("target: abstract of {} ({} tokens)", source.id, target.text.len());
    println!("candidates: {} sentences of {}", sentences.len(), reference.id);

    let sel = greedy_select(&sentences, &target, 7);
    for (step, (&i, score)) in sel.sentence_indices.iter().zip(&sel.step_scores).enumerate() {
        println!("step {}: sentence {i:>2}  score {score:.4}  \"{}\"", step + 1, sentences[i].join(" "));
    }

    let k = sel.sentence_indices.len();
    if k > 0 {
        let n = sentences.len();
        let mut scores: Vec<f64> = (0u32..1 << n)
            .filter(|m| m.count_ones() as usize == k)
            .map(|m| {
                let joined: Vec<String> =
                    (0..n).filter(|i| m >> i & 1 == 1).flat_map(|i| sentences[i].clone()).collect();
                mean_rouge_12(&joined, &target.text)
            })
            .collect();
        scores.sort_by(|a, b| b.total_cmp(a));
        let rank = scores.iter().filter(|&&s| s > sel.score + 1e-12).count() + 1;
        println!("greedy score {:.4} ranks {rank} of {} subsets of size {k} (best {:.4})", sel.score, scores.len(), scores[0]);
    }
    Ok(())
}
