//! Synthetic citation corpus with planted abstracts.
//!
//! Every abstract sentence also appears in the author's own body and, with
//! high probability, in the body of each citation neighbour. Oracle
//! selection therefore finds the abstract in a neighbour's text, and a model
//! can learn to copy it.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{save_corpus, Corpus, Document};
use crate::error::{Error, Result};

const OWN_SENTENCES: usize = 6;
const ABSTRACT_SENTENCES: usize = 3;
const PLANT_PROBABILITY: f64 = 0.85;
const SYLLABLES: [&str; 16] = ["ka", "lo", "mi", "ne", "ru", "sa", "ti", "vo", "ba", "de", "fu", "gi", "ho", "ju", "pe", "zo"];

/// Deterministic pronounceable word for index `i`.
fn word(i: usize) -> String {
    let mut s = String::new();
    let mut n = i;
    for _ in 0..3 {
        s.push_str(SYLLABLES[n % SYLLABLES.len()]);
        n /= SYLLABLES.len();
    }
    s
}

fn sentence(words: &[String], rng: &mut ChaCha8Rng) -> String {
    let len = rng.random_range(5..=8);
    let picked: Vec<&str> = (0..len).map(|_| words[rng.random_range(0..words.len())].as_str()).collect();
    format!("{}.", picked.join(" "))
}

pub fn doc_id(i: usize) -> String {
    format!("p{i:03}")
}

/// `num_docs` documents over `vocab_size` words with roughly `avg_edges`
/// references per document: a random tree plus extra random citations.
pub fn generate_synthetic_corpus(num_docs: usize, vocab_size: usize, avg_edges: f64, rng_seed: u64) -> Result<Vec<Document>> {
    if num_docs < 2 {
        return Err(Error::Validation("a synthetic corpus needs at least two documents".into()));
    }
    if vocab_size < 16 {
        return Err(Error::Validation("vocabulary of at least 16 words required".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let words: Vec<String> = (0..vocab_size).map(word).collect();
    let topics = (num_docs / 4).clamp(1, vocab_size / 8);
    let topic_words: Vec<Vec<String>> = (0..topics)
        .map(|t| words.iter().skip(t).step_by(topics).cloned().collect())
        .collect();

    let mut edges: BTreeSet<(usize, usize)> = BTreeSet::new();
    for i in 1..num_docs {
        edges.insert((i, rng.random_range(0..i)));
    }
    let target = ((avg_edges * num_docs as f64).round() as usize).min(num_docs * (num_docs - 1) / 2);
    let mut attempts = 0;
    while edges.len() < target && attempts < 100 * num_docs {
        attempts += 1;
        let a = rng.random_range(0..num_docs);
        let b = rng.random_range(0..num_docs);
        let (hi, lo) = (a.max(b), a.min(b));
        if hi != lo {
            edges.insert((hi, lo));
        }
    }
    let mut neighbors = vec![Vec::new(); num_docs];
    for &(a, b) in &edges {
        neighbors[a].push(b);
        neighbors[b].push(a);
    }

    let mut abstracts = Vec::with_capacity(num_docs);
    let mut bodies: Vec<Vec<String>> = Vec::with_capacity(num_docs);
    let mut topic_of = Vec::with_capacity(num_docs);
    for _ in 0..num_docs {
        let t = rng.random_range(0..topics);
        let vocab = &topic_words[t];
        let own: Vec<String> = (0..OWN_SENTENCES).map(|_| sentence(vocab, &mut rng)).collect();
        let abs: Vec<String> = (0..ABSTRACT_SENTENCES).map(|_| sentence(vocab, &mut rng)).collect();
        bodies.push(own);
        abstracts.push(abs);
        topic_of.push(t);
    }
    for i in 0..num_docs {
        let abs = abstracts[i].clone();
        bodies[i].extend(abs.iter().cloned());
        for &j in &neighbors[i] {
            for s in &abs {
                if rng.random_bool(PLANT_PROBABILITY) {
                    bodies[j].push(s.clone());
                }
            }
        }
    }
    let mut docs = Vec::with_capacity(num_docs);
    for i in 0..num_docs {
        let mut body = std::mem::take(&mut bodies[i]);
        body.shuffle(&mut rng);
        let extra = body[rng.random_range(0..body.len())].clone();
        let introduction = format!("{} {}", abstracts[i].join(" "), extra);
        let mut refs: Vec<String> = edges.iter().filter(|e| e.0 == i).map(|e| doc_id(e.1)).collect();
        refs.sort();
        docs.push(Document {
            id: doc_id(i),
            title: format!("study of {} {}", topic_words[topic_of[i]][0], word(i)),
            abstract_text: abstracts[i].join(" "),
            introduction,
            body_sentences: body,
            reference_ids: refs,
        });
    }
    Ok(docs)
}

/// Writes `corpus.jsonl` and `edges.tsv` under `dir`.
pub fn write_synthetic_corpus(dir: impl AsRef<Path>, num_docs: usize, vocab_size: usize, avg_edges: f64, rng_seed: u64) -> Result<Corpus> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let docs = generate_synthetic_corpus(num_docs, vocab_size, avg_edges, rng_seed)?;
    save_corpus(dir.join("corpus.jsonl"), &docs)?;
    let corpus = Corpus::from_documents(docs)?;
    corpus.graph().write_edge_list(dir.join("edges.tsv"))?;
    Ok(corpus)
}
