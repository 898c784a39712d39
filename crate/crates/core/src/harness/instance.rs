//! Assembly of per-document training and evaluation inputs.

use std::collections::{BTreeSet, HashSet};

use log::warn;
use sha2::{Digest, Sha256};

use crate::corpus::{Corpus, CorpusSplit, Document, SplitRole};
use crate::error::{Error, Result};
use crate::graph::{
    build_weighted_citation_graph, sample_negative_documents, sample_negative_tokens, BipartiteDocTokenGraph,
    NormalizedLaplacian, WeightedCitationGraph,
};
use crate::harness::config::TrainConfig;
use crate::losses::{dra_weights, tra_weights, ContrastWeights};
use crate::model::{REFERENCE_SEGMENT, SOURCE_SEGMENT};
use crate::selection::{select_content, select_neighbors, selection_target, SelectionCache, SelectionResult};
use crate::tape::Mat;
use crate::vocab::{Vocab, BOS, EOS};

/// Stable 64-bit seed from a base seed and labels.
pub fn derive_seed(base: u64, labels: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    for l in labels {
        h.update((l.len() as u64).to_le_bytes());
        h.update(l);
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// One sequence to run through the encoder.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EncoderInput {
    pub ids: Vec<u32>,
    pub segment: usize,
}

#[derive(Debug, Clone)]
pub struct TrainingInstance {
    pub source_id: String,
    pub graph: WeightedCitationGraph,
    pub citation_laplacian: NormalizedLaplacian,
    pub bipartite: BipartiteDocTokenGraph,
    pub bipartite_laplacian: NormalizedLaplacian,
    pub dra: ContrastWeights,
    pub tra: ContrastWeights,
    /// Encoder inputs in citation-graph node order.
    pub nodes: Vec<EncoderInput>,
    /// Neighbours whose source edge survived, as `(node index, weight)`.
    pub memory_refs: Vec<(usize, f64)>,
    /// `T x Σ len`: row `j` averages the encoder rows holding bipartite token `j`.
    pub token_average: Mat,
    pub decoder_input: Vec<u32>,
    pub decoder_targets: Vec<usize>,
}

#[derive(Debug, Clone)]
pub enum Built {
    Instance(Box<TrainingInstance>),
    Skipped(String),
}

/// Selection results for every (source, visible neighbour) pair of the split.
pub fn build_selection_cache(corpus: &Corpus, split: &CorpusSplit, max_sentences: usize) -> Result<SelectionCache> {
    let mut cache = SelectionCache::default();
    for role in [SplitRole::Train, SplitRole::Val, SplitRole::Test] {
        let graph = split.visible_graph(role);
        for id in split.ids(role) {
            let doc = corpus.get(id)?;
            let target = match selection_target(doc, role) {
                Ok(t) => t,
                Err(e) => {
                    warn!("no selection for `{id}`: {e}");
                    continue;
                }
            };
            for n in graph.neighbors(id) {
                cache.insert(select_content(id, corpus.get(n)?, &target, max_sentences));
            }
        }
    }
    Ok(cache)
}

/// Neighbours with non-empty selections, ranked and capped.
fn selected_neighbors<'c>(
    corpus: &'c Corpus,
    split: &CorpusSplit,
    cache: &'c SelectionCache,
    config: &TrainConfig,
    source: &Document,
    role: SplitRole,
) -> Result<(Vec<(&'c Document, &'c SelectionResult)>, crate::selection::SelectionTarget)> {
    let target = selection_target(source, role)?;
    let graph = split.visible_graph(role);
    let mut cands = Vec::new();
    for n in graph.neighbors(&source.id) {
        let sel = cache
            .get(&source.id, n)
            .ok_or_else(|| Error::Validation(format!("selection cache lacks ({}, {n})", source.id)))?;
        if !sel.sentence_indices.is_empty() {
            cands.push((corpus.get(n)?, sel));
        }
    }
    if cands.is_empty() {
        return Ok((cands, target));
    }
    let keep = select_neighbors(&target, &cands, config.max_neighbors)?;
    let mut chosen = Vec::with_capacity(keep.len());
    for id in &keep {
        chosen.push(*cands.iter().find(|(d, _)| &d.id == id).expect("selected from candidates"));
    }
    Ok((chosen, target))
}

fn truncate(tokens: Vec<String>, budget: usize) -> Vec<String> {
    tokens.into_iter().take(budget).collect()
}

fn decoder_sequences(doc: &Document, vocab: &Vocab, max_len: usize) -> (Vec<u32>, Vec<usize>) {
    let ids = vocab.encode(&truncate(doc.abstract_tokens(), max_len));
    let input = std::iter::once(BOS).chain(ids.iter().copied()).collect();
    let targets = ids.iter().copied().chain(std::iter::once(EOS)).map(|i| i as usize).collect();
    (input, targets)
}

/// Builds everything one training step needs for `source_id`, or the reason
/// it cannot contribute.
pub fn build_training_instance(
    corpus: &Corpus,
    split: &CorpusSplit,
    cache: &SelectionCache,
    vocab: &Vocab,
    config: &TrainConfig,
    source_id: &str,
) -> Result<Built> {
    let role = split
        .role_of(source_id)
        .ok_or_else(|| Error::UnknownId(source_id.to_string()))?;
    let source = corpus.get(source_id)?;
    let (neighbors, target) = selected_neighbors(corpus, split, cache, config, source, role)?;
    if neighbors.is_empty() {
        return Ok(Built::Skipped(format!("`{source_id}` has no neighbour with selected content")));
    }
    let visible = split.visible_graph(role);
    let pool = visible.node_count() - 1 - visible.degree(source_id);
    let neg_seed = derive_seed(config.rng_seed, &[b"negative-docs", source_id.as_bytes()]);
    let negative_ids = sample_negative_documents(&visible, source_id, config.negative_docs.min(pool), neg_seed)?;
    let negatives: Vec<&Document> = negative_ids.iter().map(|id| corpus.get(id)).collect::<Result<_>>()?;

    let graph = match build_weighted_citation_graph(source, &neighbors, &negatives, &target, config.rho) {
        Ok(g) => g,
        Err(Error::DegenerateGraph(m)) => return Ok(Built::Skipped(m)),
        Err(e) => return Err(e),
    };
    let citation_laplacian = graph.laplacian()?;
    let dra = match dra_weights(&graph.weights, &citation_laplacian) {
        Ok(w) => w,
        Err(e @ (Error::EmptyNumerator | Error::EmptyDenominator)) => {
            return Ok(Built::Skipped(format!("`{source_id}`: {e}")))
        }
        Err(e) => return Err(e),
    };

    let source_tokens = truncate(source.body_tokens(), config.source_token_budget);
    let mut node_tokens = vec![source_tokens.clone()];
    for (doc, sel) in &neighbors {
        node_tokens.push(truncate(sel.content_tokens(doc), config.per_ref_token_budget));
    }
    for doc in &negatives {
        node_tokens.push(truncate(doc.body_tokens(), config.per_ref_token_budget));
    }
    if node_tokens.iter().any(|t| t.is_empty()) {
        return Ok(Built::Skipped(format!("`{source_id}`: an instance document has no tokens")));
    }

    let source_set: HashSet<&str> = source_tokens.iter().map(String::as_str).collect();
    let others: BTreeSet<String> = node_tokens[1..]
        .iter()
        .flatten()
        .filter(|t| !source_set.contains(t.as_str()))
        .cloned()
        .collect();
    if others.is_empty() {
        return Ok(Built::Skipped(format!("`{source_id}`: no negative tokens available")));
    }
    let tok_seed = derive_seed(config.rng_seed, &[b"negative-tokens", source_id.as_bytes()]);
    let neg_tokens = sample_negative_tokens(&others, &source_tokens, config.negative_tokens.min(others.len()), tok_seed)?;
    let bipartite = BipartiteDocTokenGraph::from_tokens(source_id, &source_tokens, &neg_tokens)?;
    let sets: Vec<HashSet<&str>> = node_tokens.iter().map(|t| t.iter().map(String::as_str).collect()).collect();
    let bipartite_laplacian = bipartite.laplacian(&bipartite.instance_token_degrees(&sets))?;
    let tra = tra_weights(&bipartite.adjacency, &bipartite_laplacian)?;

    let total_rows: usize = node_tokens.iter().map(Vec::len).sum();
    let mut token_average = Mat::zeros((bipartite.num_tokens(), total_rows));
    for (j, tok) in bipartite.token_ids.iter().enumerate() {
        let positive = j < bipartite.num_positive;
        let mut offset = 0;
        let mut hits = Vec::new();
        for (n, toks) in node_tokens.iter().enumerate() {
            if (n == 0) == positive {
                hits.extend(toks.iter().enumerate().filter(|(_, t)| *t == tok).map(|(r, _)| offset + r));
            }
            offset += toks.len();
        }
        let w = 1.0 / hits.len() as f64;
        for r in hits {
            token_average[[j, r]] = w;
        }
    }

    let nodes = node_tokens
        .iter()
        .enumerate()
        .map(|(n, t)| EncoderInput {
            ids: vocab.encode(t),
            segment: if n == 0 { SOURCE_SEGMENT } else { REFERENCE_SEGMENT },
        })
        .collect();
    let memory_refs = (0..graph.num_neighbors)
        .filter(|&k| graph.source_weight(k) > 0.0)
        .map(|k| (1 + k, graph.source_weight(k)))
        .collect();
    let (decoder_input, decoder_targets) = decoder_sequences(source, vocab, config.max_summary_len);
    Ok(Built::Instance(Box::new(TrainingInstance {
        source_id: source_id.to_string(),
        graph,
        citation_laplacian,
        bipartite,
        bipartite_laplacian,
        dra,
        tra,
        nodes,
        memory_refs,
        token_average,
        decoder_input,
        decoder_targets,
    })))
}

/// Encoder inputs for generating a summary of `source_id`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalInputs {
    pub source: EncoderInput,
    /// Surviving neighbours with their source edge weight.
    pub refs: Vec<(EncoderInput, f64)>,
}

/// Selection targets follow the document's split role, so test documents
/// rank and weight neighbours against their introduction.
pub fn build_eval_inputs(
    corpus: &Corpus,
    split: &CorpusSplit,
    cache: &SelectionCache,
    vocab: &Vocab,
    config: &TrainConfig,
    source_id: &str,
) -> Result<EvalInputs> {
    let role = split
        .role_of(source_id)
        .ok_or_else(|| Error::UnknownId(source_id.to_string()))?;
    let source = corpus.get(source_id)?;
    let source_ids = vocab.encode(&truncate(source.body_tokens(), config.source_token_budget));
    if source_ids.is_empty() {
        return Err(Error::Validation(format!("`{source_id}` has an empty body")));
    }
    let (neighbors, target) = selected_neighbors(corpus, split, cache, config, source, role)?;
    let mut refs = Vec::new();
    if !neighbors.is_empty() {
        match build_weighted_citation_graph(source, &neighbors, &[], &target, config.rho) {
            Ok(graph) => {
                for (k, (doc, sel)) in neighbors.iter().enumerate() {
                    let w = graph.source_weight(k);
                    if w > 0.0 {
                        let ids = vocab.encode(&truncate(sel.content_tokens(doc), config.per_ref_token_budget));
                        refs.push((EncoderInput { ids, segment: REFERENCE_SEGMENT }, w));
                    }
                }
            }
            Err(Error::DegenerateGraph(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(EvalInputs { source: EncoderInput { ids: source_ids, segment: SOURCE_SEGMENT }, refs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::CorpusSplit;
    use crate::harness::synthetic::generate_synthetic_corpus;

    #[test]
    fn seeds_are_stable_and_label_sensitive() {
        let a = derive_seed(1, &[b"x", b"y"]);
        assert_eq!(a, derive_seed(1, &[b"x", b"y"]));
        assert_ne!(a, derive_seed(1, &[b"xy"]));
        assert_ne!(a, derive_seed(2, &[b"x", b"y"]));
    }

    #[test]
    fn instance_layout() {
        let docs = generate_synthetic_corpus(10, 300, 2.0, 3).unwrap();
        let corpus = Corpus::from_documents(docs).unwrap();
        let split = CorpusSplit::train_only(corpus.graph());
        let cache = build_selection_cache(&corpus, &split, 7).unwrap();
        let vocab = Vocab::from_documents(corpus.documents());
        let config = TrainConfig::desk();
        let mut built = 0;
        for d in corpus.documents() {
            let Built::Instance(inst) = build_training_instance(&corpus, &split, &cache, &vocab, &config, &d.id).unwrap() else {
                continue;
            };
            built += 1;
            let n = inst.graph.len();
            assert_eq!(inst.nodes.len(), n);
            assert_eq!(inst.dra.numerator.dim(), (n, n));
            assert_eq!(inst.nodes[0].segment, SOURCE_SEGMENT);
            let rows: usize = inst.nodes.iter().map(|x| x.ids.len()).sum();
            assert_eq!(inst.token_average.dim(), (inst.bipartite.num_tokens(), rows));
            for row in inst.token_average.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-12);
            }
            assert!(inst.nodes[0].ids.len() <= config.source_token_budget);
            assert!(inst.nodes[1..].iter().all(|x| x.ids.len() <= config.per_ref_token_budget));
            assert_eq!(inst.decoder_input.len(), inst.decoder_targets.len());
            assert_eq!(*inst.decoder_targets.last().unwrap(), EOS as usize);
            assert!(!inst.memory_refs.is_empty());
        }
        assert!(built >= 8, "only {built} instances");
    }
}
