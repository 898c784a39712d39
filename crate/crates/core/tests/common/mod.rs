//! Independent oracles and fixtures shared by the integration tests and the
//! acceptance runner. Nothing here calls the library routine it checks.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use citegcl::corpus::{Corpus, Document};
use citegcl::graph::normalized_laplacian;
use citegcl::harness::{generate_synthetic_corpus, TrainConfig};
use citegcl::losses::ContrastiveInstance;
use citegcl::model::ModelConfig;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SAMPLE_SOURCE: &str = "this paper summarizes the contents of a plenary talk at the pan african congress of mathematics held in rabat in july 2017. we provide a survey of recent results on spectral properties of schrödinger operators with singular interactions supported by manifolds of codimension one and of robin billiards with the focus on the geometrically induced discrete spectrum and its asymptotic expansions in term of the model parameters.";
pub const SAMPLE_REF1: &str = "we determine accurate asymptotics for the low-lying eigenvalues of the robin laplacian when the robin parameter goes to $-infty$. the two first terms in the expansion have been obtained by k. pankrashkin in the $ 2d$-case and by k. pankrashkin and n. popoff in higher dimensions. the asymptotics display the influence of the scalar curvature and the splitting between every two consecutive eigenvalues.";
pub const SAMPLE_REF2: &str = "we give a counterexample to the long standing conjecture that the ball maximises the first eigenvalue of the robin eigenvalue problem with negative parameter among domains of the same volume. furthermore , we show that the conjecture holds in two dimensions provided that the boundary parameter is small. this is the first known example within the class of isoperimetric spectral problems for the first eigenvalue of the laplacian where the ball is not an optimiser.";
pub const SAMPLE_ROUGE1: [f64; 2] = [0.1579, 0.1818];

// ---------------------------------------------------------------- ROUGE

fn grams(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

fn f1(overlap: usize, tc: usize, tr: usize) -> f64 {
    if overlap == 0 || tc == 0 || tr == 0 {
        return 0.0;
    }
    let (p, rc) = (overlap as f64 / tc as f64, overlap as f64 / tr as f64);
    2.0 * p * rc / (p + rc)
}

/// ROUGE-N F1 over n-gram sets.
pub fn oracle_rouge_n_f1(c: &[String], r: &[String], n: usize) -> f64 {
    let (gc, gr) = (grams(c, n), grams(r, n));
    let overlap = gc.keys().filter(|g| gr.contains_key(*g)).count();
    f1(overlap, gc.len(), gr.len())
}

/// Clipped ROUGE-N F1 by direct multiset intersection.
pub fn oracle_rouge_n_f1_clipped(c: &[String], r: &[String], n: usize) -> f64 {
    let (gc, gr) = (grams(c, n), grams(r, n));
    let overlap: usize = gc.iter().map(|(g, &k)| k.min(*gr.get(g).unwrap_or(&0))).sum();
    f1(overlap, gc.values().sum(), gr.values().sum())
}

pub fn oracle_mean_rouge_12(a: &[String], b: &[String]) -> f64 {
    (oracle_rouge_n_f1(a, b, 1) + oracle_rouge_n_f1(a, b, 2)) / 2.0
}

fn joined(sentences: &[Vec<String>], picked: &BTreeSet<usize>) -> Vec<String> {
    picked.iter().flat_map(|&i| sentences[i].clone()).collect()
}

/// Step-by-step greedy rule: best strict improvement, lowest index on ties.
pub fn oracle_greedy(sentences: &[Vec<String>], target: &[String], max: usize) -> (Vec<usize>, Vec<f64>) {
    let mut picked = BTreeSet::new();
    let mut order = Vec::new();
    let mut scores = Vec::new();
    let mut current = 0.0;
    for _ in 0..max {
        let mut best = (usize::MAX, f64::NEG_INFINITY);
        for i in (0..sentences.len()).filter(|i| !picked.contains(i)) {
            let mut trial = picked.clone();
            trial.insert(i);
            let s = oracle_mean_rouge_12(&joined(sentences, &trial), target);
            if s > best.1 {
                best = (i, s);
            }
        }
        if best.0 == usize::MAX || best.1 <= current {
            break;
        }
        picked.insert(best.0);
        order.push(best.0);
        scores.push(best.1);
        current = best.1;
    }
    (order, scores)
}

/// Scores of every `size`-subset, sentences joined in document order.
pub fn subset_scores(sentences: &[Vec<String>], target: &[String], size: usize) -> Vec<f64> {
    let n = sentences.len();
    (0u32..1 << n)
        .filter(|m| m.count_ones() as usize == size)
        .map(|m| {
            let picked: BTreeSet<usize> = (0..n).filter(|i| m >> i & 1 == 1).collect();
            oracle_mean_rouge_12(&joined(sentences, &picked), target)
        })
        .collect()
}

/// Random document body over a small vocabulary so overlaps are common.
pub fn random_sentences(rng: &mut ChaCha8Rng, count: usize, vocab: usize) -> Vec<Vec<String>> {
    (0..count)
        .map(|_| {
            let len = rng.random_range(3..=9);
            (0..len).map(|_| format!("w{}", rng.random_range(0..vocab))).collect()
        })
        .collect()
}

// ------------------------------------------------------------ Laplacian

/// `I - Dm A Dm` with `Dm = diag(1/sqrt(rowsum))`, by dense products.
pub fn dense_laplacian(a: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let mut dm = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        dm[[i, i]] = 1.0 / a.row(i).sum().sqrt();
    }
    Array2::<f64>::eye(n) - dm.dot(a).dot(&dm)
}

/// Symmetric, unit diagonal, off-diagonal weights in `[0, 1)` with about
/// half of them zero.
pub fn random_symmetric_unit_diag(rng: &mut ChaCha8Rng, n: usize) -> Array2<f64> {
    let mut a = Array2::<f64>::eye(n);
    for i in 0..n {
        for j in 0..i {
            if rng.random_bool(0.5) {
                let w = rng.random_range(0.05..1.0);
                a[[i, j]] = w;
                a[[j, i]] = w;
            }
        }
    }
    a
}

// -------------------------------------------------- contrastive instances

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    // Box-Muller keeps the oracle free of the library's distribution code
    Array2::from_shape_fn((rows, cols), |_| {
        let u1: f64 = rng.random_range(f64::EPSILON..1.0);
        let u2: f64 = rng.random();
        scale * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    })
}

/// Bipartite Laplacian with each positive token of degree 1 through the
/// document edge and each negative token holding a self loop.
pub fn bipartite_laplacian_for(b: &Array2<f64>) -> Array2<f64> {
    let t = b.ncols();
    let mut full = Array2::<f64>::zeros((1 + t, 1 + t));
    for j in 0..t {
        full[[0, 1 + j]] = b[[0, j]];
        full[[1 + j, 0]] = b[[0, j]];
        if b[[0, j]] == 0.0 {
            full[[1 + j, 1 + j]] = 1.0;
        }
    }
    full
}

/// Random instance with at least one positive and one zero pair on both
/// graphs. Node 0 is the source and always has at least one neighbour.
pub fn random_instance(rng: &mut ChaCha8Rng, nodes: usize, tokens: usize, dim: usize, scale: f64) -> ContrastiveInstance {
    assert!(nodes >= 3 && tokens >= 2);
    let mut a = random_symmetric_unit_diag(rng, nodes);
    let j = rng.random_range(1..nodes);
    a[[0, j]] = 0.5;
    a[[j, 0]] = 0.5;
    let k = (1..nodes).find(|&k| k != j).unwrap();
    a[[0, k]] = 0.0;
    a[[k, 0]] = 0.0;
    let mut b = Array2::<f64>::zeros((1, tokens));
    for c in 0..tokens {
        b[[0, c]] = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
    }
    b[[0, 0]] = 1.0;
    b[[0, tokens - 1]] = 0.0;
    let full = bipartite_laplacian_for(&b);
    ContrastiveInstance {
        doc_reps: gaussian(rng, nodes, dim, scale),
        token_reps: gaussian(rng, tokens, dim, scale),
        citation_laplacian: normalized_laplacian(&a).unwrap(),
        citation_adjacency: a,
        bipartite_adjacency: b,
        bipartite_laplacian: normalized_laplacian(&full).unwrap(),
    }
}

/// Document alignment loss evaluated with raw exponentials.
pub fn dense_dra(inst: &ContrastiveInstance) -> f64 {
    let h = &inst.doc_reps;
    let lap = dense_laplacian(&inst.citation_adjacency);
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..h.nrows() {
        for j in 0..h.nrows() {
            if i == j {
                continue;
            }
            let e = h.row(i).dot(&h.row(j)).exp();
            if inst.citation_adjacency[[i, j]] > 0.0 {
                num += -lap[[i, j]] * e;
            } else {
                den += e;
            }
        }
    }
    -(num / den).ln()
}

/// Token alignment loss evaluated with raw exponentials.
pub fn dense_tra(inst: &ContrastiveInstance) -> f64 {
    let d = inst.doc_reps.row(0);
    let lap = dense_laplacian(&bipartite_laplacian_for(&inst.bipartite_adjacency));
    let (mut num, mut den) = (0.0, 0.0);
    for j in 0..inst.token_reps.nrows() {
        let e = d.dot(&inst.token_reps.row(j)).exp();
        if inst.bipartite_adjacency[[0, j]] > 0.0 {
            num += -lap[[0, 1 + j]] * e;
        } else {
            den += e;
        }
    }
    -(num / den).ln()
}

// --------------------------------------------------- finite differences

pub const FD_STEP: f64 = 1e-5;
/// Gradients smaller than this are compared in absolute terms.
pub const FD_FLOOR: f64 = 1e-5;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR)
}

/// Central difference of `f` in every entry of `x`.
pub fn numeric_gradient(x: &Array2<f64>, mut f: impl FnMut(&Array2<f64>) -> f64) -> Array2<f64> {
    let mut g = Array2::zeros(x.dim());
    let mut probe = x.clone();
    for idx in ndarray::indices(x.dim()) {
        let orig = probe[idx];
        probe[idx] = orig + FD_STEP;
        let up = f(&probe);
        probe[idx] = orig - FD_STEP;
        let down = f(&probe);
        probe[idx] = orig;
        g[idx] = (up - down) / (2.0 * FD_STEP);
    }
    g
}

// ------------------------------------------------------------------ BFS

pub type Adjacency = BTreeMap<String, BTreeSet<String>>;

pub fn adjacency_of(corpus: &Corpus) -> Adjacency {
    let mut adj: Adjacency = corpus.documents().iter().map(|d| (d.id.clone(), BTreeSet::new())).collect();
    for d in corpus.documents() {
        for r in &d.reference_ids {
            if adj.contains_key(r) && r != &d.id {
                adj.get_mut(&d.id).unwrap().insert(r.clone());
                adj.get_mut(r).unwrap().insert(d.id.clone());
            }
        }
    }
    adj
}

/// First `limit` nodes reached from `seed`, neighbours in id order, only
/// through `allowed` nodes.
pub fn oracle_bfs(adj: &Adjacency, seed: &str, limit: usize, allowed: &BTreeSet<String>) -> Vec<String> {
    let mut out = vec![seed.to_string()];
    let mut queue = VecDeque::from([seed.to_string()]);
    let mut seen = BTreeSet::from([seed.to_string()]);
    while let Some(cur) = queue.pop_front() {
        for n in &adj[&cur] {
            if out.len() == limit {
                return out;
            }
            if allowed.contains(n) && seen.insert(n.clone()) {
                out.push(n.clone());
                queue.push_back(n.clone());
            }
        }
    }
    out.truncate(limit);
    out
}

/// Val, test, train regions grown by BFS from uniformly drawn seeds; a
/// region whose component runs out draws another seed.
pub fn oracle_splits(adj: &Adjacency, sizes: [usize; 3], seed: u64) -> [BTreeSet<String>; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut remaining: BTreeSet<String> = adj.keys().cloned().collect();
    let mut regions: [BTreeSet<String>; 3] = Default::default();
    // draw order: validation, test, train
    for (slot, size) in [(1, sizes[1]), (2, sizes[2]), (0, sizes[0])] {
        while regions[slot].len() < size {
            let pool: Vec<String> = remaining.iter().cloned().collect();
            let s = pool[rng.random_range(0..pool.len())].clone();
            for id in oracle_bfs(adj, &s, size - regions[slot].len(), &remaining) {
                remaining.remove(&id);
                regions[slot].insert(id);
            }
        }
    }
    regions
}

// ------------------------------------------------------------- fixtures

/// Tiny but complete configuration for fast end-to-end runs.
pub fn tiny_config() -> TrainConfig {
    let mut c = TrainConfig::desk();
    c.model_dim = 16;
    c.encoder_layers = 1;
    c.decoder_layers = 1;
    c.attention_heads = 2;
    c.feedforward_dim = 32;
    c.source_token_budget = 48;
    c.per_ref_token_budget = 16;
    c.negative_docs = 2;
    c.negative_tokens = 8;
    c.batch_size = 2;
    c.total_steps = 6;
    c.checkpoint_every = 3;
    c.encoder_warmup_steps = 10;
    c.decoder_warmup_steps = 10;
    c.max_summary_len = 24;
    c
}

pub fn tiny_model_config(vocab: usize) -> ModelConfig {
    ModelConfig {
        vocab_size: vocab,
        model_dim: 8,
        encoder_layers: 1,
        decoder_layers: 1,
        attention_heads: 2,
        feedforward_dim: 16,
        max_positions: 16,
        dropout: 0.0,
        encoder_dropout: 0.0,
    }
}

pub fn synthetic(num_docs: usize, seed: u64) -> Corpus {
    Corpus::from_documents(generate_synthetic_corpus(num_docs, 120, 1.5, seed).unwrap()).unwrap()
}

pub fn doc(id: &str, refs: &[&str]) -> Document {
    Document {
        id: id.into(),
        title: format!("title {id}"),
        abstract_text: format!("abstract of {id}."),
        introduction: format!("introduction of {id}."),
        body_sentences: vec![format!("body of {id} one."), format!("body of {id} two.")],
        reference_ids: refs.iter().map(|r| r.to_string()).collect(),
    }
}

