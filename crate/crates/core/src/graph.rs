//! The per-document hierarchical graph: a ROUGE-weighted citation graph over
//! the source, its selected neighbours and sampled negative documents, and a
//! bipartite graph linking a document to its tokens and sampled negative
//! tokens. Both losses consume the normalized Laplacians built here.

use std::collections::{BTreeSet, HashSet};

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CitationGraph, Document};
use crate::error::{Error, Result};
use crate::rouge::mean_rouge_12;
use crate::selection::{SelectionResult, SelectionTarget};

/// Default edge-weight threshold.
pub const DEFAULT_RHO: f64 = 0.7;

/// Weighted citation graph `A'^d`. Node order: source, positive neighbours,
/// negative documents.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedCitationGraph {
    pub node_ids: Vec<String>,
    pub weights: Array2<f64>,
    pub rho: f64,
    pub num_neighbors: usize,
    pub num_negatives: usize,
}

impl WeightedCitationGraph {
    pub fn len(&self) -> usize {
        self.node_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_ids.is_empty()
    }

    /// Weight of the source edge to neighbour `k` (0-based among neighbours).
    pub fn source_weight(&self, k: usize) -> f64 {
        self.weights[[0, 1 + k]]
    }

    pub fn neighbor_ids(&self) -> &[String] {
        &self.node_ids[1..1 + self.num_neighbors]
    }

    pub fn negative_ids(&self) -> &[String] {
        &self.node_ids[1 + self.num_neighbors..]
    }

    /// Number of neighbours whose source edge survived the threshold.
    pub fn surviving_neighbors(&self) -> usize {
        (0..self.num_neighbors).filter(|&k| self.source_weight(k) > 0.0).count()
    }

    pub fn laplacian(&self) -> Result<NormalizedLaplacian> {
        normalized_laplacian(&self.weights)
    }

    pub fn dump(&self, source_id: &str) -> GraphDump {
        GraphDump {
            source_id: source_id.to_string(),
            node_ids: self.node_ids.clone(),
            weights: self.weights.iter().copied().collect(),
            rho: self.rho,
            num_neighbors: self.num_neighbors,
            negative_ids: self.negative_ids().to_vec(),
        }
    }
}

/// One line of a graph dump file: the per-instance citation graph with a
/// row-major dense weight matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDump {
    pub source_id: String,
    pub node_ids: Vec<String>,
    pub weights: Vec<f64>,
    pub rho: f64,
    pub num_neighbors: usize,
    pub negative_ids: Vec<String>,
}

impl GraphDump {
    pub fn to_graph(&self) -> Result<WeightedCitationGraph> {
        let n = self.node_ids.len();
        let weights = Array2::from_shape_vec((n, n), self.weights.clone())
            .map_err(|e| Error::Shape(format!("graph dump for `{}`: {e}", self.source_id)))?;
        if 1 + self.num_neighbors + self.negative_ids.len() != n {
            return Err(Error::Shape(format!("graph dump for `{}` has inconsistent node counts", self.source_id)));
        }
        Ok(WeightedCitationGraph {
            node_ids: self.node_ids.clone(),
            weights,
            rho: self.rho,
            num_neighbors: self.num_neighbors,
            num_negatives: self.negative_ids.len(),
        })
    }
}

/// Builds `A'^d`: source-neighbour weights are `mean_rouge_12(target,
/// content_j)`, neighbour-neighbour weights `mean_rouge_12(content_i,
/// content_j)`, the diagonal is 1, negatives are unlinked, and every
/// off-diagonal weight below `rho` is zeroed.
pub fn build_weighted_citation_graph(
    source: &Document,
    neighbors: &[(&Document, &SelectionResult)],
    negatives: &[&Document],
    target: &SelectionTarget,
    rho: f64,
) -> Result<WeightedCitationGraph> {
    if neighbors.is_empty() {
        return Err(Error::Validation(format!("`{}` has no neighbours", source.id)));
    }
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::Validation(format!("rho {rho} outside [0, 1]")));
    }
    let contents: Vec<Vec<String>> =
        neighbors.iter().map(|(doc, sel)| sel.content_tokens(doc)).collect();
    let n = 1 + neighbors.len() + negatives.len();
    let mut w = Array2::<f64>::eye(n);
    let keep = |x: f64| if x >= rho { x } else { 0.0 };
    for (j, content) in contents.iter().enumerate() {
        let x = keep(mean_rouge_12(&target.text, content));
        w[[0, 1 + j]] = x;
        w[[1 + j, 0]] = x;
        for (i, other) in contents.iter().enumerate().take(j) {
            let x = keep(mean_rouge_12(other, content));
            w[[1 + i, 1 + j]] = x;
            w[[1 + j, 1 + i]] = x;
        }
    }
    if (1..=neighbors.len()).all(|j| w[[0, j]] == 0.0) {
        return Err(Error::DegenerateGraph(format!(
            "every source edge of `{}` is below rho = {rho}",
            source.id
        )));
    }
    let node_ids = std::iter::once(source.id.clone())
        .chain(neighbors.iter().map(|(d, _)| d.id.clone()))
        .chain(negatives.iter().map(|d| d.id.clone()))
        .collect();
    Ok(WeightedCitationGraph {
        node_ids,
        weights: w,
        rho,
        num_neighbors: neighbors.len(),
        num_negatives: negatives.len(),
    })
}

/// Bipartite graph `B^d`: one document row, one column per distinct token of
/// the document (first-occurrence order) followed by negative tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct BipartiteDocTokenGraph {
    pub doc_id: String,
    pub token_ids: Vec<String>,
    pub adjacency: Array2<f64>,
    pub num_positive: usize,
}

impl BipartiteDocTokenGraph {
    /// Builds from an explicit token sequence.
    pub fn from_tokens(doc_id: &str, tokens: &[String], negative_tokens: &[String]) -> Result<Self> {
        let mut seen = HashSet::new();
        let positives: Vec<String> =
            tokens.iter().filter(|t| seen.insert(t.as_str())).cloned().collect();
        if positives.is_empty() {
            return Err(Error::Validation(format!("document `{doc_id}` has no tokens")));
        }
        let mut neg_seen = HashSet::new();
        for t in negative_tokens {
            if seen.contains(t.as_str()) {
                return Err(Error::Validation(format!("negative token `{t}` occurs in `{doc_id}`")));
            }
            if !neg_seen.insert(t.as_str()) {
                return Err(Error::Validation(format!("negative token `{t}` repeated")));
            }
        }
        let num_positive = positives.len();
        let token_ids: Vec<String> =
            positives.into_iter().chain(negative_tokens.iter().cloned()).collect();
        let mut adjacency = Array2::zeros((1, token_ids.len()));
        adjacency.slice_mut(ndarray::s![0, ..num_positive]).fill(1.0);
        Ok(Self { doc_id: doc_id.to_string(), token_ids, adjacency, num_positive })
    }

    pub fn num_tokens(&self) -> usize {
        self.token_ids.len()
    }

    pub fn num_negative(&self) -> usize {
        self.token_ids.len() - self.num_positive
    }

    /// Normalized Laplacian of the symmetric `(1 + T) x (1 + T)` bipartite
    /// adjacency, document at index 0. The document degree is its positive
    /// token count; token `j` has degree `max(token_degrees[j], 1)`.
    pub fn laplacian(&self, token_degrees: &[f64]) -> Result<NormalizedLaplacian> {
        let t = self.num_tokens();
        if token_degrees.len() != t {
            return Err(Error::Shape(format!("{} token degrees for {t} tokens", token_degrees.len())));
        }
        let mut degree = Array1::zeros(1 + t);
        degree[0] = self.num_positive as f64;
        for (j, &d) in token_degrees.iter().enumerate() {
            degree[1 + j] = d.max(1.0);
        }
        let mut matrix = Array2::<f64>::eye(1 + t);
        for j in 0..t {
            let b = self.adjacency[[0, j]];
            if b != 0.0 {
                let v = b / (degree[0] * degree[1 + j]).sqrt();
                matrix[[0, 1 + j]] = -v;
                matrix[[1 + j, 0]] = -v;
            }
        }
        Ok(NormalizedLaplacian { matrix, degree })
    }

    /// Degree of each column under the instance-local rule: the number of
    /// `documents` (token sets) containing the token.
    pub fn instance_token_degrees(&self, documents: &[HashSet<&str>]) -> Vec<f64> {
        self.token_ids
            .iter()
            .map(|t| documents.iter().filter(|d| d.contains(t.as_str())).count() as f64)
            .collect()
    }
}

/// Builds `B^d` over the body tokens of `doc`.
pub fn build_bipartite_graph(doc: &Document, negative_tokens: &[String]) -> Result<BipartiteDocTokenGraph> {
    BipartiteDocTokenGraph::from_tokens(&doc.id, &doc.body_tokens(), negative_tokens)
}

/// `I - D^{-1/2} A D^{-1/2}` with `D = diag(row sums of A)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedLaplacian {
    pub matrix: Array2<f64>,
    pub degree: Array1<f64>,
}

pub fn normalized_laplacian(adjacency: &Array2<f64>) -> Result<NormalizedLaplacian> {
    let (n, m) = adjacency.dim();
    if n != m {
        return Err(Error::Shape(format!("adjacency is {n}x{m}, expected square")));
    }
    let degree: Array1<f64> = adjacency.sum_axis(ndarray::Axis(1));
    if let Some(i) = degree.iter().position(|&d| d <= 0.0) {
        return Err(Error::DegenerateDegree(i));
    }
    let inv_sqrt = degree.mapv(|d| 1.0 / d.sqrt());
    let mut matrix = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let eye = if i == j { 1.0 } else { 0.0 };
            matrix[[i, j]] = eye - (inv_sqrt[i] * inv_sqrt[j]) * adjacency[[i, j]];
        }
    }
    Ok(NormalizedLaplacian { matrix, degree })
}

/// Uniform sample without replacement of nodes that are neither `source_id`
/// nor its neighbours, in sampled order.
pub fn sample_negative_documents(
    graph: &CitationGraph,
    source_id: &str,
    count: usize,
    rng_seed: u64,
) -> Result<Vec<String>> {
    if !graph.contains(source_id) {
        return Err(Error::UnknownId(source_id.to_string()));
    }
    let pool: Vec<&String> = graph
        .nodes()
        .iter()
        .filter(|n| n.as_str() != source_id && !graph.adjacent(source_id, n))
        .collect();
    if count > pool.len() {
        return Err(Error::Validation(format!(
            "{count} negative documents requested for `{source_id}`, only {} available",
            pool.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    Ok(rand::seq::index::sample(&mut rng, pool.len(), count)
        .into_iter()
        .map(|i| pool[i].clone())
        .collect())
}

/// Uniform sample without replacement of vocabulary tokens absent from the
/// document, in sampled order.
pub fn sample_negative_tokens(
    vocabulary: &BTreeSet<String>,
    doc_tokens: &[String],
    count: usize,
    rng_seed: u64,
) -> Result<Vec<String>> {
    let present: HashSet<&str> = doc_tokens.iter().map(String::as_str).collect();
    let pool: Vec<&String> = vocabulary.iter().filter(|t| !present.contains(t.as_str())).collect();
    if count > pool.len() {
        return Err(Error::Validation(format!(
            "{count} negative tokens requested, only {} available",
            pool.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    Ok(rand::seq::index::sample(&mut rng, pool.len(), count)
        .into_iter()
        .map(|i| pool[i].clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn doc(id: &str, body: &[&str]) -> Document {
        Document {
            id: id.into(),
            title: String::new(),
            abstract_text: "a b c".into(),
            introduction: String::new(),
            body_sentences: body.iter().map(|s| s.to_string()).collect(),
            reference_ids: vec![],
        }
    }

    fn sel(src: &str, r: &str, idx: &[usize]) -> SelectionResult {
        SelectionResult { source_id: src.into(), ref_id: r.into(), sentence_indices: idx.to_vec(), achieved_score: 0.0 }
    }

    fn target(s: &str) -> SelectionTarget {
        SelectionTarget {
            text: s.split_whitespace().map(String::from).collect(),
            role: crate::selection::TargetRole::GoldAbstract,
        }
    }

    #[test]
    fn identical_content_gets_unit_weight() {
        let src = doc("s", &["x."]);
        let n = doc("n", &["a b c."]);
        let s = sel("s", "n", &[0]);
        let g = build_weighted_citation_graph(&src, &[(&n, &s)], &[], &target("a b c"), 0.5).unwrap();
        assert_eq!(g.weights, array![[1.0, 1.0], [1.0, 1.0]]);
    }

    #[test]
    fn sub_threshold_edges_zeroed() {
        // neighbour 2 shares "a b" with the target: R1 = 2/3, R2 = 1/2 -> 0.583 < 0.7
        let src = doc("s", &["x."]);
        let n1 = doc("n1", &["a b c."]);
        let n2 = doc("n2", &["a b z."]);
        let (s1, s2) = (sel("s", "n1", &[0]), sel("s", "n2", &[0]));
        let neg = doc("neg", &["q."]);
        let g = build_weighted_citation_graph(&src, &[(&n1, &s1), (&n2, &s2)], &[&neg], &target("a b c"), 0.7)
            .unwrap();
        assert_eq!(g.weights[[0, 2]], 0.0);
        assert_eq!(g.weights[[1, 2]], 0.0);
        assert_eq!(g.weights[[0, 1]], 1.0);
        assert_eq!(g.negative_ids(), ["neg"]);
        assert_eq!(g.surviving_neighbors(), 1);
        let err = build_weighted_citation_graph(&src, &[(&n2, &s2)], &[], &target("a b c"), 0.7);
        assert!(matches!(err, Err(Error::DegenerateGraph(_))));
    }

    #[test]
    fn bipartite_binary_occurrence() {
        let g = BipartiteDocTokenGraph::from_tokens(
            "d",
            &["a".into(), "b".into(), "a".into()],
            &["c".into()],
        )
        .unwrap();
        assert_eq!(g.token_ids, ["a", "b", "c"]);
        assert_eq!(g.adjacency, array![[1.0, 1.0, 0.0]]);
        let none = BipartiteDocTokenGraph::from_tokens("d", &["a".into()], &[]).unwrap();
        assert_eq!(none.adjacency, array![[1.0]]);
        assert!(BipartiteDocTokenGraph::from_tokens("d", &["a".into()], &["a".into()]).is_err());
    }

    #[test]
    fn bipartite_laplacian_unit_token_degree() {
        let g = BipartiteDocTokenGraph::from_tokens(
            "d",
            &["a".into(), "b".into(), "c".into(), "e".into()],
            &["z".into()],
        )
        .unwrap();
        let l = g.laplacian(&[1.0; 5]).unwrap();
        for j in 1..=4 {
            assert!((l.matrix[[0, j]] + 0.5).abs() < 1e-15);
        }
        assert_eq!(l.matrix[[0, 5]], 0.0);
        assert_eq!(l.degree[5], 1.0);
    }

    #[test]
    fn laplacian_small_cases() {
        assert_eq!(normalized_laplacian(&array![[1.0]]).unwrap().matrix, array![[0.0]]);
        let l = normalized_laplacian(&array![[1.0, 1.0], [1.0, 1.0]]).unwrap();
        let expect = array![[0.5, -0.5], [-0.5, 0.5]];
        assert!(l.matrix.iter().zip(expect.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(matches!(
            normalized_laplacian(&array![[1.0, 0.0], [0.0, 0.0]]),
            Err(Error::DegenerateDegree(1))
        ));
        assert!(matches!(normalized_laplacian(&Array2::zeros((2, 3))), Err(Error::Shape(_))));
    }

    #[test]
    fn negative_documents() {
        let nodes = ["a", "b", "c", "d"].map(String::from);
        let complete: Vec<(String, String)> = nodes
            .iter()
            .flat_map(|x| nodes.iter().map(move |y| (x.clone(), y.clone())))
            .collect();
        let g = CitationGraph::new(nodes.clone(), complete).unwrap();
        assert!(sample_negative_documents(&g, "a", 0, 1).unwrap().is_empty());
        assert!(sample_negative_documents(&g, "a", 1, 1).is_err());
    }

    #[test]
    fn negative_tokens() {
        let vocab: BTreeSet<String> = ["a", "b"].map(String::from).into();
        let doc = ["a".to_string(), "b".to_string()];
        assert!(sample_negative_tokens(&vocab, &doc, 0, 3).unwrap().is_empty());
        assert!(sample_negative_tokens(&vocab, &doc, 1, 3).is_err());
    }
}
