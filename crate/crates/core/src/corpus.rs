//! Documents, the citation graph, breadth-first sub-corpus sampling and
//! train/validation/test splits.
//!
//! Citation edges are stored directed (`citing -> cited`) but every
//! neighbourhood query treats them as undirected.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One scientific paper.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub title: String,
    /// The gold summary.
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    pub introduction: String,
    pub body_sentences: Vec<String>,
    pub reference_ids: Vec<String>,
}

impl Document {
    pub fn abstract_tokens(&self) -> Vec<String> {
        tokenize(&self.abstract_text)
    }

    pub fn introduction_tokens(&self) -> Vec<String> {
        tokenize(&self.introduction)
    }

    /// Tokens of every body sentence, one list per sentence.
    pub fn sentence_tokens(&self) -> Vec<Vec<String>> {
        self.body_sentences.iter().map(|s| tokenize(s)).collect()
    }

    /// The source sequence `x`: all body tokens in order.
    pub fn body_tokens(&self) -> Vec<String> {
        self.body_sentences.iter().flat_map(|s| tokenize(s)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::Validation("document with empty id".into()));
        }
        let mut seen = BTreeSet::new();
        for r in &self.reference_ids {
            if r == &self.id {
                return Err(Error::Validation(format!("document `{}` cites itself", self.id)));
            }
            if !seen.insert(r) {
                return Err(Error::Validation(format!(
                    "document `{}` lists reference `{r}` twice",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

/// Citation graph `G = {V, E}` over document ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CitationGraph {
    nodes: BTreeSet<String>,
    edges: BTreeSet<(String, String)>,
    adjacency: BTreeMap<String, BTreeSet<String>>,
}

impl CitationGraph {
    /// Builds a graph, rejecting edges with an endpoint outside `nodes`.
    /// Self-loops are ignored: `A_{d,d}` is zero at this layer.
    pub fn new(
        nodes: impl IntoIterator<Item = String>,
        edges: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self> {
        let nodes: BTreeSet<String> = nodes.into_iter().collect();
        let mut adjacency: BTreeMap<String, BTreeSet<String>> =
            nodes.iter().map(|n| (n.clone(), BTreeSet::new())).collect();
        let mut kept = BTreeSet::new();
        for (a, b) in edges {
            for end in [&a, &b] {
                if !nodes.contains(end) {
                    return Err(Error::UnknownId(end.clone()));
                }
            }
            if a == b {
                continue;
            }
            adjacency.get_mut(&a).unwrap().insert(b.clone());
            adjacency.get_mut(&b).unwrap().insert(a.clone());
            kept.insert((a, b));
        }
        Ok(Self { nodes, edges: kept, adjacency })
    }

    pub fn nodes(&self) -> &BTreeSet<String> {
        &self.nodes
    }

    pub fn edges(&self) -> &BTreeSet<(String, String)> {
        &self.edges
    }

    pub fn contains(&self, id: &str) -> bool {
        self.nodes.contains(id)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Undirected neighbours in ascending id order.
    pub fn neighbors(&self, id: &str) -> impl Iterator<Item = &String> {
        self.adjacency.get(id).into_iter().flatten()
    }

    pub fn degree(&self, id: &str) -> usize {
        self.adjacency.get(id).map_or(0, BTreeSet::len)
    }

    /// `A_{d,d'}` with symmetric interpretation.
    pub fn adjacent(&self, a: &str, b: &str) -> bool {
        self.adjacency.get(a).is_some_and(|n| n.contains(b))
    }

    /// Subgraph induced by `keep` (ids absent from the graph are ignored).
    pub fn induced(&self, keep: &BTreeSet<String>) -> CitationGraph {
        let nodes: BTreeSet<String> = keep.intersection(&self.nodes).cloned().collect();
        let edges = self
            .edges
            .iter()
            .filter(|(a, b)| nodes.contains(a) && nodes.contains(b))
            .cloned()
            .collect::<Vec<_>>();
        CitationGraph::new(nodes, edges).expect("induced edges have known endpoints")
    }

    /// Header-free tab-separated edge list, one directed edge per line.
    pub fn write_edge_list(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for (a, b) in &self.edges {
            writeln!(w, "{a}\t{b}")?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a tab-separated edge list; nodes are the edge endpoints.
    pub fn read_edge_list(path: impl AsRef<Path>) -> Result<CitationGraph> {
        let reader = BufReader::new(File::open(path)?);
        let mut nodes = BTreeSet::new();
        let mut edges = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut cols = line.split('\t');
            let (Some(a), Some(b), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err(Error::Parse { line: i + 1, message: "expected two tab-separated ids".into() });
            };
            nodes.insert(a.to_string());
            nodes.insert(b.to_string());
            edges.push((a.to_string(), b.to_string()));
        }
        CitationGraph::new(nodes, edges)
    }
}

/// A loaded corpus: documents in file order, an id index, and the citation
/// graph induced by their reference lists.
#[derive(Debug, Clone)]
pub struct Corpus {
    documents: Vec<Document>,
    index: HashMap<String, usize>,
    graph: CitationGraph,
    dangling_references: usize,
}

impl Corpus {
    /// Validates documents and builds the citation graph. References to ids
    /// outside the corpus are dropped and counted.
    pub fn from_documents(documents: Vec<Document>) -> Result<Self> {
        let mut index = HashMap::with_capacity(documents.len());
        for (i, doc) in documents.iter().enumerate() {
            doc.validate()?;
            if index.insert(doc.id.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate document id `{}`", doc.id)));
            }
        }
        let mut dangling = 0;
        let mut edges = Vec::new();
        for doc in &documents {
            for r in &doc.reference_ids {
                if index.contains_key(r) {
                    edges.push((doc.id.clone(), r.clone()));
                } else {
                    dangling += 1;
                }
            }
        }
        let graph = CitationGraph::new(documents.iter().map(|d| d.id.clone()), edges)?;
        Ok(Self { documents, index, graph, dangling_references: dangling })
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn graph(&self) -> &CitationGraph {
        &self.graph
    }

    /// Number of reference entries dropped because their target is absent.
    pub fn dangling_references(&self) -> usize {
        self.dangling_references
    }

    pub fn get(&self, id: &str) -> Result<&Document> {
        self.index
            .get(id)
            .map(|&i| &self.documents[i])
            .ok_or_else(|| Error::UnknownId(id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }
}

/// Reads a line-delimited corpus file (one JSON object per line).
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let reader = BufReader::new(File::open(path)?);
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(&line)
            .map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
        docs.push(doc);
    }
    let corpus = Corpus::from_documents(docs)?;
    if corpus.dangling_references > 0 {
        log::warn!("dropped {} references to documents outside the corpus", corpus.dangling_references);
    }
    Ok(corpus)
}

pub fn save_corpus(path: impl AsRef<Path>, documents: &[Document]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for doc in documents {
        serde_json::to_writer(&mut w, doc).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Breadth-first discovery order from `seed`, restricted to `allowed` when
/// given. Neighbours are visited in ascending id order.
fn bfs_order(
    graph: &CitationGraph,
    seed: &str,
    limit: usize,
    allowed: Option<&BTreeSet<String>>,
) -> Vec<String> {
    let mut order = vec![seed.to_string()];
    let mut seen: BTreeSet<&str> = BTreeSet::from([seed]);
    let mut queue = VecDeque::from([seed]);
    while let Some(cur) = queue.pop_front() {
        if order.len() >= limit {
            break;
        }
        for next in graph.neighbors(cur) {
            if order.len() >= limit {
                break;
            }
            if allowed.is_some_and(|a| !a.contains(next)) || !seen.insert(next) {
                continue;
            }
            order.push(next.clone());
            queue.push_back(next);
        }
    }
    order.truncate(limit);
    order
}

/// Induced subgraph over the first `node_limit` nodes discovered by BFS from
/// `seed_id`.
pub fn bfs_sample_subgraph(
    graph: &CitationGraph,
    seed_id: &str,
    node_limit: usize,
) -> Result<CitationGraph> {
    if !graph.contains(seed_id) {
        return Err(Error::UnknownId(seed_id.to_string()));
    }
    if node_limit == 0 {
        return Err(Error::Validation("node_limit must be at least 1".into()));
    }
    let keep: BTreeSet<String> = bfs_order(graph, seed_id, node_limit, None).into_iter().collect();
    Ok(graph.induced(&keep))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    /// Cross-split citation edges are removed.
    Inductive,
    /// Cross-split citation edges are kept.
    Transductive,
}

impl std::str::FromStr for SplitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inductive" => Ok(SplitMode::Inductive),
            "transductive" => Ok(SplitMode::Transductive),
            other => Err(Error::Config(format!("unknown split mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for SplitMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SplitMode::Inductive => "inductive",
            SplitMode::Transductive => "transductive",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitRole {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for SplitRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitRole::Train),
            "val" | "validation" => Ok(SplitRole::Val),
            "test" => Ok(SplitRole::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

impl std::fmt::Display for SplitRole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SplitRole::Train => "train",
            SplitRole::Val => "val",
            SplitRole::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusSplit {
    pub train_ids: BTreeSet<String>,
    pub val_ids: BTreeSet<String>,
    pub test_ids: BTreeSet<String>,
    pub mode: SplitMode,
    pub retained_edges: BTreeSet<(String, String)>,
    /// BFS seeds drawn for (val, test, train), in draw order. A region that
    /// outgrows its seed's component draws further seeds.
    pub seeds: Vec<(SplitRole, String)>,
}

impl CorpusSplit {
    /// Every node of `graph` in the training split; used for overfitting runs.
    pub fn train_only(graph: &CitationGraph) -> Self {
        Self {
            train_ids: graph.nodes().clone(),
            val_ids: BTreeSet::new(),
            test_ids: BTreeSet::new(),
            mode: SplitMode::Transductive,
            retained_edges: graph.edges().clone(),
            seeds: Vec::new(),
        }
    }

    pub fn role_of(&self, id: &str) -> Option<SplitRole> {
        if self.train_ids.contains(id) {
            Some(SplitRole::Train)
        } else if self.val_ids.contains(id) {
            Some(SplitRole::Val)
        } else if self.test_ids.contains(id) {
            Some(SplitRole::Test)
        } else {
            None
        }
    }

    pub fn ids(&self, role: SplitRole) -> &BTreeSet<String> {
        match role {
            SplitRole::Train => &self.train_ids,
            SplitRole::Val => &self.val_ids,
            SplitRole::Test => &self.test_ids,
        }
    }

    pub fn all_ids(&self) -> BTreeSet<String> {
        self.train_ids.iter().chain(&self.val_ids).chain(&self.test_ids).cloned().collect()
    }

    /// Citation graph over the sampled corpus with only retained edges.
    pub fn retained_graph(&self) -> CitationGraph {
        CitationGraph::new(self.all_ids(), self.retained_edges.iter().cloned())
            .expect("retained edges lie inside the sampled corpus")
    }

    /// The graph a document of `role` may draw neighbours and negatives from.
    /// Inductive splits see only their own split.
    pub fn visible_graph(&self, role: SplitRole) -> CitationGraph {
        let retained = self.retained_graph();
        match self.mode {
            SplitMode::Transductive => retained,
            SplitMode::Inductive => retained.induced(self.ids(role)),
        }
    }

    pub fn cross_split_edges(&self) -> usize {
        self.retained_edges
            .iter()
            .filter(|(a, b)| self.role_of(a) != self.role_of(b))
            .count()
    }
}

/// Grows a region of `size` nodes by BFS over `remaining`, drawing a fresh
/// random seed whenever the current component is exhausted.
fn sample_region(
    graph: &CitationGraph,
    remaining: &mut BTreeSet<String>,
    size: usize,
    role: SplitRole,
    rng: &mut ChaCha8Rng,
    seeds: &mut Vec<(SplitRole, String)>,
) -> BTreeSet<String> {
    let mut region = BTreeSet::new();
    while region.len() < size {
        let pool: Vec<&String> = remaining.iter().collect();
        let seed = pool[rng.random_range(0..pool.len())].clone();
        seeds.push((role, seed.clone()));
        for id in bfs_order(graph, &seed, size - region.len(), Some(remaining)) {
            remaining.remove(&id);
            region.insert(id);
        }
    }
    region
}

/// Samples validation, test and training regions (in that order) by BFS from
/// random seeds. The partition depends only on `graph`, `sizes` and
/// `rng_seed`, so both modes yield identical id sets.
pub fn make_splits(
    graph: &CitationGraph,
    sizes: (usize, usize, usize),
    mode: SplitMode,
    rng_seed: u64,
) -> Result<CorpusSplit> {
    let (train, val, test) = sizes;
    if train == 0 || val == 0 || test == 0 {
        return Err(Error::Validation("split sizes must be positive".into()));
    }
    if train + val + test > graph.node_count() {
        return Err(Error::Validation(format!(
            "split sizes {train}+{val}+{test} exceed {} nodes",
            graph.node_count()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut remaining = graph.nodes().clone();
    let mut seeds = Vec::new();
    let val_ids = sample_region(graph, &mut remaining, val, SplitRole::Val, &mut rng, &mut seeds);
    let test_ids = sample_region(graph, &mut remaining, test, SplitRole::Test, &mut rng, &mut seeds);
    let train_ids =
        sample_region(graph, &mut remaining, train, SplitRole::Train, &mut rng, &mut seeds);

    let sampled: BTreeSet<&String> = train_ids.iter().chain(&val_ids).chain(&test_ids).collect();
    let side = |id: &String| {
        if train_ids.contains(id) {
            0
        } else if val_ids.contains(id) {
            1
        } else {
            2
        }
    };
    let retained_edges = graph
        .edges()
        .iter()
        .filter(|(a, b)| sampled.contains(a) && sampled.contains(b))
        .filter(|(a, b)| mode == SplitMode::Transductive || side(a) == side(b))
        .cloned()
        .collect();
    Ok(CorpusSplit { train_ids, val_ids, test_ids, mode, retained_edges, seeds })
}

/// Lowercases, splits on Unicode whitespace and trims non-alphanumeric
/// characters from both ends of each token. Empty tokens are dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

/// Splits after `.`, `!` or `?` when followed by whitespace or end of text.
pub fn sentence_split(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') {
            let boundary = chars.peek().is_none_or(|&(_, n)| n.is_whitespace());
            if boundary {
                let end = i + c.len_utf8();
                let s = text[start..end].trim();
                if !s.is_empty() {
                    out.push(s.to_string());
                }
                start = end;
            }
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail.to_string());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(edges: &[(&str, &str)]) -> CitationGraph {
        let nodes: BTreeSet<String> =
            edges.iter().flat_map(|(a, b)| [a.to_string(), b.to_string()]).collect();
        CitationGraph::new(nodes, edges.iter().map(|(a, b)| (a.to_string(), b.to_string())))
            .unwrap()
    }

    fn doc(id: &str, refs: &[&str]) -> Document {
        Document {
            id: id.into(),
            title: format!("title {id}"),
            abstract_text: "a b".into(),
            introduction: "c d".into(),
            body_sentences: vec!["e f.".into()],
            reference_ids: refs.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn tokenize_rules() {
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("Weak Galerkin method."), ["weak", "galerkin", "method"]);
        assert_eq!(tokenize("  ( x )  , y"), ["x", "y"]);
        assert_eq!(tokenize("low-lying $-infty$."), ["low-lying", "infty"]);
    }

    #[test]
    fn sentence_split_rules() {
        assert_eq!(sentence_split("a. b."), ["a.", "b."]);
        assert_eq!(sentence_split("no terminator here"), ["no terminator here"]);
        assert_eq!(sentence_split("3.5 is a number! ok?"), ["3.5 is a number!", "ok?"]);
        assert!(sentence_split("  ").is_empty());
    }

    #[test]
    fn single_edge_corpus() {
        let c = Corpus::from_documents(vec![doc("A", &[]), doc("B", &["A"])]).unwrap();
        assert_eq!(c.graph().edges().iter().collect::<Vec<_>>(), [&("B".to_string(), "A".to_string())]);
        assert!(c.graph().adjacent("A", "B"));
    }

    #[test]
    fn duplicate_ids_and_self_citations_rejected() {
        assert!(matches!(
            Corpus::from_documents(vec![doc("A", &[]), doc("A", &[])]),
            Err(Error::Validation(_))
        ));
        assert!(matches!(Corpus::from_documents(vec![doc("A", &["A"])]), Err(Error::Validation(_))));
    }

    #[test]
    fn bfs_limit_one() {
        let graph = g(&[("a", "b"), ("b", "c")]);
        let s = bfs_sample_subgraph(&graph, "b", 1).unwrap();
        assert_eq!(s.nodes().len(), 1);
        assert_eq!(s.edge_count(), 0);
    }

    #[test]
    fn bfs_star_uses_id_order() {
        let graph = g(&[("c", "l3"), ("c", "l1"), ("l4", "c"), ("c", "l2")]);
        let s = bfs_sample_subgraph(&graph, "c", 3).unwrap();
        assert_eq!(s.nodes().iter().collect::<Vec<_>>(), ["c", "l1", "l2"]);
    }

    #[test]
    fn bfs_chain() {
        let graph = g(&[("a", "b"), ("b", "c"), ("c", "d")]);
        let s = bfs_sample_subgraph(&graph, "a", 3).unwrap();
        assert_eq!(s.nodes().iter().collect::<Vec<_>>(), ["a", "b", "c"]);
        assert_eq!(s.edge_count(), 2);
        assert!(matches!(bfs_sample_subgraph(&graph, "zz", 3), Err(Error::UnknownId(_))));
    }

    #[test]
    fn path_splits_by_mode() {
        let graph = g(&[("n1", "n2"), ("n2", "n3"), ("n3", "n4"), ("n4", "n5")]);
        let ind = make_splits(&graph, (3, 1, 1), SplitMode::Inductive, 7).unwrap();
        assert_eq!(ind.cross_split_edges(), 0);
        let tra = make_splits(&graph, (3, 1, 1), SplitMode::Transductive, 7).unwrap();
        assert_eq!(tra.retained_edges, *graph.edges());
        assert_eq!(ind.train_ids, tra.train_ids);
        assert_eq!(ind.val_ids, tra.val_ids);
        assert!(matches!(
            make_splits(&graph, (4, 1, 1), SplitMode::Inductive, 7),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn edge_list_round_trip() {
        let graph = g(&[("a", "b"), ("c", "b")]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("edges.tsv");
        graph.write_edge_list(&p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "a\tb\nc\tb\n");
        assert_eq!(CitationGraph::read_edge_list(&p).unwrap(), graph);
    }
}
