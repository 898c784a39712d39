//! Negative-sampling objectives behind both contrastive losses, their closed
//! form maxima, and a numerical check that free embeddings trained on the
//! objectives land on those maxima.
//!
//! At a maximum the inner product of every positive pair equals a shifted
//! log count (tokens) or shifted log Laplacian weight (documents), so the
//! trained embeddings factorize those matrices.

use std::fmt::Write as _;

use ndarray::Array2;
use rand::SeedableRng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{normalized_laplacian, NormalizedLaplacian};

/// Default bound on `|achieved - target|` for a passing verification.
pub const DEFAULT_TOLERANCE: f64 = 1e-2;

/// Document-token counts for the token-level objective.
#[derive(Debug, Clone, PartialEq)]
pub struct BipartiteProblem {
    /// `n_{d,j}`: occurrences of token `j` in document `d`.
    pub counts: Array2<f64>,
    /// `N_d`; `n_j / N_d` is the probability of drawing token `j` as a negative.
    pub normalizer: f64,
    /// `n_j`: corpus occurrences of each token.
    pub token_counts: Vec<f64>,
    /// `k`: negatives per positive.
    pub k: f64,
}

impl BipartiteProblem {
    pub fn validate(&self) -> Result<()> {
        let (d, t) = self.counts.dim();
        if d == 0 || t == 0 || self.token_counts.len() != t {
            return Err(Error::Shape(format!("{d}x{t} counts with {} token totals", self.token_counts.len())));
        }
        if self.k < 1.0 || self.normalizer <= 0.0 {
            return Err(Error::Validation("need k >= 1 and a positive normalizer".into()));
        }
        for (j, col) in self.counts.columns().into_iter().enumerate() {
            if col.iter().any(|&c| c < 0.0) || self.token_counts[j] < col.sum() || self.token_counts[j] <= 0.0 {
                return Err(Error::Validation(format!("token {j}: corpus count below its document counts")));
            }
        }
        Ok(())
    }

    fn probability(&self, j: usize) -> f64 {
        self.token_counts[j] / self.normalizer
    }
}

/// A weighted citation graph for the document-level objective.
#[derive(Debug, Clone, PartialEq)]
pub struct CitationProblem {
    /// `A'` with unit diagonal.
    pub adjacency: Array2<f64>,
    pub laplacian: NormalizedLaplacian,
    /// `N_d`: number of documents.
    pub normalizer: f64,
    /// `n_d^+`: neighbours of the source document.
    pub neighbor_count: f64,
    pub k: f64,
}

impl CitationProblem {
    pub fn new(adjacency: Array2<f64>, neighbor_count: f64, k: f64) -> Result<Self> {
        let laplacian = normalized_laplacian(&adjacency)?;
        let normalizer = adjacency.nrows() as f64;
        let p = Self { adjacency, laplacian, normalizer, neighbor_count, k };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.adjacency.nrows();
        if self.adjacency.dim() != (n, n) || self.laplacian.matrix.dim() != (n, n) {
            return Err(Error::Shape("citation problem must be square".into()));
        }
        if self.k < 1.0 || self.neighbor_count < 1.0 || self.normalizer < self.neighbor_count {
            return Err(Error::Validation("need k >= 1 and 1 <= n_d^+ <= N_d".into()));
        }
        Ok(())
    }

    fn positive(&self, i: usize, j: usize) -> bool {
        i != j && self.adjacency[[i, j]] > 0.0
    }

    /// Sampling probability of any one pair under the expanded expectation.
    fn probability(&self) -> f64 {
        self.neighbor_count / self.normalizer
    }
}

/// `log σ(x)`, stable for large `|x|`.
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Token objective, to be maximized:
/// `(1/N_d) Σ_d [ Σ_{j+} n_dj log σ(x) + k Σ_{j+} (n_j/N_d) log σ(-x) + k Σ_{o-} (n_o/N_d) log σ(-x) ]`
/// with `x = h_d · h_j`. The unigram expectation over negatives is expanded
/// over every token, positives included.
pub fn ns_objective_bipartite(doc_reps: &Array2<f64>, token_reps: &Array2<f64>, problem: &BipartiteProblem) -> f64 {
    let x = doc_reps.dot(&token_reps.t());
    let mut total = 0.0;
    for ((d, j), &xv) in x.indexed_iter() {
        let n = problem.counts[[d, j]];
        if n > 0.0 {
            total += n * log_sigmoid(xv);
        }
        total += problem.k * problem.probability(j) * log_sigmoid(-xv);
    }
    total / problem.normalizer
}

fn bipartite_score_gradient(x: &Array2<f64>, problem: &BipartiteProblem) -> Array2<f64> {
    let mut g = Array2::zeros(x.dim());
    for ((d, j), &xv) in x.indexed_iter() {
        let n = problem.counts[[d, j]];
        g[[d, j]] = (n * sigmoid(-xv) - problem.k * problem.probability(j) * sigmoid(xv)) / problem.normalizer;
    }
    g
}

/// Document objective with the negative expectation taken uniformly over
/// zero-weight ordered pairs:
/// `(1/N_d) [ Σ_{A'>0} (-Â') log σ(h_i·h_j) + k E_{A'_io=0} log σ(-h_i·h_o) ]`.
///
/// This form has no finite maximum: positive pairs are only ever pushed
/// together. [`ns_objective_citation_expanded`] is the one with a fixed point.
pub fn ns_objective_citation(doc_reps: &Array2<f64>, problem: &CitationProblem) -> f64 {
    let x = doc_reps.dot(&doc_reps.t());
    let (mut pos, mut neg, mut zeros) = (0.0, 0.0, 0usize);
    for ((i, j), &xv) in x.indexed_iter() {
        if i == j {
            continue;
        }
        if problem.positive(i, j) {
            pos += -problem.laplacian.matrix[[i, j]] * log_sigmoid(xv);
        } else {
            neg += log_sigmoid(-xv);
            zeros += 1;
        }
    }
    let expectation = if zeros > 0 { neg / zeros as f64 } else { 0.0 };
    (pos + problem.k * expectation) / problem.normalizer
}

/// Document objective with the expectation expanded over every ordered
/// off-diagonal pair at probability `n_d^+ / N_d`, mirroring the token case.
pub fn ns_objective_citation_expanded(doc_reps: &Array2<f64>, problem: &CitationProblem) -> f64 {
    let x = doc_reps.dot(&doc_reps.t());
    let p = problem.probability();
    let mut total = 0.0;
    for ((i, j), &xv) in x.indexed_iter() {
        if i == j {
            continue;
        }
        if problem.positive(i, j) {
            total += -problem.laplacian.matrix[[i, j]] * log_sigmoid(xv);
        }
        total += problem.k * p * log_sigmoid(-xv);
    }
    total / problem.normalizer
}

fn citation_score_gradient(x: &Array2<f64>, problem: &CitationProblem) -> Array2<f64> {
    let p = problem.probability();
    let mut g = Array2::zeros(x.dim());
    for ((i, j), &xv) in x.indexed_iter() {
        if i == j {
            continue;
        }
        let c = if problem.positive(i, j) { -problem.laplacian.matrix[[i, j]] } else { 0.0 };
        g[[i, j]] = (c * sigmoid(-xv) - problem.k * p * sigmoid(xv)) / problem.normalizer;
    }
    g
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must be positive, got {v}")))
    }
}

/// `log n_dj + log(N_d / n_j) - log k`.
pub fn fixed_point_bipartite(n_dj: f64, n_d: f64, n_j: f64, k: f64) -> Result<f64> {
    check_positive("n_dj", n_dj)?;
    check_positive("N_d", n_d)?;
    check_positive("n_j", n_j)?;
    check_positive("k", k)?;
    Ok(n_dj.ln() + (n_d / n_j).ln() - k.ln())
}

/// `log(-Â'_ij) + log(N_d / n_d^+) - log k`.
pub fn fixed_point_citation(laplacian_entry: f64, n_d: f64, n_d_plus: f64, k: f64) -> Result<f64> {
    if !(laplacian_entry < 0.0) {
        return Err(Error::Domain(format!("laplacian entry must be negative, got {laplacian_entry}")));
    }
    check_positive("N_d", n_d)?;
    check_positive("n_d^+", n_d_plus)?;
    check_positive("k", k)?;
    Ok((-laplacian_entry).ln() + (n_d / n_d_plus).ln() - k.ln())
}

#[derive(Debug, Clone, PartialEq)]
pub enum FactorizationProblem {
    Bipartite(BipartiteProblem),
    Citation(CitationProblem),
}

impl FactorizationProblem {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Bipartite(_) => "bipartite",
            Self::Citation(_) => "citation",
        }
    }

    /// Number of embedded nodes.
    pub fn node_count(&self) -> usize {
        match self {
            Self::Bipartite(p) => p.counts.nrows() + p.counts.ncols(),
            Self::Citation(p) => p.adjacency.nrows(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub embedding_dim: usize,
    pub steps: usize,
    pub rng_seed: u64,
    pub tolerance: f64,
    pub learning_rate: f64,
    /// Stop once every positive-pair stationarity residual is below this.
    pub stationarity: f64,
}

impl VerifyOptions {
    pub fn for_problem(problem: &FactorizationProblem) -> Self {
        Self {
            embedding_dim: problem.node_count(),
            steps: 20_000,
            rng_seed: 0,
            tolerance: DEFAULT_TOLERANCE,
            learning_rate: 0.05,
            stationarity: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairResult {
    pub pair: String,
    pub achieved: f64,
    pub target: f64,
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub kind: String,
    pub pairs: Vec<PairResult>,
    pub max_deviation: f64,
    /// Largest positive-pair stationarity residual at the end of the run.
    pub max_residual: f64,
    pub steps_run: usize,
    pub stationary: bool,
    pub tolerance: f64,
    pub passed: bool,
    pub notes: Vec<String>,
}

impl VerificationReport {
    pub fn verdict(&self) -> &'static str {
        if self.passed {
            "PASS"
        } else {
            "FAIL"
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} factorization, {} steps", self.kind, self.steps_run);
        let _ = writeln!(s, "{:<12} {:>12} {:>12} {:>12}", "pair", "achieved", "target", "|Δ|");
        for p in &self.pairs {
            let _ = writeln!(s, "{:<12} {:>12.6} {:>12.6} {:>12.3e}", p.pair, p.achieved, p.target, p.deviation);
        }
        for n in &self.notes {
            let _ = writeln!(s, "note: {n}");
        }
        let _ = writeln!(
            s,
            "{}: max |Δ| = {:.3e} (tolerance {:.0e}), residual {:.1e}",
            self.verdict(),
            self.max_deviation,
            self.tolerance,
            self.max_residual
        );
        s
    }

    /// One record per pair followed by a summary record.
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for p in &self.pairs {
            let rec = serde_json::json!({"kind": self.kind, "pair": p.pair, "achieved": p.achieved, "target": p.target, "deviation": p.deviation});
            let _ = writeln!(s, "{rec}");
        }
        let summary = serde_json::json!({
            "kind": self.kind,
            "verdict": self.verdict(),
            "max_deviation": self.max_deviation,
            "max_residual": self.max_residual,
            "steps": self.steps_run,
            "tolerance": self.tolerance,
        });
        let _ = writeln!(s, "{summary}");
        s
    }
}

struct Adam {
    m: Array2<f64>,
    v: Array2<f64>,
    t: i32,
}

impl Adam {
    fn new(shape: (usize, usize)) -> Self {
        Self { m: Array2::zeros(shape), v: Array2::zeros(shape), t: 0 }
    }

    /// Ascent step.
    fn step(&mut self, params: &mut Array2<f64>, grad: &Array2<f64>, lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        self.t += 1;
        self.m.zip_mut_with(grad, |m, &g| *m = B1 * *m + (1.0 - B1) * g);
        self.v.zip_mut_with(grad, |v, &g| *v = B2 * *v + (1.0 - B2) * g * g);
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        ndarray::Zip::from(params).and(&self.m).and(&self.v).for_each(|p, &m, &v| {
            *p += lr * (m / c1) / ((v / c2).sqrt() + 1e-12);
        });
    }
}

fn learning_rate(base: f64, step: usize, steps: usize) -> f64 {
    // cosine decay to 1% of the base rate
    let frac = step as f64 / steps.max(1) as f64;
    base * (0.01 + 0.99 * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos()))
}

fn init(rows: usize, dim: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let normal = Normal::new(0.0, 0.1).expect("valid normal");
    Array2::from_shape_fn((rows, dim), |_| normal.sample(rng))
}

/// Gradient-ascends free embeddings on the problem's objective and compares
/// every positive pair's inner product with its closed-form maximum.
/// Running out of steps yields a failing report, not an error.
pub fn verify_factorization(problem: &FactorizationProblem, options: &VerifyOptions) -> Result<VerificationReport> {
    let nodes = problem.node_count();
    if options.embedding_dim < nodes {
        return Err(Error::Validation(format!(
            "embedding dimension {} below node count {nodes}",
            options.embedding_dim
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(options.rng_seed);
    match problem {
        FactorizationProblem::Bipartite(p) => {
            p.validate()?;
            let (docs, tokens) = p.counts.dim();
            let mut hd = init(docs, options.embedding_dim, &mut rng);
            let mut ht = init(tokens, options.embedding_dim, &mut rng);
            let (mut ad, mut at) = (Adam::new(hd.dim()), Adam::new(ht.dim()));
            let residual = |x: &Array2<f64>| {
                let g = bipartite_score_gradient(x, p);
                p.counts
                    .indexed_iter()
                    .filter(|(_, &n)| n > 0.0)
                    .map(|((d, j), &n)| (g[[d, j]] * p.normalizer / n).abs())
                    .fold(0.0, f64::max)
            };
            let mut steps_run = 0;
            let mut x = hd.dot(&ht.t());
            while steps_run < options.steps && residual(&x) >= options.stationarity {
                let g = bipartite_score_gradient(&x, p);
                let gd = g.dot(&ht);
                let gt = g.t().dot(&hd);
                let lr = learning_rate(options.learning_rate, steps_run, options.steps);
                ad.step(&mut hd, &gd, lr);
                at.step(&mut ht, &gt, lr);
                x = hd.dot(&ht.t());
                steps_run += 1;
            }
            let mut pairs = Vec::new();
            for ((d, j), &n) in p.counts.indexed_iter() {
                if n > 0.0 {
                    let target = fixed_point_bipartite(n, p.normalizer, p.token_counts[j], p.k)?;
                    pairs.push(pair(format!("d{d}-t{j}"), x[[d, j]], target));
                }
            }
            let notes = vec![
                "targets read n_j / N_d as the unigram sampling probability".to_string(),
                "token degrees in the loss follow the instance-local rule, not 1/sqrt(N_t)".to_string(),
            ];
            Ok(report("bipartite", pairs, residual(&x), steps_run, options, notes))
        }
        FactorizationProblem::Citation(p) => {
            p.validate()?;
            let n = p.adjacency.nrows();
            let mut h = init(n, options.embedding_dim, &mut rng);
            let mut adam = Adam::new(h.dim());
            let residual = |x: &Array2<f64>| {
                let g = citation_score_gradient(x, p);
                let mut r: f64 = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        if p.positive(i, j) {
                            r = r.max((g[[i, j]] * p.normalizer / -p.laplacian.matrix[[i, j]]).abs());
                        }
                    }
                }
                r
            };
            let mut steps_run = 0;
            let mut x = h.dot(&h.t());
            while steps_run < options.steps && residual(&x) >= options.stationarity {
                let g = citation_score_gradient(&x, p);
                let gh = (&g + &g.t()).dot(&h);
                let lr = learning_rate(options.learning_rate, steps_run, options.steps);
                adam.step(&mut h, &gh, lr);
                x = h.dot(&h.t());
                steps_run += 1;
            }
            let mut pairs = Vec::new();
            for i in 0..n {
                for j in i + 1..n {
                    if p.positive(i, j) {
                        let target =
                            fixed_point_citation(p.laplacian.matrix[[i, j]], p.normalizer, p.neighbor_count, p.k)?;
                        pairs.push(pair(format!("n{i}-n{j}"), x[[i, j]], target));
                    }
                }
            }
            let notes = vec!["negatives expanded over all ordered pairs at probability n_d^+ / N_d".to_string()];
            Ok(report("citation", pairs, residual(&x), steps_run, options, notes))
        }
    }
}

fn pair(name: String, achieved: f64, target: f64) -> PairResult {
    PairResult { pair: name, achieved, target, deviation: (achieved - target).abs() }
}

fn report(
    kind: &str,
    pairs: Vec<PairResult>,
    max_residual: f64,
    steps_run: usize,
    options: &VerifyOptions,
    notes: Vec<String>,
) -> VerificationReport {
    let max_deviation = pairs.iter().map(|p| p.deviation).fold(0.0, f64::max);
    VerificationReport {
        kind: kind.to_string(),
        passed: max_deviation.is_finite() && max_deviation < options.tolerance,
        pairs,
        max_deviation,
        max_residual,
        steps_run,
        stationary: max_residual < options.stationarity,
        tolerance: options.tolerance,
        notes,
    }
}

/// Random token problem: each document uses a random non-empty proper subset
/// of the tokens with counts 1..=4; corpus counts add background occurrences.
pub fn random_bipartite_problem(docs: usize, tokens: usize, rng_seed: u64) -> BipartiteProblem {
    assert!(docs >= 1 && tokens >= 2, "need a document and two tokens");
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut counts = Array2::zeros((docs, tokens));
    for mut row in counts.rows_mut() {
        let used = rng.random_range(1..tokens);
        for j in rand::seq::index::sample(&mut rng, tokens, used) {
            row[j] = rng.random_range(1..=4) as f64;
        }
    }
    let token_counts: Vec<f64> = counts
        .columns()
        .into_iter()
        .map(|c| c.sum() + rng.random_range(1..=3) as f64)
        .collect();
    let normalizer = token_counts.iter().sum();
    let k = rng.random_range(1..=5) as f64;
    BipartiteProblem { counts, normalizer, token_counts, k }
}

/// Random citation problem on `nodes` nodes: node 0 is the source, nodes
/// `1..=m` its neighbours with weights in `[0.5, 1]`, neighbours linked to
/// each other with probability 1/2, and the rest unlinked negatives.
pub fn random_citation_problem(nodes: usize, rng_seed: u64) -> CitationProblem {
    assert!(nodes >= 3, "need a source, a neighbour and a negative");
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let m = rng.random_range(1..=nodes - 2);
    let mut a = Array2::<f64>::eye(nodes);
    for j in 1..=m {
        let w = rng.random_range(0.5..=1.0);
        a[[0, j]] = w;
        a[[j, 0]] = w;
        for i in 1..j {
            if rng.random_bool(0.5) {
                let w = rng.random_range(0.5..=1.0);
                a[[i, j]] = w;
                a[[j, i]] = w;
            }
        }
    }
    let k = rng.random_range(1..=3) as f64;
    CitationProblem::new(a, m as f64, k).expect("construction is valid")
}
