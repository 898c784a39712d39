//! Document and token representation alignment losses, the summarization
//! NLL, the total objective, and upper bounds on both contrastive losses.
//!
//! Every loss exists twice: as an operation on a [`Tape`] for training, and
//! as a plain function of matrices for checking.

pub mod theory;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::graph::NormalizedLaplacian;
use crate::tape::{Tape, Var};

/// Everything both losses need for one source document.
#[derive(Debug, Clone)]
pub struct ContrastiveInstance {
    /// One pooled vector per citation-graph node, source first.
    pub doc_reps: Array2<f64>,
    /// One vector per bipartite column.
    pub token_reps: Array2<f64>,
    pub citation_adjacency: Array2<f64>,
    pub citation_laplacian: NormalizedLaplacian,
    /// `1 x T` document row of the bipartite graph.
    pub bipartite_adjacency: Array2<f64>,
    /// `(1 + T) x (1 + T)`, document at index 0.
    pub bipartite_laplacian: NormalizedLaplacian,
}

/// Numerator and denominator weights of a contrastive log-ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastWeights {
    pub numerator: Array2<f64>,
    pub denominator: Array2<f64>,
}

/// Positive pairs (`A'_ij > 0`, `i != j`) weighted by `-Â'_ij`; zero pairs
/// weighted by 1.
pub fn dra_weights(adjacency: &Array2<f64>, laplacian: &NormalizedLaplacian) -> Result<ContrastWeights> {
    let n = adjacency.nrows();
    if adjacency.dim() != (n, n) || laplacian.matrix.dim() != (n, n) {
        return Err(Error::Shape("citation adjacency and laplacian must be square and equal".into()));
    }
    let mut numerator = Array2::zeros((n, n));
    let mut denominator = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            if adjacency[[i, j]] > 0.0 {
                numerator[[i, j]] = -laplacian.matrix[[i, j]];
            } else {
                denominator[[i, j]] = 1.0;
            }
        }
    }
    check_weights(ContrastWeights { numerator, denominator })
}

/// Positive tokens weighted by `-B̂_{d,j}`; negative tokens by 1.
pub fn tra_weights(adjacency: &Array2<f64>, laplacian: &NormalizedLaplacian) -> Result<ContrastWeights> {
    let t = adjacency.ncols();
    if adjacency.nrows() != 1 || laplacian.matrix.dim() != (1 + t, 1 + t) {
        return Err(Error::Shape(format!(
            "bipartite row is {:?}, laplacian {:?}",
            adjacency.dim(),
            laplacian.matrix.dim()
        )));
    }
    let mut numerator = Array2::zeros((1, t));
    let mut denominator = Array2::zeros((1, t));
    for j in 0..t {
        if adjacency[[0, j]] > 0.0 {
            numerator[[0, j]] = -laplacian.matrix[[0, 1 + j]];
        } else {
            denominator[[0, j]] = 1.0;
        }
    }
    check_weights(ContrastWeights { numerator, denominator })
}

fn check_weights(w: ContrastWeights) -> Result<ContrastWeights> {
    if !w.numerator.iter().any(|&x| x > 0.0) {
        return Err(Error::EmptyNumerator);
    }
    if !w.denominator.iter().any(|&x| x > 0.0) {
        return Err(Error::EmptyDenominator);
    }
    Ok(w)
}

/// `-log(Σ_num w e^{s} / Σ_den e^{s})` for a score matrix on the tape.
pub fn contrast_on_tape(tape: &mut Tape, scores: Var, weights: &ContrastWeights) -> Var {
    let num = tape.weighted_log_sum_exp(scores, weights.numerator.clone());
    let den = tape.weighted_log_sum_exp(scores, weights.denominator.clone());
    tape.sub(den, num)
}

/// DRA loss for node representations `doc_reps` (`N x dim`).
pub fn dra_on_tape(tape: &mut Tape, doc_reps: Var, weights: &ContrastWeights) -> Var {
    let t = tape.transpose(doc_reps);
    let gram = tape.matmul(doc_reps, t);
    contrast_on_tape(tape, gram, weights)
}

/// TRA loss for a document vector (`1 x dim`) against token vectors (`T x dim`).
pub fn tra_on_tape(tape: &mut Tape, doc_rep: Var, token_reps: Var, weights: &ContrastWeights) -> Var {
    let t = tape.transpose(token_reps);
    let scores = tape.matmul(doc_rep, t);
    contrast_on_tape(tape, scores, weights)
}

pub fn dra_loss(instance: &ContrastiveInstance) -> Result<f64> {
    let w = dra_weights(&instance.citation_adjacency, &instance.citation_laplacian)?;
    if instance.doc_reps.nrows() != w.numerator.nrows() {
        return Err(Error::Shape("one document vector per citation node".into()));
    }
    let mut tape = Tape::new();
    let h = tape.leaf(instance.doc_reps.clone());
    let l = dra_on_tape(&mut tape, h, &w);
    Ok(tape.scalar(l))
}

pub fn tra_loss(instance: &ContrastiveInstance) -> Result<f64> {
    let w = tra_weights(&instance.bipartite_adjacency, &instance.bipartite_laplacian)?;
    if instance.token_reps.nrows() != w.numerator.ncols() {
        return Err(Error::Shape("one token vector per bipartite column".into()));
    }
    if instance.doc_reps.ncols() != instance.token_reps.ncols() {
        return Err(Error::Shape("document and token vectors differ in width".into()));
    }
    let mut tape = Tape::new();
    let d = tape.leaf(instance.doc_reps.slice(ndarray::s![0..1, ..]).to_owned());
    let h = tape.leaf(instance.token_reps.clone());
    let l = tra_on_tape(&mut tape, d, h, &w);
    Ok(tape.scalar(l))
}

/// Mean `-log softmax(logits)[target]` over unmasked rows.
pub fn nll_loss(logits: &Array2<f64>, targets: &[usize], mask: &[bool]) -> Result<f64> {
    if logits.nrows() != targets.len() || mask.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} logit rows, {} targets, {} mask entries",
            logits.nrows(),
            targets.len(),
            mask.len()
        )));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= logits.ncols()) {
        return Err(Error::Range(format!("target {t} outside vocabulary of {}", logits.ncols())));
    }
    let mut tape = Tape::new();
    let l = tape.leaf(logits.clone());
    let n = tape.nll(l, targets, mask);
    Ok(tape.scalar(n))
}

pub fn total_loss(nll: f64, dra: f64, tra: f64, alpha: f64, beta: f64) -> f64 {
    nll + alpha * dra + beta * tra
}

fn log_sum_exp<'a>(xs: impl Iterator<Item = &'a f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn scores(instance: &ContrastiveInstance) -> (Array2<f64>, Array2<f64>) {
    let gram = instance.doc_reps.dot(&instance.doc_reps.t());
    let tok = instance.doc_reps.slice(ndarray::s![0..1, ..]).dot(&instance.token_reps.t());
    (gram, tok)
}

/// Upper bound on the TRA loss with the positive coefficients collapsed to
/// their minimum `c`: `-log c - log(Σ_pos e^s / Σ_all e^s)`.
///
/// With a single shared coefficient the `-log c` term is a constant; it
/// cannot be dropped while the bound is still required to hold.
pub fn tra_upper_bound(instance: &ContrastiveInstance) -> Result<f64> {
    let w = tra_weights(&instance.bipartite_adjacency, &instance.bipartite_laplacian)?;
    let (_, s) = scores(instance);
    let c_min = w.numerator.iter().filter(|&&c| c > 0.0).fold(f64::INFINITY, |a, &b| a.min(b));
    let pos: Vec<f64> =
        s.iter().zip(w.numerator.iter()).filter(|(_, &c)| c > 0.0).map(|(&x, _)| x).collect();
    Ok(-c_min.ln() - log_sum_exp(pos.iter()) + log_sum_exp(s.iter()))
}

/// The same expression without the `-log c` constant. Not a bound in
/// general; kept for comparison.
pub fn tra_upper_bound_uncorrected(instance: &ContrastiveInstance) -> Result<f64> {
    let w = tra_weights(&instance.bipartite_adjacency, &instance.bipartite_laplacian)?;
    let (_, s) = scores(instance);
    let pos: Vec<f64> =
        s.iter().zip(w.numerator.iter()).filter(|(_, &c)| c > 0.0).map(|(&x, _)| x).collect();
    Ok(-log_sum_exp(pos.iter()) + log_sum_exp(s.iter()))
}

/// DRA numerator over the partition function of every ordered pair,
/// diagonal included.
pub fn dra_upper_bound(instance: &ContrastiveInstance) -> Result<f64> {
    let w = dra_weights(&instance.citation_adjacency, &instance.citation_laplacian)?;
    let (g, _) = scores(instance);
    let num: Vec<f64> = g
        .iter()
        .zip(w.numerator.iter())
        .filter(|(_, &c)| c > 0.0)
        .map(|(&x, &c)| x + c.ln())
        .collect();
    Ok(-log_sum_exp(num.iter()) + log_sum_exp(g.iter()))
}

/// Jensen relaxation of [`dra_upper_bound`]:
/// `-log W - Σ_p (w_p / W) log(e^{s_p} / Z)` with `W = Σ_p w_p`.
pub fn dra_jensen_bound(instance: &ContrastiveInstance) -> Result<f64> {
    let w = dra_weights(&instance.citation_adjacency, &instance.citation_laplacian)?;
    let (g, _) = scores(instance);
    let log_z = log_sum_exp(g.iter());
    let total: f64 = w.numerator.iter().filter(|&&c| c > 0.0).sum();
    let avg: f64 = g
        .iter()
        .zip(w.numerator.iter())
        .filter(|(_, &c)| c > 0.0)
        .map(|(&x, &c)| c / total * (x - log_z))
        .sum();
    Ok(-total.ln() - avg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::normalized_laplacian;
    use ndarray::array;

    fn instance(doc_reps: Array2<f64>, token_reps: Array2<f64>, a: Array2<f64>, b: Array2<f64>) -> ContrastiveInstance {
        let citation_laplacian = normalized_laplacian(&a).unwrap();
        let t = b.ncols();
        let mut full = Array2::zeros((1 + t, 1 + t));
        for j in 0..t {
            full[[0, 1 + j]] = b[[0, j]];
            full[[1 + j, 0]] = b[[0, j]];
            full[[1 + j, 1 + j]] = if b[[0, j]] > 0.0 { 0.0 } else { 1.0 };
        }
        // token columns of degree 1: positives via the document edge,
        // negatives via a self loop
        let bipartite_laplacian = normalized_laplacian(&full).unwrap();
        ContrastiveInstance {
            doc_reps,
            token_reps,
            citation_adjacency: a,
            citation_laplacian,
            bipartite_adjacency: b,
            bipartite_laplacian,
        }
    }

    fn three_node() -> Array2<f64> {
        array![[1.0, 0.8, 0.0], [0.8, 1.0, 0.0], [0.0, 0.0, 1.0]]
    }

    #[test]
    fn zero_embeddings_closed_form() {
        let a = three_node();
        let b = array![[1.0, 1.0, 0.0]];
        let inst = instance(Array2::zeros((3, 2)), Array2::zeros((3, 2)), a.clone(), b);
        let lap = &inst.citation_laplacian.matrix;
        // positive pairs (0,1), (1,0); four zero pairs
        let expect = -((-lap[[0, 1]] - lap[[1, 0]]) / 4.0).ln();
        assert!((dra_loss(&inst).unwrap() - expect).abs() < 1e-12);
        let bl = &inst.bipartite_laplacian.matrix;
        let expect = -((-bl[[0, 1]] - bl[[0, 2]]) / 1.0).ln();
        assert!((tra_loss(&inst).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn empty_sides_are_errors() {
        let eye = Array2::<f64>::eye(2);
        let lap = normalized_laplacian(&eye).unwrap();
        assert!(matches!(dra_weights(&eye, &lap), Err(Error::EmptyNumerator)));
        let full = Array2::<f64>::ones((2, 2));
        let lap = normalized_laplacian(&full).unwrap();
        assert!(matches!(dra_weights(&full, &lap), Err(Error::EmptyDenominator)));
    }

    #[test]
    fn nll_uniform_and_shape_errors() {
        let l = Array2::zeros((2, 5));
        assert!((nll_loss(&l, &[1, 2], &[true, true]).unwrap() - 5f64.ln()).abs() < 1e-12);
        assert!(nll_loss(&l, &[1], &[true]).is_err());
        let mut sharp = Array2::zeros((1, 3));
        sharp[[0, 2]] = 60.0;
        assert!(nll_loss(&sharp, &[2], &[true]).unwrap() < 1e-20);
    }

    #[test]
    fn total_is_weighted_sum() {
        assert_eq!(total_loss(2.0, 1.0, 0.5, 1.0, 1.0), 3.5);
        let nll = 1.234_567;
        assert_eq!(total_loss(nll, 9.0, -3.0, 0.0, 0.0).to_bits(), nll.to_bits());
    }

    #[test]
    fn bounds_dominate_losses() {
        let a = three_node();
        let b = array![[1.0, 1.0, 0.0, 0.0]];
        let inst = instance(
            array![[0.3, -0.2], [0.5, 0.1], [-0.4, 0.7]],
            array![[0.2, 0.2], [-0.1, 0.4], [0.6, -0.3], [0.0, 0.9]],
            a,
            b,
        );
        let dra = dra_loss(&inst).unwrap();
        let ub = dra_upper_bound(&inst).unwrap();
        let jb = dra_jensen_bound(&inst).unwrap();
        assert!(dra <= ub && ub <= jb, "{dra} {ub} {jb}");
        assert!(tra_loss(&inst).unwrap() <= tra_upper_bound(&inst).unwrap());
    }

    #[test]
    fn uncorrected_tra_bound_can_fail() {
        // nine positives of coefficient 1/3, nine negatives, zero embeddings:
        // TRA = log 3 while the uncorrected right-hand side is log 2
        let t = 18;
        let mut b = Array2::zeros((1, t));
        b.slice_mut(ndarray::s![0, ..9]).fill(1.0);
        let inst = instance(Array2::zeros((3, 2)), Array2::zeros((t, 2)), three_node(), b);
        let tra = tra_loss(&inst).unwrap();
        assert!(tra > tra_upper_bound_uncorrected(&inst).unwrap());
        assert!(tra <= tra_upper_bound(&inst).unwrap() + 1e-12);
    }
}
