//! ROUGE-N and ROUGE-L over token sequences.
//!
//! No stemming and no stopword removal. ROUGE-N counts each distinct n-gram
//! once per side by default; multiset counting with clipped matches is
//! available through [`rouge_n_with`]. Scores are generic over the token
//! type so they work on strings and on vocabulary ids alike.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    fn from_matches(matches: usize, candidate_total: usize, reference_total: usize) -> Self {
        let precision = ratio(matches, candidate_total);
        let recall = ratio(matches, reference_total);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self { precision, recall, f1 }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// How n-gram overlap is counted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum NGramCounting {
    /// Multiset counts, matches clipped to the smaller of the two counts.
    Clipped,
    /// Each distinct n-gram counts once on either side.
    #[default]
    Distinct,
}

/// Multiset of the n-grams of one token sequence.
#[derive(Debug, Clone)]
pub struct NGramCounts<'a, T> {
    order: usize,
    counts: HashMap<&'a [T], usize>,
}

impl<'a, T: Eq + Hash> NGramCounts<'a, T> {
    pub fn new(tokens: &'a [T], order: usize) -> Self {
        assert!(order >= 1, "n-gram order must be positive");
        let mut counts = HashMap::new();
        if tokens.len() >= order {
            for w in tokens.windows(order) {
                *counts.entry(w).or_insert(0) += 1;
            }
        }
        Self { order, counts }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    pub fn count(&self, gram: &[T]) -> usize {
        self.counts.get(gram).copied().unwrap_or(0)
    }

    fn clipped_matches(&self, other: &Self) -> usize {
        self.counts.iter().map(|(g, &c)| c.min(other.count(g))).sum()
    }

    fn distinct_matches(&self, other: &Self) -> usize {
        self.counts.keys().filter(|g| other.counts.contains_key(*g)).count()
    }
}

/// ROUGE-N with [`NGramCounting::Distinct`].
pub fn rouge_n<T: Eq + Hash>(candidate: &[T], reference: &[T], n: usize) -> RougeScore {
    rouge_n_with(candidate, reference, n, NGramCounting::default())
}

pub fn rouge_n_with<T: Eq + Hash>(
    candidate: &[T],
    reference: &[T],
    n: usize,
    counting: NGramCounting,
) -> RougeScore {
    let c = NGramCounts::new(candidate, n);
    let r = NGramCounts::new(reference, n);
    match counting {
        NGramCounting::Clipped => {
            RougeScore::from_matches(c.clipped_matches(&r), c.total(), r.total())
        }
        NGramCounting::Distinct => {
            RougeScore::from_matches(c.distinct_matches(&r), c.distinct(), r.distinct())
        }
    }
}

/// Length of the longest common subsequence, O(|a|·|b|) time and O(|b|) space.
pub fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l<T: Eq>(candidate: &[T], reference: &[T]) -> RougeScore {
    RougeScore::from_matches(lcs_len(candidate, reference), candidate.len(), reference.len())
}

/// Mean of ROUGE-1 and ROUGE-2 F1; the similarity used for content
/// selection, neighbour ranking and citation edge weights.
pub fn mean_rouge_12<T: Eq + Hash>(a: &[T], b: &[T]) -> f64 {
    (rouge_n(a, b, 1).f1 + rouge_n(a, b, 2).f1) / 2.0
}
