//! Oracle content selection from reference full texts and similarity-based
//! neighbour ranking.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, SplitRole};
use crate::error::{Error, Result};
use crate::rouge::mean_rouge_12;

/// Default cap on selected sentences per reference.
pub const DEFAULT_MAX_SENTENCES: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetRole {
    GoldAbstract,
    Introduction,
}

/// The text selection is scored against: the abstract, or the introduction
/// for test documents whose abstract must stay unseen.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionTarget {
    pub text: Vec<String>,
    pub role: TargetRole,
}

pub fn selection_target(doc: &Document, split_role: SplitRole) -> Result<SelectionTarget> {
    match split_role {
        SplitRole::Test => {
            let text = doc.introduction_tokens();
            if text.is_empty() {
                return Err(Error::Validation(format!(
                    "test document `{}` has no introduction to select against",
                    doc.id
                )));
            }
            Ok(SelectionTarget { text, role: TargetRole::Introduction })
        }
        SplitRole::Train | SplitRole::Val => {
            let text = doc.abstract_tokens();
            if text.is_empty() {
                return Err(Error::Validation(format!("document `{}` has an empty abstract", doc.id)));
            }
            Ok(SelectionTarget { text, role: TargetRole::GoldAbstract })
        }
    }
}

/// Outcome of one greedy run.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// Accepted sentences in acceptance order.
    pub sentence_indices: Vec<usize>,
    pub score: f64,
    /// Score after each accepted step.
    pub step_scores: Vec<f64>,
}

/// Selected content of `ref_id` for `source_id`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub source_id: String,
    pub ref_id: String,
    pub sentence_indices: Vec<usize>,
    #[serde(rename = "score")]
    pub achieved_score: f64,
}

impl SelectionResult {
    pub fn new(source_id: &str, ref_id: &str, selection: &Selection) -> Self {
        Self {
            source_id: source_id.to_string(),
            ref_id: ref_id.to_string(),
            sentence_indices: selection.sentence_indices.clone(),
            achieved_score: selection.score,
        }
    }

    /// Selected sentences of `reference`, concatenated in document order.
    pub fn content_tokens(&self, reference: &Document) -> Vec<String> {
        concat_in_order(&reference.sentence_tokens(), &self.sentence_indices)
    }
}

fn concat_in_order(sentences: &[Vec<String>], indices: &[usize]) -> Vec<String> {
    let mut sorted = indices.to_vec();
    sorted.sort_unstable();
    sorted.iter().flat_map(|&i| sentences[i].iter().cloned()).collect()
}

/// Adds, one at a time, the sentence that most improves `mean_rouge_12`
/// against the target, until nothing improves it or `max_sentences` is
/// reached. Ties go to the lowest sentence index.
pub fn greedy_select(
    sentences: &[Vec<String>],
    target: &SelectionTarget,
    max_sentences: usize,
) -> Selection {
    let mut chosen: Vec<usize> = Vec::new();
    let mut score = 0.0;
    let mut step_scores = Vec::new();
    while chosen.len() < max_sentences {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..sentences.len() {
            if chosen.contains(&i) {
                continue;
            }
            let mut trial = chosen.clone();
            trial.push(i);
            let s = mean_rouge_12(&concat_in_order(sentences, &trial), &target.text);
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        match best {
            Some((i, s)) if s > score => {
                chosen.push(i);
                score = s;
                step_scores.push(s);
            }
            _ => break,
        }
    }
    Selection { sentence_indices: chosen, score, step_scores }
}

/// Runs [`greedy_select`] on the body of `reference` for `source`.
pub fn select_content(
    source_id: &str,
    reference: &Document,
    target: &SelectionTarget,
    max_sentences: usize,
) -> SelectionResult {
    let sel = greedy_select(&reference.sentence_tokens(), target, max_sentences);
    SelectionResult::new(source_id, &reference.id, &sel)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedNeighbor {
    pub id: String,
    pub score: f64,
}

/// Every candidate scored by similarity between the source target and its
/// selected content, descending, ties by ascending id.
pub fn rank_neighbors(
    target: &SelectionTarget,
    candidates: &[(&Document, &SelectionResult)],
) -> Vec<RankedNeighbor> {
    let mut ranked: Vec<RankedNeighbor> = candidates
        .iter()
        .map(|(doc, sel)| RankedNeighbor {
            id: doc.id.clone(),
            score: mean_rouge_12(&target.text, &sel.content_tokens(doc)),
        })
        .collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id)));
    ranked
}

/// The `k` most similar neighbours (all of them when fewer than `k`).
pub fn select_neighbors(
    target: &SelectionTarget,
    candidates: &[(&Document, &SelectionResult)],
    k: usize,
) -> Result<Vec<String>> {
    if k == 0 {
        return Err(Error::Validation("neighbour count k must be at least 1".into()));
    }
    Ok(rank_neighbors(target, candidates).into_iter().take(k).map(|r| r.id).collect())
}

/// Precomputed selections keyed by `(source_id, ref_id)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SelectionCache {
    entries: HashMap<(String, String), SelectionResult>,
}

impl SelectionCache {
    pub fn insert(&mut self, result: SelectionResult) {
        self.entries.insert((result.source_id.clone(), result.ref_id.clone()), result);
    }

    pub fn get(&self, source_id: &str, ref_id: &str) -> Option<&SelectionResult> {
        self.entries.get(&(source_id.to_string(), ref_id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries sorted by `(source_id, ref_id)`.
    pub fn sorted(&self) -> Vec<&SelectionResult> {
        let mut v: Vec<_> = self.entries.values().collect();
        v.sort_by(|a, b| (&a.source_id, &a.ref_id).cmp(&(&b.source_id, &b.ref_id)));
        v
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for r in self.sorted() {
            serde_json::to_writer(&mut w, r).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut cache = Self::default();
        for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let r: SelectionResult = serde_json::from_str(&line)
                .map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
            cache.insert(r);
        }
        Ok(cache)
    }
}
