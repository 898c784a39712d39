//! Summary generation, ROUGE evaluation and ρ sweeps.

use std::fmt::Write as _;
use std::path::Path;

use log::{info, warn};
use serde::Serialize;

use crate::corpus::{Corpus, CorpusSplit, SplitRole};
use crate::error::{Error, Result};
use crate::harness::config::TrainConfig;
use crate::harness::instance::build_eval_inputs;
use crate::harness::train::{load_checkpoint, Trainer};
use crate::model::{build_decoder_memory, Model, Strategy};
use crate::rouge::{rouge_l, rouge_n};
use crate::selection::SelectionCache;
use crate::vocab::Vocab;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DocScore {
    pub id: String,
    pub rouge1: f64,
    pub rouge2: f64,
    pub rougel: f64,
    pub summary: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub split: String,
    pub checkpoint: String,
    pub docs: Vec<DocScore>,
    /// Means over documents that produced a summary.
    pub mean_rouge1: f64,
    pub mean_rouge2: f64,
    pub mean_rougel: f64,
    pub evaluated: usize,
    pub failed: usize,
}

impl EvalReport {
    fn from_docs(split: SplitRole, checkpoint: &str, docs: Vec<DocScore>) -> Self {
        let ok: Vec<&DocScore> = docs.iter().filter(|d| d.error.is_none()).collect();
        let mean = |f: fn(&DocScore) -> f64| {
            if ok.is_empty() {
                0.0
            } else {
                ok.iter().map(|d| f(d)).sum::<f64>() / ok.len() as f64
            }
        };
        Self {
            split: split.to_string(),
            checkpoint: checkpoint.to_string(),
            mean_rouge1: mean(|d| d.rouge1),
            mean_rouge2: mean(|d| d.rouge2),
            mean_rougel: mean(|d| d.rougel),
            evaluated: ok.len(),
            failed: docs.len() - ok.len(),
            docs,
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "split {}  checkpoint {}", self.split, self.checkpoint);
        let _ = writeln!(s, "{:<12} {:>8} {:>8} {:>8}", "doc", "R-1", "R-2", "R-L");
        for d in &self.docs {
            match &d.error {
                Some(e) => {
                    let _ = writeln!(s, "{:<12} error: {e}", d.id);
                }
                None => {
                    let _ = writeln!(s, "{:<12} {:>8.4} {:>8.4} {:>8.4}", d.id, d.rouge1, d.rouge2, d.rougel);
                }
            }
        }
        let _ = writeln!(
            s,
            "{:<12} {:>8.4} {:>8.4} {:>8.4}  ({} evaluated, {} failed)",
            "mean", self.mean_rouge1, self.mean_rouge2, self.mean_rougel, self.evaluated, self.failed
        );
        s
    }

    /// One JSON object per document, then a summary line.
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for d in &self.docs {
            s.push_str(&serde_json::to_string(d).expect("plain data serializes"));
            s.push('\n');
        }
        let summary = serde_json::json!({
            "split": self.split,
            "checkpoint": self.checkpoint,
            "mean_rouge1": self.mean_rouge1,
            "mean_rouge2": self.mean_rouge2,
            "mean_rougel": self.mean_rougel,
            "evaluated": self.evaluated,
            "failed": self.failed,
        });
        s.push_str(&summary.to_string());
        s.push('\n');
        s
    }
}

/// Generates a summary for `source_id` as vocabulary tokens.
pub fn summarize(
    model: &Model,
    vocab: &Vocab,
    corpus: &Corpus,
    split: &CorpusSplit,
    cache: &SelectionCache,
    config: &TrainConfig,
    source_id: &str,
) -> Result<Vec<String>> {
    let inputs = build_eval_inputs(corpus, split, cache, vocab, config, source_id)?;
    let source = model.encode_document(&inputs.source.ids, inputs.source.segment)?;
    let refs = inputs
        .refs
        .iter()
        .map(|(r, w)| Ok((model.encode_document(&r.ids, r.segment)?, *w)))
        .collect::<Result<Vec<_>>>()?;
    let borrowed: Vec<_> = refs.iter().map(|(e, w)| (e, *w)).collect();
    let ctx = build_decoder_memory(&source, &borrowed, config.per_ref_token_budget, config.source_token_budget)?;
    let strategy = if config.beam_width <= 1 { Strategy::Greedy } else { Strategy::Beam(config.beam_width) };
    let ids = model.generate(&ctx, config.max_summary_len, strategy)?;
    Ok(vocab.decode(&ids))
}

/// Scores generated summaries against gold abstracts for every document of
/// `role`. A document that cannot be summarized becomes an error entry.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_model(
    model: &Model,
    vocab: &Vocab,
    corpus: &Corpus,
    split: &CorpusSplit,
    cache: &SelectionCache,
    config: &TrainConfig,
    role: SplitRole,
    checkpoint: &str,
) -> Result<EvalReport> {
    let mut docs = Vec::new();
    for id in split.ids(role) {
        let gold = corpus.get(id)?.abstract_tokens();
        match summarize(model, vocab, corpus, split, cache, config, id) {
            Ok(summary) => docs.push(DocScore {
                id: id.clone(),
                rouge1: rouge_n(&summary, &gold, 1).f1,
                rouge2: rouge_n(&summary, &gold, 2).f1,
                rougel: rouge_l(&summary, &gold).f1,
                summary: summary.join(" "),
                error: None,
            }),
            Err(e) => {
                warn!("cannot summarize `{id}`: {e}");
                docs.push(DocScore {
                    id: id.clone(),
                    rouge1: 0.0,
                    rouge2: 0.0,
                    rougel: 0.0,
                    summary: String::new(),
                    error: Some(e.to_string()),
                });
            }
        }
    }
    Ok(EvalReport::from_docs(role, checkpoint, docs))
}

/// Loads a checkpoint and evaluates it. The corpus vocabulary must match the
/// one the checkpoint was trained with.
pub fn evaluate(
    checkpoint: impl AsRef<Path>,
    corpus: &Corpus,
    split: &CorpusSplit,
    cache: &SelectionCache,
    role: SplitRole,
) -> Result<EvalReport> {
    let path = checkpoint.as_ref();
    let ckpt = load_checkpoint(path)?;
    let vocab = Vocab::from_documents(corpus.documents());
    if vocab.hash() != ckpt.meta.vocab_hash {
        return Err(Error::Validation("checkpoint vocabulary differs from corpus vocabulary".into()));
    }
    let model = ckpt.model()?;
    evaluate_model(&model, &vocab, corpus, split, cache, &ckpt.meta.train, role, &path.display().to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RhoRow {
    pub rho: f64,
    pub rouge1: f64,
    pub rouge2: f64,
    pub rougel: f64,
    pub evaluated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RhoSweep {
    pub split: String,
    pub rows: Vec<RhoRow>,
}

impl RhoSweep {
    /// Scores ×100, one row per ρ.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:>6} | {:>6} | {:>6} | {:>6}", "rho", "R-1", "R-2", "R-L");
        let _ = writeln!(s, "{:-<6}-+-{:-<6}-+-{:-<6}-+-{:-<6}", "", "", "", "");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:>6.2} | {:>6.2} | {:>6.2} | {:>6.2}",
                r.rho,
                100.0 * r.rouge1,
                100.0 * r.rouge2,
                100.0 * r.rougel
            );
        }
        s
    }

    pub fn to_jsonl(&self) -> String {
        self.rows
            .iter()
            .map(|r| serde_json::to_string(r).expect("plain data serializes") + "\n")
            .collect()
    }
}

/// Trains one model per ρ from the same seed and scores it on `role`.
/// Checkpoints go to `out_dir/rho_<ρ>` when a directory is given.
pub fn sweep_rho(
    corpus: &Corpus,
    split: &CorpusSplit,
    cache: &SelectionCache,
    base: &TrainConfig,
    rhos: &[f64],
    role: SplitRole,
    out_dir: Option<&Path>,
) -> Result<RhoSweep> {
    let mut rows = Vec::with_capacity(rhos.len());
    for &rho in rhos {
        let mut config = base.clone();
        config.rho = rho;
        config.validate()?;
        let mut trainer = Trainer::new(corpus, split, cache, config)?;
        let dir = out_dir.map(|d| d.join(format!("rho_{rho:.2}")));
        trainer.run(dir.as_deref())?;
        let report = trainer.evaluate(role, &format!("rho={rho}"))?;
        info!("rho {rho}: ROUGE-1 {:.4}", report.mean_rouge1);
        rows.push(RhoRow {
            rho,
            rouge1: report.mean_rouge1,
            rouge2: report.mean_rouge2,
            rougel: report.mean_rougel,
            evaluated: report.evaluated,
        });
    }
    Ok(RhoSweep { split: role.to_string(), rows })
}
