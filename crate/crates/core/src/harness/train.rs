//! The training loop, the two-group optimizer, and checkpoints.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::{Corpus, CorpusSplit, SplitRole};
use crate::error::{Error, Result};
use crate::harness::config::{learning_rate, TrainConfig};
use crate::harness::eval::{evaluate_model, EvalReport};
use crate::harness::instance::{build_training_instance, derive_seed, Built, EncoderInput, TrainingInstance};
use crate::losses::{dra_on_tape, tra_on_tape};
use crate::model::{memory_on_tape, Dropout, EncodedVars, Group, Model, ModelConfig, ParamStore};
use crate::selection::SelectionCache;
use crate::tape::{Mat, ParamId, Tape, Var};
use crate::vocab::Vocab;

const MAGIC: &[u8; 8] = b"CGCKPT01";

/// Adam with one learning rate per parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    m: Vec<Mat>,
    v: Vec<Mat>,
    t: u64,
}

impl Optimizer {
    const B1: f64 = 0.9;
    const B2: f64 = 0.998;
    const EPS: f64 = 1e-9;

    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Mat> = params.iter().map(|(_, p)| Mat::zeros(p.value.dim())).collect();
        Self { m: zeros.clone(), v: zeros, t: 0 }
    }

    /// One descent step; a missing gradient counts as zero.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Option<Mat>], encoder_lr: f64, decoder_lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t as i32);
        let c2 = 1.0 - Self::B2.powi(self.t as i32);
        for (i, g) in grads.iter().enumerate() {
            let id = ParamId(i);
            let lr = match params.get(id).group {
                Group::Encoder => encoder_lr,
                Group::Decoder => decoder_lr,
            };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            match g {
                Some(g) => {
                    m.zip_mut_with(g, |m, &g| *m = Self::B1 * *m + (1.0 - Self::B1) * g);
                    v.zip_mut_with(g, |v, &g| *v = Self::B2 * *v + (1.0 - Self::B2) * g * g);
                }
                None => {
                    m.mapv_inplace(|m| Self::B1 * m);
                    v.mapv_inplace(|v| Self::B2 * v);
                }
            }
            ndarray::Zip::from(params.value_mut(id)).and(&*m).and(&*v).for_each(|p, &m, &v| {
                *p -= lr * (m / c1) / ((v / c2).sqrt() + Self::EPS);
            });
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepLog {
    pub step: usize,
    pub total: f64,
    pub nll: f64,
    pub dra: f64,
    pub tra: f64,
    pub instances: usize,
    pub encoder_lr: f64,
    pub decoder_lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub final_step: usize,
    pub checkpoints: Vec<PathBuf>,
    pub best_checkpoint: Option<PathBuf>,
    pub best_val_rouge1: Option<f64>,
    pub skipped: usize,
    pub instances: usize,
}

/// Training state over one corpus split.
pub struct Trainer<'a> {
    corpus: &'a Corpus,
    split: &'a CorpusSplit,
    cache: &'a SelectionCache,
    pub config: TrainConfig,
    pub vocab: Vocab,
    pub model: Model,
    pub optimizer: Optimizer,
    pub step: usize,
    instances: Vec<TrainingInstance>,
    pub skipped: Vec<(String, String)>,
    pub history: Vec<StepLog>,
}

impl<'a> Trainer<'a> {
    pub fn new(corpus: &'a Corpus, split: &'a CorpusSplit, cache: &'a SelectionCache, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if split.train_ids.is_empty() {
            return Err(Error::Validation("empty training split".into()));
        }
        let vocab = Vocab::from_documents(corpus.documents());
        let model = Model::new(config.model_config(vocab.len()), derive_seed(config.rng_seed, &[b"init"]))?;
        let optimizer = Optimizer::new(&model.params);
        let mut instances = Vec::new();
        let mut skipped = Vec::new();
        for id in &split.train_ids {
            match build_training_instance(corpus, split, cache, &vocab, &config, id)? {
                Built::Instance(i) => instances.push(*i),
                Built::Skipped(reason) => skipped.push((id.clone(), reason)),
            }
        }
        if !skipped.is_empty() {
            info!("skipped {} of {} training documents", skipped.len(), split.train_ids.len());
        }
        Ok(Self { corpus, split, cache, config, vocab, model, optimizer, step: 0, instances, skipped, history: Vec::new() })
    }

    pub fn instances(&self) -> &[TrainingInstance] {
        &self.instances
    }

    pub fn skip_fraction(&self) -> f64 {
        self.skipped.len() as f64 / (self.skipped.len() + self.instances.len()).max(1) as f64
    }

    /// Instance indices for `step`: consecutive slices of per-epoch shuffles.
    pub fn batch_for(&self, step: usize) -> Vec<usize> {
        let n = self.instances.len();
        let b = self.config.batch_size.min(n);
        let mut out = Vec::with_capacity(b);
        let mut perm_epoch = usize::MAX;
        let mut perm: Vec<usize> = Vec::new();
        for pos in step * b..step * b + b {
            let epoch = pos / n;
            if epoch != perm_epoch {
                perm = (0..n).collect();
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.config.rng_seed, &[b"epoch", &epoch.to_le_bytes()]));
                perm.shuffle(&mut rng);
                perm_epoch = epoch;
            }
            out.push(perm[pos % n]);
        }
        out
    }

    fn encode_cached(
        &self,
        tape: &mut Tape,
        cache: &mut HashMap<EncoderInput, EncodedVars>,
        input: &EncoderInput,
    ) -> Result<EncodedVars> {
        if let Some(v) = cache.get(input) {
            return Ok(*v);
        }
        let ids: Vec<u8> = input.ids.iter().flat_map(|i| i.to_le_bytes()).collect();
        let seed = derive_seed(
            self.config.rng_seed,
            &[b"dropout", &self.step.to_le_bytes(), &input.segment.to_le_bytes(), &ids],
        );
        let mut drop = Dropout::new(seed);
        let v = self.model.encode_ids(tape, &input.ids, input.segment, Some(&mut drop))?;
        cache.insert(input.clone(), v);
        Ok(v)
    }

    /// One optimization step. With `CONTRASTIVE = false` the alignment terms
    /// are never built; with `alpha = beta = 0` both variants follow the same
    /// parameter trajectory.
    pub fn train_step<const CONTRASTIVE: bool>(&mut self) -> Result<StepLog> {
        if self.instances.is_empty() {
            return Err(Error::Validation("no usable training instance".into()));
        }
        let batch = self.batch_for(self.step);
        let mut tape = Tape::new();
        let mut enc: HashMap<EncoderInput, EncodedVars> = HashMap::new();
        let cfg = &self.config;

        // encoder work the decoder needs, then decoders, then alignment terms
        let mut memories = Vec::with_capacity(batch.len());
        for &i in &batch {
            let inst = &self.instances[i];
            let src = self.encode_cached(&mut tape, &mut enc, &inst.nodes[0])?;
            let mut refs = Vec::with_capacity(inst.memory_refs.len());
            for &(node, w) in &inst.memory_refs {
                refs.push((self.encode_cached(&mut tape, &mut enc, &inst.nodes[node])?.token_reps, w));
            }
            memories.push(memory_on_tape(&mut tape, src.token_reps, &refs, cfg.per_ref_token_budget, cfg.source_token_budget));
        }
        let mut nlls = Vec::with_capacity(batch.len());
        for (slot, &i) in batch.iter().enumerate() {
            let inst = &self.instances[i];
            let mem = memories[slot];
            let mask = vec![true; tape.shape(mem).0];
            let seed = derive_seed(cfg.rng_seed, &[b"decoder", &self.step.to_le_bytes(), inst.source_id.as_bytes()]);
            let mut drop = Dropout::new(seed);
            let logits = self.model.decoder_step(&mut tape, mem, &mask, &inst.decoder_input, Some(&mut drop))?;
            nlls.push(tape.nll(logits, &inst.decoder_targets, &vec![true; inst.decoder_targets.len()]));
        }
        let mut terms: Vec<(Var, Option<(Var, Var)>)> = nlls.iter().map(|&n| (n, None)).collect();
        if CONTRASTIVE {
            for (slot, &i) in batch.iter().enumerate() {
                let inst = &self.instances[i];
                let mut nodes = Vec::with_capacity(inst.nodes.len());
                for input in &inst.nodes {
                    nodes.push(self.encode_cached(&mut tape, &mut enc, input)?);
                }
                let doc_parts: Vec<Var> = nodes.iter().map(|n| n.doc_rep).collect();
                let doc_reps = tape.concat_rows(&doc_parts);
                let dra = dra_on_tape(&mut tape, doc_reps, &inst.dra);
                let tok_parts: Vec<Var> = nodes.iter().map(|n| n.token_reps).collect();
                let rows = tape.concat_rows(&tok_parts);
                let avg = tape.leaf(inst.token_average.clone());
                let token_reps = tape.matmul(avg, rows);
                let tra = tra_on_tape(&mut tape, nodes[0].doc_rep, token_reps, &inst.tra);
                terms[slot].1 = Some((dra, tra));
            }
        }
        let mut total: Option<Var> = None;
        let (mut nll_sum, mut dra_sum, mut tra_sum) = (0.0, 0.0, 0.0);
        for &(nll, extra) in &terms {
            nll_sum += tape.scalar(nll);
            let mut term = nll;
            if let Some((dra, tra)) = extra {
                dra_sum += tape.scalar(dra);
                tra_sum += tape.scalar(tra);
                let a = tape.scale(dra, cfg.alpha);
                let b = tape.scale(tra, cfg.beta);
                let t = tape.add(term, a);
                term = tape.add(t, b);
            }
            total = Some(match total {
                None => term,
                Some(acc) => tape.add(acc, term),
            });
        }
        let n = batch.len() as f64;
        let loss = tape.scale(total.expect("non-empty batch"), 1.0 / n);
        let value = tape.scalar(loss);
        if !value.is_finite() {
            let mut detail = String::new();
            for (slot, &i) in batch.iter().enumerate() {
                let (nll, extra) = terms[slot];
                let _ = write!(detail, "{}: nll {}", self.instances[i].source_id, tape.scalar(nll));
                if let Some((d, t)) = extra {
                    let _ = write!(detail, " dra {} tra {}", tape.scalar(d), tape.scalar(t));
                }
                detail.push_str("; ");
            }
            return Err(Error::NonFinite { step: self.step, detail });
        }

        let grads = tape.backward(loss);
        let mut by_param: Vec<Option<Mat>> = vec![None; self.model.params.len()];
        for (p, v) in tape.params() {
            by_param[p.0] = grads.get(v).cloned();
        }
        let norm = by_param.iter().flatten().map(|g| g.iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt();
        if norm > cfg.max_grad_norm {
            let s = cfg.max_grad_norm / norm;
            for g in by_param.iter_mut().flatten() {
                g.mapv_inplace(|x| x * s);
            }
        }
        let enc_lr = learning_rate(cfg.encoder_lr, cfg.encoder_warmup_steps, self.step);
        let dec_lr = learning_rate(cfg.decoder_lr, cfg.decoder_warmup_steps, self.step);
        self.optimizer.step(&mut self.model.params, &by_param, enc_lr, dec_lr);
        let log = StepLog {
            step: self.step,
            total: value,
            nll: nll_sum / n,
            dra: dra_sum / n,
            tra: tra_sum / n,
            instances: batch.len(),
            encoder_lr: enc_lr,
            decoder_lr: dec_lr,
        };
        self.step += 1;
        self.history.push(log.clone());
        Ok(log)
    }

    /// Trains to `total_steps`, checkpointing into `out_dir` and keeping the
    /// checkpoint with the best validation ROUGE-1.
    pub fn run(&mut self, out_dir: Option<&Path>) -> Result<TrainSummary> {
        if let Some(dir) = out_dir {
            std::fs::create_dir_all(dir)?;
        }
        let mut checkpoints = Vec::new();
        let mut best: Option<(f64, PathBuf)> = None;
        let mut log_writer = match out_dir {
            Some(d) => Some(BufWriter::new(File::create(d.join("train_log.jsonl"))?)),
            None => None,
        };
        while self.step < self.config.total_steps {
            let log = self.train_step::<true>()?;
            if let Some(w) = log_writer.as_mut() {
                serde_json::to_writer(&mut *w, &log).map_err(std::io::Error::from)?;
                w.write_all(b"\n")?;
            }
            if self.step % 50 == 0 {
                info!("step {} loss {:.4} (nll {:.4} dra {:.4} tra {:.4})", log.step, log.total, log.nll, log.dra, log.tra);
            }
            if self.step % self.config.checkpoint_every == 0 || self.step == self.config.total_steps {
                if let Some(dir) = out_dir {
                    let path = dir.join(format!("step_{:06}.ckpt", self.step));
                    self.save_checkpoint(&path)?;
                    checkpoints.push(path.clone());
                    if !self.split.val_ids.is_empty() {
                        let report = self.evaluate(SplitRole::Val, &path.display().to_string())?;
                        info!("step {} validation ROUGE-1 {:.4}", self.step, report.mean_rouge1);
                        if best.as_ref().is_none_or(|(b, _)| report.mean_rouge1 > *b) {
                            best = Some((report.mean_rouge1, path));
                        }
                    }
                }
            }
        }
        if let Some(mut w) = log_writer {
            w.flush()?;
        }
        let best_checkpoint = best.as_ref().map(|(_, p)| p.clone()).or_else(|| checkpoints.last().cloned());
        if let (Some(dir), Some(b)) = (out_dir, &best_checkpoint) {
            std::fs::write(dir.join("best_checkpoint.txt"), format!("{}\n", b.display()))?;
        }
        Ok(TrainSummary {
            final_step: self.step,
            checkpoints,
            best_checkpoint,
            best_val_rouge1: best.map(|(r, _)| r),
            skipped: self.skipped.len(),
            instances: self.instances.len(),
        })
    }

    pub fn evaluate(&self, role: SplitRole, checkpoint: &str) -> Result<EvalReport> {
        evaluate_model(&self.model, &self.vocab, self.corpus, self.split, self.cache, &self.config, role, checkpoint)
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        save_checkpoint(path, &self.model, &self.optimizer, self.step, &self.config, &self.vocab)
    }

    /// Restores parameters, optimizer state and step from a checkpoint
    /// written by a run with the same corpus and split.
    pub fn resume(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let ckpt = load_checkpoint(path)?;
        if ckpt.meta.vocab_hash != self.vocab.hash() {
            return Err(Error::Validation("checkpoint vocabulary differs from corpus vocabulary".into()));
        }
        if ckpt.meta.model != self.model.config {
            return Err(Error::Validation("checkpoint model config differs".into()));
        }
        ckpt.apply(&mut self.model)?;
        self.optimizer = ckpt.optimizer(&self.model.params)?;
        self.step = ckpt.meta.step;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub step: usize,
    pub rng_seed: u64,
    pub vocab_hash: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    tensors: Vec<(String, Mat, Mat, Mat)>,
    adam_t: u64,
}

impl Checkpoint {
    /// Copies stored parameters into `model` by name.
    pub fn apply(&self, model: &mut Model) -> Result<()> {
        for (name, value, _, _) in &self.tensors {
            let id = model
                .params
                .find(name)
                .ok_or_else(|| Error::Validation(format!("checkpoint tensor `{name}` unknown to the model")))?;
            let slot = model.params.value_mut(id);
            if slot.dim() != value.dim() {
                return Err(Error::Shape(format!("tensor `{name}` has shape {:?}", value.dim())));
            }
            slot.assign(value);
        }
        Ok(())
    }

    fn optimizer(&self, params: &ParamStore) -> Result<Optimizer> {
        let mut opt = Optimizer::new(params);
        for (name, _, m, v) in &self.tensors {
            let id = params.find(name).ok_or_else(|| Error::Validation(format!("unknown tensor `{name}`")))?;
            opt.m[id.0] = m.clone();
            opt.v[id.0] = v.clone();
        }
        opt.t = self.adam_t;
        Ok(opt)
    }

    /// A model with the stored configuration and parameters.
    pub fn model(&self) -> Result<Model> {
        let mut m = Model::new(self.meta.model.clone(), 0)?;
        self.apply(&mut m)?;
        Ok(m)
    }
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

fn write_mat(w: &mut impl Write, m: &Mat) -> std::io::Result<()> {
    for &x in m.iter() {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

/// Binary parameter blob plus a `key = value` sidecar at `<path>.meta`.
pub fn save_checkpoint(
    path: impl AsRef<Path>,
    model: &Model,
    optimizer: &Optimizer,
    step: usize,
    config: &TrainConfig,
    vocab: &Vocab,
) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(step as u64).to_le_bytes())?;
    w.write_all(&optimizer.t.to_le_bytes())?;
    w.write_all(&(model.params.len() as u32).to_le_bytes())?;
    for (id, p) in model.params.iter() {
        w.write_all(&(p.name.len() as u32).to_le_bytes())?;
        w.write_all(p.name.as_bytes())?;
        let (r, c) = p.value.dim();
        w.write_all(&(r as u32).to_le_bytes())?;
        w.write_all(&(c as u32).to_le_bytes())?;
        write_mat(&mut w, &p.value)?;
        write_mat(&mut w, &optimizer.m[id.0])?;
        write_mat(&mut w, &optimizer.v[id.0])?;
    }
    w.flush()?;

    let mc = &model.config;
    let mut meta = String::new();
    let _ = writeln!(meta, "step = {step}");
    let _ = writeln!(meta, "rng_seed = {}", config.rng_seed);
    let _ = writeln!(meta, "vocab_hash = {}", vocab.hash());
    for (k, v) in [
        ("vocab_size", mc.vocab_size.to_string()),
        ("model_dim", mc.model_dim.to_string()),
        ("encoder_layers", mc.encoder_layers.to_string()),
        ("decoder_layers", mc.decoder_layers.to_string()),
        ("attention_heads", mc.attention_heads.to_string()),
        ("feedforward_dim", mc.feedforward_dim.to_string()),
        ("max_positions", mc.max_positions.to_string()),
        ("dropout", mc.dropout.to_string()),
        ("encoder_dropout", mc.encoder_dropout.to_string()),
    ] {
        let _ = writeln!(meta, "model.{k} = {v}");
    }
    for (k, v) in config.entries() {
        let _ = writeln!(meta, "train.{k} = {v}");
    }
    std::fs::write(sidecar(path), meta)?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_mat(r: &mut impl Read, rows: usize, cols: usize) -> std::io::Result<Mat> {
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        data.push(f64::from_bits(read_u64(r)?));
    }
    Ok(Mat::from_shape_vec((rows, cols), data).expect("length matches shape"))
}

fn parse_meta(text: &str) -> Result<CheckpointMeta> {
    let mut kv = HashMap::new();
    let mut train_lines = String::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse { line: i + 1, message: "expected `key = value`".into() })?;
        let (k, v) = (k.trim(), v.trim());
        if let Some(t) = k.strip_prefix("train.") {
            let _ = writeln!(train_lines, "{t} = {v}");
        } else {
            kv.insert(k.to_string(), v.to_string());
        }
    }
    let get = |k: &str| kv.get(k).cloned().ok_or_else(|| Error::Config(format!("checkpoint sidecar lacks `{k}`")));
    fn num<T: std::str::FromStr>(k: &str, v: String) -> Result<T> {
        v.parse().map_err(|_| Error::Config(format!("bad `{k}` in checkpoint sidecar")))
    }
    let model = ModelConfig {
        vocab_size: num("vocab_size", get("model.vocab_size")?)?,
        model_dim: num("model_dim", get("model.model_dim")?)?,
        encoder_layers: num("encoder_layers", get("model.encoder_layers")?)?,
        decoder_layers: num("decoder_layers", get("model.decoder_layers")?)?,
        attention_heads: num("attention_heads", get("model.attention_heads")?)?,
        feedforward_dim: num("feedforward_dim", get("model.feedforward_dim")?)?,
        max_positions: num("max_positions", get("model.max_positions")?)?,
        dropout: num("dropout", get("model.dropout")?)?,
        encoder_dropout: num("encoder_dropout", get("model.encoder_dropout")?)?,
    };
    Ok(CheckpointMeta {
        step: num("step", get("step")?)?,
        rng_seed: num("rng_seed", get("rng_seed")?)?,
        vocab_hash: get("vocab_hash")?,
        model,
        train: TrainConfig::parse(&train_lines)?,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let meta = parse_meta(&std::fs::read_to_string(sidecar(path))?)?;
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Validation(format!("{} is not a checkpoint", path.display())));
    }
    let step = read_u64(&mut r)? as usize;
    if step != meta.step {
        warn!("checkpoint step {step} disagrees with sidecar step {}", meta.step);
    }
    let adam_t = read_u64(&mut r)?;
    let count = read_u32(&mut r)?;
    let mut tensors = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::Validation("tensor name is not UTF-8".into()))?;
        let rows = read_u32(&mut r)? as usize;
        let cols = read_u32(&mut r)? as usize;
        let value = read_mat(&mut r, rows, cols)?;
        let m = read_mat(&mut r, rows, cols)?;
        let v = read_mat(&mut r, rows, cols)?;
        tensors.push((name, value, m, v));
    }
    Ok(Checkpoint { meta, tensors, adam_t })
}
