//! The trainable network: embeddings, a pre-norm transformer encoder,
//! max/mean pooling to a document vector, a post-norm transformer decoder,
//! and greedy / beam generation.
//!
//! All forward passes are recorded on a [`Tape`] so the same code serves
//! training and inference.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{Mat, ParamId, Tape, Var};
use crate::vocab::{BOS, EOS, PAD};

pub const SOURCE_SEGMENT: usize = 0;
pub const REFERENCE_SEGMENT: usize = 1;
const SEGMENTS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub model_dim: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub attention_heads: usize,
    pub feedforward_dim: usize,
    pub max_positions: usize,
    /// Decoder dropout.
    pub dropout: f64,
    pub encoder_dropout: f64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("model_dim", self.model_dim),
            ("encoder_layers", self.encoder_layers),
            ("decoder_layers", self.decoder_layers),
            ("attention_heads", self.attention_heads),
            ("feedforward_dim", self.feedforward_dim),
            ("max_positions", self.max_positions),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.model_dim % self.attention_heads != 0 {
            return Err(Error::Config(format!(
                "model_dim {} not divisible by {} heads",
                self.model_dim, self.attention_heads
            )));
        }
        for (name, p) in [("dropout", self.dropout), ("encoder_dropout", self.encoder_dropout)] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("{name} {p} outside [0, 1)")));
            }
        }
        Ok(())
    }
}

/// Optimizer parameter group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Group {
    /// Encoder layers, input embeddings and pooling.
    Encoder,
    /// Decoder layers, decoder embeddings and output projection.
    Decoder,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Mat,
    pub group: Group,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    fn add(&mut self, name: String, value: Mat, group: Group) -> ParamId {
        self.params.push(Param { name, value, group });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }
}

#[derive(Debug, Clone, Copy)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    g: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

#[derive(Debug, Clone, Copy)]
struct EncoderLayer {
    ln1: Norm,
    attn: Attention,
    ln2: Norm,
    ff1: Linear,
    ff2: Linear,
}

#[derive(Debug, Clone, Copy)]
struct DecoderLayer {
    self_attn: Attention,
    ln1: Norm,
    cross_attn: Attention,
    ln2: Norm,
    ff1: Linear,
    ff2: Linear,
    ln3: Norm,
}

struct Builder<'a> {
    store: &'a mut ParamStore,
    rng: ChaCha8Rng,
    group: Group,
}

impl Builder<'_> {
    fn normal(&mut self, name: String, shape: (usize, usize), std: f64) -> ParamId {
        let dist = Normal::new(0.0, std).expect("valid std");
        let rng = &mut self.rng;
        let value = Mat::from_shape_fn(shape, |_| dist.sample(rng));
        self.store.add(name, value, self.group)
    }

    fn constant(&mut self, name: String, shape: (usize, usize), v: f64) -> ParamId {
        self.store.add(name, Mat::from_elem(shape, v), self.group)
    }

    fn linear(&mut self, name: &str, inp: usize, out: usize) -> Linear {
        let w = self.normal(format!("{name}.w"), (inp, out), (1.0 / inp as f64).sqrt());
        let b = self.constant(format!("{name}.b"), (1, out), 0.0);
        Linear { w, b }
    }

    fn norm(&mut self, name: &str, dim: usize) -> Norm {
        Norm { g: self.constant(format!("{name}.g"), (1, dim), 1.0), b: self.constant(format!("{name}.b"), (1, dim), 0.0) }
    }

    fn attention(&mut self, name: &str, dim: usize) -> Attention {
        Attention {
            q: self.linear(&format!("{name}.q"), dim, dim),
            k: self.linear(&format!("{name}.k"), dim, dim),
            v: self.linear(&format!("{name}.v"), dim, dim),
            o: self.linear(&format!("{name}.o"), dim, dim),
        }
    }
}

/// Per-pass dropout source. Absent during evaluation.
#[derive(Debug, Clone)]
pub struct Dropout {
    rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    fn mask(&mut self, shape: (usize, usize), p: f64) -> Mat {
        let keep = 1.0 / (1.0 - p);
        Mat::from_shape_fn(shape, |_| if self.rng.random::<f64>() < p { 0.0 } else { keep })
    }
}

/// Encoder output for one document, detached from any tape.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    pub token_reps: Mat,
    pub doc_rep: Array1<f64>,
    pub attention_mask: Vec<bool>,
}

/// Encoder output recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct EncodedVars {
    pub token_reps: Var,
    /// `1 x model_dim`.
    pub doc_rep: Var,
}

/// Decoder input: memory rows plus the tokens generated so far.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderContext {
    pub memory: Mat,
    pub memory_mask: Vec<bool>,
    pub generated_prefix: Vec<u32>,
    /// `(slot, row)` origin of each memory row; slot 0 is the source, slot
    /// `i + 1` the `i`-th reference in the order given.
    pub provenance: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Greedy,
    Beam(usize),
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    tok: ParamId,
    pos: ParamId,
    seg: ParamId,
    encoder: Vec<EncoderLayer>,
    pool: Linear,
    dec_tok: ParamId,
    dec_pos: ParamId,
    decoder: Vec<DecoderLayer>,
    out: Linear,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::default();
        let d = config.model_dim;
        let ff = config.feedforward_dim;
        let mut b = Builder { store: &mut params, rng: ChaCha8Rng::seed_from_u64(seed), group: Group::Encoder };
        let tok = b.normal("enc.tok".into(), (config.vocab_size, d), 0.1);
        let pos = b.normal("enc.pos".into(), (config.max_positions, d), 0.1);
        let seg = b.normal("enc.seg".into(), (SEGMENTS, d), 0.1);
        let encoder = (0..config.encoder_layers)
            .map(|l| EncoderLayer {
                ln1: b.norm(&format!("enc.{l}.ln1"), d),
                attn: b.attention(&format!("enc.{l}.attn"), d),
                ln2: b.norm(&format!("enc.{l}.ln2"), d),
                ff1: b.linear(&format!("enc.{l}.ff1"), d, ff),
                ff2: b.linear(&format!("enc.{l}.ff2"), ff, d),
            })
            .collect();
        let pool = b.linear("pool", 2 * d, d);
        b.group = Group::Decoder;
        let dec_tok = b.normal("dec.tok".into(), (config.vocab_size, d), 0.1);
        let dec_pos = b.normal("dec.pos".into(), (config.max_positions, d), 0.1);
        let decoder = (0..config.decoder_layers)
            .map(|l| DecoderLayer {
                self_attn: b.attention(&format!("dec.{l}.self"), d),
                ln1: b.norm(&format!("dec.{l}.ln1"), d),
                cross_attn: b.attention(&format!("dec.{l}.cross"), d),
                ln2: b.norm(&format!("dec.{l}.ln2"), d),
                ff1: b.linear(&format!("dec.{l}.ff1"), d, ff),
                ff2: b.linear(&format!("dec.{l}.ff2"), ff, d),
                ln3: b.norm(&format!("dec.{l}.ln3"), d),
            })
            .collect();
        let out = b.linear("out", d, config.vocab_size);
        Ok(Self { config, params, tok, pos, seg, encoder, pool, dec_tok, dec_pos, decoder, out })
    }

    fn p(&self, tape: &mut Tape, id: ParamId) -> Var {
        tape.param(id, &self.params.get(id).value)
    }

    fn linear(&self, tape: &mut Tape, l: Linear, x: Var) -> Var {
        let w = self.p(tape, l.w);
        let b = self.p(tape, l.b);
        let y = tape.matmul(x, w);
        tape.add_row(y, b)
    }

    fn norm(&self, tape: &mut Tape, n: Norm, x: Var) -> Var {
        let g = self.p(tape, n.g);
        let b = self.p(tape, n.b);
        tape.layer_norm(x, g, b)
    }

    fn dropout(tape: &mut Tape, x: Var, p: f64, drop: &mut Option<&mut Dropout>) -> Var {
        match drop {
            Some(d) if p > 0.0 => {
                let m = d.mask(tape.shape(x), p);
                let mv = tape.leaf(m);
                tape.mul(x, mv)
            }
            _ => x,
        }
    }

    /// Multi-head attention of `q_in` rows over `kv_in` rows where `mask`
    /// allows; fully masked query rows yield zero context.
    fn attention(&self, tape: &mut Tape, a: Attention, q_in: Var, kv_in: Var, mask: &Array2<bool>) -> Var {
        let heads = self.config.attention_heads;
        let dh = self.config.model_dim / heads;
        let q = self.linear(tape, a.q, q_in);
        let k = self.linear(tape, a.k, kv_in);
        let v = self.linear(tape, a.v, kv_in);
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = tape.slice_cols(q, h * dh, dh);
            let kh = tape.slice_cols(k, h * dh, dh);
            let vh = tape.slice_cols(v, h * dh, dh);
            let kt = tape.transpose(kh);
            let s = tape.matmul(qh, kt);
            let s = tape.scale(s, scale);
            let w = tape.masked_softmax(s, mask.clone());
            outs.push(tape.matmul(w, vh));
        }
        let cat = if heads == 1 { outs[0] } else { tape.concat_cols(&outs) };
        self.linear(tape, a.o, cat)
    }

    /// Row `p` is `E_tok[id_p] + E_pos[p] + E_seg[segment]`.
    pub fn embed_tokens(&self, tape: &mut Tape, ids: &[u32], segment: usize) -> Result<Var> {
        self.check_ids(ids)?;
        if segment >= SEGMENTS {
            return Err(Error::Range(format!("segment {segment} >= {SEGMENTS}")));
        }
        let rows: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        let tok = self.p(tape, self.tok);
        let pos = self.p(tape, self.pos);
        let seg = self.p(tape, self.seg);
        let t = tape.gather_rows(tok, &rows);
        let p = tape.slice_rows(pos, 0, ids.len());
        let s = tape.gather_rows(seg, &vec![segment; ids.len()]);
        let ts = tape.add(t, p);
        Ok(tape.add(ts, s))
    }

    fn check_ids(&self, ids: &[u32]) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::Shape("empty token sequence".into()));
        }
        if ids.len() > self.config.max_positions {
            return Err(Error::Range(format!("{} positions > max {}", ids.len(), self.config.max_positions)));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= self.config.vocab_size) {
            return Err(Error::Range(format!("token id {bad} >= vocabulary {}", self.config.vocab_size)));
        }
        Ok(())
    }

    /// Pre-norm self-attention stack followed by pooling.
    pub fn encode(&self, tape: &mut Tape, embedded: Var, mask: &[bool], mut drop: Option<&mut Dropout>) -> Result<EncodedVars> {
        let (n, d) = tape.shape(embedded);
        if n != mask.len() || d != self.config.model_dim {
            return Err(Error::Shape(format!("embedded {n}x{d}, mask {}", mask.len())));
        }
        let attn_mask = Array2::from_shape_fn((n, n), |(i, j)| mask[i] && mask[j]);
        let p = self.config.encoder_dropout;
        let mut x = Self::dropout(tape, embedded, p, &mut drop);
        for layer in &self.encoder {
            let h = self.norm(tape, layer.ln1, x);
            let a = self.attention(tape, layer.attn, h, h, &attn_mask);
            let a = Self::dropout(tape, a, p, &mut drop);
            x = tape.add(x, a);
            let h = self.norm(tape, layer.ln2, x);
            let f = self.linear(tape, layer.ff1, h);
            let f = tape.gelu(f);
            let f = self.linear(tape, layer.ff2, f);
            let f = Self::dropout(tape, f, p, &mut drop);
            x = tape.add(x, f);
        }
        let token_reps = Self::unit_norm(tape, x);
        let doc_rep = self.pool(tape, token_reps, mask)?;
        Ok(EncodedVars { token_reps, doc_rep })
    }

    /// `Linear([max; mean])` over unmasked rows, then [`Self::unit_norm`].
    pub fn pool(&self, tape: &mut Tape, token_reps: Var, mask: &[bool]) -> Result<Var> {
        if tape.shape(token_reps).0 != mask.len() {
            return Err(Error::Shape("pool mask length".into()));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::DegeneratePool);
        }
        let mx = tape.max_rows(token_reps, mask);
        let mn = tape.mean_rows(token_reps, mask);
        let cat = tape.concat_cols(&[mx, mn]);
        let p = self.linear(tape, self.pool, cat);
        Ok(Self::unit_norm(tape, p))
    }

    /// Layer norm without affine parameters: every output row has zero mean
    /// and squared norm close to `model_dim`, so inner products stay bounded.
    fn unit_norm(tape: &mut Tape, x: Var) -> Var {
        let d = tape.shape(x).1;
        let g = tape.leaf(Mat::ones((1, d)));
        let b = tape.leaf(Mat::zeros((1, d)));
        tape.layer_norm(x, g, b)
    }

    /// Embeds and encodes one unpadded document.
    pub fn encode_ids(&self, tape: &mut Tape, ids: &[u32], segment: usize, drop: Option<&mut Dropout>) -> Result<EncodedVars> {
        let e = self.embed_tokens(tape, ids, segment)?;
        self.encode(tape, e, &vec![true; ids.len()], drop)
    }

    pub fn encode_document(&self, ids: &[u32], segment: usize) -> Result<EncoderOutput> {
        let mut tape = Tape::new();
        let v = self.encode_ids(&mut tape, ids, segment, None)?;
        Ok(EncoderOutput {
            token_reps: tape.value(v.token_reps).clone(),
            doc_rep: tape.value(v.doc_rep).row(0).to_owned(),
            attention_mask: vec![true; ids.len()],
        })
    }

    /// Post-norm decoder over `prefix`; returns logits for every prefix position.
    pub fn decoder_step(
        &self,
        tape: &mut Tape,
        memory: Var,
        memory_mask: &[bool],
        prefix: &[u32],
        mut drop: Option<&mut Dropout>,
    ) -> Result<Var> {
        self.check_ids(prefix)?;
        let (m, d) = tape.shape(memory);
        if m == 0 || m != memory_mask.len() || d != self.config.model_dim {
            return Err(Error::Shape(format!("memory {m}x{d}, mask {}", memory_mask.len())));
        }
        let n = prefix.len();
        let rows: Vec<usize> = prefix.iter().map(|&i| i as usize).collect();
        let tok = self.p(tape, self.dec_tok);
        let pos = self.p(tape, self.dec_pos);
        let t = tape.gather_rows(tok, &rows);
        let ps = tape.slice_rows(pos, 0, n);
        let mut h = tape.add(t, ps);
        let p = self.config.dropout;
        h = Self::dropout(tape, h, p, &mut drop);
        let causal = Array2::from_shape_fn((n, n), |(i, j)| j <= i);
        let cross = Array2::from_shape_fn((n, m), |(_, j)| memory_mask[j]);
        for layer in &self.decoder {
            let a = self.attention(tape, layer.self_attn, h, h, &causal);
            let a = Self::dropout(tape, a, p, &mut drop);
            let r = tape.add(h, a);
            h = self.norm(tape, layer.ln1, r);
            let c = self.attention(tape, layer.cross_attn, h, memory, &cross);
            let c = Self::dropout(tape, c, p, &mut drop);
            let r = tape.add(h, c);
            h = self.norm(tape, layer.ln2, r);
            let f = self.linear(tape, layer.ff1, h);
            let f = tape.gelu(f);
            let f = self.linear(tape, layer.ff2, f);
            let f = Self::dropout(tape, f, p, &mut drop);
            let r = tape.add(h, f);
            h = self.norm(tape, layer.ln3, r);
        }
        Ok(self.linear(tape, self.out, h))
    }

    /// Next-token log-probabilities after `prefix`, with padding and
    /// begin-of-sequence excluded.
    fn next_log_probs(&self, context: &DecoderContext, prefix: &[u32]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let mem = tape.leaf(context.memory.clone());
        let logits = self.decoder_step(&mut tape, mem, &context.memory_mask, prefix, None)?;
        let row = tape.value(logits).row(prefix.len() - 1).to_owned();
        let mut row: Vec<f64> = row.to_vec();
        row[PAD as usize] = f64::NEG_INFINITY;
        row[BOS as usize] = f64::NEG_INFINITY;
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        Ok(row.into_iter().map(|x| x - lse).collect())
    }

    /// Decodes from begin-of-sequence until end-of-sequence or `max_length`
    /// generated tokens. The result excludes both markers.
    pub fn generate(&self, context: &DecoderContext, max_length: usize, strategy: Strategy) -> Result<Vec<u32>> {
        let max_length = max_length.min(self.config.max_positions.saturating_sub(1)).max(1);
        match strategy {
            Strategy::Greedy => self.greedy(context, max_length),
            Strategy::Beam(width) => self.beam(context, max_length, width.max(1)),
        }
    }

    fn greedy(&self, context: &DecoderContext, max_length: usize) -> Result<Vec<u32>> {
        let mut prefix = vec![BOS];
        let mut out = Vec::new();
        for _ in 0..max_length {
            let lp = self.next_log_probs(context, &prefix)?;
            let next = argmax(&lp);
            if next == EOS {
                break;
            }
            out.push(next);
            prefix.push(next);
        }
        Ok(out)
    }

    fn beam(&self, context: &DecoderContext, max_length: usize, width: usize) -> Result<Vec<u32>> {
        #[derive(Clone)]
        struct Hyp {
            tokens: Vec<u32>,
            log_prob: f64,
            done: bool,
        }
        let score = |h: &Hyp| h.log_prob / h.tokens.len().max(1) as f64;
        let mut beam = vec![Hyp { tokens: vec![], log_prob: 0.0, done: false }];
        for _ in 0..max_length {
            let mut candidates: Vec<Hyp> = Vec::new();
            for h in &beam {
                if h.done {
                    candidates.push(h.clone());
                    continue;
                }
                let mut prefix = vec![BOS];
                prefix.extend(&h.tokens);
                let lp = self.next_log_probs(context, &prefix)?;
                for (t, &l) in lp.iter().enumerate() {
                    if l.is_finite() {
                        let mut tokens = h.tokens.clone();
                        tokens.push(t as u32);
                        candidates.push(Hyp { tokens, log_prob: h.log_prob + l, done: t as u32 == EOS });
                    }
                }
            }
            candidates.sort_by(|a, b| score(b).total_cmp(&score(a)).then_with(|| a.tokens.cmp(&b.tokens)));
            candidates.truncate(width);
            beam = candidates;
            if beam.iter().all(|h| h.done) {
                break;
            }
        }
        let best = &beam[0];
        Ok(best.tokens.iter().copied().filter(|&t| t != EOS).collect())
    }
}

/// Index of the largest value, lowest index on ties.
fn argmax(v: &[f64]) -> u32 {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best as u32
}

/// Source rows first (at most `source_budget`), then each reference in
/// descending weight (ties keep input order), at most `per_ref_budget` rows each.
pub fn memory_layout(source_len: usize, refs: &[(usize, f64)], source_budget: usize, per_ref_budget: usize) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..refs.len()).collect();
    order.sort_by(|&a, &b| refs[b].1.total_cmp(&refs[a].1));
    let mut rows: Vec<(usize, usize)> = (0..source_len.min(source_budget)).map(|r| (0, r)).collect();
    for i in order {
        rows.extend((0..refs[i].0.min(per_ref_budget)).map(|r| (i + 1, r)));
    }
    rows
}

/// Concatenates truncated source and reference token representations into
/// decoder memory, references by descending edge weight.
pub fn build_decoder_memory(
    source: &EncoderOutput,
    refs: &[(&EncoderOutput, f64)],
    per_ref_budget: usize,
    source_budget: usize,
) -> Result<DecoderContext> {
    if per_ref_budget == 0 || source_budget == 0 {
        return Err(Error::Validation("token budgets must be positive".into()));
    }
    let sizes: Vec<(usize, f64)> = refs.iter().map(|(r, w)| (r.token_reps.nrows(), *w)).collect();
    let layout = memory_layout(source.token_reps.nrows(), &sizes, source_budget, per_ref_budget);
    let dim = source.token_reps.ncols();
    let mut memory = Mat::zeros((layout.len(), dim));
    let mut memory_mask = Vec::with_capacity(layout.len());
    for (k, &(slot, row)) in layout.iter().enumerate() {
        let enc = if slot == 0 { source } else { refs[slot - 1].0 };
        memory.row_mut(k).assign(&enc.token_reps.row(row));
        memory_mask.push(enc.attention_mask[row]);
    }
    Ok(DecoderContext { memory, memory_mask, generated_prefix: vec![BOS], provenance: layout })
}

/// Tape version of [`build_decoder_memory`] so gradients reach the encoder.
pub fn memory_on_tape(
    tape: &mut Tape,
    source: Var,
    refs: &[(Var, f64)],
    per_ref_budget: usize,
    source_budget: usize,
) -> Var {
    let sizes: Vec<(usize, f64)> = refs.iter().map(|(v, w)| (tape.shape(*v).0, *w)).collect();
    let layout = memory_layout(tape.shape(source).0, &sizes, source_budget, per_ref_budget);
    // contiguous runs per slot
    let mut parts = Vec::new();
    let mut start = 0;
    while start < layout.len() {
        let slot = layout[start].0;
        let mut end = start;
        while end < layout.len() && layout[end].0 == slot {
            end += 1;
        }
        let var = if slot == 0 { source } else { refs[slot - 1].0 };
        parts.push(tape.slice_rows(var, 0, end - start));
        start = end;
    }
    tape.concat_rows(&parts)
}
