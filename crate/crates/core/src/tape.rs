//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Scalars are 1x1
//! matrices. [`Tape::backward`] walks the tape in reverse and returns the
//! gradient of a scalar output with respect to every recorded node.

use std::collections::BTreeMap;

use ndarray::{s, Array2, Axis};

pub type Mat = Array2<f64>;

/// Handle to a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Index of a trainable parameter in a [`crate::model::ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    MaskedSoftmax(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Mat, inv_std: Vec<f64> },
    GatherRows(Var, Vec<usize>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    MaxRows(Var, Vec<usize>),
    MeanRows(Var, Vec<bool>, f64),
    WeightedLogSumExp(Var, Mat),
    Nll { logits: Var, targets: Vec<usize>, probs: Mat, mask: Vec<bool>, count: f64 },
}

#[derive(Debug)]
struct Node {
    value: Mat,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<ParamId, Var>,
}

/// Gradients of one backward pass, indexed by tape node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, zeros of `shape` if nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Mat {
        self.get(v).cloned().unwrap_or_else(|| Mat::zeros(shape))
    }
}

fn accumulate(grads: &mut [Option<Mat>], v: Var, g: Mat) {
    match &mut grads[v.0] {
        Some(acc) => *acc += &g,
        slot @ None => *slot = Some(g),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// A constant or input.
    pub fn leaf(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn constant_scalar(&mut self, x: f64) -> Var {
        self.leaf(Mat::from_elem((1, 1), x))
    }

    /// Registers a parameter once per tape; later calls return the same node.
    pub fn param(&mut self, id: ParamId, value: &Mat) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.leaf(value.clone());
        self.params.insert(id, v);
        v
    }

    /// Parameters touched by this tape, in id order.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.params.iter().map(|(&p, &v)| (p, v))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        self.push(v, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add: shape mismatch");
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    /// `a + row` with `row` (1 x m) broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.shape(row).0, 1, "add_row: bias must be a row");
        let v = self.value(a) + self.value(row);
        self.push(v, Op::AddRow(a, row))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul: shape mismatch");
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        self.push(v, Op::Scale(a, c))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let nb = self.scale(b, -1.0);
        self.add(a, nb)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| 0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh()));
        self.push(v, Op::Gelu(a))
    }

    /// Row-wise softmax over entries where `mask` is true; rows without any
    /// allowed entry become zero.
    pub fn masked_softmax(&mut self, a: Var, mask: Array2<bool>) -> Var {
        let x = self.value(a);
        assert_eq!(x.dim(), mask.dim(), "masked_softmax: mask shape");
        let mut out = Mat::zeros(x.dim());
        for ((xr, mr), mut orow) in x.rows().into_iter().zip(mask.rows()).zip(out.rows_mut()) {
            let max = xr
                .iter()
                .zip(mr.iter())
                .filter(|(_, &m)| m)
                .map(|(&v, _)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let mut sum = 0.0;
            for ((o, &v), &m) in orow.iter_mut().zip(xr.iter()).zip(mr.iter()) {
                if m {
                    *o = (v - max).exp();
                    sum += *o;
                }
            }
            orow.mapv_inplace(|o| o / sum);
        }
        self.push(out, Op::MaskedSoftmax(a))
    }

    /// Per-row layer normalization with affine `gamma`, `beta` (1 x m).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let m = xv.ncols() as f64;
        let mut xhat = Mat::zeros(xv.dim());
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for (r, mut h) in xv.rows().into_iter().zip(xhat.rows_mut()) {
            let mean = r.sum() / m;
            let var = r.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            for (o, &v) in h.iter_mut().zip(r.iter()) {
                *o = (v - mean) * inv;
            }
            inv_std.push(inv);
        }
        let out = &xhat * self.value(gamma) + self.value(beta);
        self.push(out, Op::LayerNorm { x, gamma, beta, xhat, inv_std })
    }

    pub fn gather_rows(&mut self, table: Var, rows: &[usize]) -> Var {
        let t = self.value(table);
        let v = t.select(Axis(0), rows);
        self.push(v, Op::GatherRows(table, rows.to_vec()))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![start..start + len, ..]).to_owned();
        self.push(v, Op::SliceRows(a, start))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(v, Op::SliceCols(a, start))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("concat_rows: column mismatch");
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row mismatch");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    /// Column-wise max over rows where `mask` is true (first row wins ties).
    pub fn max_rows(&mut self, a: Var, mask: &[bool]) -> Var {
        let x = self.value(a);
        let mut arg = Vec::with_capacity(x.ncols());
        let mut out = Mat::zeros((1, x.ncols()));
        for (c, col) in x.columns().into_iter().enumerate() {
            let mut best: Option<usize> = None;
            for (r, &v) in col.iter().enumerate() {
                if mask[r] && best.is_none_or(|b| v > col[b]) {
                    best = Some(r);
                }
            }
            let b = best.expect("max_rows: no unmasked row");
            arg.push(b);
            out[[0, c]] = col[b];
        }
        self.push(out, Op::MaxRows(a, arg))
    }

    /// Column-wise mean over rows where `mask` is true.
    pub fn mean_rows(&mut self, a: Var, mask: &[bool]) -> Var {
        let x = self.value(a);
        let count = mask.iter().filter(|&&m| m).count() as f64;
        assert!(count > 0.0, "mean_rows: no unmasked row");
        let mut out = Mat::zeros((1, x.ncols()));
        for (r, row) in x.rows().into_iter().enumerate() {
            if mask[r] {
                out.row_mut(0).scaled_add(1.0, &row);
            }
        }
        out /= count;
        self.push(out, Op::MeanRows(a, mask.to_vec(), count))
    }

    /// `log(sum_k w_k exp(x_k))` over entries with `w_k > 0`, computed with
    /// max subtraction. Panics if no weight is positive.
    pub fn weighted_log_sum_exp(&mut self, x: Var, weights: Mat) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.dim(), weights.dim(), "weighted_log_sum_exp: weight shape");
        let max = xv
            .iter()
            .zip(weights.iter())
            .filter(|(_, &w)| w > 0.0)
            .map(|(&v, _)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(max > f64::NEG_INFINITY, "weighted_log_sum_exp: no positive weight");
        let sum: f64 = xv
            .iter()
            .zip(weights.iter())
            .filter(|(_, &w)| w > 0.0)
            .map(|(&v, &w)| w * (v - max).exp())
            .sum();
        let out = Mat::from_elem((1, 1), max + sum.ln());
        self.push(out, Op::WeightedLogSumExp(x, weights))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `logits`, over rows where `mask` is true.
    pub fn nll(&mut self, logits: Var, targets: &[usize], mask: &[bool]) -> Var {
        let x = self.value(logits);
        assert_eq!(x.nrows(), targets.len(), "nll: one target per row");
        let mut probs = Mat::zeros(x.dim());
        let mut total = 0.0;
        let mut count = 0.0;
        for (r, (row, mut p)) in x.rows().into_iter().zip(probs.rows_mut()).enumerate() {
            let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let mut sum = 0.0;
            for (o, &v) in p.iter_mut().zip(row.iter()) {
                *o = (v - max).exp();
                sum += *o;
            }
            p.mapv_inplace(|o| o / sum);
            if mask[r] {
                total += -(row[targets[r]] - max - sum.ln());
                count += 1.0;
            }
        }
        let value = if count > 0.0 { total / count } else { 0.0 };
        self.push(
            Mat::from_elem((1, 1), value),
            Op::Nll { logits, targets: targets.to_vec(), probs, mask: mask.to_vec(), count },
        )
    }

    /// Gradients of the scalar `output` with respect to every node.
    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(self.shape(output), (1, 1), "backward: output must be scalar");
        let mut grads: Vec<Option<Mat>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Mat::ones((1, 1)));
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, g.t().to_owned()),
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::AddRow(a, row) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *row, gr);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Scale(a, c) => accumulate(&mut grads, *a, &g * *c),
                Op::Gelu(a) => {
                    let mut ga = self.value(*a).mapv(|x| {
                        let u = GELU_C * (x + 0.044715 * x * x * x);
                        let t = u.tanh();
                        0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
                    });
                    ga *= &g;
                    accumulate(&mut grads, *a, ga);
                }
                Op::MaskedSoftmax(a) => {
                    let y = &node.value;
                    let mut ga = Mat::zeros(y.dim());
                    for ((yr, gr), mut out) in y.rows().into_iter().zip(g.rows()).zip(ga.rows_mut()) {
                        let dot: f64 = yr.iter().zip(gr.iter()).map(|(a, b)| a * b).sum();
                        for ((o, &yv), &gv) in out.iter_mut().zip(yr.iter()).zip(gr.iter()) {
                            *o = yv * (gv - dot);
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                    let gamma_v = self.value(*gamma);
                    let ggamma = (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let gbeta = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    let dxhat = &g * gamma_v;
                    let m = xhat.ncols() as f64;
                    let mut gx = Mat::zeros(xhat.dim());
                    for (r, mut out) in gx.rows_mut().into_iter().enumerate() {
                        let dh = dxhat.row(r);
                        let h = xhat.row(r);
                        let sum_dh = dh.sum();
                        let sum_dh_h: f64 = dh.iter().zip(h.iter()).map(|(a, b)| a * b).sum();
                        for (c, o) in out.iter_mut().enumerate() {
                            *o = inv_std[r] / m * (m * dh[c] - sum_dh - h[c] * sum_dh_h);
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *gamma, ggamma);
                    accumulate(&mut grads, *beta, gbeta);
                }
                Op::GatherRows(table, rows) => {
                    let mut gt = Mat::zeros(self.shape(*table));
                    for (i, &r) in rows.iter().enumerate() {
                        gt.row_mut(r).scaled_add(1.0, &g.row(i));
                    }
                    accumulate(&mut grads, *table, gt);
                }
                Op::SliceRows(a, start) => {
                    let mut ga = Mat::zeros(self.shape(*a));
                    ga.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    accumulate(&mut grads, *a, ga);
                }
                Op::SliceCols(a, start) => {
                    let mut ga = Mat::zeros(self.shape(*a));
                    ga.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    accumulate(&mut grads, *a, ga);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.shape(p).0;
                        accumulate(&mut grads, p, g.slice(s![offset..offset + n, ..]).to_owned());
                        offset += n;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.shape(p).1;
                        accumulate(&mut grads, p, g.slice(s![.., offset..offset + n]).to_owned());
                        offset += n;
                    }
                }
                Op::MaxRows(a, arg) => {
                    let mut ga = Mat::zeros(self.shape(*a));
                    for (c, &r) in arg.iter().enumerate() {
                        ga[[r, c]] = g[[0, c]];
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::MeanRows(a, mask, count) => {
                    let mut ga = Mat::zeros(self.shape(*a));
                    for (r, mut row) in ga.rows_mut().into_iter().enumerate() {
                        if mask[r] {
                            row.scaled_add(1.0 / count, &g.row(0));
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::WeightedLogSumExp(x, w) => {
                    let xv = self.value(*x);
                    let out = node.value[[0, 0]];
                    let scale = g[[0, 0]];
                    let mut gx = Mat::zeros(xv.dim());
                    for ((o, &v), &wk) in gx.iter_mut().zip(xv.iter()).zip(w.iter()) {
                        if wk > 0.0 {
                            *o = scale * wk * (v - out).exp();
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Nll { logits, targets, probs, mask, count } => {
                    let mut gl = Mat::zeros(probs.dim());
                    if *count > 0.0 {
                        let scale = g[[0, 0]] / count;
                        for (r, mut row) in gl.rows_mut().into_iter().enumerate() {
                            if mask[r] {
                                row.assign(&probs.row(r));
                                row[targets[r]] -= 1.0;
                                row *= scale;
                            }
                        }
                    }
                    accumulate(&mut grads, *logits, gl);
                }
            }
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }
}
