//! From per-timestep biLSTM outputs to fixed-size representations.
//!
//! Three families are supported: plain pooling (head/tail, average, max),
//! a width-`m` convolution followed by k-max pooling, and word-level
//! attention over the answer conditioned on a pooled question vector.
//! Every forward function returns a cache consumed by its `*_backward`
//! counterpart.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::encoder::EncodedSequence;
use crate::error::{Error, Result};
use crate::params::{join, Params, Shape};
use crate::tensor::{dot, masked_softmax, Matrix, Vector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelVariant {
    LstmHeadTail,
    LstmAvg,
    LstmMax,
    LstmCnn,
    AttAvg,
    AttMax,
    AttCnn,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 7] = [
        ModelVariant::LstmHeadTail,
        ModelVariant::LstmAvg,
        ModelVariant::LstmMax,
        ModelVariant::LstmCnn,
        ModelVariant::AttAvg,
        ModelVariant::AttMax,
        ModelVariant::AttCnn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelVariant::LstmHeadTail => "lstm_head_tail",
            ModelVariant::LstmAvg => "lstm_avg",
            ModelVariant::LstmMax => "lstm_max",
            ModelVariant::LstmCnn => "lstm_cnn",
            ModelVariant::AttAvg => "att_avg",
            ModelVariant::AttMax => "att_max",
            ModelVariant::AttCnn => "att_cnn",
        }
    }

    pub fn uses_cnn(self) -> bool {
        matches!(self, ModelVariant::LstmCnn | ModelVariant::AttCnn)
    }

    pub fn uses_attention(self) -> bool {
        matches!(
            self,
            ModelVariant::AttAvg | ModelVariant::AttMax | ModelVariant::AttCnn
        )
    }

    /// Pooling that produces the final representation, `None` for CNN variants.
    pub fn pooling(self) -> Option<PoolStrategy> {
        match self {
            ModelVariant::LstmHeadTail => Some(PoolStrategy::HeadTail),
            ModelVariant::LstmAvg | ModelVariant::AttAvg => Some(PoolStrategy::Avg),
            ModelVariant::LstmMax | ModelVariant::AttMax => Some(PoolStrategy::Max),
            ModelVariant::LstmCnn | ModelVariant::AttCnn => None,
        }
    }

    /// Pooling used to build the question vector that drives attention.
    pub fn default_query_pooling(self) -> PoolStrategy {
        match self {
            ModelVariant::AttMax => PoolStrategy::Max,
            _ => PoolStrategy::Avg,
        }
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown model variant {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PoolStrategy {
    HeadTail,
    Avg,
    Max,
}

impl PoolStrategy {
    pub fn name(self) -> &'static str {
        match self {
            PoolStrategy::HeadTail => "head_tail",
            PoolStrategy::Avg => "avg",
            PoolStrategy::Max => "max",
        }
    }
}

impl FromStr for PoolStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "head_tail" => Ok(PoolStrategy::HeadTail),
            "avg" => Ok(PoolStrategy::Avg),
            "max" => Ok(PoolStrategy::Max),
            _ => Err(Error::Invalid(format!("unknown pooling {s:?}"))),
        }
    }
}

/// `N` filters of width `m` over `2H`-wide rows, with k-max pooling on top.
///
/// Row `n` of `filters` holds `F_n(0) ∥ … ∥ F_n(m-1)`, which lines up with
/// `m` consecutive rows of a row-major sequence matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CnnParams {
    pub width: usize,
    pub k: usize,
    pub filters: Matrix,
    pub bias: Vector,
}

impl CnnParams {
    pub fn zeros(input_dim: usize, width: usize, count: usize, k: usize) -> Self {
        CnnParams {
            width,
            k,
            filters: Matrix::zeros(count, width * input_dim),
            bias: Vector::zeros(count),
        }
    }

    pub fn uniform<R: Rng + ?Sized>(
        input_dim: usize,
        width: usize,
        count: usize,
        k: usize,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        let filters = Matrix::uniform(count, width * input_dim, scale, rng);
        let bias = Vector::uniform(count, scale, rng);
        CnnParams {
            width,
            k,
            filters,
            bias,
        }
    }

    pub fn count(&self) -> usize {
        self.filters.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.k * self.count()
    }

    pub fn input_dim(&self) -> usize {
        self.filters.cols() / self.width.max(1)
    }
}

impl Params for CnnParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, Shape, &'a [f64])) {
        f(&join(prefix, "filters"), self.filters.shape(), self.filters.as_slice());
        f(&join(prefix, "bias"), (self.bias.len(), 1), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Shape, &mut [f64])) {
        let shape = self.filters.shape();
        f(&join(prefix, "filters"), shape, self.filters.as_mut_slice());
        let shape = (self.bias.len(), 1);
        f(&join(prefix, "bias"), shape, &mut self.bias);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    /// `D × 2H`, applied to each answer output.
    pub w_am: Matrix,
    /// `D × 2H`, applied to the question vector.
    pub w_qm: Matrix,
    pub w_ms: Vector,
}

impl AttentionParams {
    pub fn zeros(input_dim: usize, dim: usize) -> Self {
        AttentionParams {
            w_am: Matrix::zeros(dim, input_dim),
            w_qm: Matrix::zeros(dim, input_dim),
            w_ms: Vector::zeros(dim),
        }
    }

    pub fn uniform<R: Rng + ?Sized>(input_dim: usize, dim: usize, scale: f64, rng: &mut R) -> Self {
        let w_am = Matrix::uniform(dim, input_dim, scale, rng);
        let w_qm = Matrix::uniform(dim, input_dim, scale, rng);
        let w_ms = Vector::uniform(dim, scale, rng);
        AttentionParams { w_am, w_qm, w_ms }
    }

    pub fn dim(&self) -> usize {
        self.w_ms.len()
    }
}

impl Params for AttentionParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, Shape, &'a [f64])) {
        f(&join(prefix, "w_am"), self.w_am.shape(), self.w_am.as_slice());
        f(&join(prefix, "w_qm"), self.w_qm.shape(), self.w_qm.as_slice());
        f(&join(prefix, "w_ms"), (self.w_ms.len(), 1), &self.w_ms);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Shape, &mut [f64])) {
        let shape = self.w_am.shape();
        f(&join(prefix, "w_am"), shape, self.w_am.as_mut_slice());
        let shape = self.w_qm.shape();
        f(&join(prefix, "w_qm"), shape, self.w_qm.as_mut_slice());
        let shape = (self.w_ms.len(), 1);
        f(&join(prefix, "w_ms"), shape, &mut self.w_ms);
    }
}

/// The parameters that sit on top of the encoder.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct HeadParams {
    pub cnn: Option<CnnParams>,
    pub attention: Option<AttentionParams>,
}

impl Params for HeadParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, Shape, &'a [f64])) {
        if let Some(cnn) = &self.cnn {
            cnn.visit(&join(prefix, "cnn"), f);
        }
        if let Some(att) = &self.attention {
            att.visit(&join(prefix, "attention"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Shape, &mut [f64])) {
        if let Some(cnn) = &mut self.cnn {
            cnn.visit_mut(&join(prefix, "cnn"), f);
        }
        if let Some(att) = &mut self.attention {
            att.visit_mut(&join(prefix, "attention"), f);
        }
    }
}

impl HeadParams {
    pub fn zeros_like(&self) -> Self {
        HeadParams {
            cnn: self
                .cnn
                .as_ref()
                .map(|c| CnnParams::zeros(c.input_dim(), c.width, c.count(), c.k)),
            attention: self
                .attention
                .as_ref()
                .map(|a| AttentionParams::zeros(a.w_am.cols(), a.dim())),
        }
    }
}

// ---------------------------------------------------------------------------
// pooling

#[derive(Clone, Debug)]
pub enum PoolCache {
    Avg { positions: Vec<usize> },
    Max { argmax: Vec<usize>, gap: f64 },
    HeadTail { last: usize, first: usize },
}

impl PoolCache {
    /// Smallest distance between a selected maximum and its runner-up.
    pub fn min_gap(&self) -> f64 {
        match self {
            PoolCache::Max { gap, .. } => *gap,
            _ => f64::INFINITY,
        }
    }
}

pub fn pool(seq: &EncodedSequence, strategy: PoolStrategy) -> Result<Vector> {
    pool_forward(seq, strategy).map(|(v, _)| v)
}

pub fn pool_forward(seq: &EncodedSequence, strategy: PoolStrategy) -> Result<(Vector, PoolCache)> {
    let positions: Vec<usize> = seq.valid_positions().collect();
    if positions.is_empty() {
        return Err(Error::EmptyMask { op: "pool" });
    }
    let width = seq.width();
    let rows = &seq.outputs;
    match strategy {
        PoolStrategy::Avg => {
            let mut out = vec![0.0; width];
            for &t in &positions {
                crate::tensor::axpy(1.0, rows.row(t), &mut out);
            }
            let n = positions.len() as f64;
            out.iter_mut().for_each(|v| *v /= n);
            Ok((Vector::from(out), PoolCache::Avg { positions }))
        }
        PoolStrategy::Max => {
            let mut best = rows.row(positions[0]).to_vec();
            let mut second = vec![f64::NEG_INFINITY; width];
            let mut argmax = vec![positions[0]; width];
            for &t in &positions[1..] {
                for (j, &v) in rows.row(t).iter().enumerate() {
                    if v > best[j] {
                        second[j] = best[j];
                        best[j] = v;
                        argmax[j] = t;
                    } else if v > second[j] {
                        second[j] = v;
                    }
                }
            }
            let gap = best
                .iter()
                .zip(&second)
                .map(|(b, s)| b - s)
                .fold(f64::INFINITY, f64::min);
            Ok((Vector::from(best), PoolCache::Max { argmax, gap }))
        }
        PoolStrategy::HeadTail => {
            let half = width / 2;
            let first = positions[0];
            let last = *positions.last().unwrap();
            let mut out = Vec::with_capacity(width);
            out.extend_from_slice(&rows.row(last)[..half]);
            out.extend_from_slice(&rows.row(first)[half..]);
            Ok((Vector::from(out), PoolCache::HeadTail { last, first }))
        }
    }
}

/// Adds the gradient of a pooled vector back onto the sequence rows.
pub fn pool_backward(cache: &PoolCache, d: &[f64], d_seq: &mut Matrix) {
    match cache {
        PoolCache::Avg { positions } => {
            let share = 1.0 / positions.len() as f64;
            for &t in positions {
                crate::tensor::axpy(share, d, d_seq.row_mut(t));
            }
        }
        PoolCache::Max { argmax, .. } => {
            for (j, &t) in argmax.iter().enumerate() {
                let cur = d_seq.get(t, j);
                d_seq.set(t, j, cur + d[j]);
            }
        }
        PoolCache::HeadTail { last, first } => {
            let half = d.len() / 2;
            crate::tensor::axpy(1.0, &d[..half], &mut d_seq.row_mut(*last)[..half]);
            crate::tensor::axpy(1.0, &d[half..], &mut d_seq.row_mut(*first)[half..]);
        }
    }
}

// ---------------------------------------------------------------------------
// convolution and k-max pooling

/// Filter responses, one row per window that lies entirely on real tokens.
#[derive(Clone, Debug)]
pub struct ConvOutput {
    /// `windows × N`.
    pub values: Matrix,
    /// Start position of each window.
    pub starts: Vec<usize>,
}

/// `o_F(t) = tanh(Σ_i h(t+i)ᵀ F(i) + b)` for every filter and every window.
pub fn convolve(seq: &EncodedSequence, p: &CnnParams) -> Result<ConvOutput> {
    let m = p.width;
    if seq.width() * m != p.filters.cols() {
        return Err(Error::Shape {
            op: "convolve",
            left: seq.outputs.shape(),
            right: p.filters.shape(),
        });
    }
    let valid = seq.valid_len();
    let starts: Vec<usize> = (0..(seq.len() + 1).saturating_sub(m))
        .filter(|&t| seq.mask[t..t + m].iter().all(|&b| b))
        .collect();
    if valid < m || starts.is_empty() {
        return Err(Error::SequenceTooShort { len: valid, width: m });
    }
    let w = seq.width();
    let data = seq.outputs.as_slice();
    let mut values = Matrix::zeros(starts.len(), p.count());
    for (row, &t) in starts.iter().enumerate() {
        let window = &data[t * w..(t + m) * w];
        let out = values.row_mut(row);
        out.copy_from_slice(&p.bias);
        p.filters.matvec_acc(window, out);
        out.iter_mut().for_each(|v| *v = v.tanh());
    }
    Ok(ConvOutput { values, starts })
}

pub fn convolve_backward(conv: &ConvOutput, seq: &EncodedSequence, d_values: &Matrix, p: &CnnParams, grads: &mut CnnParams, d_seq: &mut Matrix) {
    let m = p.width;
    let w = seq.width();
    let data = seq.outputs.as_slice();
    let mut dz = vec![0.0; p.count()];
    for (row, &t) in conv.starts.iter().enumerate() {
        let o = conv.values.row(row);
        let d = d_values.row(row);
        let mut any = false;
        for n in 0..dz.len() {
            dz[n] = d[n] * (1.0 - o[n] * o[n]);
            any |= dz[n] != 0.0;
        }
        if !any {
            continue;
        }
        let window = &data[t * w..(t + m) * w];
        grads.filters.add_outer(&dz, window);
        crate::tensor::axpy(1.0, &dz, &mut grads.bias);
        let d_window = &mut d_seq.as_mut_slice()[t * w..(t + m) * w];
        p.filters.matvec_t_acc(&dz, d_window);
    }
}

#[derive(Clone, Debug)]
pub struct KmaxCache {
    /// For each filter, the selected rows in ascending order.
    pub selected: Vec<Vec<usize>>,
    pub gap: f64,
}

/// Keeps the `k` largest values of each column, in their original row
/// order. The output is filter-major: `[f₀ top-k…, f₁ top-k…, …]`.
pub fn kmax_pool(conv: &Matrix, k: usize) -> Result<(Vector, KmaxCache)> {
    if k == 0 || conv.rows() < k {
        return Err(Error::TooFewRows {
            k,
            rows: conv.rows(),
        });
    }
    let mut out = Vec::with_capacity(k * conv.cols());
    let mut selected = Vec::with_capacity(conv.cols());
    let mut gap = f64::INFINITY;
    let mut order: Vec<usize> = Vec::with_capacity(conv.rows());
    for j in 0..conv.cols() {
        order.clear();
        order.extend(0..conv.rows());
        // Descending by value, lower row first on ties.
        order.sort_by(|&a, &b| conv.get(b, j).total_cmp(&conv.get(a, j)).then(a.cmp(&b)));
        if order.len() > k {
            gap = gap.min(conv.get(order[k - 1], j) - conv.get(order[k], j));
        }
        let mut keep = order[..k].to_vec();
        keep.sort_unstable();
        out.extend(keep.iter().map(|&r| conv.get(r, j)));
        selected.push(keep);
    }
    Ok((Vector::from(out), KmaxCache { selected, gap }))
}

pub fn kmax_backward(cache: &KmaxCache, d: &[f64], rows: usize) -> Matrix {
    let cols = cache.selected.len();
    let mut d_conv = Matrix::zeros(rows, cols);
    let k = cache.selected.first().map_or(0, Vec::len);
    for (j, keep) in cache.selected.iter().enumerate() {
        for (r, &row) in keep.iter().enumerate() {
            let cur = d_conv.get(row, j);
            d_conv.set(row, j, cur + d[j * k + r]);
        }
    }
    d_conv
}

// ---------------------------------------------------------------------------
// attention

#[derive(Clone, Debug)]
pub struct AttendCache {
    /// `m_{a,q}(t)` per position, `len × D`; zero rows where masked.
    pub hidden: Matrix,
    /// Softmax weights `s_{a,q}(t)`, exactly zero where masked.
    pub weights: Vector,
}

/// Reweights each answer output by a softmax over
/// `w_msᵀ tanh(W_am h_a(t) + W_qm o_q)`.
pub fn attend(answer: &EncodedSequence, o_q: &[f64], p: &AttentionParams) -> Result<(EncodedSequence, AttendCache)> {
    if answer.width() != p.w_am.cols() || o_q.len() != p.w_qm.cols() {
        return Err(Error::Shape {
            op: "attend",
            left: answer.outputs.shape(),
            right: p.w_am.shape(),
        });
    }
    if answer.valid_len() == 0 {
        return Err(Error::EmptyMask { op: "attend" });
    }
    let len = answer.len();
    let mut q_proj = vec![0.0; p.dim()];
    p.w_qm.matvec_acc(o_q, &mut q_proj);
    let mut hidden = Matrix::zeros(len, p.dim());
    let mut logits = vec![0.0; len];
    for t in answer.valid_positions() {
        let m = hidden.row_mut(t);
        m.copy_from_slice(&q_proj);
        p.w_am.matvec_acc(answer.outputs.row(t), m);
        m.iter_mut().for_each(|v| *v = v.tanh());
        logits[t] = dot(&p.w_ms, m);
    }
    let weights = masked_softmax(&logits, &answer.mask)?;
    let mut out = Matrix::zeros(len, answer.width());
    for t in answer.valid_positions() {
        let s = weights[t];
        for (o, &h) in out.row_mut(t).iter_mut().zip(answer.outputs.row(t)) {
            *o = h * s;
        }
    }
    Ok((
        EncodedSequence {
            outputs: out,
            mask: answer.mask.clone(),
        },
        AttendCache { hidden, weights },
    ))
}

/// Returns `(d answer outputs, d o_q)` for an upstream gradient on the
/// reweighted sequence.
pub fn attend_backward(
    cache: &AttendCache,
    answer: &EncodedSequence,
    o_q: &[f64],
    d_tilde: &Matrix,
    p: &AttentionParams,
    grads: &mut AttentionParams,
) -> (Matrix, Vec<f64>) {
    let len = answer.len();
    let s = &cache.weights;
    let mut d_seq = Matrix::zeros(len, answer.width());
    let mut ds = vec![0.0; len];
    for t in answer.valid_positions() {
        ds[t] = dot(answer.outputs.row(t), d_tilde.row(t));
        crate::tensor::axpy(s[t], d_tilde.row(t), d_seq.row_mut(t));
    }
    let mean: f64 = answer.valid_positions().map(|t| s[t] * ds[t]).sum();
    let mut dz_total = vec![0.0; p.dim()];
    let mut dz = vec![0.0; p.dim()];
    for t in answer.valid_positions() {
        let dlogit = s[t] * (ds[t] - mean);
        if dlogit == 0.0 {
            continue;
        }
        let m = cache.hidden.row(t);
        crate::tensor::axpy(dlogit, m, &mut grads.w_ms);
        for k in 0..dz.len() {
            dz[k] = dlogit * p.w_ms[k] * (1.0 - m[k] * m[k]);
        }
        grads.w_am.add_outer(&dz, answer.outputs.row(t));
        p.w_am.matvec_t_acc(&dz, d_seq.row_mut(t));
        crate::tensor::axpy(1.0, &dz, &mut dz_total);
    }
    grads.w_qm.add_outer(&dz_total, o_q);
    let mut d_oq = vec![0.0; o_q.len()];
    p.w_qm.matvec_t_acc(&dz_total, &mut d_oq);
    (d_seq, d_oq)
}

// ---------------------------------------------------------------------------
// variant dispatch

/// Which composition to run, resolved from a [`ModelVariant`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Composition {
    pub variant: ModelVariant,
    /// Pooling for the attention query vector `o_q`.
    pub query_pooling: PoolStrategy,
}

impl Composition {
    pub fn new(variant: ModelVariant) -> Self {
        Composition {
            variant,
            query_pooling: variant.default_query_pooling(),
        }
    }
}

#[derive(Clone, Debug)]
enum ReprCache {
    Pool(PoolCache),
    Cnn { conv: ConvOutput, kmax: KmaxCache },
}

impl ReprCache {
    fn min_gap(&self) -> f64 {
        match self {
            ReprCache::Pool(p) => p.min_gap(),
            ReprCache::Cnn { kmax, .. } => kmax.gap,
        }
    }
}

fn represent(seq: &EncodedSequence, comp: &Composition, head: &HeadParams) -> Result<(Vector, ReprCache)> {
    match comp.variant.pooling() {
        Some(strategy) => {
            let (v, c) = pool_forward(seq, strategy)?;
            Ok((v, ReprCache::Pool(c)))
        }
        None => {
            let cnn = head.cnn.as_ref().ok_or_else(|| missing("cnn", comp.variant))?;
            let conv = convolve(seq, cnn)?;
            let (v, kmax) = kmax_pool(&conv.values, cnn.k)?;
            Ok((v, ReprCache::Cnn { conv, kmax }))
        }
    }
}

fn represent_backward(cache: &ReprCache, seq: &EncodedSequence, d: &[f64], head: &HeadParams, grads: &mut HeadParams, d_seq: &mut Matrix) {
    match cache {
        ReprCache::Pool(p) => pool_backward(p, d, d_seq),
        ReprCache::Cnn { conv, kmax } => {
            let cnn = head.cnn.as_ref().expect("cnn cache without cnn params");
            let g = grads.cnn.as_mut().expect("cnn gradient buffer");
            let d_values = kmax_backward(kmax, d, conv.values.rows());
            convolve_backward(conv, seq, &d_values, cnn, g, d_seq);
        }
    }
}

fn missing(what: &str, variant: ModelVariant) -> Error {
    Error::Invalid(format!("variant {variant} requires {what} parameters"))
}

#[derive(Clone, Debug)]
pub struct QuestionRepr {
    pub repr: Vector,
    /// `o_q`, present for attention variants.
    pub query: Option<Vector>,
    cache: ReprCache,
    query_cache: Option<PoolCache>,
}

impl QuestionRepr {
    pub fn min_gap(&self) -> f64 {
        let q = self.query_cache.as_ref().map_or(f64::INFINITY, PoolCache::min_gap);
        self.cache.min_gap().min(q)
    }
}

#[derive(Clone, Debug)]
pub struct AnswerRepr {
    pub repr: Vector,
    attended: Option<(EncodedSequence, AttendCache)>,
    cache: ReprCache,
}

impl AnswerRepr {
    pub fn attention_weights(&self) -> Option<&Vector> {
        self.attended.as_ref().map(|(_, c)| &c.weights)
    }

    pub fn min_gap(&self) -> f64 {
        self.cache.min_gap()
    }
}

pub fn compose_question(seq: &EncodedSequence, comp: &Composition, head: &HeadParams) -> Result<QuestionRepr> {
    let (repr, cache) = represent(seq, comp, head)?;
    let (query, query_cache) = if comp.variant.uses_attention() {
        let (q, c) = pool_forward(seq, comp.query_pooling)?;
        (Some(q), Some(c))
    } else {
        (None, None)
    };
    Ok(QuestionRepr {
        repr,
        query,
        cache,
        query_cache,
    })
}

pub fn compose_answer(seq: &EncodedSequence, question: &QuestionRepr, comp: &Composition, head: &HeadParams) -> Result<AnswerRepr> {
    if comp.variant.uses_attention() {
        let att = head
            .attention
            .as_ref()
            .ok_or_else(|| missing("attention", comp.variant))?;
        let query = question
            .query
            .as_ref()
            .ok_or_else(|| Error::Invalid("question was composed without a query vector".into()))?;
        let (tilde, att_cache) = attend(seq, query, att)?;
        let (repr, cache) = represent(&tilde, comp, head)?;
        Ok(AnswerRepr {
            repr,
            attended: Some((tilde, att_cache)),
            cache,
        })
    } else {
        let (repr, cache) = represent(seq, comp, head)?;
        Ok(AnswerRepr {
            repr,
            attended: None,
            cache,
        })
    }
}

/// Answer representation for variants without attention, where it does not
/// depend on the question.
pub fn compose_answer_unconditioned(seq: &EncodedSequence, comp: &Composition, head: &HeadParams) -> Result<Vector> {
    if comp.variant.uses_attention() {
        return Err(Error::Invalid(format!(
            "variant {} conditions answers on the question",
            comp.variant
        )));
    }
    Ok(represent(seq, comp, head)?.0)
}

/// Representations of a question/answer pair, both encoded by the same biLSTM.
pub fn compose_pair(q_seq: &EncodedSequence, a_seq: &EncodedSequence, comp: &Composition, head: &HeadParams) -> Result<(Vector, Vector)> {
    let q = compose_question(q_seq, comp, head)?;
    let a = compose_answer(a_seq, &q, comp, head)?;
    Ok((q.repr, a.repr))
}

/// Gradient w.r.t. the question's biLSTM outputs. `d_query` is the
/// accumulated gradient on `o_q` coming back from the attended answers.
pub fn question_backward(
    q: &QuestionRepr,
    seq: &EncodedSequence,
    d_repr: &[f64],
    d_query: Option<&[f64]>,
    head: &HeadParams,
    grads: &mut HeadParams,
) -> Matrix {
    let mut d_seq = Matrix::zeros(seq.len(), seq.width());
    represent_backward(&q.cache, seq, d_repr, head, grads, &mut d_seq);
    if let (Some(dq), Some(qc)) = (d_query, &q.query_cache) {
        pool_backward(qc, dq, &mut d_seq);
    }
    d_seq
}

/// Gradient w.r.t. the answer's biLSTM outputs, plus the gradient on `o_q`
/// for attention variants.
pub fn answer_backward(
    a: &AnswerRepr,
    seq: &EncodedSequence,
    query: Option<&[f64]>,
    d_repr: &[f64],
    head: &HeadParams,
    grads: &mut HeadParams,
) -> (Matrix, Option<Vec<f64>>) {
    match &a.attended {
        Some((tilde, att_cache)) => {
            let mut d_tilde = Matrix::zeros(seq.len(), seq.width());
            represent_backward(&a.cache, tilde, d_repr, head, grads, &mut d_tilde);
            let att = head.attention.as_ref().expect("attention params");
            let g = grads.attention.as_mut().expect("attention gradient buffer");
            let o_q = query.expect("attention backward needs o_q");
            let (d_seq, d_oq) = attend_backward(att_cache, seq, o_q, &d_tilde, att, g);
            (d_seq, Some(d_oq))
        }
        None => {
            let mut d_seq = Matrix::zeros(seq.len(), seq.width());
            represent_backward(&a.cache, seq, d_repr, head, grads, &mut d_seq);
            (d_seq, None)
        }
    }
}
