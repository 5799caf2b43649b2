//! The full answer-selection model: embeddings, one shared biLSTM, a
//! variant-specific composition head, and a similarity function.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use rand::Rng;
use rayon::prelude::*;

use crate::composition::{
    answer_backward, compose_answer, compose_answer_unconditioned, compose_question, question_backward, AnswerRepr, AttentionParams,
    CnnParams, Composition, HeadParams, ModelVariant, PoolStrategy, QuestionRepr,
};
use crate::data::{AnswerId, AnswerStore, QAExample, TokenSeq};
use crate::embeddings::{EmbeddingTable, TokenId, PAD};
use crate::encoder::{bilstm_backward, bilstm_encode, BiLstmOutput, BiLstmParams, EncodedSequence};
use crate::error::{Error, Result};
use crate::evaluation::RankedPool;
use crate::params::{join, Params, Shape};
use crate::scoring::{hinge_loss, Similarity};
use crate::tensor::{Matrix, Vector};

/// Half-width of the uniform initialization of encoder and head weights.
pub const INIT_SCALE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub variant: ModelVariant,
    pub similarity: Similarity,
    pub embed_dim: usize,
    /// Hidden size per direction.
    pub hidden: usize,
    /// Attention projection size; `None` means `2 * hidden`.
    pub attention_dim: Option<usize>,
    pub filters: usize,
    pub filter_width: usize,
    pub kmax: usize,
    /// Pooling of the question vector fed to attention; `None` picks the
    /// variant's default.
    pub query_pooling: Option<PoolStrategy>,
    pub trainable_embeddings: bool,
}

impl ModelConfig {
    pub const DEFAULT_HIDDEN: usize = 141;
    pub const DEFAULT_FILTERS: usize = 1000;

    pub fn new(variant: ModelVariant, embed_dim: usize) -> Self {
        ModelConfig {
            variant,
            similarity: Similarity::Cosine,
            embed_dim,
            hidden: Self::DEFAULT_HIDDEN,
            attention_dim: None,
            filters: Self::DEFAULT_FILTERS,
            filter_width: 2,
            kmax: 1,
            query_pooling: None,
            trainable_embeddings: true,
        }
    }

    pub fn attention_dim(&self) -> usize {
        self.attention_dim.unwrap_or(2 * self.hidden)
    }

    pub fn composition(&self) -> Composition {
        let mut c = Composition::new(self.variant);
        if let Some(q) = self.query_pooling {
            c.query_pooling = q;
        }
        c
    }

    /// Length of the final question/answer representations.
    pub fn repr_dim(&self) -> usize {
        if self.variant.uses_cnn() {
            self.filters * self.kmax
        } else {
            2 * self.hidden
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.embed_dim == 0 || self.hidden == 0 {
            return bad("embedding and hidden sizes must be ≥ 1");
        }
        if self.attention_dim == Some(0) {
            return bad("attention_dim must be ≥ 1");
        }
        if self.variant.uses_cnn() && (self.filters == 0 || self.filter_width == 0 || self.kmax == 0) {
            return bad("filters, filter_width and kmax must be ≥ 1");
        }
        Ok(())
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

impl ModelConfig {
    /// Keys understood by [`ModelConfig::apply`], in echo order.
    pub const KEYS: [&'static str; 12] = [
        "variant",
        "similarity",
        "gesd_gamma",
        "gesd_c",
        "embed_dim",
        "hidden",
        "attention_dim",
        "filters",
        "filter_width",
        "kmax",
        "query_pooling",
        "trainable_embeddings",
    ];

    /// `key = value` echo; floats use shortest round-trip formatting.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let (gamma, c) = match self.similarity {
            Similarity::Gesd { gamma, c } => (gamma, c),
            Similarity::Cosine => (1.0, 1.0),
        };
        let auto = |o: Option<String>| o.unwrap_or_else(|| "auto".into());
        vec![
            ("variant", self.variant.to_string()),
            ("similarity", self.similarity.name().to_string()),
            ("gesd_gamma", format!("{gamma:?}")),
            ("gesd_c", format!("{c:?}")),
            ("embed_dim", self.embed_dim.to_string()),
            ("hidden", self.hidden.to_string()),
            ("attention_dim", auto(self.attention_dim.map(|d| d.to_string()))),
            ("filters", self.filters.to_string()),
            ("filter_width", self.filter_width.to_string()),
            ("kmax", self.kmax.to_string()),
            ("query_pooling", auto(self.query_pooling.map(|p| p.name().to_string()))),
            ("trainable_embeddings", self.trainable_embeddings.to_string()),
        ]
    }

    /// Applies and removes every model key found in `kv`.
    pub fn apply(&mut self, kv: &mut BTreeMap<String, String>) -> Result<()> {
        let mut take = |k: &str| kv.remove(k);
        if let Some(v) = take("variant") {
            self.variant = v.parse().map_err(|e: Error| Error::Config(e.to_string()))?;
        }
        let (mut gamma, mut c) = match self.similarity {
            Similarity::Gesd { gamma, c } => (gamma, c),
            Similarity::Cosine => (1.0, 1.0),
        };
        if let Some(v) = take("gesd_gamma") {
            gamma = parse_value("gesd_gamma", &v)?;
        }
        if let Some(v) = take("gesd_c") {
            c = parse_value("gesd_c", &v)?;
        }
        let sim = take("similarity").unwrap_or_else(|| self.similarity.name().to_string());
        self.similarity = match sim.as_str() {
            "cosine" => Similarity::Cosine,
            "gesd" => Similarity::Gesd { gamma, c },
            other => return Err(Error::Config(format!("unknown similarity {other:?}"))),
        };
        if let Some(v) = take("embed_dim") {
            self.embed_dim = parse_value("embed_dim", &v)?;
        }
        if let Some(v) = take("hidden") {
            self.hidden = parse_value("hidden", &v)?;
        }
        if let Some(v) = take("attention_dim") {
            self.attention_dim = match v.as_str() {
                "auto" => None,
                _ => Some(parse_value("attention_dim", &v)?),
            };
        }
        if let Some(v) = take("filters") {
            self.filters = parse_value("filters", &v)?;
        }
        if let Some(v) = take("filter_width") {
            self.filter_width = parse_value("filter_width", &v)?;
        }
        if let Some(v) = take("kmax") {
            self.kmax = parse_value("kmax", &v)?;
        }
        if let Some(v) = take("query_pooling") {
            self.query_pooling = match v.as_str() {
                "auto" => None,
                _ => Some(v.parse().map_err(|e: Error| Error::Config(e.to_string()))?),
            };
        }
        if let Some(v) = take("trainable_embeddings") {
            self.trainable_embeddings = parse_value("trainable_embeddings", &v)?;
        }
        Ok(())
    }
}

/// Which tower an input belongs to. Both resolve to the same encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Question,
    Answer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub embeddings: EmbeddingTable,
    pub encoder: BiLstmParams,
    pub head: HeadParams,
}

impl Params for ModelParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, Shape, &'a [f64])) {
        let e = self.embeddings.vectors();
        f(&join(prefix, "embeddings"), e.shape(), e.as_slice());
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Shape, &mut [f64])) {
        let e = self.embeddings.vectors_mut();
        let shape = e.shape();
        f(&join(prefix, "embeddings"), shape, e.as_mut_slice());
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}

impl ModelParams {
    /// Random encoder and head weights around a given embedding table.
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, mut embeddings: EmbeddingTable, rng: &mut R) -> Result<Self> {
        config.validate()?;
        if embeddings.dim() != config.embed_dim {
            return Err(Error::Config(format!(
                "embedding dim {} does not match configured {}",
                embeddings.dim(),
                config.embed_dim
            )));
        }
        embeddings.trainable = config.trainable_embeddings;
        let (e, h) = (config.embed_dim, config.hidden);
        let encoder = BiLstmParams::uniform(e, h, INIT_SCALE, rng);
        let cnn = config
            .variant
            .uses_cnn()
            .then(|| CnnParams::uniform(2 * h, config.filter_width, config.filters, config.kmax, INIT_SCALE, rng));
        let attention = config
            .variant
            .uses_attention()
            .then(|| AttentionParams::uniform(2 * h, config.attention_dim(), INIT_SCALE, rng));
        Ok(ModelParams {
            config,
            embeddings,
            encoder,
            head: HeadParams { cnn, attention },
        })
    }

    /// All-zero parameters with the shapes implied by `config`.
    pub fn zeros(config: ModelConfig, vocab_size: usize) -> Result<Self> {
        config.validate()?;
        let (e, h) = (config.embed_dim, config.hidden);
        Ok(ModelParams {
            config,
            embeddings: EmbeddingTable::new(Matrix::zeros(vocab_size, e), config.trainable_embeddings),
            encoder: BiLstmParams::zeros(e, h),
            head: HeadParams {
                cnn: config
                    .variant
                    .uses_cnn()
                    .then(|| CnnParams::zeros(2 * h, config.filter_width, config.filters, config.kmax)),
                attention: config
                    .variant
                    .uses_attention()
                    .then(|| AttentionParams::zeros(2 * h, config.attention_dim())),
            },
        })
    }

    pub fn tower(&self, _side: Side) -> &BiLstmParams {
        &self.encoder
    }

    pub fn repr_dim(&self) -> usize {
        self.config.repr_dim()
    }

    fn encode_side(&self, side: Side, seq: &TokenSeq) -> Result<SideForward> {
        if seq.valid_len() == 0 {
            return Err(Error::EmptyMask { op: "encode" });
        }
        let xs = self.embeddings.lookup_sequence(&seq.ids)?;
        let enc = bilstm_encode(&xs, &seq.mask, self.tower(side))?;
        Ok(SideForward {
            ids: seq.ids.clone(),
            mask: seq.mask.clone(),
            xs,
            enc,
        })
    }

    /// Per-timestep biLSTM outputs for one side.
    pub fn encode(&self, side: Side, seq: &TokenSeq) -> Result<EncodedSequence> {
        Ok(self.encode_side(side, seq)?.enc.seq)
    }

    pub fn forward_question(&self, seq: &TokenSeq) -> Result<QuestionForward> {
        let side = self.encode_side(Side::Question, seq)?;
        let comp = compose_question(&side.enc.seq, &self.config.composition(), &self.head)?;
        Ok(QuestionForward { side, comp })
    }

    pub fn forward_answer(&self, question: &QuestionForward, seq: &TokenSeq) -> Result<AnswerForward> {
        let side = self.encode_side(Side::Answer, seq)?;
        let comp = compose_answer(&side.enc.seq, &question.comp, &self.config.composition(), &self.head)?;
        Ok(AnswerForward { side, comp })
    }

    /// Evaluation-mode similarity (no dropout).
    pub fn score(&self, question: &QuestionForward, answer: &AnswerForward) -> Result<f64> {
        self.config.similarity.score(&question.comp.repr, &answer.comp.repr)
    }

    /// Hinge loss for a triplet under the given dropout masks.
    pub fn loss_value(
        &self,
        q: &QuestionForward,
        pos: &AnswerForward,
        neg: &AnswerForward,
        masks: &DropoutMasks,
        margin: f64,
    ) -> Result<f64> {
        let dq = apply_mask(&q.comp.repr, &masks.question);
        let sim = self.config.similarity;
        let sp = sim.score(&dq, &apply_mask(&pos.comp.repr, &masks.positive))?;
        let sn = sim.score(&dq, &apply_mask(&neg.comp.repr, &masks.negative))?;
        Ok(hinge_loss(sp, sn, margin))
    }

    /// Scores each candidate against the question, in candidate order.
    pub fn score_candidates(&self, question: &[TokenId], candidates: &[&[TokenId]], max_len: usize) -> Result<Vec<f64>> {
        let q = self.forward_question(&TokenSeq::truncated(question, max_len))?;
        candidates
            .par_iter()
            .map(|a| {
                let a = self.forward_answer(&q, &TokenSeq::truncated(a, max_len))?;
                self.score(&q, &a)
            })
            .collect()
    }

    /// Scores and ranks the pool of every example. Questions are processed
    /// in parallel; for variants without attention each distinct answer is
    /// encoded once.
    pub fn rank_examples(&self, examples: &[QAExample], answers: &AnswerStore, max_len: usize) -> Result<Vec<RankedPool>> {
        let pools = examples
            .iter()
            .map(|e| {
                e.pool
                    .as_deref()
                    .ok_or_else(|| Error::Invalid(format!("question {} has no candidate pool", e.id)))
            })
            .collect::<Result<Vec<_>>>()?;
        let lookup = |id: &AnswerId| {
            answers
                .get(id)
                .ok_or_else(|| Error::Invalid(format!("unknown answer id {id}")))
        };

        if self.config.variant.uses_attention() {
            return examples
                .par_iter()
                .zip(pools)
                .map(|(e, pool)| {
                    let tokens = pool.iter().map(lookup).collect::<Result<Vec<_>>>()?;
                    let scores = self.score_candidates(&e.question, &tokens, max_len)?;
                    RankedPool::new(e.id.clone(), pool.iter().cloned().zip(scores).collect(), e.ground_truth.clone())
                })
                .collect();
        }

        // Without attention an answer's representation does not depend on
        // the question, so it can be shared across pools.
        let mut unique: Vec<&AnswerId> = pools.iter().flat_map(|p| p.iter()).collect();
        unique.sort();
        unique.dedup();
        let reprs: HashMap<&AnswerId, Vector> = unique
            .par_iter()
            .map(|&id| {
                let seq = TokenSeq::truncated(lookup(id)?, max_len);
                Ok((id, self.represent_answer(&seq)?))
            })
            .collect::<Result<_>>()?;
        let sim = self.config.similarity;
        examples
            .par_iter()
            .zip(pools)
            .map(|(e, pool)| {
                let q = self.forward_question(&TokenSeq::truncated(&e.question, max_len))?;
                let scores = pool
                    .iter()
                    .map(|id| Ok((id.clone(), sim.score(&q.comp.repr, &reprs[id])?)))
                    .collect::<Result<Vec<_>>>()?;
                RankedPool::new(e.id.clone(), scores, e.ground_truth.clone())
            })
            .collect()
    }

    /// Question-independent answer representation; only for variants
    /// without attention.
    fn represent_answer(&self, seq: &TokenSeq) -> Result<Vector> {
        let side = self.encode_side(Side::Answer, seq)?;
        compose_answer_unconditioned(&side.enc.seq, &self.config.composition(), &self.head)
    }
}

struct SideForward {
    ids: Vec<TokenId>,
    mask: Vec<bool>,
    xs: Matrix,
    enc: BiLstmOutput,
}

pub struct QuestionForward {
    side: SideForward,
    pub comp: QuestionRepr,
}

pub struct AnswerForward {
    side: SideForward,
    pub comp: AnswerRepr,
}

impl QuestionForward {
    pub fn encoded(&self) -> &EncodedSequence {
        &self.side.enc.seq
    }
}

impl AnswerForward {
    pub fn encoded(&self) -> &EncodedSequence {
        &self.side.enc.seq
    }
}

/// Inverted-dropout masks on the three final representations.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMasks {
    pub question: Vector,
    pub positive: Vector,
    pub negative: Vector,
}

impl DropoutMasks {
    pub fn ones(dim: usize) -> Self {
        let one = Vector::from(vec![1.0; dim]);
        DropoutMasks {
            question: one.clone(),
            positive: one.clone(),
            negative: one,
        }
    }
}

fn apply_mask(v: &[f64], mask: &[f64]) -> Vec<f64> {
    v.iter().zip(mask).map(|(a, m)| a * m).collect()
}

/// Everything [`backward`] needs for one triplet.
pub struct LossCache {
    pub loss: f64,
    pub sim_pos: f64,
    pub sim_neg: f64,
    q: QuestionForward,
    pos: AnswerForward,
    neg: AnswerForward,
    masks: DropoutMasks,
}

impl LossCache {
    pub fn new(
        params: &ModelParams,
        q: QuestionForward,
        pos: AnswerForward,
        neg: AnswerForward,
        masks: DropoutMasks,
        margin: f64,
    ) -> Result<Self> {
        let dim = params.repr_dim();
        for m in [&masks.question, &masks.positive, &masks.negative] {
            if m.len() != dim {
                return Err(Error::Shape {
                    op: "dropout mask",
                    left: (m.len(), 1),
                    right: (dim, 1),
                });
            }
        }
        let sim = params.config.similarity;
        let dq = apply_mask(&q.comp.repr, &masks.question);
        let sim_pos = sim.score(&dq, &apply_mask(&pos.comp.repr, &masks.positive))?;
        let sim_neg = sim.score(&dq, &apply_mask(&neg.comp.repr, &masks.negative))?;
        Ok(LossCache {
            loss: hinge_loss(sim_pos, sim_neg, margin),
            sim_pos,
            sim_neg,
            q,
            pos,
            neg,
            masks,
        })
    }

    /// Smallest distance of any pooling/selection decision from a tie;
    /// finite differences are only trustworthy when this is not tiny.
    pub fn min_kink_gap(&self) -> f64 {
        self.q
            .comp
            .min_gap()
            .min(self.pos.comp.min_gap())
            .min(self.neg.comp.min_gap())
    }
}

pub fn forward_loss(
    params: &ModelParams,
    q: &TokenSeq,
    pos: &TokenSeq,
    neg: &TokenSeq,
    masks: DropoutMasks,
    margin: f64,
) -> Result<(f64, LossCache)> {
    let qf = params.forward_question(q)?;
    let pf = params.forward_answer(&qf, pos)?;
    let nf = params.forward_answer(&qf, neg)?;
    let cache = LossCache::new(params, qf, pf, nf, masks, margin)?;
    Ok((cache.loss, cache))
}

/// Gradients congruent with [`ModelParams`]. Embedding gradients are kept
/// sparse, one row per touched token.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    pub embeddings: BTreeMap<TokenId, Vec<f64>>,
    pub encoder: BiLstmParams,
    pub head: HeadParams,
}

impl GradientSet {
    pub fn zeros(params: &ModelParams) -> Self {
        GradientSet {
            embeddings: BTreeMap::new(),
            encoder: BiLstmParams::zeros(params.encoder.input_dim(), params.encoder.hidden()),
            head: params.head.zeros_like(),
        }
    }

    /// `self += alpha · other`.
    pub fn add_scaled(&mut self, other: &GradientSet, alpha: f64) {
        self.encoder.add_scaled(&other.encoder, alpha);
        self.head.add_scaled(&other.head, alpha);
        for (&id, row) in &other.embeddings {
            let dst = self
                .embeddings
                .entry(id)
                .or_insert_with(|| vec![0.0; row.len()]);
            crate::tensor::axpy(alpha, row, dst);
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.encoder.scale(alpha);
        self.head.scale(alpha);
        for row in self.embeddings.values_mut() {
            row.iter_mut().for_each(|v| *v *= alpha);
        }
    }

    /// Dense gradient of the full embedding table.
    pub fn dense_embeddings(&self, vocab_size: usize, dim: usize) -> Matrix {
        let mut m = Matrix::zeros(vocab_size, dim);
        for (&id, row) in &self.embeddings {
            m.row_mut(id as usize).copy_from_slice(row);
        }
        m
    }

    pub fn is_zero(&self) -> bool {
        let mut zero = self
            .embeddings
            .values()
            .all(|r| r.iter().all(|&v| v == 0.0));
        let mut check = |_: &str, _: Shape, d: &[f64]| zero &= d.iter().all(|&v| v == 0.0);
        self.encoder.visit("", &mut check);
        self.head.visit("", &mut check);
        zero
    }
}

fn scatter_embeddings(side: &SideForward, d_xs: &Matrix, out: &mut BTreeMap<TokenId, Vec<f64>>) {
    for (t, (&id, &m)) in side.ids.iter().zip(&side.mask).enumerate() {
        if !m || id == PAD {
            continue;
        }
        let row = out.entry(id).or_insert_with(|| vec![0.0; d_xs.cols()]);
        for (r, g) in row.iter_mut().zip(d_xs.row(t)) {
            *r += g;
        }
    }
}

/// Reverse-mode gradient of the cached triplet loss.
pub fn backward(params: &ModelParams, cache: &LossCache) -> Result<GradientSet> {
    let mut g = GradientSet::zeros(params);
    if cache.loss == 0.0 {
        return Ok(g);
    }
    let sim = params.config.similarity;
    let masks = &cache.masks;
    let dq = apply_mask(&cache.q.comp.repr, &masks.question);
    let dp = apply_mask(&cache.pos.comp.repr, &masks.positive);
    let dn = apply_mask(&cache.neg.comp.repr, &masks.negative);
    // loss = M − s(q, a⁺) + s(q, a⁻) in the active region
    let (_, gq_p, ga_p) = sim.score_with_grad(&dq, &dp)?;
    let (_, gq_n, ga_n) = sim.score_with_grad(&dq, &dn)?;
    let d_q: Vec<f64> = (0..dq.len())
        .map(|i| (gq_n[i] - gq_p[i]) * masks.question[i])
        .collect();
    let d_pos: Vec<f64> = (0..dp.len()).map(|i| -ga_p[i] * masks.positive[i]).collect();
    let d_neg: Vec<f64> = (0..dn.len()).map(|i| ga_n[i] * masks.negative[i]).collect();

    let query = cache.q.comp.query.as_deref();
    let mut d_query: Option<Vec<f64>> = None;
    let mut answer_grads = Vec::with_capacity(2);
    for (a, d) in [(&cache.pos, &d_pos), (&cache.neg, &d_neg)] {
        let (d_seq, d_oq) = answer_backward(&a.comp, &a.side.enc.seq, query, d, &params.head, &mut g.head);
        if let Some(d_oq) = d_oq {
            match &mut d_query {
                Some(acc) => acc.iter_mut().zip(&d_oq).for_each(|(x, y)| *x += y),
                None => d_query = Some(d_oq),
            }
        }
        answer_grads.push((a, d_seq));
    }
    let d_q_seq = question_backward(
        &cache.q.comp,
        &cache.q.side.enc.seq,
        &d_q,
        d_query.as_deref(),
        &params.head,
        &mut g.head,
    );

    let trainable = params.embeddings.trainable;
    let sides = std::iter::once((&cache.q.side, d_q_seq)).chain(answer_grads.into_iter().map(|(a, d)| (&a.side, d)));
    for (side, d_seq) in sides {
        let d_xs = bilstm_backward(&side.enc, &side.xs, &d_seq, &params.encoder, &mut g.encoder);
        if trainable {
            scatter_embeddings(side, &d_xs, &mut g.embeddings);
        }
    }
    Ok(g)
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} E={} H={} sim={}",
            self.variant, self.embed_dim, self.hidden, self.similarity
        )
    }
}
