//! Mini-batch SGD on the margin ranking loss with sampled negatives.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{AnswerId, AnswerStore, QAExample, TokenBatch, TokenSeq};
use crate::embeddings::{TokenId, PAD};
use crate::error::{Error, Result};
use crate::model::{backward, DropoutMasks, GradientSet, LossCache, ModelParams};
use crate::params::zip_apply;
use crate::scoring::DEFAULT_MARGIN;
use crate::tensor::Vector;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_len: usize,
    pub margin: f64,
    pub learning_rate: f64,
    pub dropout: f64,
    /// Negatives drawn per example before giving up on a nonzero loss.
    pub negatives: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 20,
            max_len: 200,
            margin: DEFAULT_MARGIN,
            learning_rate: 0.05,
            dropout: 0.3,
            negatives: 50,
            epochs: 20,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be ≥ 1".into());
        }
        if self.max_len == 0 {
            return bad("max_len must be ≥ 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if self.negatives == 0 {
            return bad("negatives must be ≥ 1".into());
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return bad(format!("margin must be positive, got {}", self.margin));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Inverted dropout: entries kept with probability `1 − p` and scaled by
/// `1/(1 − p)`. Consumes no randomness when `p = 0` or in eval mode.
pub fn dropout_mask<R: Rng + ?Sized>(dim: usize, p: f64, rng: &mut R, mode: Mode) -> Vector {
    if mode == Mode::Eval || p == 0.0 {
        return Vector::from(vec![1.0; dim]);
    }
    let keep = 1.0 / (1.0 - p);
    Vector::from(
        (0..dim)
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect::<Vec<_>>(),
    )
}

const REJECTION_TRIES: usize = 32;

/// Uniform draw from `pool` excluding the question's ground truths.
pub fn sample_negative<'a, R: Rng + ?Sized>(
    question: &QAExample,
    pool: &'a [AnswerId],
    rng: &mut R,
) -> Result<&'a AnswerId> {
    if !pool.is_empty() {
        for _ in 0..REJECTION_TRIES {
            let c = &pool[rng.random_range(0..pool.len())];
            if !question.ground_truth.contains(c) {
                return Ok(c);
            }
        }
    }
    // Pool dominated by ground truths: pick among the explicit negatives.
    let negatives: Vec<&AnswerId> = pool
        .iter()
        .filter(|c| !question.ground_truth.contains(*c))
        .collect();
    negatives
        .choose(rng)
        .copied()
        .ok_or_else(|| Error::NoNegative(question.id.clone()))
}

/// `w ← w − lr·g` for every trainable tensor. The PAD row is never touched.
pub fn sgd_step(params: &mut ModelParams, grads: &GradientSet, lr: f64) {
    let step = |w: &mut [f64], g: &[f64]| crate::tensor::axpy(-lr, g, w);
    zip_apply(&mut params.encoder, &grads.encoder, step);
    zip_apply(&mut params.head, &grads.head, step);
    if params.embeddings.trainable {
        let table = params.embeddings.vectors_mut();
        for (&id, g) in &grads.embeddings {
            if id == PAD {
                continue;
            }
            crate::tensor::axpy(-lr, g, table.row_mut(id as usize));
        }
    }
}

/// Training data: questions with ground truths, answer texts, and the
/// answer ids negatives are drawn from.
pub struct TrainingSet<'a> {
    pub examples: &'a [QAExample],
    pub answers: &'a AnswerStore,
    pub negative_pool: Vec<AnswerId>,
}

impl<'a> TrainingSet<'a> {
    /// Negatives come from every answer in the store.
    pub fn new(examples: &'a [QAExample], answers: &'a AnswerStore) -> Self {
        TrainingSet {
            examples,
            answers,
            negative_pool: answers.ids().cloned().collect(),
        }
    }

    /// One training example per (question, ground truth) pair.
    pub fn pairs(&self) -> Vec<(usize, &'a AnswerId)> {
        self.examples
            .iter()
            .enumerate()
            .flat_map(|(i, e)| e.ground_truth.iter().map(move |g| (i, g)))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    /// Mean hinge loss over examples, counting skipped ones as 0.
    pub mean_loss: f64,
    pub examples: usize,
    /// Examples where none of the K negatives produced a nonzero loss.
    pub skipped: usize,
}

struct Outcome {
    loss: f64,
    grads: Option<GradientSet>,
}

fn answer_tokens<'a>(answers: &'a AnswerStore, id: &AnswerId) -> Result<&'a [TokenId]> {
    answers
        .get(id)
        .ok_or_else(|| Error::Invalid(format!("unknown answer id {id}")))
}

fn train_one(
    params: &ModelParams,
    cfg: &TrainConfig,
    data: &TrainingSet,
    example: &QAExample,
    q_seq: TokenSeq,
    pos_seq: TokenSeq,
    seed: u64,
) -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = params.repr_dim();
    let mq = dropout_mask(dim, cfg.dropout, &mut rng, Mode::Train);
    let mp = dropout_mask(dim, cfg.dropout, &mut rng, Mode::Train);
    let q = params.forward_question(&q_seq)?;
    let pos = params.forward_answer(&q, &pos_seq)?;
    for _ in 0..cfg.negatives {
        let neg_id = sample_negative(example, &data.negative_pool, &mut rng)?;
        let neg_seq = TokenSeq::truncated(answer_tokens(data.answers, neg_id)?, cfg.max_len);
        let masks = DropoutMasks {
            question: mq.clone(),
            positive: mp.clone(),
            negative: dropout_mask(dim, cfg.dropout, &mut rng, Mode::Train),
        };
        let neg = params.forward_answer(&q, &neg_seq)?;
        let loss = params.loss_value(&q, &pos, &neg, &masks, cfg.margin)?;
        if loss > 0.0 {
            let cache = LossCache::new(params, q, pos, neg, masks, cfg.margin)?;
            let grads = backward(params, &cache)?;
            return Ok(Outcome {
                loss,
                grads: Some(grads),
            });
        }
    }
    Ok(Outcome {
        loss: 0.0,
        grads: None,
    })
}

/// One pass over the shuffled training pairs. Examples within a batch run
/// in parallel, each with its own RNG seeded from `rng` in batch order, so
/// results do not depend on thread scheduling.
pub fn train_epoch<R: Rng + ?Sized>(
    data: &TrainingSet,
    params: &mut ModelParams,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<EpochStats> {
    cfg.validate()?;
    let mut pairs = data.pairs();
    if pairs.is_empty() {
        return Err(Error::Invalid("training set is empty".into()));
    }
    pairs.shuffle(rng);

    let mut total_loss = 0.0;
    let mut skipped = 0;
    for chunk in pairs.chunks(cfg.batch_size) {
        let questions: Vec<&[TokenId]> = chunk.iter().map(|&(i, _)| data.examples[i].question.as_slice()).collect();
        let positives = chunk
            .iter()
            .map(|&(_, g)| answer_tokens(data.answers, g))
            .collect::<Result<Vec<_>>>()?;
        let source: Vec<usize> = (0..chunk.len()).collect();
        let q_batch = TokenBatch::from_sequences(&questions, source.clone(), cfg.max_len);
        let a_batch = TokenBatch::from_sequences(&positives, source, cfg.max_len);
        let seeds: Vec<u64> = chunk.iter().map(|_| rng.random()).collect();

        let frozen: &ModelParams = params;
        let outcomes = chunk
            .par_iter()
            .enumerate()
            .map(|(r, &(i, _))| {
                train_one(frozen, cfg, data, &data.examples[i], q_batch.row(r), a_batch.row(r), seeds[r])
            })
            .collect::<Result<Vec<_>>>()?;

        let mut sum = GradientSet::zeros(params);
        for o in &outcomes {
            total_loss += o.loss;
            match &o.grads {
                Some(g) => sum.add_scaled(g, 1.0),
                None => skipped += 1,
            }
        }
        sum.scale(1.0 / chunk.len() as f64);
        sgd_step(params, &sum, cfg.learning_rate);
    }
    Ok(EpochStats {
        mean_loss: total_loss / pairs.len() as f64,
        examples: pairs.len(),
        skipped,
    })
}
