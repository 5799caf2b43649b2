//! Finite-difference verification of the analytic gradients on toy models.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::composition::ModelVariant;
use crate::data::TokenSeq;
use crate::embeddings::{EmbeddingTable, TokenId};
use crate::error::{Error, Result};
use crate::model::{backward, forward_loss, DropoutMasks, ModelConfig, ModelParams};
use crate::params::{Params, Shape};
use crate::scoring::Similarity;
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckConfig {
    pub variant: ModelVariant,
    pub similarity: Similarity,
    pub embed_dim: usize,
    pub hidden: usize,
    pub attention_dim: usize,
    pub filters: usize,
    pub filter_width: usize,
    pub vocab: usize,
    pub max_len: usize,
    pub eps: f64,
    pub tolerance: f64,
    /// Instances whose pooling decisions sit closer than this to a tie are
    /// redrawn, since the loss is not differentiable there.
    pub min_gap: f64,
    pub seed: u64,
}

impl GradCheckConfig {
    pub fn toy(variant: ModelVariant, seed: u64) -> Self {
        GradCheckConfig {
            variant,
            similarity: Similarity::Cosine,
            embed_dim: 4,
            hidden: 5,
            attention_dim: 6,
            filters: 3,
            filter_width: 2,
            vocab: 12,
            max_len: 7,
            eps: 1e-4,
            tolerance: 1e-4,
            min_gap: 1e-3,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorReport {
    pub name: String,
    pub shape: Shape,
    pub max_rel_error: f64,
    /// Flat index of the worst coordinate.
    pub worst: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub variant: ModelVariant,
    pub seed: u64,
    pub tolerance: f64,
    /// Draws needed to find an instance away from pooling ties.
    pub attempts: usize,
    pub tensors: Vec<TensorReport>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.max_rel_error <= self.tolerance)
    }

    pub fn failures(&self) -> impl Iterator<Item = &TensorReport> {
        self.tensors.iter().filter(|t| t.max_rel_error > self.tolerance)
    }

    pub fn max_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "tensor\tmax_rel_error\tworst\tanalytic\tnumeric\tstatus")?;
        for t in &self.tensors {
            let (r, c) = (t.worst / t.shape.1, t.worst % t.shape.1);
            let status = if t.max_rel_error <= self.tolerance { "ok" } else { "FAIL" };
            writeln!(
                f,
                "{}\t{:.3e}\t({r},{c})\t{:.6e}\t{:.6e}\t{status}",
                t.name, t.max_rel_error, t.analytic, t.numeric
            )?;
        }
        Ok(())
    }
}

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Margin large enough that the hinge is active for any cosine or GESD
/// value; used only to draw the instance.
const ACTIVE_MARGIN: f64 = 3.0;
/// The checked loss sits this far inside the active region. The margin
/// only shifts the loss by a constant, and a small loss value keeps the
/// rounding of the final addition below the finite-difference noise.
const LOSS_OFFSET: f64 = 0.5;
const TOY_SCALE: f64 = 0.5;
/// `W_qm o_q` is the same for every answer step, so it only reaches the
/// softmax through tanh curvature. Small attention weights leave its
/// gradient near 1e-9, below what an ε = 1e-4 difference resolves in f64.
const ATTENTION_SCALE: f64 = 2.0;
const MAX_ATTEMPTS: usize = 200;

struct Instance {
    params: ModelParams,
    margin: f64,
    q: TokenSeq,
    pos: TokenSeq,
    neg: TokenSeq,
}

fn random_seq(rng: &mut ChaCha8Rng, cfg: &GradCheckConfig) -> TokenSeq {
    let min = cfg.filter_width.max(2);
    let len = rng.random_range(min..=cfg.max_len);
    let ids: Vec<TokenId> = (0..len)
        .map(|_| rng.random_range(2..cfg.vocab as TokenId))
        .collect();
    let pad = rng.random_range(0..=2);
    TokenSeq::truncated(&ids, len).padded(pad)
}

fn draw(rng: &mut ChaCha8Rng, cfg: &GradCheckConfig) -> Result<Instance> {
    let mut mc = ModelConfig::new(cfg.variant, cfg.embed_dim);
    mc.similarity = cfg.similarity;
    mc.hidden = cfg.hidden;
    mc.attention_dim = Some(cfg.attention_dim);
    mc.filters = cfg.filters;
    mc.filter_width = cfg.filter_width;
    let table = EmbeddingTable::new(Matrix::uniform(cfg.vocab, cfg.embed_dim, TOY_SCALE, rng), true);
    let mut params = ModelParams::init(mc, table, rng)?;
    params.encoder.visit_mut("", &mut |_, _, d| {
        d.iter_mut().for_each(|v| *v = rng.random_range(-TOY_SCALE..=TOY_SCALE))
    });
    params.head.visit_mut("", &mut |name, _, d| {
        let s = if name.starts_with("attention") { ATTENTION_SCALE } else { TOY_SCALE };
        d.iter_mut().for_each(|v| *v = rng.random_range(-s..=s))
    });
    Ok(Instance {
        params,
        margin: ACTIVE_MARGIN,
        q: random_seq(rng, cfg),
        pos: random_seq(rng, cfg),
        neg: random_seq(rng, cfg),
    })
}

fn loss_of(inst: &Instance, params: &ModelParams) -> Result<f64> {
    let masks = DropoutMasks::ones(params.repr_dim());
    let loss = forward_loss(params, &inst.q, &inst.pos, &inst.neg, masks, inst.margin)?.0;
    if loss <= 0.0 {
        return Err(Error::Invalid("perturbation left the active hinge region".into()));
    }
    Ok(loss)
}

fn flatten(p: &impl Params) -> Vec<(String, Shape, Vec<f64>)> {
    let mut out = Vec::new();
    p.visit("", &mut |n, s, d| out.push((n.to_string(), s, d.to_vec())));
    out
}

fn set_coord(p: &mut ModelParams, tensor: usize, coord: usize, value: f64) {
    let mut i = 0;
    p.visit_mut("", &mut |_, _, d| {
        if i == tensor {
            d[coord] = value;
        }
        i += 1;
    });
}

/// Checks every coordinate of every tensor of a toy model. `corrupt` names
/// a tensor whose analytic gradient is deliberately perturbed, to exercise
/// the failure path.
pub fn grad_check(cfg: &GradCheckConfig, corrupt: Option<&str>) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut attempts = 0;
    let (inst, cache) = loop {
        attempts += 1;
        if attempts > MAX_ATTEMPTS {
            return Err(Error::Invalid(format!(
                "no tie-free instance found in {MAX_ATTEMPTS} draws"
            )));
        }
        let mut inst = draw(&mut rng, cfg)?;
        let masks = DropoutMasks::ones(inst.params.repr_dim());
        let (_, cache) = forward_loss(&inst.params, &inst.q, &inst.pos, &inst.neg, masks.clone(), inst.margin)?;
        if cache.min_kink_gap() >= cfg.min_gap {
            inst.margin = cache.sim_pos - cache.sim_neg + LOSS_OFFSET;
            let (_, cache) = forward_loss(&inst.params, &inst.q, &inst.pos, &inst.neg, masks, inst.margin)?;
            break (inst, cache);
        }
    };

    let grads = backward(&inst.params, &cache)?;
    let dense = ModelParams {
        config: inst.params.config,
        embeddings: EmbeddingTable::new(
            grads.dense_embeddings(inst.params.embeddings.vocab_size(), cfg.embed_dim),
            true,
        ),
        encoder: grads.encoder,
        head: grads.head,
    };
    let analytic = flatten(&dense);
    let originals = flatten(&inst.params);

    let mut probe = inst.params.clone();
    let mut tensors = Vec::with_capacity(originals.len());
    for (t, ((name, shape, values), (_, _, grad))) in originals.iter().zip(&analytic).enumerate() {
        let mut report = TensorReport {
            name: name.clone(),
            shape: *shape,
            max_rel_error: 0.0,
            worst: 0,
            analytic: grad.first().copied().unwrap_or(0.0),
            numeric: 0.0,
        };
        for (c, &w) in values.iter().enumerate() {
            set_coord(&mut probe, t, c, w + cfg.eps);
            let up = loss_of(&inst, &probe)?;
            set_coord(&mut probe, t, c, w - cfg.eps);
            let down = loss_of(&inst, &probe)?;
            set_coord(&mut probe, t, c, w);
            let numeric = (up - down) / (2.0 * cfg.eps);
            let mut a = grad[c];
            if corrupt == Some(name.as_str()) {
                a = a * 1.5 + 1e-2;
            }
            let err = relative_error(a, numeric);
            if err > report.max_rel_error || c == 0 {
                report.max_rel_error = err;
                report.worst = c;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
        tensors.push(report);
    }
    Ok(GradCheckReport {
        variant: cfg.variant,
        seed: cfg.seed,
        tolerance: cfg.tolerance,
        attempts,
        tensors,
    })
}
