//! LSTM cell and the bidirectional encoder shared by questions and answers.
//!
//! One step of the cell:
//!
//! ```text
//! i = σ(W_i x + U_i h₋ + b_i)      f = σ(W_f x + U_f h₋ + b_f)
//! o = σ(W_o x + U_o h₋ + b_o)      c̃ = tanh(W_c x + U_c h₋ + b_c)
//! c = i ∘ c̃ + f ∘ c₋               h = o ∘ tanh(c)
//! ```
//!
//! Masked-out positions are skipped entirely: they neither read nor write
//! the recurrent state and their output rows stay zero, so padding a
//! sequence never changes the outputs at real tokens.

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{join, Params, Shape};
use crate::tensor::{sigmoid, Matrix, Vector};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gate {
    Input = 0,
    Forget = 1,
    Output = 2,
    Candidate = 3,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Input, Gate::Forget, Gate::Output, Gate::Candidate];

    fn suffix(self) -> &'static str {
        match self {
            Gate::Input => "i",
            Gate::Forget => "f",
            Gate::Output => "o",
            Gate::Candidate => "c",
        }
    }
}

/// Weights of one LSTM direction, indexed by [`Gate`].
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    /// Input projections, `H × E`.
    pub w: [Matrix; 4],
    /// Recurrent projections, `H × H`.
    pub u: [Matrix; 4],
    pub b: [Vector; 4],
}

impl LstmParams {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        LstmParams {
            w: std::array::from_fn(|_| Matrix::zeros(hidden, input_dim)),
            u: std::array::from_fn(|_| Matrix::zeros(hidden, hidden)),
            b: std::array::from_fn(|_| Vector::zeros(hidden)),
        }
    }

    pub fn uniform<R: Rng + ?Sized>(input_dim: usize, hidden: usize, scale: f64, rng: &mut R) -> Self {
        let w = std::array::from_fn(|_| Matrix::uniform(hidden, input_dim, scale, rng));
        let u = std::array::from_fn(|_| Matrix::uniform(hidden, hidden, scale, rng));
        let b = std::array::from_fn(|_| Vector::uniform(hidden, scale, rng));
        LstmParams { w, u, b }
    }

    pub fn input_dim(&self) -> usize {
        self.w[0].cols()
    }

    pub fn hidden(&self) -> usize {
        self.w[0].rows()
    }
}

impl Params for LstmParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, Shape, &'a [f64])) {
        for g in Gate::ALL {
            let k = g as usize;
            f(&join(prefix, &format!("w_{}", g.suffix())), self.w[k].shape(), self.w[k].as_slice());
        }
        for g in Gate::ALL {
            let k = g as usize;
            f(&join(prefix, &format!("u_{}", g.suffix())), self.u[k].shape(), self.u[k].as_slice());
        }
        for g in Gate::ALL {
            let k = g as usize;
            f(&join(prefix, &format!("b_{}", g.suffix())), (self.b[k].len(), 1), &self.b[k]);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Shape, &mut [f64])) {
        for g in Gate::ALL {
            let k = g as usize;
            let shape = self.w[k].shape();
            f(&join(prefix, &format!("w_{}", g.suffix())), shape, self.w[k].as_mut_slice());
        }
        for g in Gate::ALL {
            let k = g as usize;
            let shape = self.u[k].shape();
            f(&join(prefix, &format!("u_{}", g.suffix())), shape, self.u[k].as_mut_slice());
        }
        for g in Gate::ALL {
            let k = g as usize;
            let shape = (self.b[k].len(), 1);
            f(&join(prefix, &format!("b_{}", g.suffix())), shape, &mut self.b[k]);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BiLstmParams {
    pub forward: LstmParams,
    pub backward: LstmParams,
}

impl BiLstmParams {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        BiLstmParams {
            forward: LstmParams::zeros(input_dim, hidden),
            backward: LstmParams::zeros(input_dim, hidden),
        }
    }

    pub fn uniform<R: Rng + ?Sized>(input_dim: usize, hidden: usize, scale: f64, rng: &mut R) -> Self {
        let forward = LstmParams::uniform(input_dim, hidden, scale, rng);
        let backward = LstmParams::uniform(input_dim, hidden, scale, rng);
        BiLstmParams { forward, backward }
    }

    pub fn hidden(&self) -> usize {
        self.forward.hidden()
    }

    pub fn input_dim(&self) -> usize {
        self.forward.input_dim()
    }

    /// Width of a biLSTM output row, `2H`.
    pub fn output_dim(&self) -> usize {
        2 * self.hidden()
    }
}

impl Params for BiLstmParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, Shape, &'a [f64])) {
        self.forward.visit(&join(prefix, "fwd"), f);
        self.backward.visit(&join(prefix, "bwd"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Shape, &mut [f64])) {
        self.forward.visit_mut(&join(prefix, "fwd"), f);
        self.backward.visit_mut(&join(prefix, "bwd"), f);
    }
}

/// Post-activation gate values of one step.
#[derive(Clone, Debug, PartialEq)]
pub struct GateCache {
    pub input: Vec<f64>,
    pub forget: Vec<f64>,
    pub output: Vec<f64>,
    pub candidate: Vec<f64>,
}

/// Everything backpropagation needs from one processed timestep.
#[derive(Clone, Debug)]
struct StepRecord {
    pos: usize,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    gates: GateCache,
    tanh_c: Vec<f64>,
}

fn check_step_shapes(x: &[f64], h: &[f64], c: &[f64], p: &LstmParams) -> Result<()> {
    let (hd, e) = (p.hidden(), p.input_dim());
    if x.len() != e {
        return Err(Error::Shape {
            op: "lstm_step(x)",
            left: (hd, e),
            right: (x.len(), 1),
        });
    }
    if h.len() != hd || c.len() != hd {
        return Err(Error::Shape {
            op: "lstm_step(state)",
            left: (hd, hd),
            right: (h.len(), c.len()),
        });
    }
    Ok(())
}

fn step_unchecked(x: &[f64], h_prev: &[f64], c_prev: &[f64], p: &LstmParams) -> (Vec<f64>, Vec<f64>, GateCache, Vec<f64>) {
    let hd = p.hidden();
    let mut pre: [Vec<f64>; 4] = std::array::from_fn(|k| p.b[k].to_vec());
    for k in 0..4 {
        p.w[k].matvec_acc(x, &mut pre[k]);
        p.u[k].matvec_acc(h_prev, &mut pre[k]);
    }
    let [zi, zf, zo, zc] = pre;
    let gates = GateCache {
        input: zi.into_iter().map(sigmoid).collect(),
        forget: zf.into_iter().map(sigmoid).collect(),
        output: zo.into_iter().map(sigmoid).collect(),
        candidate: zc.into_iter().map(f64::tanh).collect(),
    };
    let mut c = vec![0.0; hd];
    let mut tanh_c = vec![0.0; hd];
    let mut h = vec![0.0; hd];
    for j in 0..hd {
        c[j] = gates.input[j] * gates.candidate[j] + gates.forget[j] * c_prev[j];
        tanh_c[j] = c[j].tanh();
        h[j] = gates.output[j] * tanh_c[j];
    }
    (h, c, gates, tanh_c)
}

/// One application of the cell: returns `(h_t, c_t, gates)`.
pub fn lstm_step(x: &[f64], h_prev: &[f64], c_prev: &[f64], p: &LstmParams) -> Result<(Vector, Vector, GateCache)> {
    check_step_shapes(x, h_prev, c_prev, p)?;
    let (h, c, gates, _) = step_unchecked(x, h_prev, c_prev, p);
    Ok((Vector::from(h), Vector::from(c), gates))
}

/// Output of one direction over a sequence, with the per-step records.
#[derive(Clone, Debug)]
pub struct LstmTrace {
    /// `len × H`; rows at masked-out positions are zero.
    pub outputs: Matrix,
    steps: Vec<StepRecord>,
}

impl LstmTrace {
    /// Positions in processing order.
    pub fn order(&self) -> impl Iterator<Item = usize> + '_ {
        self.steps.iter().map(|s| s.pos)
    }

    pub fn gates_at(&self, pos: usize) -> Option<&GateCache> {
        self.steps.iter().find(|s| s.pos == pos).map(|s| &s.gates)
    }
}

fn check_sequence(xs: &Matrix, mask: &[bool], expected_dim: usize, op: &'static str) -> Result<()> {
    if xs.cols() != expected_dim || mask.len() != xs.rows() {
        return Err(Error::Shape {
            op,
            left: xs.shape(),
            right: (mask.len(), expected_dim),
        });
    }
    if xs.rows() == 0 {
        return Err(Error::EmptyMask { op });
    }
    Ok(())
}

/// Runs one direction from zero state. With `reverse` the positions are
/// visited `len-1 … 0`, but output rows stay at their input positions.
pub fn lstm_forward(xs: &Matrix, mask: &[bool], p: &LstmParams, reverse: bool) -> Result<LstmTrace> {
    check_sequence(xs, mask, p.input_dim(), "lstm_forward")?;
    let hd = p.hidden();
    let len = xs.rows();
    let mut outputs = Matrix::zeros(len, hd);
    let mut steps = Vec::with_capacity(len);
    let mut h = vec![0.0; hd];
    let mut c = vec![0.0; hd];
    let positions: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..len).rev())
    } else {
        Box::new(0..len)
    };
    for pos in positions {
        if !mask[pos] {
            continue;
        }
        let (h_new, c_new, gates, tanh_c) = step_unchecked(xs.row(pos), &h, &c, p);
        outputs.row_mut(pos).copy_from_slice(&h_new);
        let h_prev = std::mem::replace(&mut h, h_new);
        let c_prev = std::mem::replace(&mut c, c_new);
        steps.push(StepRecord {
            pos,
            h_prev,
            c_prev,
            gates,
            tanh_c,
        });
    }
    Ok(LstmTrace { outputs, steps })
}

/// Backpropagation through time for one direction.
///
/// `d_out` is the loss gradient w.r.t. `trace.outputs`. Parameter gradients
/// are accumulated into `grads`, input gradients into `d_xs`.
pub fn lstm_backward(
    trace: &LstmTrace,
    xs: &Matrix,
    d_out: &Matrix,
    p: &LstmParams,
    grads: &mut LstmParams,
    d_xs: &mut Matrix,
) {
    let hd = p.hidden();
    let mut dh_next = vec![0.0; hd];
    let mut dc_next = vec![0.0; hd];
    let mut dz: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; hd]);
    for step in trace.steps.iter().rev() {
        let g = &step.gates;
        let d_row = d_out.row(step.pos);
        for j in 0..hd {
            let dh = d_row[j] + dh_next[j];
            let dc = dc_next[j] + dh * g.output[j] * (1.0 - step.tanh_c[j] * step.tanh_c[j]);
            dz[Gate::Output as usize][j] = dh * step.tanh_c[j] * g.output[j] * (1.0 - g.output[j]);
            dz[Gate::Input as usize][j] = dc * g.candidate[j] * g.input[j] * (1.0 - g.input[j]);
            dz[Gate::Candidate as usize][j] =
                dc * g.input[j] * (1.0 - g.candidate[j] * g.candidate[j]);
            dz[Gate::Forget as usize][j] = dc * step.c_prev[j] * g.forget[j] * (1.0 - g.forget[j]);
            dc_next[j] = dc * g.forget[j];
        }
        dh_next.fill(0.0);
        let x = xs.row(step.pos);
        let dx = d_xs.row_mut(step.pos);
        for k in 0..4 {
            grads.w[k].add_outer(&dz[k], x);
            grads.u[k].add_outer(&dz[k], &step.h_prev);
            crate::tensor::axpy(1.0, &dz[k], &mut grads.b[k]);
            p.w[k].matvec_t_acc(&dz[k], dx);
            p.u[k].matvec_t_acc(&dz[k], &mut dh_next);
        }
    }
}

/// Per-timestep biLSTM outputs `h_t = →h_t ∥ ←h_t` with their mask.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedSequence {
    /// `len × 2H`.
    pub outputs: Matrix,
    pub mask: Vec<bool>,
}

impl EncodedSequence {
    pub fn new(outputs: Matrix, mask: Vec<bool>) -> Result<Self> {
        if outputs.rows() != mask.len() {
            return Err(Error::Shape {
                op: "EncodedSequence",
                left: outputs.shape(),
                right: (mask.len(), 1),
            });
        }
        Ok(EncodedSequence { outputs, mask })
    }

    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn width(&self) -> usize {
        self.outputs.cols()
    }

    pub fn valid_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn valid_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i)
    }
}

/// biLSTM encoding plus the traces of both directions.
#[derive(Clone, Debug)]
pub struct BiLstmOutput {
    pub seq: EncodedSequence,
    pub forward: LstmTrace,
    pub backward: LstmTrace,
}

pub fn bilstm_encode(xs: &Matrix, mask: &[bool], p: &BiLstmParams) -> Result<BiLstmOutput> {
    let forward = lstm_forward(xs, mask, &p.forward, false)?;
    let backward = lstm_forward(xs, mask, &p.backward, true)?;
    let hd = p.hidden();
    let mut outputs = Matrix::zeros(xs.rows(), 2 * hd);
    for t in 0..xs.rows() {
        let row = outputs.row_mut(t);
        row[..hd].copy_from_slice(forward.outputs.row(t));
        row[hd..].copy_from_slice(backward.outputs.row(t));
    }
    Ok(BiLstmOutput {
        seq: EncodedSequence {
            outputs,
            mask: mask.to_vec(),
        },
        forward,
        backward,
    })
}

/// Backpropagates a `len × 2H` output gradient through both directions and
/// returns the gradient w.r.t. the input rows.
pub fn bilstm_backward(
    out: &BiLstmOutput,
    xs: &Matrix,
    d_seq: &Matrix,
    p: &BiLstmParams,
    grads: &mut BiLstmParams,
) -> Matrix {
    let hd = p.hidden();
    let len = xs.rows();
    let mut d_fwd = Matrix::zeros(len, hd);
    let mut d_bwd = Matrix::zeros(len, hd);
    for t in 0..len {
        let row = d_seq.row(t);
        d_fwd.row_mut(t).copy_from_slice(&row[..hd]);
        d_bwd.row_mut(t).copy_from_slice(&row[hd..]);
    }
    let mut d_xs = Matrix::zeros(len, xs.cols());
    lstm_backward(&out.forward, xs, &d_fwd, &p.forward, &mut grads.forward, &mut d_xs);
    lstm_backward(&out.backward, xs, &d_bwd, &p.backward, &mut grads.backward, &mut d_xs);
    d_xs
}
