//! Straight-line reference transcriptions using nested `Vec`s, written
//! without any of the library's tensor helpers.

pub type Mat = Vec<Vec<f64>>;

pub fn to_mat(m: &qarank::tensor::Matrix) -> Mat {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn mv(m: &Mat, x: &[f64]) -> Vec<f64> {
    m.iter()
        .map(|row| {
            let mut s = 0.0;
            for j in 0..x.len() {
                s += row[j] * x[j];
            }
            s
        })
        .collect()
}

/// Gate order: input, forget, output, candidate.
pub struct Cell {
    pub w: [Mat; 4],
    pub u: [Mat; 4],
    pub b: [Vec<f64>; 4],
}

pub fn lstm_step(x: &[f64], h_prev: &[f64], c_prev: &[f64], p: &Cell) -> (Vec<f64>, Vec<f64>) {
    let wx: Vec<Vec<f64>> = (0..4).map(|k| mv(&p.w[k], x)).collect();
    let uh: Vec<Vec<f64>> = (0..4).map(|k| mv(&p.u[k], h_prev)).collect();
    let n = h_prev.len();
    let mut h = vec![0.0; n];
    let mut c = vec![0.0; n];
    for j in 0..n {
        let i = sig(wx[0][j] + uh[0][j] + p.b[0][j]);
        let f = sig(wx[1][j] + uh[1][j] + p.b[1][j]);
        let o = sig(wx[2][j] + uh[2][j] + p.b[2][j]);
        let cand = (wx[3][j] + uh[3][j] + p.b[3][j]).tanh();
        c[j] = i * cand + f * c_prev[j];
        h[j] = o * c[j].tanh();
    }
    (h, c)
}

/// Attention-weighted outputs; masked rows come back as zeros.
pub fn attend(h: &Mat, mask: &[bool], o_q: &[f64], w_am: &Mat, w_qm: &Mat, w_ms: &[f64]) -> (Mat, Vec<f64>) {
    let q = mv(w_qm, o_q);
    let mut logits = Vec::new();
    for t in 0..h.len() {
        if !mask[t] {
            logits.push(None);
            continue;
        }
        let a = mv(w_am, &h[t]);
        let mut z = 0.0;
        for k in 0..a.len() {
            z += w_ms[k] * (a[k] + q[k]).tanh();
        }
        logits.push(Some(z));
    }
    let top = logits.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
    let denom: f64 = logits.iter().flatten().map(|z| (z - top).exp()).sum();
    let weights: Vec<f64> = logits
        .iter()
        .map(|z| z.map_or(0.0, |z| (z - top).exp() / denom))
        .collect();
    let out = h
        .iter()
        .zip(&weights)
        .map(|(row, s)| row.iter().map(|v| v * s).collect())
        .collect();
    (out, weights)
}

/// Responses of each filter over every fully valid window.
/// `filters[n][i]` is the `i`-th tap of filter `n`.
pub fn convolve(h: &Mat, mask: &[bool], filters: &[Vec<Vec<f64>>], bias: &[f64]) -> Mat {
    let m = filters[0].len();
    let mut out = Vec::new();
    for t in 0..h.len() {
        if t + m > h.len() || !mask[t..t + m].iter().all(|&b| b) {
            continue;
        }
        let row = filters
            .iter()
            .zip(bias)
            .map(|(f, b)| {
                let mut s = *b;
                for i in 0..m {
                    for j in 0..h[t + i].len() {
                        s += h[t + i][j] * f[i][j];
                    }
                }
                s.tanh()
            })
            .collect();
        out.push(row);
    }
    out
}

/// Keeps the `k` largest values of each column, in sequence order.
pub fn kmax(values: &Mat, k: usize) -> Vec<f64> {
    let cols = values[0].len();
    let mut out = Vec::new();
    for c in 0..cols {
        let mut idx: Vec<usize> = (0..values.len()).collect();
        idx.sort_by(|&a, &b| values[b][c].partial_cmp(&values[a][c]).unwrap().then(a.cmp(&b)));
        let mut keep: Vec<usize> = idx[..k].to_vec();
        keep.sort();
        out.extend(keep.iter().map(|&t| values[t][c]));
    }
    out
}

pub fn average_precision(ranked_relevance: &[bool]) -> f64 {
    let total = ranked_relevance.iter().filter(|&&r| r).count();
    let mut hits = 0;
    let mut sum = 0.0;
    for (i, &r) in ranked_relevance.iter().enumerate() {
        if r {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / total as f64
}

pub fn reciprocal_rank(ranked_relevance: &[bool]) -> f64 {
    let first = ranked_relevance.iter().position(|&r| r).unwrap();
    1.0 / (first + 1) as f64
}
