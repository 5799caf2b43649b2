//! Similarity between representations and the margin ranking loss.

use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::{dot, sigmoid};

pub const DEFAULT_MARGIN: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarginConfig {
    margin: f64,
}

impl MarginConfig {
    pub fn new(margin: f64) -> Result<Self> {
        if margin > 0.0 && margin.is_finite() {
            Ok(MarginConfig { margin })
        } else {
            Err(Error::Invalid(format!("margin must be positive, got {margin}")))
        }
    }

    pub fn get(self) -> f64 {
        self.margin
    }
}

impl Default for MarginConfig {
    fn default() -> Self {
        MarginConfig {
            margin: DEFAULT_MARGIN,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Similarity {
    Cosine,
    /// `1/(1+‖a−b‖) · σ(γ(a·b + c))`.
    Gesd { gamma: f64, c: f64 },
}

impl Similarity {
    pub const DEFAULT_GESD: Similarity = Similarity::Gesd { gamma: 1.0, c: 1.0 };

    pub fn name(&self) -> &'static str {
        match self {
            Similarity::Cosine => "cosine",
            Similarity::Gesd { .. } => "gesd",
        }
    }

    pub fn score(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        match *self {
            Similarity::Cosine => cosine(a, b),
            Similarity::Gesd { gamma, c } => gesd(a, b, gamma, c),
        }
    }

    /// Score together with `(∂s/∂a, ∂s/∂b)`.
    pub fn score_with_grad(&self, a: &[f64], b: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        match *self {
            Similarity::Cosine => cosine_with_grad(a, b),
            Similarity::Gesd { gamma, c } => gesd_with_grad(a, b, gamma, c),
        }
    }
}

impl fmt::Display for Similarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn check_len(a: &[f64], b: &[f64], op: &'static str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            op,
            left: (a.len(), 1),
            right: (b.len(), 1),
        });
    }
    Ok(())
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len(a, b, "cosine")?;
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(dot(a, b) / (na * nb))
}

fn cosine_with_grad(a: &[f64], b: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    check_len(a, b, "cosine")?;
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let s = dot(a, b) / (na * nb);
    let inv = 1.0 / (na * nb);
    let ga = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| y * inv - s * x / (na * na))
        .collect();
    let gb = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| x * inv - s * y / (nb * nb))
        .collect();
    Ok((s, ga, gb))
}

pub fn gesd(a: &[f64], b: &[f64], gamma: f64, c: f64) -> Result<f64> {
    check_len(a, b, "gesd")?;
    let dist = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    Ok(1.0 / (1.0 + dist) * sigmoid(gamma * (dot(a, b) + c)))
}

fn gesd_with_grad(a: &[f64], b: &[f64], gamma: f64, c: f64) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    check_len(a, b, "gesd")?;
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let dist = dot(&diff, &diff).sqrt();
    let euclid = 1.0 / (1.0 + dist);
    let sig = sigmoid(gamma * (dot(a, b) + c));
    let s = euclid * sig;
    // ∂euclid/∂a = −euclid² (a−b)/‖a−b‖; zero at a = b.
    let d_euclid = if dist > 0.0 { -euclid * euclid / dist } else { 0.0 };
    let d_sig = gamma * sig * (1.0 - sig);
    let mut ga = Vec::with_capacity(a.len());
    let mut gb = Vec::with_capacity(a.len());
    for i in 0..a.len() {
        let e = d_euclid * diff[i] * sig;
        ga.push(e + euclid * d_sig * b[i]);
        gb.push(-e + euclid * d_sig * a[i]);
    }
    Ok((s, ga, gb))
}

/// `max{0, M − sim_pos + sim_neg}`.
pub fn hinge_loss(sim_pos: f64, sim_neg: f64, margin: f64) -> f64 {
    // Subtract the difference first so equal sims give exactly `margin`.
    (margin - (sim_pos - sim_neg)).max(0.0)
}
