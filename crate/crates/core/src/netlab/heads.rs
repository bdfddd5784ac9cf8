//! Output heads: mapping raw network outputs to forecast distributions, and
//! the per-head training losses with gradients with respect to the raw outputs.

use serde::{Deserialize, Serialize};

use crate::distributions::{
    bernstein_basis, BernsteinQuantileDist, ForecastDist, HistogramDist, NormalDist,
};
use crate::error::{Error, Result};
use crate::numeric::{dot, exp_nonpositive, sigmoid, softplus, softplus_and_sigmoid};
use crate::scoring::{crps_normal, crps_normal_grad, quantile_levels};

/// Lower bound added to the normal scale.
pub const SIGMA_FLOOR: f64 = 1e-4;

/// Output head of a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum HeadKind {
    /// Normal distribution parameters, trained on the CRPS.
    DRN,
    /// Bernstein quantile function coefficients, trained on the pinball loss.
    BQN,
    /// Bin probabilities over fixed edges, trained on the cross-entropy.
    HEN,
}

impl HeadKind {
    pub const ALL: [HeadKind; 3] = [HeadKind::DRN, HeadKind::BQN, HeadKind::HEN];

    pub fn name(&self) -> &'static str {
        match self {
            HeadKind::DRN => "DRN",
            HeadKind::BQN => "BQN",
            HeadKind::HEN => "HEN",
        }
    }
}

impl std::fmt::Display for HeadKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for HeadKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        HeadKind::ALL
            .iter()
            .copied()
            .find(|h| h.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown network variant `{s}` (expected DRN, BQN or HEN)")))
    }
}

/// Everything a head needs besides the raw outputs: the affine target
/// scaling, the Bernstein basis at the loss levels, and the histogram edges.
#[derive(Debug, Clone)]
pub struct HeadSpec {
    pub kind: HeadKind,
    pub target_mean: f64,
    pub target_scale: f64,
    pub bqn_degree: usize,
    pub bqn_levels: Vec<f64>,
    /// Basis values stored coefficient-major: `bqn_basis[j * levels + k]`
    /// is the `j`-th Bernstein polynomial at level `k`.
    bqn_basis: Vec<f64>,
    pub hen_edges: Vec<f64>,
}

impl HeadSpec {
    pub fn new(
        kind: HeadKind,
        target_mean: f64,
        target_scale: f64,
        bqn_degree: usize,
        n_bqn_levels: usize,
        hen_edges: Vec<f64>,
    ) -> Self {
        let bqn_levels = if kind == HeadKind::BQN {
            quantile_levels(n_bqn_levels)
        } else {
            Vec::new()
        };
        let rows: Vec<Vec<f64>> = bqn_levels.iter().map(|&p| bernstein_basis(bqn_degree, p)).collect();
        let bqn_basis = if rows.is_empty() {
            Vec::new()
        } else {
            (0..=bqn_degree)
                .flat_map(|j| rows.iter().map(move |r| r[j]))
                .collect()
        };
        Self {
            kind,
            target_mean,
            target_scale,
            bqn_degree,
            bqn_levels,
            bqn_basis,
            hen_edges,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self.kind {
            HeadKind::DRN => 2,
            HeadKind::BQN => self.bqn_degree + 1,
            HeadKind::HEN => self.hen_edges.len() - 1,
        }
    }

    fn normal_params(&self, raw: &[f64]) -> (f64, f64) {
        let mu = self.target_mean + self.target_scale * raw[0];
        let sigma = self.target_scale * softplus(raw[1]) + SIGMA_FLOOR;
        (mu, sigma)
    }

    fn bernstein_coeffs(&self, raw: &[f64]) -> Vec<f64> {
        let mut coeffs = Vec::with_capacity(raw.len());
        let mut acc = self.target_mean + self.target_scale * raw[0];
        coeffs.push(acc);
        for r in &raw[1..] {
            acc += self.target_scale * softplus_and_sigmoid(*r).0;
            coeffs.push(acc);
        }
        coeffs
    }

    fn softmax(raw: &[f64]) -> Vec<f64> {
        let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = raw.iter().map(|r| (r - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / total).collect()
    }

    /// Forecast distribution for one row of raw outputs.
    pub fn distribution(&self, raw: &[f64]) -> Result<ForecastDist> {
        Ok(match self.kind {
            HeadKind::DRN => {
                let (mu, sigma) = self.normal_params(raw);
                NormalDist::new(mu, sigma)?.into()
            }
            HeadKind::BQN => BernsteinQuantileDist::new(self.bernstein_coeffs(raw))?.into(),
            HeadKind::HEN => {
                let mut probs = Self::softmax(raw);
                // Renormalize so the total is 1 to the last bit where possible.
                let total: f64 = probs.iter().sum();
                for p in &mut probs {
                    *p /= total;
                }
                HistogramDist::new(self.hen_edges.clone(), probs)?.into()
            }
        })
    }

    /// Bin index of `y`, clamped to the outermost bins; the flag reports clamping.
    pub fn hen_bin(&self, y: f64) -> (usize, bool) {
        let n_bins = self.hen_edges.len() - 1;
        if y < self.hen_edges[0] {
            return (0, true);
        }
        if y > self.hen_edges[n_bins] {
            return (n_bins - 1, true);
        }
        let idx = self.hen_edges.partition_point(|&b| b <= y);
        (idx.clamp(1, n_bins) - 1, false)
    }

    /// Loss at one case and its gradient with respect to `raw`, written
    /// into `grad`. Returns `(loss, clamped)` where `clamped` reports a HEN
    /// target outside the bin range.
    pub fn loss_and_grad(&self, raw: &[f64], y: f64, grad: &mut [f64]) -> (f64, bool) {
        self.loss_and_grad_simd(raw, y, grad)
    }

    simd_variants!(HeadSpec; loss_and_grad_simd => loss_and_grad_body(raw: &[f64], y: f64, grad: &mut [f64]) -> (f64, bool));

    #[inline(always)]
    fn loss_and_grad_body(&self, raw: &[f64], y: f64, grad: &mut [f64]) -> (f64, bool) {
        match self.kind {
            HeadKind::DRN => {
                let (mu, sigma) = self.normal_params(raw);
                let loss = crps_normal(mu, sigma, y).unwrap_or(f64::NAN);
                let (d_mu, d_sigma) = crps_normal_grad(mu, sigma, y);
                grad[0] = d_mu * self.target_scale;
                grad[1] = d_sigma * self.target_scale * sigmoid(raw[1]);
                (loss, false)
            }
            HeadKind::BQN => {
                let width = raw.len();
                let n_levels = self.bqn_levels.len();
                let mut inc_stack = [(0.0f64, 0.0f64); 32];
                let mut inc_heap;
                let increments: &mut [(f64, f64)] = if width <= inc_stack.len() {
                    &mut inc_stack[..width]
                } else {
                    inc_heap = vec![(0.0, 0.0); width];
                    &mut inc_heap
                };
                for (inc, r) in increments.iter_mut().zip(raw).skip(1) {
                    *inc = softplus_and_sigmoid(*r);
                }
                let mut stack = [0.0f64; 256];
                let mut heap;
                let buf: &mut [f64] = if n_levels <= stack.len() {
                    &mut stack[..n_levels]
                } else {
                    heap = vec![0.0; n_levels];
                    &mut heap
                };
                // Quantiles at every level, accumulated coefficient by coefficient.
                let mut alpha = self.target_mean + self.target_scale * raw[0];
                for (q, b) in buf.iter_mut().zip(&self.bqn_basis[..n_levels]) {
                    *q = alpha * b;
                }
                for j in 1..width {
                    alpha += self.target_scale * increments[j].0;
                    let basis = &self.bqn_basis[j * n_levels..(j + 1) * n_levels];
                    for (q, b) in buf.iter_mut().zip(basis) {
                        *q += alpha * b;
                    }
                }
                // Pinball loss `u * (tau - 1{u < 0})` and its derivative with
                // respect to each quantile, branch-free.
                let k = n_levels as f64;
                let inv_k = 1.0 / k;
                let mut loss = 0.0;
                for (q, &tau) in buf.iter_mut().zip(&self.bqn_levels) {
                    let u = y - *q;
                    let slope = tau - if u < 0.0 { 1.0 } else { 0.0 };
                    loss += slope * u;
                    *q = -slope * inv_k;
                }
                // alpha_j depends on raw_0 and on raw_i for every i <= j.
                let mut tail = 0.0;
                for i in (0..width).rev() {
                    let basis = &self.bqn_basis[i * n_levels..(i + 1) * n_levels];
                    tail += dot(basis, buf);
                    grad[i] = if i == 0 {
                        self.target_scale * tail
                    } else {
                        self.target_scale * increments[i].1 * tail
                    };
                }
                (loss / k, false)
            }
            HeadKind::HEN => {
                let (bin, clamped) = self.hen_bin(y);
                let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for (g, r) in grad.iter_mut().zip(raw) {
                    *g = exp_nonpositive(r - max);
                    total += *g;
                }
                let log_norm = max + total.ln();
                for g in grad.iter_mut() {
                    *g /= total;
                }
                grad[bin] -= 1.0;
                (log_norm - raw[bin], clamped)
            }
        }
    }

    /// Loss only.
    pub fn loss(&self, raw: &[f64], y: f64) -> f64 {
        let mut scratch = vec![0.0; raw.len()];
        self.loss_and_grad(raw, y, &mut scratch).0
    }
}
