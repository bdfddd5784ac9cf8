use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the total probability of a histogram or mixture.
pub const PROB_SUM_TOL: f64 = 1e-12;

/// Piecewise uniform distribution: bin `l` is `[edges[l], edges[l+1])` with mass `probs[l]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HistogramRepr")]
pub struct HistogramDist {
    edges: Vec<f64>,
    probs: Vec<f64>,
    #[serde(skip)]
    cumulative: Vec<f64>,
}

#[derive(Deserialize)]
struct HistogramRepr {
    edges: Vec<f64>,
    probs: Vec<f64>,
}

impl TryFrom<HistogramRepr> for HistogramDist {
    type Error = Error;
    fn try_from(r: HistogramRepr) -> Result<Self> {
        HistogramDist::new(r.edges, r.probs)
    }
}

pub(crate) fn check_strictly_increasing(values: &[f64], what: &str) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("{what} must be finite")));
    }
    if values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid(format!("{what} must be strictly increasing")));
    }
    Ok(())
}

impl HistogramDist {
    pub fn new(edges: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() || edges.len() != probs.len() + 1 {
            return Err(Error::invalid(format!(
                "histogram needs len(edges) = len(probs) + 1 >= 2, got {} edges and {} probs",
                edges.len(),
                probs.len()
            )));
        }
        check_strictly_increasing(&edges, "histogram edges")?;
        if probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::invalid("histogram probabilities must be nonnegative"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::invalid(format!(
                "histogram probabilities sum to {total}, expected 1"
            )));
        }
        let mut cumulative = Vec::with_capacity(edges.len());
        let mut acc = 0.0;
        cumulative.push(0.0);
        for p in &probs {
            acc += p;
            cumulative.push(acc.min(1.0));
        }
        *cumulative.last_mut().unwrap() = 1.0;
        Ok(Self {
            edges,
            probs,
            cumulative,
        })
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Accumulated bin probabilities `0 = P_0 <= P_1 <= ... <= P_N = 1`.
    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    pub fn n_bins(&self) -> usize {
        self.probs.len()
    }

    pub fn support(&self) -> (f64, f64) {
        (self.edges[0], self.edges[self.n_bins()])
    }

    /// Index of the bin containing `z`, or `None` outside the support.
    pub fn bin_of(&self, z: f64) -> Option<usize> {
        let (lo, hi) = self.support();
        if z < lo || z > hi {
            return None;
        }
        let idx = self.edges.partition_point(|&b| b <= z);
        Some(idx.clamp(1, self.n_bins()) - 1)
    }

    pub fn cdf(&self, z: f64) -> f64 {
        let (lo, hi) = self.support();
        if z <= lo {
            return 0.0;
        }
        if z >= hi {
            return 1.0;
        }
        let l = self.bin_of(z).expect("inside support");
        let (left, right) = (self.edges[l], self.edges[l + 1]);
        self.cumulative[l] + self.probs[l] * (z - left) / (right - left)
    }

    pub fn pdf(&self, z: f64) -> f64 {
        match self.bin_of(z) {
            Some(l) if z < self.edges[self.n_bins()] => {
                self.probs[l] / (self.edges[l + 1] - self.edges[l])
            }
            _ => 0.0,
        }
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::domain(format!(
                "histogram quantile requires p in [0, 1], got {p}"
            )));
        }
        if p == 0.0 {
            let first = self.probs.iter().position(|&q| q > 0.0).unwrap_or(0);
            return Ok(self.edges[first]);
        }
        let l = self.cumulative.partition_point(|&c| c < p).clamp(1, self.n_bins());
        let (left, right) = (self.edges[l - 1], self.edges[l]);
        let mass = self.probs[l - 1];
        if mass <= 0.0 {
            return Ok(right);
        }
        let frac = ((p - self.cumulative[l - 1]) / mass).clamp(0.0, 1.0);
        Ok(left + (right - left) * frac)
    }

    /// [`quantile`](Self::quantile) for ascending levels: `cursor` carries
    /// the bin search across calls and must start at 0.
    pub fn quantile_ascending(&self, p: f64, cursor: &mut usize) -> f64 {
        if p <= 0.0 {
            let first = self.probs.iter().position(|&q| q > 0.0).unwrap_or(0);
            return self.edges[first];
        }
        while *cursor < self.cumulative.len() && self.cumulative[*cursor] < p {
            *cursor += 1;
        }
        let l = (*cursor).clamp(1, self.n_bins());
        let (left, right) = (self.edges[l - 1], self.edges[l]);
        let mass = self.probs[l - 1];
        if mass <= 0.0 {
            return right;
        }
        let frac = ((p - self.cumulative[l - 1]) / mass).clamp(0.0, 1.0);
        left + (right - left) * frac
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.gen();
        let x = self.quantile(u).expect("u in [0, 1)");
        // Rounding can land exactly on the upper edge for u just below 1.
        let hi = self.edges[self.n_bins()];
        if x >= hi {
            hi - (hi - self.edges[self.n_bins() - 1]) * f64::EPSILON
        } else {
            x
        }
    }

    /// Breakpoints `(z, F(z))` of the piecewise-linear CDF.
    pub fn cdf_knots(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.edges.iter().copied().zip(self.cumulative.iter().copied())
    }

    pub fn mean(&self) -> f64 {
        self.edges
            .windows(2)
            .zip(&self.probs)
            .map(|(w, p)| p * 0.5 * (w[0] + w[1]))
            .sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        let second: f64 = self
            .edges
            .windows(2)
            .zip(&self.probs)
            .map(|(w, p)| p * (w[0] * w[0] + w[0] * w[1] + w[1] * w[1]) / 3.0)
            .sum();
        second - m * m
    }
}
