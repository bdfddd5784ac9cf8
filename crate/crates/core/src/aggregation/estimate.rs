//! CRPS-minimizing estimation of the Vincentization coefficients on a
//! validation set, with the member forecasts held fixed.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::nelder_mead::{minimize, NelderMeadOptions};
use super::{AggMethod, EnsembleForecast, VICoefficients};
use crate::error::{Error, Result};
use crate::numeric::{softplus, softplus_inv};
use crate::scoring::{pinball, quantile_levels, DEFAULT_QUANTILE_GRID};

const CHUNK: usize = 256;

/// Result of a coefficient fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub coeffs: VICoefficients,
    /// Mean quantile-based CRPS on the validation set at `coeffs`.
    pub validation_crps: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Mean validation CRPS of `a + w0 * S_k` as a function of `(a, w0)`,
/// where `S_k` is the sum of member quantiles at level `k / (K + 1)`.
///
/// The objective is convex in `(a, w0)`: the quantiles are affine in the
/// coefficients and the pinball loss is convex in the quantile.
#[derive(Debug, Clone)]
pub struct ViObjective {
    levels: Vec<f64>,
    sums: Vec<f64>,
    obs: Vec<f64>,
    n_members: usize,
}

impl ViObjective {
    /// Builds the objective from validation ensembles using `K = 100` levels.
    pub fn new(valid_ens: &[EnsembleForecast], valid_obs: &[f64]) -> Result<Self> {
        Self::with_grid(valid_ens, valid_obs, DEFAULT_QUANTILE_GRID)
    }

    pub fn with_grid(valid_ens: &[EnsembleForecast], valid_obs: &[f64], k: usize) -> Result<Self> {
        if valid_ens.is_empty() {
            return Err(Error::domain("coefficient estimation needs validation cases"));
        }
        if valid_ens.len() != valid_obs.len() {
            return Err(Error::shape(format!(
                "{} validation ensembles but {} observations",
                valid_ens.len(),
                valid_obs.len()
            )));
        }
        let n = valid_ens[0].len();
        if valid_ens.iter().any(|e| e.len() != n) {
            return Err(Error::shape("validation ensembles differ in size"));
        }
        let levels = quantile_levels(k);
        let mut sums = Vec::with_capacity(valid_ens.len() * k);
        for ens in valid_ens {
            for &tau in &levels {
                let mut s = 0.0;
                for m in ens.members() {
                    s += m.quantile(tau)?;
                }
                sums.push(s);
            }
        }
        Self::from_quantile_sums(levels, sums, valid_obs.to_vec(), n)
    }

    /// Builds the objective from precomputed member-quantile sums, laid out
    /// case-major (`sums[case * K + k]`).
    pub fn from_quantile_sums(
        levels: Vec<f64>,
        sums: Vec<f64>,
        obs: Vec<f64>,
        n_members: usize,
    ) -> Result<Self> {
        if obs.is_empty() {
            return Err(Error::domain("coefficient estimation needs validation cases"));
        }
        if levels.len() < 2 || sums.len() != levels.len() * obs.len() {
            return Err(Error::shape("quantile sums do not match levels x cases"));
        }
        if n_members == 0 {
            return Err(Error::domain("ensemble size must be at least 1"));
        }
        Ok(Self {
            levels,
            sums,
            obs,
            n_members,
        })
    }

    pub fn n_members(&self) -> usize {
        self.n_members
    }

    pub fn n_cases(&self) -> usize {
        self.obs.len()
    }

    /// Mean CRPS at `(a, w0)`; `+inf` for `w0 <= 0`.
    pub fn value(&self, a: f64, w0: f64) -> f64 {
        if !(w0 > 0.0) || !a.is_finite() || !w0.is_finite() {
            return f64::INFINITY;
        }
        let k = self.levels.len();
        let partials: Vec<f64> = self
            .obs
            .par_chunks(CHUNK)
            .zip(self.sums.par_chunks(CHUNK * k))
            .map(|(obs, sums)| {
                let mut acc = 0.0;
                for (y, row) in obs.iter().zip(sums.chunks_exact(k)) {
                    let mut case = 0.0;
                    for (&tau, &s) in self.levels.iter().zip(row) {
                        case += pinball(tau, y - a - w0 * s);
                    }
                    acc += case;
                }
                acc
            })
            .collect();
        2.0 * partials.iter().sum::<f64>() / (k * self.obs.len()) as f64
    }

    /// Typical width of the averaged ensemble quantile range, used to size
    /// the initial simplex in the intercept direction.
    fn spread_scale(&self) -> f64 {
        let k = self.levels.len();
        let w = 1.0 / self.n_members as f64;
        let total: f64 = self
            .sums
            .chunks_exact(k)
            .map(|row| w * (row[k - 1] - row[0]))
            .sum();
        (total / self.obs.len() as f64).abs().max(1e-3)
    }

    /// Minimizes the objective over the free parameters of `method`, starting
    /// from `(0, 1/n)`. `w0` is optimized as `softplus(u)`; candidates with
    /// `w0 = 0` are rejected.
    pub fn estimate(&self, method: AggMethod) -> Estimate {
        let n = self.n_members;
        let start = VICoefficients::standard(n);
        if !method.needs_estimation() {
            return Estimate {
                coeffs: start,
                validation_crps: self.value(start.a, start.w0),
                iterations: 0,
                converged: true,
            };
        }
        let fit_a = method.estimates_intercept();
        let fit_w = method.estimates_weight();
        let decode = |x: &[f64]| -> VICoefficients {
            let mut c = start;
            let mut i = 0;
            if fit_a {
                c.a = x[i];
                i += 1;
            }
            if fit_w {
                c.w0 = softplus(x[i]);
            }
            c
        };
        let mut x0 = Vec::new();
        let mut step = Vec::new();
        if fit_a {
            x0.push(start.a);
            step.push(0.25 * self.spread_scale());
        }
        if fit_w {
            x0.push(softplus_inv(start.w0));
            step.push(0.5);
        }
        let objective = |x: &[f64]| {
            let c = decode(x);
            self.value(c.a, c.w0)
        };
        let opts = NelderMeadOptions::default();
        let first = minimize(objective, &x0, &step, opts);
        // One restart from the optimum with a smaller simplex guards against
        // premature collapse on the piecewise-linear objective.
        let small: Vec<f64> = step.iter().map(|s| 0.1 * s).collect();
        let second = minimize(objective, &first.x, &small, opts);
        let best = if second.f <= first.f { &second } else { &first };
        Estimate {
            coeffs: decode(&best.x),
            validation_crps: best.f,
            iterations: first.iterations + second.iterations,
            converged: best.converged,
        }
    }
}

/// Fits the free coefficients of `method` by minimizing the mean
/// quantile-based CRPS over the validation cases.
pub fn estimate_vi_coefficients(
    method: AggMethod,
    valid_ens: &[EnsembleForecast],
    valid_obs: &[f64],
) -> Result<Estimate> {
    Ok(ViObjective::new(valid_ens, valid_obs)?.estimate(method))
}

/// Coefficients as persisted to JSON: `{variant, a, w0, n, validation_crps}`,
/// where `variant` names the aggregation method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoredCoefficients {
    pub variant: AggMethod,
    pub a: f64,
    pub w0: f64,
    pub n: usize,
    #[serde(default)]
    pub validation_crps: Option<f64>,
}

impl StoredCoefficients {
    pub fn from_estimate(method: AggMethod, n: usize, estimate: &Estimate) -> Self {
        Self {
            variant: method,
            a: estimate.coeffs.a,
            w0: estimate.coeffs.w0,
            n,
            validation_crps: Some(estimate.validation_crps),
        }
    }

    pub fn coefficients(&self) -> Result<VICoefficients> {
        VICoefficients::new(self.a, self.w0)
    }
}
