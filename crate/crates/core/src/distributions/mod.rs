//! Forecast distribution representations.
//!
//! Every family exposes the same contract through [`ForecastDist`]: CDF,
//! quantile function, density where it exists, and seeded sampling. All
//! values are immutable once constructed and validated.

mod bernstein;
mod histogram;
mod mixture;
mod normal;
mod plq;
mod skew_normal;

pub use bernstein::{bernstein_basis, bernstein_eval, BernsteinQuantileDist};
pub use histogram::{HistogramDist, PROB_SUM_TOL};
pub use mixture::{MixtureDist, MIXTURE_QUANTILE_TOL};
pub use normal::NormalDist;
pub use plq::PiecewiseLinearQuantile;
pub use skew_normal::SkewNormalDist;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::seeded_rng;

/// Family tag of a [`ForecastDist`], as written in the JSON `family` field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Normal,
    SkewNormal,
    Bernstein,
    Histogram,
    Mixture,
    PiecewiseLinearQuantile,
}

/// A univariate forecast distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ForecastDist {
    Normal(NormalDist),
    SkewNormal(SkewNormalDist),
    Bernstein(BernsteinQuantileDist),
    Histogram(HistogramDist),
    Mixture(MixtureDist),
    PiecewiseLinearQuantile(PiecewiseLinearQuantile),
}

impl From<NormalDist> for ForecastDist {
    fn from(d: NormalDist) -> Self {
        ForecastDist::Normal(d)
    }
}

impl From<SkewNormalDist> for ForecastDist {
    fn from(d: SkewNormalDist) -> Self {
        ForecastDist::SkewNormal(d)
    }
}

impl From<BernsteinQuantileDist> for ForecastDist {
    fn from(d: BernsteinQuantileDist) -> Self {
        ForecastDist::Bernstein(d)
    }
}

impl From<HistogramDist> for ForecastDist {
    fn from(d: HistogramDist) -> Self {
        ForecastDist::Histogram(d)
    }
}

impl From<MixtureDist> for ForecastDist {
    fn from(d: MixtureDist) -> Self {
        ForecastDist::Mixture(d)
    }
}

impl From<PiecewiseLinearQuantile> for ForecastDist {
    fn from(d: PiecewiseLinearQuantile) -> Self {
        ForecastDist::PiecewiseLinearQuantile(d)
    }
}

impl ForecastDist {
    pub fn family(&self) -> Family {
        match self {
            ForecastDist::Normal(_) => Family::Normal,
            ForecastDist::SkewNormal(_) => Family::SkewNormal,
            ForecastDist::Bernstein(_) => Family::Bernstein,
            ForecastDist::Histogram(_) => Family::Histogram,
            ForecastDist::Mixture(_) => Family::Mixture,
            ForecastDist::PiecewiseLinearQuantile(_) => Family::PiecewiseLinearQuantile,
        }
    }

    /// `P(Y <= z)`.
    pub fn cdf(&self, z: f64) -> f64 {
        match self {
            ForecastDist::Normal(d) => d.cdf(z),
            ForecastDist::SkewNormal(d) => d.cdf(z),
            ForecastDist::Bernstein(d) => d.cdf(z),
            ForecastDist::Histogram(d) => d.cdf(z),
            ForecastDist::Mixture(d) => d.cdf(z),
            ForecastDist::PiecewiseLinearQuantile(d) => d.cdf(z),
        }
    }

    /// `P(Y < z)`; equal to [`Self::cdf`] wherever the CDF is continuous.
    pub fn cdf_left(&self, z: f64) -> f64 {
        match self {
            ForecastDist::Bernstein(d) => d.cdf_left(z),
            ForecastDist::Mixture(d) => d.cdf_left(z),
            ForecastDist::PiecewiseLinearQuantile(d) => d.cdf_left(z),
            other => other.cdf(z),
        }
    }

    /// CDF together with the density at `z` (`None` at an atom).
    pub fn cdf_pdf(&self, z: f64) -> (f64, Option<f64>) {
        match self {
            ForecastDist::Normal(d) => (d.cdf(z), Some(d.pdf(z))),
            ForecastDist::SkewNormal(d) => (d.cdf(z), Some(d.pdf(z))),
            ForecastDist::Bernstein(d) => d.cdf_pdf(z),
            ForecastDist::Histogram(d) => (d.cdf(z), Some(d.pdf(z))),
            ForecastDist::Mixture(d) => d.cdf_pdf(z),
            ForecastDist::PiecewiseLinearQuantile(d) => (d.cdf(z), d.pdf(z)),
        }
    }

    pub fn pdf(&self, z: f64) -> Option<f64> {
        self.cdf_pdf(z).1
    }

    /// Quantile function. Families with unbounded support accept only `p` in `(0, 1)`.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if p.is_nan() {
            return Err(Error::domain("quantile level is NaN"));
        }
        match self {
            ForecastDist::Normal(d) => d.quantile(p),
            ForecastDist::SkewNormal(d) => d.quantile(p),
            ForecastDist::Bernstein(d) => d.quantile(p),
            ForecastDist::Histogram(d) => d.quantile(p),
            ForecastDist::Mixture(d) => d.quantile(p),
            ForecastDist::PiecewiseLinearQuantile(d) => d.quantile(p),
        }
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            ForecastDist::Normal(d) => d.sample_one(rng),
            ForecastDist::SkewNormal(d) => d.sample_one(rng),
            ForecastDist::Bernstein(d) => d.sample_one(rng),
            ForecastDist::Histogram(d) => d.sample_one(rng),
            ForecastDist::Mixture(d) => d.sample_one(rng),
            ForecastDist::PiecewiseLinearQuantile(d) => d.sample_one(rng),
        }
    }

    /// `m` i.i.d. draws, reproducible for a given seed.
    pub fn sample(&self, m: usize, rng_seed: u64) -> Result<Vec<f64>> {
        if m == 0 {
            return Err(Error::domain("sample size must be at least 1"));
        }
        let mut rng = seeded_rng(rng_seed);
        Ok((0..m).map(|_| self.sample_one(&mut rng)).collect())
    }

    pub fn mean(&self) -> Option<f64> {
        match self {
            ForecastDist::Normal(d) => Some(d.mu()),
            ForecastDist::SkewNormal(d) => Some(d.mean()),
            ForecastDist::Bernstein(d) => Some(d.mean()),
            ForecastDist::Histogram(d) => Some(d.mean()),
            ForecastDist::Mixture(d) => d.mean(),
            ForecastDist::PiecewiseLinearQuantile(d) => Some(d.mean()),
        }
    }

    pub fn variance(&self) -> Option<f64> {
        match self {
            ForecastDist::Normal(d) => Some(d.variance()),
            ForecastDist::SkewNormal(d) => Some(d.variance()),
            ForecastDist::Histogram(d) => Some(d.variance()),
            ForecastDist::Mixture(d) => d.variance(),
            _ => None,
        }
    }

    /// An upper bound on the density (infinite when unknown or at an atom).
    pub fn density_bound(&self) -> f64 {
        const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
        match self {
            ForecastDist::Normal(d) => INV_SQRT_2PI / d.sigma(),
            ForecastDist::SkewNormal(d) => 2.0 * INV_SQRT_2PI / d.scale(),
            ForecastDist::Bernstein(d) => {
                // Q' is a convex combination of d * (alpha_{j+1} - alpha_j).
                let min_step = d.coeffs().windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
                1.0 / (d.degree() as f64 * min_step)
            }
            ForecastDist::Histogram(d) => d
                .probs()
                .iter()
                .zip(d.edges().windows(2))
                .map(|(p, e)| p / (e[1] - e[0]))
                .fold(0.0, f64::max),
            ForecastDist::PiecewiseLinearQuantile(d) => d
                .levels()
                .windows(2)
                .zip(d.values().windows(2))
                .map(|(l, v)| (l[1] - l[0]) / (v[1] - v[0]))
                .fold(0.0, f64::max),
            ForecastDist::Mixture(m) => m
                .components()
                .iter()
                .zip(m.weights())
                .filter(|(_, &w)| w > 0.0)
                .map(|(c, &w)| w * c.density_bound())
                .sum(),
        }
    }

    /// Whether the quantile function is defined at 0 and 1.
    pub fn has_bounded_support(&self) -> bool {
        match self {
            ForecastDist::Normal(_) | ForecastDist::SkewNormal(_) => false,
            ForecastDist::Mixture(m) => m.components().iter().all(|c| c.has_bounded_support()),
            _ => true,
        }
    }
}
