use rand::Rng;
use serde::{Deserialize, Serialize};

use super::histogram::PROB_SUM_TOL;
use super::ForecastDist;
use crate::error::{Error, Result};
use crate::numeric::solve_monotone_from;

/// Tolerance in `z` for the mixture quantile.
pub const MIXTURE_QUANTILE_TOL: f64 = 1e-10;

/// Finite mixture `sum_i w_i F_i` of forecast distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MixtureRepr")]
pub struct MixtureDist {
    components: Vec<ForecastDist>,
    weights: Vec<f64>,
}

#[derive(Deserialize)]
struct MixtureRepr {
    components: Vec<ForecastDist>,
    weights: Vec<f64>,
}

impl TryFrom<MixtureRepr> for MixtureDist {
    type Error = Error;
    fn try_from(r: MixtureRepr) -> Result<Self> {
        MixtureDist::new(r.components, r.weights)
    }
}

impl MixtureDist {
    pub fn new(components: Vec<ForecastDist>, weights: Vec<f64>) -> Result<Self> {
        if components.is_empty() || components.len() != weights.len() {
            return Err(Error::invalid(format!(
                "mixture needs one weight per component, got {} components and {} weights",
                components.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid("mixture weights must be nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::invalid(format!(
                "mixture weights sum to {total}, expected 1"
            )));
        }
        Ok(Self {
            components,
            weights,
        })
    }

    /// Equally weighted mixture.
    pub fn equal(components: Vec<ForecastDist>) -> Result<Self> {
        let n = components.len();
        if n == 0 {
            return Err(Error::invalid("mixture needs at least one component"));
        }
        let w = 1.0 / n as f64;
        Self::new(components, vec![w; n])
    }

    pub fn components(&self) -> &[ForecastDist] {
        &self.components
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn active(&self) -> impl Iterator<Item = (&ForecastDist, f64)> {
        self.components
            .iter()
            .zip(self.weights.iter().copied())
            .filter(|(_, w)| *w > 0.0)
    }

    pub fn cdf(&self, z: f64) -> f64 {
        self.active().map(|(c, w)| w * c.cdf(z)).sum::<f64>().min(1.0)
    }

    pub fn cdf_left(&self, z: f64) -> f64 {
        self.active().map(|(c, w)| w * c.cdf_left(z)).sum::<f64>().min(1.0)
    }

    /// `(F(z), f(z))`; the density is `None` if any active component lacks one at `z`.
    pub fn cdf_pdf(&self, z: f64) -> (f64, Option<f64>) {
        let mut cdf = 0.0;
        let mut pdf = Some(0.0);
        for (c, w) in self.active() {
            let (f, d) = c.cdf_pdf(z);
            cdf += w * f;
            pdf = match (pdf, d) {
                (Some(acc), Some(d)) => Some(acc + w * d),
                _ => None,
            };
        }
        (cdf.min(1.0), pdf)
    }

    /// Generalized inverse of the mixture CDF. The root lies between the
    /// smallest and largest component quantiles at `p`; it is refined by
    /// bisection, accelerated with Newton steps where the density exists and
    /// started from the weighted average of the component quantiles.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::domain(format!(
                "mixture quantile requires p in [0, 1], got {p}"
            )));
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut start = 0.0;
        for (c, w) in self.active() {
            let q = c.quantile(p)?;
            lo = lo.min(q);
            hi = hi.max(q);
            start += w * q;
        }
        if p == 0.0 {
            return Ok(lo);
        }
        if p == 1.0 {
            return Ok(hi);
        }
        if hi - lo <= MIXTURE_QUANTILE_TOL {
            return Ok(lo);
        }
        Ok(solve_monotone_from(
            |z| self.cdf_pdf(z),
            p,
            lo,
            hi,
            MIXTURE_QUANTILE_TOL,
            start,
        ))
    }

    /// Draws a component by its weight, then a value from that component.
    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut chosen = self.components.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc && *w > 0.0 {
                chosen = i;
                break;
            }
        }
        while self.weights[chosen] == 0.0 && chosen > 0 {
            chosen -= 1;
        }
        self.components[chosen].sample_one(rng)
    }

    pub fn mean(&self) -> Option<f64> {
        self.active()
            .map(|(c, w)| c.mean().map(|m| w * m))
            .sum::<Option<f64>>()
    }

    /// Law of total variance over the components.
    pub fn variance(&self) -> Option<f64> {
        let mean = self.mean()?;
        self.active()
            .map(|(c, w)| {
                let m = c.mean()?;
                let v = c.variance()?;
                Some(w * (v + (m - mean) * (m - mean)))
            })
            .sum::<Option<f64>>()
    }
}
