use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{std_normal_cdf, std_normal_pdf, std_normal_quantile};

/// Normal distribution with location `mu` and standard deviation `sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NormalRepr")]
pub struct NormalDist {
    mu: f64,
    sigma: f64,
}

#[derive(Deserialize)]
struct NormalRepr {
    mu: f64,
    sigma: f64,
}

impl TryFrom<NormalRepr> for NormalDist {
    type Error = Error;
    fn try_from(r: NormalRepr) -> Result<Self> {
        NormalDist::new(r.mu, r.sigma)
    }
}

impl NormalDist {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        if !mu.is_finite() {
            return Err(Error::invalid(format!("normal location must be finite, got {mu}")));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::invalid(format!("normal scale must be positive, got {sigma}")));
        }
        Ok(Self { mu, sigma })
    }

    pub fn standard() -> Self {
        Self { mu: 0.0, sigma: 1.0 }
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn cdf(&self, z: f64) -> f64 {
        std_normal_cdf((z - self.mu) / self.sigma)
    }

    pub fn pdf(&self, z: f64) -> f64 {
        std_normal_pdf((z - self.mu) / self.sigma) / self.sigma
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::domain(format!(
                "normal quantile requires p in (0, 1), got {p}"
            )));
        }
        Ok(self.mu + self.sigma * std_normal_quantile(p))
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        self.mu + self.sigma * z
    }

    pub fn variance(&self) -> f64 {
        self.sigma * self.sigma
    }
}
