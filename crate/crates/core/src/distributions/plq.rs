use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Quantile function that interpolates linearly between `(levels[k], values[k])`.
///
/// Flat runs of `values` are point masses; the CDF is the right-continuous
/// generalized inverse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PlqRepr")]
pub struct PiecewiseLinearQuantile {
    levels: Vec<f64>,
    values: Vec<f64>,
}

#[derive(Deserialize)]
struct PlqRepr {
    levels: Vec<f64>,
    values: Vec<f64>,
}

impl TryFrom<PlqRepr> for PiecewiseLinearQuantile {
    type Error = Error;
    fn try_from(r: PlqRepr) -> Result<Self> {
        PiecewiseLinearQuantile::new(r.levels, r.values)
    }
}

impl PiecewiseLinearQuantile {
    pub fn new(levels: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if levels.len() < 2 || levels.len() != values.len() {
            return Err(Error::invalid(format!(
                "piecewise-linear quantile needs >= 2 knots of equal length, got {} levels and {} values",
                levels.len(),
                values.len()
            )));
        }
        if levels[0] != 0.0 || *levels.last().unwrap() != 1.0 {
            return Err(Error::invalid("quantile levels must start at 0 and end at 1"));
        }
        super::histogram::check_strictly_increasing(&levels, "quantile levels")?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("quantile values must be finite"));
        }
        if values.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid("quantile values must be nondecreasing"));
        }
        Ok(Self { levels, values })
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn support(&self) -> (f64, f64) {
        (self.values[0], *self.values.last().unwrap())
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::domain(format!(
                "quantile requires p in [0, 1], got {p}"
            )));
        }
        let k = self
            .levels
            .partition_point(|&l| l < p)
            .clamp(1, self.levels.len() - 1);
        let (p0, p1) = (self.levels[k - 1], self.levels[k]);
        let (v0, v1) = (self.values[k - 1], self.values[k]);
        Ok(v0 + (v1 - v0) * (p - p0) / (p1 - p0))
    }

    /// `sup { p : Q(p) <= z }`.
    pub fn cdf(&self, z: f64) -> f64 {
        let (lo, hi) = self.support();
        if z < lo {
            return 0.0;
        }
        if z >= hi {
            return 1.0;
        }
        let k = self.values.partition_point(|&v| v <= z) - 1;
        self.interpolate_level(k, z)
    }

    /// `sup { p : Q(p) < z }`, the left limit of the CDF.
    pub fn cdf_left(&self, z: f64) -> f64 {
        let (lo, hi) = self.support();
        if z <= lo {
            return 0.0;
        }
        if z > hi {
            return 1.0;
        }
        let k = self.values.partition_point(|&v| v < z) - 1;
        self.interpolate_level(k, z)
    }

    fn interpolate_level(&self, k: usize, z: f64) -> f64 {
        if k + 1 >= self.values.len() {
            return 1.0;
        }
        let (v0, v1) = (self.values[k], self.values[k + 1]);
        let (p0, p1) = (self.levels[k], self.levels[k + 1]);
        if v1 <= v0 {
            return p1;
        }
        p0 + (p1 - p0) * ((z - v0) / (v1 - v0)).clamp(0.0, 1.0)
    }

    pub fn pdf(&self, z: f64) -> Option<f64> {
        let (lo, hi) = self.support();
        if z < lo || z >= hi {
            return Some(0.0);
        }
        let k = self.values.partition_point(|&v| v <= z) - 1;
        let (v0, v1) = (self.values[k], self.values[k + 1]);
        if v1 <= v0 {
            return None;
        }
        Some((self.levels[k + 1] - self.levels[k]) / (v1 - v0))
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.quantile(rng.gen::<f64>()).expect("u in [0, 1)")
    }

    /// Breakpoints `(z, F(z))` of the CDF; consecutive equal `z` mark a jump.
    pub fn cdf_knots(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.values.iter().copied().zip(self.levels.iter().copied())
    }

    pub fn mean(&self) -> f64 {
        self.levels
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(p, v)| (p[1] - p[0]) * 0.5 * (v[0] + v[1]))
            .sum()
    }
}
