//! Seeded simulation scenarios with known optimal forecasts.
//!
//! * `S1`: `X ~ N(0, I_5)`, `Y = X'b1 + e * exp(X'b2)` with `e ~ N(0, 1)` and
//!   coefficients `b1 ~ N(0, I)`, `b2 ~ N(0, 0.45^2 I)` drawn once per run.
//! * `S2`: `X ~ U(0, 1)^5`, `Y = 10 sin(2 pi X1 X2) + 20 (X3 - 0.5)^2 + 10 X4 + 5 X5 + e`
//!   with `e ~ SkewNormal(0, 1, -5)`.
//! * `S3`: `X ~ U(0, 1)^5`, a fair coin `pi` selects `10 sin(2 pi X1 X2) + 10 X4 + N(0, 1.5^2)`
//!   or `20 (X3 - 0.5)^2 + 5 X5 + N(0, 1)`.
//! * `S4`: `X1 ~ U(0, 10)`, a fair coin selects `sin(X1) + N(0, 0.3^2)` or
//!   `2 sin(1.5 X1 + 1) + N(0, 0.8^2)`.
//!
//! The optimal forecast is the conditional law of `Y` given `X` and, for the
//! mixture scenarios, the latent coin.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::distributions::{ForecastDist, NormalDist, SkewNormalDist};
use crate::error::{Error, Result};
use crate::netlab::Dataset;
use crate::numeric::{seeded_rng, SeededRng};
use crate::scoring::{crps_from_quantiles, crps_normal, quantile_levels, DEFAULT_QUANTILE_GRID};

/// Shape of the skewed noise in `S2`.
pub const S2_NOISE_SHAPE: f64 = -5.0;
/// Standard deviation of the heteroscedasticity coefficients in `S1`.
pub const S1_BETA2_SD: f64 = 0.45;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScenarioId {
    S1,
    S2,
    S3,
    S4,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 4] = [ScenarioId::S1, ScenarioId::S2, ScenarioId::S3, ScenarioId::S4];

    pub fn n_features(self) -> usize {
        match self {
            ScenarioId::S4 => 1,
            _ => 5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ScenarioId::S1 => "S1",
            ScenarioId::S2 => "S2",
            ScenarioId::S3 => "S3",
            ScenarioId::S4 => "S4",
        }
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ScenarioId::ALL
            .into_iter()
            .find(|id| id.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown scenario `{s}` (expected S1..S4)")))
    }
}

fn default_n_train() -> usize {
    6000
}
fn default_n_valid() -> usize {
    2000
}
fn default_n_test() -> usize {
    10000
}
fn default_noise_scale() -> f64 {
    1.0
}

/// What to simulate. The validation cases are generated in addition to the
/// `n_train` training cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub id: ScenarioId,
    #[serde(default = "default_n_train")]
    pub n_train: usize,
    #[serde(default = "default_n_valid")]
    pub n_valid: usize,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    #[serde(default)]
    pub seed: u64,
    /// Multiplies the noise scale of every scenario.
    #[serde(default = "default_noise_scale")]
    pub noise_scale: f64,
    /// `S1` only: force `b2 = 0`, i.e. homoscedastic unit-variance noise.
    #[serde(default)]
    pub homoscedastic: bool,
}

impl ScenarioSpec {
    pub fn new(id: ScenarioId, seed: u64) -> Self {
        Self {
            id,
            n_train: default_n_train(),
            n_valid: default_n_valid(),
            n_test: default_n_test(),
            seed,
            noise_scale: default_noise_scale(),
            homoscedastic: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (key, n) in [("n_train", self.n_train), ("n_valid", self.n_valid), ("n_test", self.n_test)] {
            if n == 0 {
                return Err(Error::config(format!("scenario.{key}"), "must be at least 1"));
            }
        }
        if !(self.noise_scale > 0.0) || !self.noise_scale.is_finite() {
            return Err(Error::config("scenario.noise_scale", "must be positive and finite"));
        }
        Ok(())
    }
}

/// Unobserved quantities needed to recompute the optimal forecasts.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LatentState {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta1: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta2: Option<Vec<f64>>,
    /// Mixture indicators per split; empty for scenarios without a mixture.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub pi1_train: Vec<bool>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub pi1_valid: Vec<bool>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub pi1_test: Vec<bool>,
}

/// One generated case.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioCase {
    pub features: Vec<f64>,
    pub target: f64,
    pub optimal: ForecastDist,
    pub pi1: Option<bool>,
}

/// Output of [`generate`].
#[derive(Debug, Clone)]
pub struct ScenarioData {
    pub spec: ScenarioSpec,
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
    pub optimal_test: Vec<ForecastDist>,
    pub latent: LatentState,
}

struct Generator {
    spec: ScenarioSpec,
    beta1: Vec<f64>,
    beta2: Vec<f64>,
    rng: SeededRng,
}

fn uniform_features(rng: &mut SeededRng, k: usize, upper: f64) -> Vec<f64> {
    (0..k).map(|_| upper * rng.gen::<f64>()).collect()
}

fn friedman_parts(x: &[f64]) -> (f64, f64, f64, f64) {
    (
        10.0 * (2.0 * PI * x[0] * x[1]).sin(),
        20.0 * (x[2] - 0.5).powi(2),
        10.0 * x[3],
        5.0 * x[4],
    )
}

impl Generator {
    fn new(spec: &ScenarioSpec) -> Self {
        let mut rng = seeded_rng(spec.seed);
        let (mut beta1, mut beta2) = (Vec::new(), Vec::new());
        if spec.id == ScenarioId::S1 {
            beta1 = (0..5).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            beta2 = (0..5)
                .map(|_| S1_BETA2_SD * rng.sample::<f64, _>(StandardNormal))
                .collect();
            if spec.homoscedastic {
                beta2 = vec![0.0; 5];
            }
        }
        Self {
            spec: spec.clone(),
            beta1,
            beta2,
            rng,
        }
    }

    fn next_case(&mut self) -> Result<ScenarioCase> {
        let s = self.spec.noise_scale;
        let rng = &mut self.rng;
        let case = match self.spec.id {
            ScenarioId::S1 => {
                let x: Vec<f64> = (0..5).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                let mean: f64 = x.iter().zip(&self.beta1).map(|(a, b)| a * b).sum();
                let log_sd: f64 = x.iter().zip(&self.beta2).map(|(a, b)| a * b).sum();
                let optimal = NormalDist::new(mean, s * log_sd.exp())?;
                let target = optimal.sample_one(rng);
                ScenarioCase {
                    features: x,
                    target,
                    optimal: optimal.into(),
                    pi1: None,
                }
            }
            ScenarioId::S2 => {
                let x = uniform_features(rng, 5, 1.0);
                let (a, b, c, d) = friedman_parts(&x);
                let optimal = SkewNormalDist::new(a + b + c + d, s, S2_NOISE_SHAPE)?;
                let target = optimal.sample_one(rng);
                ScenarioCase {
                    features: x,
                    target,
                    optimal: optimal.into(),
                    pi1: None,
                }
            }
            ScenarioId::S3 => {
                let x = uniform_features(rng, 5, 1.0);
                let pi1 = rng.gen::<bool>();
                let (a, b, c, d) = friedman_parts(&x);
                let optimal = if pi1 {
                    NormalDist::new(a + c, s * 1.5)?
                } else {
                    NormalDist::new(b + d, s)?
                };
                let target = optimal.sample_one(rng);
                ScenarioCase {
                    features: x,
                    target,
                    optimal: optimal.into(),
                    pi1: Some(pi1),
                }
            }
            ScenarioId::S4 => {
                let x = uniform_features(rng, 1, 10.0);
                let pi1 = rng.gen::<bool>();
                let optimal = if pi1 {
                    NormalDist::new(x[0].sin(), s * 0.3)?
                } else {
                    NormalDist::new(2.0 * (1.5 * x[0] + 1.0).sin(), s * 0.8)?
                };
                let target = optimal.sample_one(rng);
                ScenarioCase {
                    features: x,
                    target,
                    optimal: optimal.into(),
                    pi1: Some(pi1),
                }
            }
        };
        Ok(case)
    }

    fn split(&mut self, n: usize) -> Result<(Dataset, Vec<ForecastDist>, Vec<bool>)> {
        let k = self.spec.id.n_features();
        let mut features = Vec::with_capacity(n * k);
        let mut targets = Vec::with_capacity(n);
        let mut optimal = Vec::with_capacity(n);
        let mut pis = Vec::new();
        for _ in 0..n {
            let case = self.next_case()?;
            features.extend(case.features);
            targets.push(case.target);
            optimal.push(case.optimal);
            if let Some(p) = case.pi1 {
                pis.push(p);
            }
        }
        Ok((Dataset::new(k, features, targets)?, optimal, pis))
    }
}

/// Generates training, validation and test sets, in that order, from one
/// seeded stream. Identical specs give identical data.
pub fn generate(spec: &ScenarioSpec) -> Result<ScenarioData> {
    spec.validate()?;
    let mut gen = Generator::new(spec);
    let (train, _, pi1_train) = gen.split(spec.n_train)?;
    let (valid, _, pi1_valid) = gen.split(spec.n_valid)?;
    let (test, optimal_test, pi1_test) = gen.split(spec.n_test)?;
    let latent = LatentState {
        beta1: (spec.id == ScenarioId::S1).then(|| gen.beta1.clone()),
        beta2: (spec.id == ScenarioId::S1).then(|| gen.beta2.clone()),
        pi1_train,
        pi1_valid,
        pi1_test,
    };
    Ok(ScenarioData {
        spec: spec.clone(),
        train,
        valid,
        test,
        optimal_test,
        latent,
    })
}

/// Per-case CRPS of the optimal forecasts: closed form for normal laws,
/// the `K = 100` quantile approximation for skew-normal ones (with the
/// standardized quantiles computed once per shape).
pub fn optimal_case_crps(optimal: &[ForecastDist], obs: &[f64]) -> Result<Vec<f64>> {
    if optimal.len() != obs.len() {
        return Err(Error::shape(format!(
            "{} optimal forecasts but {} observations",
            optimal.len(),
            obs.len()
        )));
    }
    let levels = quantile_levels(DEFAULT_QUANTILE_GRID);
    let mut cached: Option<(f64, Vec<f64>)> = None;
    let mut buf = vec![0.0; levels.len()];
    optimal
        .iter()
        .zip(obs)
        .map(|(dist, &y)| match dist {
            ForecastDist::Normal(d) => crps_normal(d.mu(), d.sigma(), y),
            ForecastDist::SkewNormal(d) => {
                if cached.as_ref().map_or(true, |(shape, _)| *shape != d.shape()) {
                    let q = levels.iter().map(|&p| d.standard_quantile(p)).collect();
                    cached = Some((d.shape(), q));
                }
                let std_q = &cached.as_ref().expect("cache filled above").1;
                for (b, z) in buf.iter_mut().zip(std_q) {
                    *b = d.location() + d.scale() * z;
                }
                Ok(crps_from_quantiles(&levels, &buf, y))
            }
            other => crate::scoring::crps(other, y, 0),
        })
        .collect()
}

/// Mean CRPS of the optimal forecasts over the test set.
pub fn optimal_crps(data: &ScenarioData) -> Result<f64> {
    let scores = optimal_case_crps(&data.optimal_test, data.test.targets())?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Writes a dataset as CSV with columns `f1..fk, y`.
pub fn write_dataset_csv<W: Write>(writer: W, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = (1..=data.n_features()).map(|j| format!("f{j}")).collect();
    header.push("y".into());
    w.write_record(&header)?;
    for (row, y) in data.rows().zip(data.targets()) {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.push(y.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
