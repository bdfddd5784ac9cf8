//! Proper scoring, calibration diagnostics and skill scores.
//!
//! CRPS is available in closed form for normal forecasts, exactly for the
//! piecewise-linear CDFs of histogram and piecewise-linear quantile forecasts,
//! from samples, and from equidistant quantiles. [`crps`] picks the
//! evaluation route used throughout the study for each family.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::distributions::{ForecastDist, HistogramDist, PiecewiseLinearQuantile};
use crate::error::{Error, Result};
use crate::numeric::{seeded_rng, std_normal_cdf, std_normal_pdf, FRAC_1_SQRT_PI};

/// Nominal level of the central prediction intervals, 19/21.
pub const NOMINAL_PI_LEVEL: f64 = 19.0 / 21.0;
/// Number of equidistant quantiles used for quantile-based CRPS evaluation.
pub const DEFAULT_QUANTILE_GRID: usize = 100;
/// Number of draws used to evaluate mixture (linear pool) forecasts.
pub const MIXTURE_SAMPLE_SIZE: usize = 1000;
/// Number of equal-width bins of the PIT histograms in reports.
pub const PIT_BINS: usize = 21;

/// A CDF increase below this threshold around the observation is treated as
/// continuous by [`pit`].
const PIT_JUMP_THRESHOLD: f64 = 1e-6;

/// Closed-form CRPS of `N(mu, sigma^2)` at `y`.
pub fn crps_normal(mu: f64, sigma: f64, y: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::domain(format!("crps_normal needs sigma > 0, got {sigma}")));
    }
    let z = (y - mu) / sigma;
    Ok(sigma * (z * (2.0 * std_normal_cdf(z) - 1.0) + 2.0 * std_normal_pdf(z) - FRAC_1_SQRT_PI))
}

/// Partial derivatives `(dCRPS/dmu, dCRPS/dsigma)` of [`crps_normal`].
pub fn crps_normal_grad(mu: f64, sigma: f64, y: f64) -> (f64, f64) {
    let z = (y - mu) / sigma;
    (
        -(2.0 * std_normal_cdf(z) - 1.0),
        2.0 * std_normal_pdf(z) - FRAC_1_SQRT_PI,
    )
}

/// Sample CRPS `mean|x - y| - mean|x - x'| / 2`, in `O(m log m)`.
pub fn crps_sample(sample: &[f64], y: f64) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::domain("crps_sample needs a nonempty sample"));
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    Ok(crps_sorted_sample(&sorted, y))
}

/// As [`crps_sample`] for an already ascending sample.
pub fn crps_sorted_sample(sorted: &[f64], y: f64) -> f64 {
    let m = sorted.len() as f64;
    let mut abs_err = 0.0;
    let mut spread = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        abs_err += (x - y).abs();
        spread += x * (2.0 * i as f64 - m + 1.0);
    }
    (abs_err / m - spread / (m * m)).max(0.0)
}

/// Pinball (quantile) loss `u (tau - 1{u < 0})`.
pub fn pinball(tau: f64, u: f64) -> f64 {
    if u < 0.0 {
        u * (tau - 1.0)
    } else {
        u * tau
    }
}

/// Interior levels `k / (K + 1)`, `k = 1..=K`.
pub fn quantile_levels(k: usize) -> Vec<f64> {
    (1..=k).map(|i| i as f64 / (k + 1) as f64).collect()
}

/// Quantiles of `dist` at the `K` levels `k / (K + 1)`.
pub fn grid_quantiles(dist: &ForecastDist, k: usize) -> Result<Vec<f64>> {
    if let ForecastDist::Bernstein(b) = dist {
        return Ok(b.grid_quantiles(k));
    }
    quantile_levels(k).into_iter().map(|tau| dist.quantile(tau)).collect()
}

/// CRPS approximated from `K` equidistant quantiles: `(2/K) sum rho_tau(y - Q(tau))`.
pub fn crps_quantile_approx(dist: &ForecastDist, y: f64, k: usize) -> Result<f64> {
    if k < 2 {
        return Err(Error::domain(format!("quantile grid needs K >= 2, got {k}")));
    }
    Ok(crps_from_quantiles(&quantile_levels(k), &grid_quantiles(dist, k)?, y))
}

/// As [`crps_quantile_approx`] from quantile values already evaluated at `levels`.
pub fn crps_from_quantiles(levels: &[f64], quantiles: &[f64], y: f64) -> f64 {
    let total: f64 = levels
        .iter()
        .zip(quantiles)
        .map(|(&tau, &q)| pinball(tau, y - q))
        .sum();
    2.0 * total / levels.len() as f64
}

/// Exact CRPS of a CDF that is 0 below the first knot, 1 above the last,
/// and linear between consecutive knots `(z, F(z))`.
fn crps_piecewise_linear_cdf<I>(knots: I, y: f64) -> f64
where
    I: IntoIterator<Item = (f64, f64)>,
{
    // Integral of u^2 over an interval of length `len` on which u is linear from u0 to u1.
    fn sq(len: f64, u0: f64, u1: f64) -> f64 {
        len * (u0 * u0 + u0 * u1 + u1 * u1) / 3.0
    }
    let mut iter = knots.into_iter();
    let Some((mut z0, mut f0)) = iter.next() else {
        return f64::NAN;
    };
    let first = z0;
    let mut total = if y < first { first - y } else { 0.0 };
    let mut last = z0;
    for (z1, f1) in iter {
        let len = z1 - z0;
        if len > 0.0 {
            if y <= z0 {
                total += sq(len, f0 - 1.0, f1 - 1.0);
            } else if y >= z1 {
                total += sq(len, f0, f1);
            } else {
                let fy = f0 + (f1 - f0) * (y - z0) / len;
                total += sq(y - z0, f0, fy) + sq(z1 - y, fy - 1.0, f1 - 1.0);
            }
        }
        z0 = z1;
        f0 = f1;
        last = z1;
    }
    if y > last {
        total += y - last;
    }
    total
}

/// Exact CRPS of a histogram forecast, integrating the quadratic integrand bin by bin.
pub fn crps_histogram(hist: &HistogramDist, y: f64) -> f64 {
    crps_piecewise_linear_cdf(hist.cdf_knots(), y)
}

/// Exact CRPS of a piecewise-linear quantile forecast. Point masses occupy
/// zero length in `z` and do not contribute to the integral.
pub fn crps_piecewise_linear_quantile(q: &PiecewiseLinearQuantile, y: f64) -> f64 {
    crps_piecewise_linear_cdf(q.cdf_knots(), y)
}

/// CRPS of any forecast using the evaluation route of its family: closed
/// form for normal, exact for histogram and piecewise-linear quantile
/// forecasts, 100 equidistant quantiles for Bernstein and skew-normal
/// forecasts, and a seeded sample of 1000 draws for mixtures.
pub fn crps(dist: &ForecastDist, y: f64, rng_seed: u64) -> Result<f64> {
    match dist {
        ForecastDist::Normal(d) => crps_normal(d.mu(), d.sigma(), y),
        ForecastDist::Histogram(h) => Ok(crps_histogram(h, y)),
        ForecastDist::PiecewiseLinearQuantile(q) => Ok(crps_piecewise_linear_quantile(q, y)),
        ForecastDist::Bernstein(_) | ForecastDist::SkewNormal(_) => {
            crps_quantile_approx(dist, y, DEFAULT_QUANTILE_GRID)
        }
        ForecastDist::Mixture(_) => {
            let sample = dist.sample(MIXTURE_SAMPLE_SIZE, rng_seed)?;
            crps_sample(&sample, y)
        }
    }
}

/// Unified PIT: `F(y)` where the CDF is continuous at `y`, otherwise a
/// uniform draw on `[F(y-), F(y)]`.
pub fn pit(dist: &ForecastDist, y: f64, rng_seed: u64) -> f64 {
    let eps = 1e-9 * y.abs().max(1.0);
    // No jump can reach the threshold within `eps` of `y`.
    if 2.0 * eps * dist.density_bound() <= PIT_JUMP_THRESHOLD {
        return dist.cdf(y).clamp(0.0, 1.0);
    }
    let upper = dist.cdf(y + eps);
    let lower = dist.cdf_left(y - eps);
    if upper - lower <= PIT_JUMP_THRESHOLD {
        return dist.cdf(y).clamp(0.0, 1.0);
    }
    let mut rng = seeded_rng(rng_seed);
    let u: f64 = rng.gen();
    (lower + u * (upper - lower)).clamp(0.0, 1.0)
}

/// Skill score `(ref - f) / (ref - opt)`; positively oriented.
pub fn skill_score(mean_f: f64, mean_ref: f64, mean_opt: f64) -> Result<f64> {
    if mean_ref == mean_opt {
        return Err(Error::DegenerateReference {
            reference: mean_ref,
            optimal: mean_opt,
        });
    }
    Ok((mean_ref - mean_f) / (mean_ref - mean_opt))
}

/// Central prediction interval `[Q((1-level)/2), Q(1-(1-level)/2)]`.
pub fn prediction_interval(dist: &ForecastDist, level: f64) -> Result<(f64, f64)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::domain(format!("interval level must be in (0, 1), got {level}")));
    }
    let tail = 0.5 * (1.0 - level);
    let lower = dist.quantile(tail)?;
    let upper = dist.quantile(1.0 - tail)?;
    Ok((lower, upper.max(lower)))
}

/// Forecast error of the median; positive when overforecasting.
pub fn median_error(dist: &ForecastDist, y: f64) -> Result<f64> {
    Ok(dist.quantile(0.5)? - y)
}

/// Scores of one forecast case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaseScore {
    pub crps: f64,
    pub pit: f64,
    pub lower: f64,
    pub upper: f64,
    pub median_error: f64,
    pub covered: bool,
}

impl CaseScore {
    pub fn pi_length(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Evaluates one case at the nominal 19/21 interval level.
pub fn evaluate_case(dist: &ForecastDist, y: f64, rng_seed: u64) -> Result<CaseScore> {
    let crps = crps(dist, y, rng_seed)?;
    let pit = pit(dist, y, rng_seed ^ 0x9e37_79b9_7f4a_7c15);
    let (lower, upper) = prediction_interval(dist, NOMINAL_PI_LEVEL)?;
    let median_error = median_error(dist, y)?;
    Ok(CaseScore {
        crps,
        pit,
        lower,
        upper,
        median_error,
        covered: lower <= y && y <= upper,
    })
}

/// Aggregate evaluation of a forecast method over a set of cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean_crps: f64,
    /// NaN when no reference/optimal pair was supplied.
    pub crpss: f64,
    pub pit_values: Vec<f64>,
    pub pi_coverage: f64,
    pub pi_length: f64,
    pub bias: f64,
    pub n_cases: usize,
}

impl EvalReport {
    /// Summarizes case scores. `reference` is `(mean_ref, mean_opt)` for the skill score.
    pub fn from_cases(cases: &[CaseScore], reference: Option<(f64, f64)>) -> Result<Self> {
        if cases.is_empty() {
            return Err(Error::domain("cannot summarize an empty set of cases"));
        }
        let n = cases.len() as f64;
        let mean_crps = cases.iter().map(|c| c.crps).sum::<f64>() / n;
        let crpss = match reference {
            Some((s_ref, s_opt)) => skill_score(mean_crps, s_ref, s_opt)?,
            None => f64::NAN,
        };
        Ok(Self {
            mean_crps,
            crpss,
            pit_values: cases.iter().map(|c| c.pit).collect(),
            pi_coverage: cases.iter().filter(|c| c.covered).count() as f64 / n,
            pi_length: cases.iter().map(|c| c.pi_length()).sum::<f64>() / n,
            bias: cases.iter().map(|c| c.median_error).sum::<f64>() / n,
            n_cases: cases.len(),
        })
    }

    pub fn pit_histogram(&self) -> Vec<u64> {
        pit_histogram(&self.pit_values, PIT_BINS)
    }
}

/// Counts of PIT values in `bins` equal-width bins on `[0, 1]`.
pub fn pit_histogram(pits: &[f64], bins: usize) -> Vec<u64> {
    let mut counts = vec![0u64; bins];
    for &u in pits {
        let idx = ((u * bins as f64) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    counts
}

/// One row of the per-method evaluation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub n: usize,
    pub rep: usize,
    pub mean_crps: f64,
    pub crpss: f64,
    pub coverage: f64,
    pub pi_length: f64,
    pub bias: f64,
}

impl ReportRow {
    pub fn new(method: impl Into<String>, n: usize, rep: usize, report: &EvalReport) -> Self {
        Self {
            method: method.into(),
            n,
            rep,
            mean_crps: report.mean_crps,
            crpss: report.crpss,
            coverage: report.pi_coverage,
            pi_length: report.pi_length,
            bias: report.bias,
        }
    }
}

/// Writes report rows as CSV with header `method,n,rep,mean_crps,crpss,coverage,pi_length,bias`.
pub fn write_report_csv<W: Write>(writer: W, rows: &[ReportRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes PIT values in long format: `method,n,rep,case,pit`.
pub fn write_pit_csv<W: Write>(writer: W, rows: &[(ReportRow, &[f64])]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["method", "n", "rep", "case", "pit"])?;
    for (row, pits) in rows {
        for (case, u) in pits.iter().enumerate() {
            w.write_record([
                row.method.clone(),
                row.n.to_string(),
                row.rep.to_string(),
                case.to_string(),
                u.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
