//! Combination of an ensemble of same-family forecast distributions into a
//! single forecast: the equally weighted linear pool (probability scale) and
//! Vincentization (quantile scale) with intercept `a` and common weight `w0`.

mod estimate;
pub mod nelder_mead;

pub use estimate::{estimate_vi_coefficients, Estimate, StoredCoefficients, ViObjective};

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::distributions::{
    BernsteinQuantileDist, Family, ForecastDist, HistogramDist, MixtureDist, NormalDist,
    PiecewiseLinearQuantile, SkewNormalDist,
};
use crate::error::{Error, Result};

/// Knot levels closer than this are merged when forming the union of quantile knots.
pub const KNOT_DEDUP_TOL: f64 = 1e-12;

/// Intercept and common member weight of the Vincentized quantile function
/// `Q(p) = a + w0 * sum_i Q_i(p)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VICoefficients {
    pub a: f64,
    pub w0: f64,
}

impl VICoefficients {
    pub fn new(a: f64, w0: f64) -> Result<Self> {
        if !a.is_finite() || !w0.is_finite() || w0 < 0.0 {
            return Err(Error::invalid(format!(
                "VI coefficients need finite a and w0 >= 0, got a={a}, w0={w0}"
            )));
        }
        Ok(Self { a, w0 })
    }

    /// `a = 0`, `w0 = 1/n`: the plain quantile average.
    pub fn standard(n: usize) -> Self {
        Self {
            a: 0.0,
            w0: 1.0 / n as f64,
        }
    }
}

/// Relative deviation `n * w0 - 1` of the common weight from `1/n`.
pub fn delta_n(w0: f64, n: usize) -> f64 {
    n as f64 * w0 - 1.0
}

/// Aggregation method: the linear pool or one of four Vincentization variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AggMethod {
    LP,
    V0eq,
    Vaeq,
    V0w,
    Vaw,
}

impl AggMethod {
    pub const ALL: [AggMethod; 5] = [
        AggMethod::LP,
        AggMethod::V0eq,
        AggMethod::Vaeq,
        AggMethod::V0w,
        AggMethod::Vaw,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AggMethod::LP => "LP",
            AggMethod::V0eq => "V0eq",
            AggMethod::Vaeq => "Vaeq",
            AggMethod::V0w => "V0w",
            AggMethod::Vaw => "Vaw",
        }
    }

    pub fn is_vincentization(&self) -> bool {
        !matches!(self, AggMethod::LP)
    }

    pub fn estimates_intercept(&self) -> bool {
        matches!(self, AggMethod::Vaeq | AggMethod::Vaw)
    }

    pub fn estimates_weight(&self) -> bool {
        matches!(self, AggMethod::V0w | AggMethod::Vaw)
    }

    /// Whether any coefficient has to be estimated from validation data.
    pub fn needs_estimation(&self) -> bool {
        self.estimates_intercept() || self.estimates_weight()
    }

    /// Clamps `coeffs` onto the parameters this method keeps fixed.
    pub fn restrict(&self, coeffs: VICoefficients, n: usize) -> VICoefficients {
        let std = VICoefficients::standard(n);
        VICoefficients {
            a: if self.estimates_intercept() { coeffs.a } else { std.a },
            w0: if self.estimates_weight() { coeffs.w0 } else { std.w0 },
        }
    }
}

impl fmt::Display for AggMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AggMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        AggMethod::ALL
            .iter()
            .copied()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown aggregation method `{s}` (expected LP, V0eq, Vaeq, V0w or Vaw)"
                ))
            })
    }
}

/// The forecasts of `n >= 1` ensemble members for one case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EnsembleRepr")]
pub struct EnsembleForecast {
    members: Vec<ForecastDist>,
}

#[derive(Deserialize)]
struct EnsembleRepr {
    members: Vec<ForecastDist>,
}

impl TryFrom<EnsembleRepr> for EnsembleForecast {
    type Error = Error;
    fn try_from(r: EnsembleRepr) -> Result<Self> {
        EnsembleForecast::new(r.members)
    }
}

impl EnsembleForecast {
    /// Checks that the members are nonempty, of one family, and for
    /// histograms share their bin edges.
    pub fn new(members: Vec<ForecastDist>) -> Result<Self> {
        let Some(first) = members.first() else {
            return Err(Error::invalid("an ensemble needs at least one member"));
        };
        let family = first.family();
        if let Some(bad) = members.iter().find(|m| m.family() != family) {
            return Err(Error::invalid(format!(
                "heterogeneous ensemble: {:?} and {:?} members",
                family,
                bad.family()
            )));
        }
        if let ForecastDist::Histogram(h0) = first {
            for m in &members[1..] {
                if let ForecastDist::Histogram(h) = m {
                    if h.edges() != h0.edges() {
                        return Err(Error::invalid(
                            "histogram ensemble members must share identical bin edges",
                        ));
                    }
                }
            }
        }
        Ok(Self { members })
    }

    pub fn members(&self) -> &[ForecastDist] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn family(&self) -> Family {
        self.members[0].family()
    }

    /// The ensemble of the first `n` members.
    pub fn prefix(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.len() {
            return Err(Error::domain(format!(
                "prefix size {n} outside 1..={}",
                self.len()
            )));
        }
        Ok(Self {
            members: self.members[..n].to_vec(),
        })
    }
}

/// Equally weighted linear pool. Histogram members with shared edges pool
/// exactly into a histogram with averaged bin probabilities; all other
/// families yield a [`MixtureDist`].
pub fn lp_aggregate(ens: &EnsembleForecast) -> Result<ForecastDist> {
    if ens.family() == Family::Histogram {
        let hists: Vec<&HistogramDist> = ens
            .members()
            .iter()
            .map(|m| match m {
                ForecastDist::Histogram(h) => h,
                _ => unreachable!("homogeneous ensemble"),
            })
            .collect();
        let n = hists.len() as f64;
        let n_bins = hists[0].n_bins();
        let mut probs = vec![0.0; n_bins];
        for h in &hists {
            for (acc, p) in probs.iter_mut().zip(h.probs()) {
                *acc += p;
            }
        }
        for p in &mut probs {
            *p /= n;
        }
        return Ok(HistogramDist::new(hists[0].edges().to_vec(), probs)?.into());
    }
    Ok(MixtureDist::equal(ens.members().to_vec())?.into())
}

/// The Vincentized quantile `a + w0 * sum_i Q_i(p)`.
pub fn vi_quantile(ens: &EnsembleForecast, coeffs: VICoefficients, p: f64) -> Result<f64> {
    if coeffs.w0 < 0.0 {
        return Err(Error::invalid("VI weight must be nonnegative"));
    }
    let mut sum = 0.0;
    for m in ens.members() {
        sum += m.quantile(p)?;
    }
    Ok(coeffs.a + coeffs.w0 * sum)
}

/// Vincentization of normal members stays normal, with location
/// `a + w0 * sum mu_i` and scale `w0 * sum sigma_i`.
pub fn vi_normal(members: &[NormalDist], coeffs: VICoefficients) -> Result<NormalDist> {
    let mu: f64 = members.iter().map(|m| m.mu()).sum();
    let sigma: f64 = members.iter().map(|m| m.sigma()).sum();
    let scale = coeffs.w0 * sigma;
    if !(scale > 0.0) {
        return Err(Error::DegenerateScale(format!(
            "aggregated normal scale is {scale} (w0 = {})",
            coeffs.w0
        )));
    }
    NormalDist::new(coeffs.a + coeffs.w0 * mu, scale)
}

/// Vincentization of skew-normal members sharing one shape parameter.
pub fn vi_skew_normal(members: &[SkewNormalDist], coeffs: VICoefficients) -> Result<SkewNormalDist> {
    let shape = members[0].shape();
    if members.iter().any(|m| m.shape() != shape) {
        return Err(Error::shape("skew-normal members must share the shape parameter"));
    }
    let loc: f64 = members.iter().map(|m| m.location()).sum();
    let scale: f64 = coeffs.w0 * members.iter().map(|m| m.scale()).sum::<f64>();
    if !(scale > 0.0) {
        return Err(Error::DegenerateScale(format!("aggregated skew-normal scale is {scale}")));
    }
    SkewNormalDist::new(coeffs.a + coeffs.w0 * loc, scale, shape)
}

/// Vincentization of Bernstein quantile members: the basis coefficients
/// combine as `a + w0 * sum_i alpha_ij`.
pub fn vi_bqn(
    members: &[BernsteinQuantileDist],
    coeffs: VICoefficients,
) -> Result<BernsteinQuantileDist> {
    let degree = members[0].degree();
    if let Some(bad) = members.iter().find(|m| m.degree() != degree) {
        return Err(Error::shape(format!(
            "Bernstein members must share a degree, got {degree} and {}",
            bad.degree()
        )));
    }
    let mut combined = vec![0.0; degree + 1];
    for m in members {
        for (acc, c) in combined.iter_mut().zip(m.coeffs()) {
            *acc += c;
        }
    }
    for c in &mut combined {
        *c = coeffs.a + coeffs.w0 * *c;
    }
    BernsteinQuantileDist::new(combined)
}

/// Union of sorted knot level sets, merging levels within [`KNOT_DEDUP_TOL`].
fn union_levels<'a, I: IntoIterator<Item = &'a [f64]>>(sets: I) -> Vec<f64> {
    let mut all: Vec<f64> = vec![0.0, 1.0];
    for s in sets {
        all.extend(s.iter().copied().filter(|p| (0.0..=1.0).contains(p)));
    }
    all.sort_by(|a, b| a.total_cmp(b));
    let mut out: Vec<f64> = Vec::with_capacity(all.len());
    for p in all {
        match out.last() {
            Some(&last) if p - last <= KNOT_DEDUP_TOL => {}
            _ => out.push(p),
        }
    }
    // Keep 1 as the exact final knot.
    if let Some(last) = out.last_mut() {
        *last = 1.0;
    }
    if out.len() >= 2 && out[out.len() - 2] >= 1.0 {
        out.remove(out.len() - 2);
    }
    out
}

/// Vincentization of histogram members: each member quantile function is
/// piecewise linear with knots at its accumulated bin probabilities, so the
/// combination is piecewise linear on the union of all members' knots.
pub fn vi_hen(members: &[HistogramDist], coeffs: VICoefficients) -> Result<PiecewiseLinearQuantile> {
    let levels = union_levels(members.iter().map(|h| h.cumulative()));
    let mut sums = vec![0.0; levels.len()];
    for h in members {
        let mut cursor = 0;
        for (s, &p) in sums.iter_mut().zip(&levels) {
            *s += h.quantile_ascending(p, &mut cursor);
        }
    }
    let mut values: Vec<f64> = sums.into_iter().map(|s| coeffs.a + coeffs.w0 * s).collect();
    monotone_fix(&mut values);
    PiecewiseLinearQuantile::new(levels, values)
}

/// Vincentization of piecewise-linear quantile members on the union of their knots.
pub fn vi_piecewise_linear(
    members: &[PiecewiseLinearQuantile],
    coeffs: VICoefficients,
) -> Result<PiecewiseLinearQuantile> {
    let levels = union_levels(members.iter().map(|q| q.levels()));
    let mut values = Vec::with_capacity(levels.len());
    for &p in &levels {
        let mut sum = 0.0;
        for q in members {
            sum += q.quantile(p)?;
        }
        values.push(coeffs.a + coeffs.w0 * sum);
    }
    monotone_fix(&mut values);
    PiecewiseLinearQuantile::new(levels, values)
}

// Rounding in the member quantiles can produce last-bit decreases at knots.
fn monotone_fix(values: &mut [f64]) {
    for i in 1..values.len() {
        if values[i] < values[i - 1] {
            values[i] = values[i - 1];
        }
    }
}

fn collect<T: Clone>(ens: &EnsembleForecast, pick: impl Fn(&ForecastDist) -> Option<&T>) -> Vec<T> {
    ens.members()
        .iter()
        .map(|m| pick(m).cloned().expect("homogeneous ensemble"))
        .collect()
}

/// Vincentization through the family-specific closed form.
pub fn vi_aggregate(ens: &EnsembleForecast, coeffs: VICoefficients) -> Result<ForecastDist> {
    match ens.family() {
        Family::Normal => {
            let members = collect(ens, |m| match m {
                ForecastDist::Normal(d) => Some(d),
                _ => None,
            });
            Ok(vi_normal(&members, coeffs)?.into())
        }
        Family::SkewNormal => {
            let members = collect(ens, |m| match m {
                ForecastDist::SkewNormal(d) => Some(d),
                _ => None,
            });
            Ok(vi_skew_normal(&members, coeffs)?.into())
        }
        Family::Bernstein => {
            let members = collect(ens, |m| match m {
                ForecastDist::Bernstein(d) => Some(d),
                _ => None,
            });
            Ok(vi_bqn(&members, coeffs)?.into())
        }
        Family::Histogram => {
            let members = collect(ens, |m| match m {
                ForecastDist::Histogram(d) => Some(d),
                _ => None,
            });
            Ok(vi_hen(&members, coeffs)?.into())
        }
        Family::PiecewiseLinearQuantile => {
            let members = collect(ens, |m| match m {
                ForecastDist::PiecewiseLinearQuantile(d) => Some(d),
                _ => None,
            });
            Ok(vi_piecewise_linear(&members, coeffs)?.into())
        }
        Family::Mixture => Err(Error::invalid(
            "Vincentization of mixture members has no closed form",
        )),
    }
}

/// Aggregates with `method`; `coeffs` are used only by Vincentization and
/// are restricted to the method's free parameters.
pub fn aggregate(
    ens: &EnsembleForecast,
    method: AggMethod,
    coeffs: Option<VICoefficients>,
) -> Result<ForecastDist> {
    match method {
        AggMethod::LP => lp_aggregate(ens),
        AggMethod::V0eq => vi_aggregate(ens, VICoefficients::standard(ens.len())),
        _ => {
            let c = coeffs.ok_or_else(|| {
                Error::invalid(format!("method {method} needs estimated coefficients"))
            })?;
            vi_aggregate(ens, method.restrict(c, ens.len()))
        }
    }
}
