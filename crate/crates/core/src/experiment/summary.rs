//! Per-cell summaries over repetitions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{MethodLabel, RunResult};
use crate::error::{Error, Result};
use crate::netlab::HeadKind;
use crate::numeric::{empirical_quantile, mean};
use crate::simgen::ScenarioId;

/// Statistics of one `(variant, method, n)` cell over its non-missing repetitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario: ScenarioId,
    pub variant: HeadKind,
    pub method: MethodLabel,
    pub n: usize,
    pub reps: usize,
    pub missing: usize,
    pub crpss_mean: f64,
    pub crpss_q1: f64,
    pub crpss_median: f64,
    pub crpss_q3: f64,
    pub mean_crps: f64,
    pub coverage: f64,
    pub pi_length: f64,
    pub bias: f64,
    pub a_mean: Option<f64>,
    pub delta_n_mean: Option<f64>,
}

/// A cell with no successful repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmittedCell {
    pub variant: HeadKind,
    pub method: MethodLabel,
    pub n: usize,
    pub missing: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
    pub omitted: Vec<OmittedCell>,
}

impl Summary {
    pub fn row(&self, variant: HeadKind, method: MethodLabel, n: usize) -> Option<&SummaryRow> {
        self.rows
            .iter()
            .find(|r| r.variant == variant && r.method == method && r.n == n)
    }
}

fn quartiles(values: &[f64]) -> (f64, f64, f64) {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    v.sort_by(|a, b| a.total_cmp(b));
    (
        empirical_quantile(&v, 0.25),
        empirical_quantile(&v, 0.5),
        empirical_quantile(&v, 0.75),
    )
}

/// Mean and quartiles of the skill score plus mean metrics per cell, in
/// the order variant, method, ensemble size.
pub fn summarize(result: &RunResult) -> Result<Summary> {
    if result.records.is_empty() {
        return Err(Error::domain("cannot summarize an empty result"));
    }
    let mut cells: BTreeMap<(HeadKind, MethodLabel, usize), Vec<&super::RunRecord>> = BTreeMap::new();
    for r in &result.records {
        cells.entry((r.variant, r.method, r.n)).or_default().push(r);
    }
    let mut rows = Vec::new();
    let mut omitted = Vec::new();
    for ((variant, method, n), records) in cells {
        let present: Vec<_> = records.iter().filter_map(|r| r.metrics.as_ref().map(|m| (r, m))).collect();
        let missing = records.len() - present.len();
        if present.is_empty() {
            omitted.push(OmittedCell {
                variant,
                method,
                n,
                missing,
            });
            continue;
        }
        let pick = |f: &dyn Fn(&super::CellMetrics) -> f64| -> Vec<f64> { present.iter().map(|(_, m)| f(m)).collect() };
        let crpss = pick(&|m| m.crpss);
        let (q1, median, q3) = quartiles(&crpss);
        let coeffs: Vec<_> = present.iter().filter_map(|(r, _)| r.coefficients).collect();
        let coef_mean = |f: fn(&super::CellCoefficients) -> f64| {
            (!coeffs.is_empty()).then(|| mean(&coeffs.iter().map(f).collect::<Vec<_>>()))
        };
        rows.push(SummaryRow {
            scenario: result.config.scenario.id,
            variant,
            method,
            n,
            reps: present.len(),
            missing,
            crpss_mean: mean(&crpss),
            crpss_q1: q1,
            crpss_median: median,
            crpss_q3: q3,
            mean_crps: mean(&pick(&|m| m.mean_crps)),
            coverage: mean(&pick(&|m| m.coverage)),
            pi_length: mean(&pick(&|m| m.pi_length)),
            bias: mean(&pick(&|m| m.bias)),
            a_mean: coef_mean(|c| c.a),
            delta_n_mean: coef_mean(|c| c.delta_n),
        });
    }
    Ok(Summary { rows, omitted })
}

/// Excess share of PIT values in the central third of the bins over the
/// uniform share, and its z-statistic under uniformity. A clearly positive
/// excess is the hump of an overdispersed forecast.
pub fn pit_central_excess(histogram: &[u64]) -> (f64, f64) {
    let bins = histogram.len();
    let total: u64 = histogram.iter().sum();
    if bins < 3 || total == 0 {
        return (0.0, 0.0);
    }
    let lo = bins / 3;
    let hi = bins - bins / 3;
    let central: u64 = histogram[lo..hi].iter().sum();
    let expected = (hi - lo) as f64 / bins as f64;
    let share = central as f64 / total as f64;
    let sd = (expected * (1.0 - expected) / total as f64).sqrt();
    (share - expected, (share - expected) / sd)
}
