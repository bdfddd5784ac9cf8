//! The simulation study: repetitions × network variants × aggregation
//! methods × ensemble sizes, scored by the CRPS skill relative to the
//! average member (`DE`) and the optimal forecast.
//!
//! Per repetition the scenario is generated once; per variant a pool of
//! `max_members` networks is trained, and every size `n` uses the first
//! `n` members of that pool. Vincentization coefficients are estimated on
//! the validation set separately for every `(rep, variant, method, n)`.

mod config;
mod output;
mod summary;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use log::{debug, info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use config::RunConfig;
pub use output::{read_summary_json, write_outputs, write_report, RunMeta};
pub use summary::{pit_central_excess, summarize, OmittedCell, Summary, SummaryRow};

use crate::aggregation::{aggregate, delta_n, AggMethod, EnsembleForecast, ViObjective};
use crate::distributions::ForecastDist;
use crate::error::{Error, Result};
use crate::netlab::{train_member, HeadKind, NetConfig, NetModel};
use crate::numeric::mean;
use crate::scoring::{
    evaluate_case, grid_quantiles, pit_histogram, quantile_levels, skill_score, CaseScore,
    DEFAULT_QUANTILE_GRID, PIT_BINS,
};
use crate::simgen::{self, optimal_case_crps, ScenarioData, ScenarioId, ScenarioSpec};

/// Spacing of the member seed bases of consecutive repetitions.
pub const REP_SEED_STRIDE: u64 = 1000;

/// Row label: the deep-ensemble baseline or an aggregation method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MethodLabel {
    /// Average score of the individual members.
    Ensemble,
    Agg(AggMethod),
}

impl MethodLabel {
    pub fn name(&self) -> &'static str {
        match self {
            MethodLabel::Ensemble => "DE",
            MethodLabel::Agg(m) => m.name(),
        }
    }
}

impl fmt::Display for MethodLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodLabel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "DE" {
            Ok(MethodLabel::Ensemble)
        } else {
            s.parse().map(MethodLabel::Agg)
        }
    }
}

impl Serialize for MethodLabel {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for MethodLabel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Evaluation of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub mean_crps: f64,
    /// NaN when the reference and optimal scores coincide.
    pub crpss: f64,
    pub coverage: f64,
    pub pi_length: f64,
    pub bias: f64,
    pub n_cases: usize,
    /// Counts in equal-width PIT bins on `[0, 1]`; pooled over members for `DE`.
    pub pit_histogram: Vec<u64>,
}

/// Estimated Vincentization coefficients of one cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellCoefficients {
    pub a: f64,
    pub w0: f64,
    pub delta_n: f64,
    pub validation_crps: f64,
    pub converged: bool,
}

/// One `(scenario, variant, method, n, rep)` cell; `metrics` is `None`
/// for a missing cell, with the cause in `missing_reason`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub scenario: ScenarioId,
    pub variant: HeadKind,
    pub method: MethodLabel,
    pub n: usize,
    pub rep: usize,
    pub reference_crps: Option<f64>,
    pub optimal_crps: f64,
    pub metrics: Option<CellMetrics>,
    pub coefficients: Option<CellCoefficients>,
    pub missing_reason: Option<String>,
}

/// A member whose training failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberFailure {
    pub variant: HeadKind,
    pub member: usize,
    pub seed: u64,
    pub message: String,
}

/// Seeds and bookkeeping of one repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionInfo {
    pub rep: usize,
    pub scenario_seed: u64,
    /// Member `k` of every variant is trained with seed `member_seed_base + k`.
    pub member_seed_base: u64,
    pub optimal_crps: f64,
    pub failures: Vec<MemberFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config: RunConfig,
    pub records: Vec<RunRecord>,
    pub repetitions: Vec<RepetitionInfo>,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed of an evaluation stream identified by `parts`; independent of the
/// pool size so that smaller ensembles are unaffected by `max_members`.
pub fn stream_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x243F_6A88_85A3_08D3, |h, &p| splitmix64(h ^ p))
}

fn method_code(m: MethodLabel) -> u64 {
    match m {
        MethodLabel::Ensemble => 0,
        MethodLabel::Agg(a) => 1 + AggMethod::ALL.iter().position(|x| *x == a).unwrap_or(0) as u64,
    }
}

fn variant_code(v: HeadKind) -> u64 {
    HeadKind::ALL.iter().position(|x| *x == v).unwrap_or(0) as u64
}

impl RunConfig {
    pub fn scenario_for(&self, rep: usize) -> ScenarioSpec {
        ScenarioSpec {
            seed: self.scenario.seed.wrapping_add(rep as u64),
            ..self.scenario.clone()
        }
    }

    pub fn member_seed_base(&self, rep: usize) -> u64 {
        self.net.seed.wrapping_add(REP_SEED_STRIDE.wrapping_mul(rep as u64))
    }
}

/// Runs the whole study. Training failures mark the affected cells as
/// missing; other errors abort the run.
pub fn run(config: &RunConfig) -> Result<RunResult> {
    config.validate()?;
    let outputs = (0..config.repetitions)
        .into_par_iter()
        .map(|rep| run_repetition(config, rep))
        .collect::<Result<Vec<_>>>()?;
    let mut records = Vec::new();
    let mut repetitions = Vec::new();
    for (recs, info) in outputs {
        records.extend(recs);
        repetitions.push(info);
    }
    Ok(RunResult {
        config: config.clone(),
        records,
        repetitions,
    })
}

fn run_repetition(config: &RunConfig, rep: usize) -> Result<(Vec<RunRecord>, RepetitionInfo)> {
    let spec = config.scenario_for(rep);
    let data = simgen::generate(&spec)?;
    let optimal_crps = mean(&optimal_case_crps(&data.optimal_test, data.test.targets())?);
    let mut info = RepetitionInfo {
        rep,
        scenario_seed: spec.seed,
        member_seed_base: config.member_seed_base(rep),
        optimal_crps,
        failures: Vec::new(),
    };
    let mut records = Vec::new();
    for &variant in &config.variants {
        let ctx = VariantRun {
            config,
            rep,
            variant,
            data: &data,
            optimal_crps,
        };
        let (recs, failures) = ctx.run()?;
        records.extend(recs);
        info.failures.extend(failures);
    }
    Ok((records, info))
}

struct VariantRun<'a> {
    config: &'a RunConfig,
    rep: usize,
    variant: HeadKind,
    data: &'a ScenarioData,
    optimal_crps: f64,
}

impl VariantRun<'_> {
    fn seed_parts(&self) -> [u64; 4] {
        [
            self.config.scenario.seed,
            self.config.net.seed,
            self.rep as u64,
            variant_code(self.variant),
        ]
    }

    fn record(&self, method: MethodLabel, n: usize) -> RunRecord {
        RunRecord {
            scenario: self.config.scenario.id,
            variant: self.variant,
            method,
            n,
            rep: self.rep,
            reference_crps: None,
            optimal_crps: self.optimal_crps,
            metrics: None,
            coefficients: None,
            missing_reason: None,
        }
    }

    fn labels(&self) -> impl Iterator<Item = MethodLabel> + '_ {
        std::iter::once(MethodLabel::Ensemble).chain(self.config.methods.iter().map(|&m| MethodLabel::Agg(m)))
    }

    fn train(&self) -> (Vec<NetModel>, Vec<MemberFailure>) {
        let base = self.config.member_seed_base(self.rep);
        let started = Instant::now();
        let trained: Vec<Result<NetModel>> = (0..self.config.max_members)
            .into_par_iter()
            .map(|k| {
                let cfg = NetConfig {
                    head: self.variant,
                    seed: base.wrapping_add(k as u64),
                    ..self.config.net.clone()
                };
                train_member(&cfg, &self.data.train, &self.data.valid)
            })
            .collect();
        let mut models = Vec::new();
        let mut failures = Vec::new();
        for (k, result) in trained.into_iter().enumerate() {
            match result {
                Ok(m) if failures.is_empty() => models.push(m),
                Ok(_) => {}
                Err(e) => {
                    warn!("rep {} {}: member {k} failed to train: {e}", self.rep, self.variant);
                    failures.push(MemberFailure {
                        variant: self.variant,
                        member: k,
                        seed: base.wrapping_add(k as u64),
                        message: e.to_string(),
                    });
                }
            }
        }
        info!(
            "rep {} {}: trained {}/{} members in {:.1}s",
            self.rep,
            self.variant,
            models.len(),
            self.config.max_members,
            started.elapsed().as_secs_f64()
        );
        (models, failures)
    }

    fn run(&self) -> Result<(Vec<RunRecord>, Vec<MemberFailure>)> {
        let (models, failures) = self.train();
        let usable = models.len();
        let test = &self.data.test;
        let valid = &self.data.valid;
        let obs = test.targets();

        let test_pred: Vec<Vec<ForecastDist>> =
            models.par_iter().map(|m| m.predict(test)).collect::<Result<_>>()?;
        let member_scores: Vec<Vec<CaseScore>> = test_pred
            .par_iter()
            .enumerate()
            .map(|(k, preds)| {
                preds
                    .iter()
                    .zip(obs)
                    .enumerate()
                    .map(|(i, (d, &y))| {
                        let parts = self.seed_parts();
                        evaluate_case(d, y, stream_seed(&[parts[0], parts[1], parts[2], parts[3], u64::MAX, k as u64, i as u64]))
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;

        let k_grid = DEFAULT_QUANTILE_GRID;
        let needs_tables = self.config.methods.iter().any(|m| m.is_vincentization());
        let valid_tables: Vec<Vec<f64>> = if needs_tables {
            models
                .par_iter()
                .map(|m| {
                    let mut table = Vec::with_capacity(valid.len() * k_grid);
                    for d in m.predict(valid)? {
                        table.extend(grid_quantiles(&d, k_grid)?);
                    }
                    Ok(table)
                })
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };

        let mut records = Vec::new();
        let mut sums = vec![0.0; if needs_tables { valid.len() * k_grid } else { 0 }];
        let mut added = 0;
        for &n in &self.config.sizes {
            if n > usable {
                let reason = format!("member {} of the pool failed to train", usable);
                for label in self.labels() {
                    let mut r = self.record(label, n);
                    r.missing_reason = Some(reason.clone());
                    records.push(r);
                }
                continue;
            }
            if needs_tables {
                for table in &valid_tables[added..n] {
                    for (s, q) in sums.iter_mut().zip(table) {
                        *s += q;
                    }
                }
                added = n;
            }
            let member_means: Vec<f64> = member_scores[..n]
                .iter()
                .map(|s| mean(&s.iter().map(|c| c.crps).collect::<Vec<_>>()))
                .collect();
            let reference = mean(&member_means);
            records.push(self.ensemble_record(n, &member_scores[..n], reference));

            let objective = if needs_tables {
                Some(ViObjective::from_quantile_sums(
                    quantile_levels(k_grid),
                    sums.clone(),
                    valid.targets().to_vec(),
                    n,
                )?)
            } else {
                None
            };
            for &method in &self.config.methods {
                let mut r = self.record(MethodLabel::Agg(method), n);
                r.reference_crps = Some(reference);
                let estimate = match (&objective, method.is_vincentization()) {
                    (Some(obj), true) => Some(obj.estimate(method)),
                    _ => None,
                };
                let coeffs = estimate.map(|e| e.coeffs);
                r.coefficients = estimate.map(|e| CellCoefficients {
                    a: e.coeffs.a,
                    w0: e.coeffs.w0,
                    delta_n: delta_n(e.coeffs.w0, n),
                    validation_crps: e.validation_crps,
                    converged: e.converged,
                });
                let started = Instant::now();
                let evaluated = self.evaluate_method(method, coeffs, &test_pred, n);
                debug!(
                    "rep {} {} {method} n={n}: evaluated in {:.2}s",
                    self.rep,
                    self.variant,
                    started.elapsed().as_secs_f64()
                );
                match evaluated {
                    Ok(cases) => r.metrics = Some(self.metrics(&cases, reference)),
                    Err(e) => {
                        warn!("rep {} {} {method} n={n}: {e}", self.rep, self.variant);
                        r.missing_reason = Some(e.to_string());
                    }
                }
                records.push(r);
            }
        }
        Ok((records, failures))
    }

    fn metrics(&self, cases: &[CaseScore], reference: f64) -> CellMetrics {
        let n = cases.len() as f64;
        let mean_crps = cases.iter().map(|c| c.crps).sum::<f64>() / n;
        let pits: Vec<f64> = cases.iter().map(|c| c.pit).collect();
        CellMetrics {
            mean_crps,
            crpss: skill_score(mean_crps, reference, self.optimal_crps).unwrap_or(f64::NAN),
            coverage: cases.iter().filter(|c| c.covered).count() as f64 / n,
            pi_length: cases.iter().map(|c| c.pi_length()).sum::<f64>() / n,
            bias: cases.iter().map(|c| c.median_error).sum::<f64>() / n,
            n_cases: cases.len(),
            pit_histogram: pit_histogram(&pits, PIT_BINS),
        }
    }

    /// The baseline row: member metrics averaged over the first `n`
    /// members, with the PIT values of all of them pooled.
    fn ensemble_record(&self, n: usize, scores: &[Vec<CaseScore>], reference: f64) -> RunRecord {
        let per_member: Vec<CellMetrics> = scores.iter().map(|s| self.metrics(s, reference)).collect();
        let avg = |f: fn(&CellMetrics) -> f64| mean(&per_member.iter().map(f).collect::<Vec<_>>());
        let mut pooled = vec![0u64; PIT_BINS];
        for m in &per_member {
            for (p, c) in pooled.iter_mut().zip(&m.pit_histogram) {
                *p += c;
            }
        }
        let mut r = self.record(MethodLabel::Ensemble, n);
        r.reference_crps = Some(reference);
        r.metrics = Some(CellMetrics {
            mean_crps: reference,
            crpss: skill_score(reference, reference, self.optimal_crps).unwrap_or(f64::NAN),
            coverage: avg(|m| m.coverage),
            pi_length: avg(|m| m.pi_length),
            bias: avg(|m| m.bias),
            n_cases: per_member[0].n_cases,
            pit_histogram: pooled,
        });
        r
    }

    fn evaluate_method(
        &self,
        method: AggMethod,
        coeffs: Option<crate::aggregation::VICoefficients>,
        test_pred: &[Vec<ForecastDist>],
        n: usize,
    ) -> Result<Vec<CaseScore>> {
        let parts = self.seed_parts();
        let code = method_code(MethodLabel::Agg(method));
        self.data
            .test
            .targets()
            .par_iter()
            .enumerate()
            .map(|(i, &y)| {
                let ens = EnsembleForecast::new(test_pred[..n].iter().map(|p| p[i].clone()).collect())?;
                let dist = aggregate(&ens, method, coeffs)?;
                let seed = stream_seed(&[parts[0], parts[1], parts[2], parts[3], code, n as u64, i as u64]);
                evaluate_case(&dist, y, seed)
            })
            .collect()
    }
}
