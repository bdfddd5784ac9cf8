//! Acceptance suite: one PASS/FAIL line per criterion and a summary line.
//! Failed criteria are reported but only fail the process when
//! `ACCEPTANCE_STRICT=1`, so the remaining test targets still run.

mod common;

use std::time::Instant;

use common::*;
use distagg::aggregation::*;
use distagg::distributions::{BernsteinQuantileDist, ForecastDist, HistogramDist, MixtureDist};
use distagg::experiment::{pit_central_excess, run, summarize, MethodLabel, RunConfig, RunResult, Summary};
use distagg::netlab::{HeadKind, NetConfig, NetModel};
use distagg::numeric::seeded_rng;
use distagg::scoring::{crps_histogram, crps_normal, NOMINAL_PI_LEVEL};
use distagg::simgen::{generate, ScenarioId, ScenarioSpec};
use proptest::strategy::{Strategy, ValueTree};
use proptest::test_runner::TestRunner;
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

/// `count` deterministic draws from a strategy.
fn draws<S: Strategy>(strategy: S, count: usize, runner: &mut TestRunner) -> Vec<S::Value> {
    (0..count).map(|_| strategy.new_tree(runner).unwrap().current()).collect()
}

fn ensemble(members: Vec<ForecastDist>) -> EnsembleForecast {
    EnsembleForecast::new(members).unwrap()
}

fn crps_matches_the_integral() -> Outcome {
    let mut rng = seeded_rng(101);
    let mut worst_normal: f64 = 0.0;
    for _ in 0..200 {
        let mu = rng.gen_range(-5.0..5.0);
        let sigma = rng.gen_range(0.2..4.0);
        let y = rng.gen_range(-15.0..15.0);
        let c = crps_normal(mu, sigma, y).unwrap();
        let cdf = |z: f64| phi((z - mu) / sigma);
        let oracle = crps_oracle(cdf, y, mu - 12.0 * sigma, mu + 12.0 * sigma, &[mu], 120_000);
        worst_normal = worst_normal.max((c - oracle).abs());
    }
    let mut runner = TestRunner::deterministic();
    let mut worst_hist: f64 = 0.0;
    for h in draws(arb_histogram(), 100, &mut runner) {
        let (lo, hi) = h.support();
        let y = lo + rng.gen_range(-0.3..1.3) * (hi - lo);
        let oracle = crps_oracle(|z| h.cdf(z), y, lo, hi, h.edges(), 40_000);
        worst_hist = worst_hist.max((crps_histogram(&h, y) - oracle).abs());
    }
    outcome(
        worst_normal <= 1e-8 && worst_hist <= 1e-8,
        format!("max error normal {worst_normal:.2e}, histogram {worst_hist:.2e}"),
    )
}

fn shape_preservation() -> Outcome {
    let mut runner = TestRunner::deterministic();
    let mut rng = seeded_rng(102);
    let mut worst_pointwise: f64 = 0.0;
    let mut worst_mean: f64 = 0.0;
    let mut variance_ok = true;
    for members in draws(proptest::collection::vec(arb_normal(), 1..8), 100, &mut runner) {
        let ens = ensemble(members.iter().map(|&m| m.into()).collect());
        let c = VICoefficients::new(rng.gen_range(-3.0..3.0), rng.gen_range(0.05..1.0)).unwrap();
        let d = vi_normal(&members, c).unwrap();
        for k in 1..100 {
            let p = k as f64 / 100.0;
            worst_pointwise = worst_pointwise.max((d.quantile(p).unwrap() - vi_quantile(&ens, c, p).unwrap()).abs());
        }
        let n = members.len() as f64;
        let mean_mu = members.iter().map(|m| m.mu()).sum::<f64>() / n;
        let var_lp = members.iter().map(|m| m.sigma().powi(2) + (m.mu() - mean_mu).powi(2)).sum::<f64>() / n;
        let var_v0eq = (members.iter().map(|m| m.sigma()).sum::<f64>() / n).powi(2);
        let lp = lp_aggregate(&ens).unwrap();
        let v0eq = aggregate(&ens, AggMethod::V0eq, None).unwrap();
        worst_mean = worst_mean.max((lp.mean().unwrap() - v0eq.mean().unwrap()).abs() / (1.0 + mean_mu.abs()));
        variance_ok &= (lp.variance().unwrap() - var_lp).abs() <= 1e-10 * var_lp
            && (v0eq.variance().unwrap() - var_v0eq).abs() <= 1e-10 * var_v0eq
            && var_v0eq <= var_lp * (1.0 + 1e-12);
    }
    outcome(
        worst_pointwise <= 1e-10 && worst_mean <= 1e-10 && variance_ok,
        format!("max quantile gap {worst_pointwise:.2e}, max mean gap {worst_mean:.2e}, variance order holds: {variance_ok}"),
    )
}

fn averaging_identities() -> Outcome {
    let mut runner = TestRunner::deterministic();
    let mut rng = seeded_rng(103);
    let mut worst_bqn: f64 = 0.0;
    for members in draws(proptest::collection::vec(arb_bernstein(), 1..6), 100, &mut runner) {
        let degree = members[0].degree();
        let members: Vec<BernsteinQuantileDist> = members.into_iter().filter(|m| m.degree() == degree).collect();
        let ens = ensemble(members.iter().cloned().map(Into::into).collect());
        let c = VICoefficients::new(rng.gen_range(-3.0..3.0), rng.gen_range(0.0..1.0)).unwrap();
        let d = vi_bqn(&members, c).unwrap();
        for k in 1..1000 {
            let p = k as f64 / 1000.0;
            let generic = vi_quantile(&ens, c, p).unwrap();
            worst_bqn = worst_bqn.max((d.quantile(p).unwrap() - generic).abs() / (1.0 + generic.abs()));
        }
    }
    let mut worst_hen: f64 = 0.0;
    let mut all_histograms = true;
    for members in draws(arb_histogram_ensemble(6), 100, &mut runner) {
        let pooled = lp_aggregate(&ensemble(members.iter().cloned().map(Into::into).collect())).unwrap();
        all_histograms &= matches!(pooled, ForecastDist::Histogram(_));
        let mixture = MixtureDist::equal(members.iter().cloned().map(Into::into).collect()).unwrap();
        let (lo, hi) = members[0].support();
        for k in 0..1000 {
            let z = lo - 0.5 + (hi - lo + 1.0) * k as f64 / 999.0;
            worst_hen = worst_hen.max((pooled.cdf(z) - mixture.cdf(z)).abs());
        }
    }
    outcome(
        worst_bqn <= 1e-12 && worst_hen <= 1e-12 && all_histograms,
        format!("max BQN gap {worst_bqn:.2e}, max HEN pool gap {worst_hen:.2e}"),
    )
}

fn hen_knots() -> Outcome {
    let mut runner = TestRunner::deterministic();
    let mut rng = seeded_rng(104);
    let mut failures = 0;
    for members in draws(arb_histogram_ensemble(5), 100, &mut runner) {
        let d = vi_hen(&members, VICoefficients::new(0.0, rng.gen_range(0.05..1.0)).unwrap()).unwrap();
        let mut expected: Vec<f64> = members.iter().flat_map(|h: &HistogramDist| h.cumulative().to_vec()).chain([0.0, 1.0]).collect();
        expected.sort_by(f64::total_cmp);
        expected.dedup_by(|x, y| (*x - *y).abs() <= KNOT_DEDUP_TOL);
        let same = d.levels().len() == expected.len()
            && d.levels().iter().zip(&expected).all(|(g, w)| (g - w).abs() <= KNOT_DEDUP_TOL);
        failures += usize::from(!same);
    }
    outcome(failures == 0, format!("{failures} of 100 knot sets differ"))
}

fn convexity() -> Outcome {
    let mut runner = TestRunner::deterministic();
    let mut rng = seeded_rng(105);
    let mut violations = 0;
    let mut worst: f64 = f64::NEG_INFINITY;
    for members in draws(proptest::collection::vec(arb_normal(), 1..6), 5_000, &mut runner) {
        let y = rng.gen_range(-15.0..15.0);
        let n = members.len() as f64;
        let parts: Vec<(f64, f64, f64)> = members.iter().map(|d| (1.0 / n, d.mu(), d.sigma())).collect();
        let avg = members.iter().map(|d| crps_normal(d.mu(), d.sigma(), y).unwrap()).sum::<f64>() / n;
        let gap = crps_normal_mixture(&parts, y) - avg;
        worst = worst.max(gap);
        violations += usize::from(gap > 1e-12);
    }
    for members in draws(arb_histogram_ensemble(6), 5_000, &mut runner) {
        let ens = ensemble(members.iter().cloned().map(Into::into).collect());
        let ForecastDist::Histogram(pooled) = lp_aggregate(&ens).unwrap() else {
            violations += 1;
            continue;
        };
        let (lo, hi) = pooled.support();
        let y = lo + rng.gen_range(-0.2..1.2) * (hi - lo);
        let avg = members.iter().map(|h| crps_histogram(h, y)).sum::<f64>() / members.len() as f64;
        let gap = crps_histogram(&pooled, y) - avg;
        worst = worst.max(gap);
        violations += usize::from(gap > 1e-12);
    }
    outcome(violations == 0, format!("{violations} violations in 10000 cases, max CRPS(LP) - mean member CRPS {worst:.2e}"))
}

fn estimation() -> Outcome {
    let mut details = Vec::new();
    let mut pass = true;
    for b in [-2.0, 1.0] {
        let (ens, obs) = synthetic(2000, 2, b, 1.0, 3);
        let a = estimate_vi_coefficients(AggMethod::Vaeq, &ens, &obs).unwrap().coeffs.a;
        pass &= (a + b).abs() < 0.05;
        details.push(format!("bias {b}: a = {a:.4}"));
    }
    let (ens, obs) = synthetic(2000, 2, 0.0, 2.0, 4);
    let w0 = estimate_vi_coefficients(AggMethod::V0w, &ens, &obs).unwrap().coeffs.w0;
    let (_, _, w_grid) = grid_search(&ens, &obs, (0.0, 0.0), (0.01, 1.01));
    pass &= (w0 / w_grid - 1.0).abs() < 0.1;
    details.push(format!("inflated spread: w0 = {w0:.4} vs grid {w_grid:.4}"));
    let (ens, obs) = synthetic(1000, 3, 0.7, 1.8, 5);
    let est = estimate_vi_coefficients(AggMethod::Vaw, &ens, &obs).unwrap();
    let (v_grid, a_grid, w_grid) = grid_search(&ens, &obs, (-2.0, 1.0), (0.05, 0.55));
    let within = est.validation_crps <= v_grid + 1e-9
        && (est.coeffs.a - a_grid).abs() <= 0.03 + 1e-9
        && (est.coeffs.w0 - w_grid).abs() <= 0.005 + 1e-9;
    pass &= within;
    details.push(format!(
        "Vaw ({:.4}, {:.4}) vs grid ({a_grid:.4}, {w_grid:.4}), objective {:.6} vs {v_grid:.6}",
        est.coeffs.a, est.coeffs.w0, est.validation_crps
    ));
    outcome(pass, details.join("; "))
}

fn gradients() -> Outcome {
    let data = generate(&ScenarioSpec {
        n_train: 400,
        n_valid: 100,
        n_test: 50,
        ..ScenarioSpec::new(ScenarioId::S1, 2)
    })
    .unwrap();
    let cases: Vec<usize> = (0..10).collect();
    let mut pass = true;
    let mut details = Vec::new();
    for head in HeadKind::ALL {
        let mut model = NetModel::initialize(&NetConfig::with_head(head), &data.train).unwrap();
        let worst = worst_gradient_error(&mut model, &data.train, &cases);
        pass &= worst <= 1e-4;
        details.push(format!("{head} {worst:.2e}"));
    }
    outcome(pass, format!("max relative error: {}", details.join(", ")))
}

fn study(id: ScenarioId, variants: &[HeadKind]) -> (RunResult, Summary) {
    let config = RunConfig {
        scenario: ScenarioSpec {
            n_test: 2000,
            ..ScenarioSpec::new(id, 0)
        },
        variants: variants.to_vec(),
        ..RunConfig::default()
    };
    let start = Instant::now();
    let result = run(&config).unwrap();
    let summary = summarize(&result).unwrap();
    println!(
        "  study {id} {variants:?}: {} reps, {} members, sizes {:?}, {:.0} s",
        config.repetitions,
        config.max_members,
        config.sizes,
        start.elapsed().as_secs_f64()
    );
    (result, summary)
}

fn methods() -> impl Iterator<Item = MethodLabel> {
    AggMethod::ALL.into_iter().map(MethodLabel::Agg)
}

fn median_crpss(summary: &Summary, variant: HeadKind, method: MethodLabel, n: usize) -> f64 {
    summary.row(variant, method, n).map_or(f64::NAN, |r| r.crpss_median)
}

fn crpss_of(result: &RunResult, variant: HeadKind, method: MethodLabel, n: usize, rep: usize) -> Option<f64> {
    result
        .records
        .iter()
        .find(|r| (r.variant, r.method, r.n, r.rep) == (variant, method, n, rep))
        .and_then(|r| r.metrics.as_ref())
        .map(|m| m.crpss)
}

/// `P(X >= k)` for `X ~ Binomial(n, 1/2)`.
fn sign_test_p(k: usize, n: usize) -> f64 {
    let mut choose = 1.0;
    let mut tail = 0.0;
    for i in 0..=n {
        if i >= k {
            tail += choose;
        }
        choose = choose * (n - i) as f64 / (i + 1) as f64;
    }
    tail / 2f64.powi(n as i32)
}

/// Cells with median skill at or below zero, as `variant method n=..: value`.
fn nonpositive_cells(summary: &Summary, variants: &[HeadKind], sizes: &[usize]) -> Vec<String> {
    let mut bad = Vec::new();
    for &v in variants {
        for m in methods() {
            for &n in sizes {
                let c = median_crpss(summary, v, m, n);
                if !(c > 0.0) {
                    bad.push(format!("{v} {m} n={n}: {c:.4}"));
                }
            }
        }
    }
    bad
}

fn positive_skill_and_ordering(result: &RunResult, summary: &Summary) -> Outcome {
    let sizes = &result.config.sizes;
    let bad = nonpositive_cells(summary, &[HeadKind::DRN, HeadKind::BQN], sizes);
    let lp = MethodLabel::Agg(AggMethod::LP);
    let v0eq = MethodLabel::Agg(AggMethod::V0eq);
    let unordered: Vec<usize> = sizes
        .iter()
        .copied()
        .filter(|&n| !(median_crpss(summary, HeadKind::DRN, v0eq, n) > median_crpss(summary, HeadKind::DRN, lp, n)))
        .collect();
    let reps = result.config.repetitions;
    let wins = (0..reps)
        .filter(|&rep| {
            match (crpss_of(result, HeadKind::DRN, v0eq, 10, rep), crpss_of(result, HeadKind::DRN, lp, 10, rep)) {
                (Some(a), Some(b)) => a > b,
                _ => false,
            }
        })
        .count();
    let p = sign_test_p(wins, reps);
    let detail = format!(
        "nonpositive medians: {bad:?}; DRN sizes where V0eq <= LP: {unordered:?}; DRN n=10 V0eq {:.4} vs LP {:.4}, V0eq wins {wins}/{reps} reps, sign test p = {p:.4}",
        median_crpss(summary, HeadKind::DRN, v0eq, 10),
        median_crpss(summary, HeadKind::DRN, lp, 10),
    );
    outcome(bad.is_empty() && unordered.is_empty() && p < 0.05, detail)
}

fn size_effect(result: &RunResult, summary: &Summary) -> Outcome {
    let mut failures = Vec::new();
    let mut lines = Vec::new();
    for &v in &result.config.variants {
        for m in methods() {
            let at10 = median_crpss(summary, v, m, 10);
            let at20 = median_crpss(summary, v, m, 20);
            lines.push(format!("{v} {m} {at10:.4}/{at20:.4}"));
            if !(at10 >= 0.9 * at20) {
                failures.push(format!("{v} {m}"));
            }
        }
    }
    outcome(failures.is_empty(), format!("failing: {failures:?}; n=10/n=20 medians: {}", lines.join(", ")))
}

fn scenario_two(result: &RunResult, summary: &Summary) -> Outcome {
    let bad = nonpositive_cells(summary, &[HeadKind::BQN], &result.config.sizes);
    let at20: Vec<String> = methods().map(|m| format!("{m} {:.4}", median_crpss(summary, HeadKind::BQN, m, 20))).collect();
    outcome(bad.is_empty(), format!("nonpositive medians: {bad:?}; n=20 medians: {}", at20.join(", ")))
}

fn hen_overdispersion(result: &RunResult, summary: &Summary) -> Outcome {
    let n_max = result.config.max_members;
    let mut pooled = Vec::new();
    for r in result.records.iter().filter(|r| r.variant == HeadKind::HEN && r.method == MethodLabel::Ensemble && r.n == n_max) {
        if let Some(m) = &r.metrics {
            pooled.resize(m.pit_histogram.len(), 0u64);
            for (acc, c) in pooled.iter_mut().zip(&m.pit_histogram) {
                *acc += c;
            }
        }
    }
    let (excess, z) = pit_central_excess(&pooled);
    let diagnostic = format!("HEN member PIT central excess {excess:.4} (z = {z:.1}), histogram {pooled:?}");
    if z < 3.0 {
        return outcome(true, format!("vacuous, members not overdispersed; {diagnostic}"));
    }
    let v0w = MethodLabel::Agg(AggMethod::V0w);
    let v0eq = MethodLabel::Agg(AggMethod::V0eq);
    let mut failures = Vec::new();
    let mut lines = Vec::new();
    for &n in result.config.sizes.iter().filter(|&&n| n >= 2) {
        let (Some(w), Some(e)) = (summary.row(HeadKind::HEN, v0w, n), summary.row(HeadKind::HEN, v0eq, n)) else {
            failures.push(format!("n={n} missing"));
            continue;
        };
        let delta = w.delta_n_mean.unwrap_or(f64::NAN);
        let closer = (w.coverage - NOMINAL_PI_LEVEL).abs() < (e.coverage - NOMINAL_PI_LEVEL).abs();
        lines.push(format!("n={n} dn {delta:.3} cov {:.3} vs {:.3}", w.coverage, e.coverage));
        if !(delta < 0.0) || !closer {
            failures.push(format!("n={n}"));
        }
    }
    outcome(
        failures.is_empty(),
        format!("failing: {failures:?}; {}; {diagnostic}", lines.join(", ")),
    )
}

fn main() {
    let mut failed = Vec::new();
    let mut report = |k: usize, title: &str, o: Outcome| {
        if !o.pass {
            failed.push(k);
        }
        println!("criterion {k:>2} {}: {title}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    };
    report(1, "CRPS closed forms match numerical integration", crps_matches_the_integral());
    report(2, "Vincentization preserves the normal shape", shape_preservation());
    report(3, "BQN coefficient and HEN probability averaging", averaging_identities());
    report(4, "HEN Vincentization knots", hen_knots());
    report(5, "CRPS convexity of the linear pool", convexity());
    report(6, "coefficient estimation", estimation());
    report(7, "network gradient checks", gradients());

    let start = Instant::now();
    let (s1, s1_summary) = study(ScenarioId::S1, &HeadKind::ALL);
    let (s2, s2_summary) = study(ScenarioId::S2, &[HeadKind::BQN]);
    report(8, "scenario 1 positive skill, V0eq ahead of LP for DRN", positive_skill_and_ordering(&s1, &s1_summary));
    report(9, "scenario 1 ensemble-size effect", size_effect(&s1, &s1_summary));
    report(10, "scenario 2 positive skill for BQN", scenario_two(&s2, &s2_summary));
    report(11, "HEN overdispersion corrected by V0w", hen_overdispersion(&s1, &s1_summary));
    println!("  study total {:.0} s", start.elapsed().as_secs_f64());

    println!("acceptance: {} of 11 criteria passed; failing: {failed:?}", 11 - failed.len());
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && !failed.is_empty() {
        std::process::exit(1);
    }
}
