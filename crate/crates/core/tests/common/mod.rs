//! Shared oracles and generators for the integration tests.

#![allow(dead_code)]

use distagg::distributions::{
    BernsteinQuantileDist, ForecastDist, HistogramDist, MixtureDist, NormalDist, PiecewiseLinearQuantile,
    SkewNormalDist,
};
use distagg::aggregation::{EnsembleForecast, ViObjective};
use distagg::numeric::seeded_rng;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Trapezoid rule with `steps` panels on every piece between consecutive
/// breakpoints.
pub fn trapezoid(f: impl Fn(f64) -> f64, breaks: &[f64], steps: usize) -> f64 {
    let mut b: Vec<f64> = breaks.to_vec();
    b.sort_by(f64::total_cmp);
    b.dedup();
    let mut total = 0.0;
    for w in b.windows(2) {
        let h = (w[1] - w[0]) / steps as f64;
        let mut s = 0.5 * (f(w[0]) + f(w[1]));
        for i in 1..steps {
            s += f(w[0] + i as f64 * h);
        }
        total += s * h;
    }
    total
}

/// CRPS as the integral of the squared difference between `cdf` and the
/// step function at `y`, over `[lo, hi]` widened to contain `y`; the two
/// sides of the step are integrated separately.
pub fn crps_oracle(cdf: impl Fn(f64) -> f64, y: f64, lo: f64, hi: f64, extra_breaks: &[f64], steps: usize) -> f64 {
    let lo = lo.min(y);
    let hi = hi.max(y);
    let mut left = vec![lo, y];
    left.extend(extra_breaks.iter().copied().filter(|b| *b > lo && *b < y));
    let mut right = vec![y, hi];
    right.extend(extra_breaks.iter().copied().filter(|b| *b > y && *b < hi));
    trapezoid(|z| cdf(z).powi(2), &left, steps) + trapezoid(|z| (1.0 - cdf(z)).powi(2), &right, steps)
}

/// Standard normal CDF via the error function series, independent of the crate.
pub fn phi(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2)
}

/// Kolmogorov distance between the empirical CDF of `sample` and `cdf`.
pub fn ks_distance(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

pub fn normal(mu: f64, sigma: f64) -> ForecastDist {
    NormalDist::new(mu, sigma).unwrap().into()
}

pub fn histogram(edges: &[f64], probs: &[f64]) -> HistogramDist {
    HistogramDist::new(edges.to_vec(), probs.to_vec()).unwrap()
}

/// Probabilities that sum to one to the last bit.
pub fn normalize(raw: &[f64]) -> Vec<f64> {
    let total: f64 = raw.iter().sum();
    let mut p: Vec<f64> = raw.iter().map(|r| r / total).collect();
    let head: f64 = p[..p.len() - 1].iter().sum();
    *p.last_mut().unwrap() = (1.0 - head).max(0.0);
    p
}

pub fn arb_normal() -> impl Strategy<Value = NormalDist> {
    (-10.0..10.0f64, 0.1..5.0f64).prop_map(|(m, s)| NormalDist::new(m, s).unwrap())
}

pub fn arb_skew_normal() -> impl Strategy<Value = SkewNormalDist> {
    (-5.0..5.0f64, 0.2..3.0f64, -6.0..6.0f64).prop_map(|(l, s, a)| SkewNormalDist::new(l, s, a).unwrap())
}

pub fn arb_bernstein() -> impl Strategy<Value = BernsteinQuantileDist> {
    (-5.0..5.0f64, prop::collection::vec(0.01..2.0f64, 1..13)).prop_map(|(start, incs)| {
        let mut c = vec![start];
        for d in incs {
            c.push(c.last().unwrap() + d);
        }
        BernsteinQuantileDist::new(c).unwrap()
    })
}

pub fn arb_edges(bins: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    (-5.0..5.0f64, prop::collection::vec(0.05..2.0f64, bins)).prop_map(|(start, widths)| {
        let mut e = vec![start];
        for w in widths {
            e.push(e.last().unwrap() + w);
        }
        e
    })
}

pub fn arb_histogram() -> impl Strategy<Value = HistogramDist> {
    arb_edges(1..15).prop_flat_map(|edges| {
        let k = edges.len() - 1;
        prop::collection::vec(0.01..1.0f64, k)
            .prop_map(move |raw| HistogramDist::new(edges.clone(), normalize(&raw)).unwrap())
    })
}

/// Histograms over common edges, as produced by one network variant.
pub fn arb_histogram_ensemble(max_members: usize) -> impl Strategy<Value = Vec<HistogramDist>> {
    arb_edges(2..12).prop_flat_map(move |edges| {
        let k = edges.len() - 1;
        prop::collection::vec(prop::collection::vec(0.01..1.0f64, k), 1..=max_members).prop_map(move |raws| {
            raws.iter()
                .map(|raw| HistogramDist::new(edges.clone(), normalize(raw)).unwrap())
                .collect()
        })
    })
}

pub fn arb_plq() -> impl Strategy<Value = PiecewiseLinearQuantile> {
    (prop::collection::vec(0.02..1.0f64, 1..8), -5.0..5.0f64, prop::collection::vec(0.01..2.0f64, 8))
        .prop_map(|(gaps, start, incs)| {
            let total: f64 = gaps.iter().sum();
            let mut levels = vec![0.0];
            let mut acc = 0.0;
            for g in &gaps[..gaps.len() - 1] {
                acc += g / total;
                levels.push(acc);
            }
            levels.push(1.0);
            let mut values = vec![start];
            for d in &incs[..levels.len() - 1] {
                values.push(values.last().unwrap() + d);
            }
            PiecewiseLinearQuantile::new(levels, values).unwrap()
        })
}

pub fn arb_normal_mixture() -> impl Strategy<Value = MixtureDist> {
    prop::collection::vec((arb_normal(), 0.05..1.0f64), 1..5).prop_map(|parts| {
        let weights = normalize(&parts.iter().map(|(_, w)| *w).collect::<Vec<_>>());
        MixtureDist::new(parts.into_iter().map(|(d, _)| d.into()).collect(), weights).unwrap()
    })
}

/// Any single distribution.
pub fn arb_dist() -> impl Strategy<Value = ForecastDist> {
    prop_oneof![
        arb_normal().prop_map(ForecastDist::from),
        arb_skew_normal().prop_map(ForecastDist::from),
        arb_bernstein().prop_map(ForecastDist::from),
        arb_histogram().prop_map(ForecastDist::from),
        arb_plq().prop_map(ForecastDist::from),
        arb_normal_mixture().prop_map(ForecastDist::from),
    ]
}

/// `E|X|` for `X ~ N(m, s^2)`.
fn abs_normal_mean(m: f64, s: f64) -> f64 {
    let z = m / s;
    let pdf = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    2.0 * s * pdf + m * (2.0 * phi(z) - 1.0)
}

/// Exact CRPS of a normal mixture, `E|X - y| - E|X - X'| / 2`.
pub fn crps_normal_mixture(parts: &[(f64, f64, f64)], y: f64) -> f64 {
    let mut first = 0.0;
    let mut second = 0.0;
    for &(wi, mi, si) in parts {
        first += wi * abs_normal_mean(mi - y, si);
        for &(wj, mj, sj) in parts {
            second += wi * wj * abs_normal_mean(mi - mj, (si * si + sj * sj).sqrt());
        }
    }
    first - 0.5 * second
}

/// Worst relative error between the analytic parameter gradient of the
/// mean loss over `cases` and central finite differences with step `1e-5`.
pub fn worst_gradient_error(model: &mut distagg::netlab::NetModel, data: &distagg::netlab::Dataset, cases: &[usize]) -> f64 {
    let n = model.mlp().n_params();
    let mut grad = vec![0.0; n];
    model.loss_and_grad(data, cases, &mut grad);
    let mut scratch = vec![0.0; n];
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for k in 0..n {
        let orig = model.mlp().params()[k];
        model.mlp_mut().params_mut()[k] = orig + h;
        let up = model.loss_and_grad(data, cases, &mut scratch).0;
        model.mlp_mut().params_mut()[k] = orig - h;
        let down = model.loss_and_grad(data, cases, &mut scratch).0;
        model.mlp_mut().params_mut()[k] = orig;
        let fd = (up - down) / (2.0 * h);
        let denom = fd.abs().max(grad[k].abs());
        // Parameters with no measurable influence carry no information.
        if denom > 1e-7 {
            worst = worst.max((fd - grad[k]).abs() / denom);
        }
    }
    worst
}

/// Validation set of `n_cases` cases with truth `N(mu_i, 1)`; member `k`
/// forecasts `N(mu_i + shift, spread)`.
pub fn synthetic(n_cases: usize, n_members: usize, shift: f64, spread: f64, seed: u64) -> (Vec<EnsembleForecast>, Vec<f64>) {
    let mut rng = seeded_rng(seed);
    let mut ens = Vec::with_capacity(n_cases);
    let mut obs = Vec::with_capacity(n_cases);
    for _ in 0..n_cases {
        let mu: f64 = rng.gen_range(-1.0..1.0);
        let z: f64 = StandardNormal.sample(&mut rng);
        obs.push(mu + z);
        ens.push(EnsembleForecast::new((0..n_members).map(|_| normal(mu + shift, spread)).collect()).unwrap());
    }
    (ens, obs)
}

/// Argmin of the oracle objective over a 101 x 101 grid.
pub fn grid_search(ens: &[EnsembleForecast], obs: &[f64], a_range: (f64, f64), w_range: (f64, f64)) -> (f64, f64, f64) {
    let obj = ViObjective::new(ens, obs).unwrap();
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for i in 0..=100 {
        let a = a_range.0 + (a_range.1 - a_range.0) * i as f64 / 100.0;
        for j in 0..=100 {
            let w0 = w_range.0 + (w_range.1 - w_range.0) * j as f64 / 100.0;
            let v = obj.value(a, w0);
            if v < best.0 {
                best = (v, a, w0);
            }
        }
    }
    best
}
