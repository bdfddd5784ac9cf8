mod common;

use common::*;
use distagg::distributions::{BernsteinQuantileDist, ForecastDist, MixtureDist, NormalDist};
use proptest::prelude::*;

#[test]
fn cdf_examples() {
    assert_eq!(normal(0.0, 1.0).cdf(0.0), 0.5);
    let h = histogram(&[0.0, 1.0, 2.0], &[0.5, 0.5]);
    assert!((h.cdf(0.5) - 0.25).abs() < 1e-15);
    let m = MixtureDist::equal(vec![normal(7.0, 1.0), normal(10.0, 1.0)]).unwrap();
    assert!((m.cdf(8.5) - 0.5).abs() < 1e-15);
}

#[test]
fn quantile_examples() {
    let b = BernsteinQuantileDist::new(vec![0.0, 1.0]).unwrap();
    assert!((b.quantile(0.3).unwrap() - 0.3).abs() < 1e-15);
    let h = histogram(&[0.0, 1.0, 2.0], &[0.25, 0.75]);
    assert!((h.quantile(0.25).unwrap() - 1.0).abs() < 1e-15);
    assert!((normal(8.5, 1.0).quantile(0.5).unwrap() - 8.5).abs() < 1e-12);
}

#[test]
fn sample_examples() {
    let s = normal(0.0, 1.0).sample(100_000, 1).unwrap();
    let mean = s.iter().sum::<f64>() / s.len() as f64;
    assert!(mean.abs() < 0.02, "sample mean {mean}");

    let u: ForecastDist = histogram(&[0.0, 1.0], &[1.0]).into();
    for m in [1, 10, 1000] {
        assert!(u.sample(m, 2).unwrap().iter().all(|x| (0.0..1.0).contains(x)));
    }

    let a = 3.0;
    let m: ForecastDist = MixtureDist::new(vec![normal(a, 1e-9), normal(-4.0, 1e-9)], vec![1.0, 0.0])
        .unwrap()
        .into();
    assert!(m.sample(10_000, 3).unwrap().iter().all(|x| (x - a).abs() < 1e-6));
}

#[test]
fn invalid_parameters_are_rejected() {
    assert!(NormalDist::new(0.0, 0.0).is_err());
    assert!(NormalDist::new(f64::NAN, 1.0).is_err());
    assert!(BernsteinQuantileDist::new(vec![1.0, 0.0]).is_err());
    assert!(distagg::distributions::HistogramDist::new(vec![0.0, 1.0], vec![0.9]).is_err());
    assert!(distagg::distributions::HistogramDist::new(vec![1.0, 0.0], vec![1.0]).is_err());
    assert!(MixtureDist::new(vec![normal(0.0, 1.0)], vec![0.5]).is_err());
    assert!(normal(0.0, 1.0).quantile(1.5).is_err());
}

#[test]
fn bernstein_ties_are_accepted() {
    let b = BernsteinQuantileDist::new(vec![0.0, 1.0, 1.0, 2.0]).unwrap();
    assert_eq!(b.quantile(0.0).unwrap(), 0.0);
    assert_eq!(b.quantile(1.0).unwrap(), 2.0);
}

#[test]
fn samples_follow_the_cdf() {
    let dists: Vec<ForecastDist> = vec![
        normal(1.0, 2.0),
        distagg::distributions::SkewNormalDist::new(0.0, 1.0, -5.0).unwrap().into(),
        BernsteinQuantileDist::new(vec![-1.0, 0.0, 0.5, 3.0]).unwrap().into(),
        histogram(&[0.0, 1.0, 3.0, 3.5], &[0.2, 0.5, 0.3]).into(),
        distagg::distributions::PiecewiseLinearQuantile::new(vec![0.0, 0.3, 1.0], vec![-1.0, 0.0, 4.0])
            .unwrap()
            .into(),
        MixtureDist::equal(vec![normal(7.0, 1.0), normal(10.0, 1.0)]).unwrap().into(),
    ];
    for (i, d) in dists.iter().enumerate() {
        let s = d.sample(100_000, 10 + i as u64).unwrap();
        let ks = ks_distance(&s, |z| d.cdf(z));
        assert!(ks < 0.01, "{:?}: Kolmogorov distance {ks}", d.family());
    }
}

#[test]
fn json_schema_round_trip() {
    let text = r#"[{"family":"normal","mu":1.0,"sigma":2.0},
                   {"family":"histogram","edges":[0.0,1.0,2.0],"probs":[0.25,0.75]},
                   {"family":"bernstein","coeffs":[0.0,1.0,3.0]}]"#;
    let dists: Vec<ForecastDist> = serde_json::from_str(text).unwrap();
    let back: Vec<ForecastDist> = serde_json::from_str(&serde_json::to_string(&dists).unwrap()).unwrap();
    assert_eq!(dists, back);
}

fn grid(k: usize) -> impl Iterator<Item = f64> {
    (1..k).map(move |i| i as f64 / k as f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn cdf_and_quantile_are_monotone(d in arb_dist(), z1 in -20.0..20.0f64, dz in 0.0..10.0f64, p1 in 0.0..1.0f64, dp in 0.0..1.0f64) {
        prop_assert!(d.cdf(z1) <= d.cdf(z1 + dz));
        let p2 = (p1 + dp).min(1.0);
        if !matches!(d, ForecastDist::Normal(_) | ForecastDist::SkewNormal(_) | ForecastDist::Mixture(_)) || (p1 > 0.0 && p2 < 1.0) {
            prop_assert!(d.quantile(p1).unwrap() <= d.quantile(p2).unwrap());
        }
    }

    #[test]
    fn quantile_round_trip(d in prop_oneof![
        arb_normal().prop_map(ForecastDist::from),
        arb_skew_normal().prop_map(ForecastDist::from),
        arb_bernstein().prop_map(ForecastDist::from),
        arb_normal_mixture().prop_map(ForecastDist::from),
    ]) {
        for p in grid(100) {
            let q = d.quantile(p).unwrap();
            prop_assert!((d.cdf(q) - p).abs() <= 1e-8, "p {} -> q {} -> {}", p, q, d.cdf(q));
        }
    }

    #[test]
    fn histogram_cdf_is_exact_at_the_ends(h in arb_histogram()) {
        let (lo, hi) = h.support();
        prop_assert_eq!(h.cdf(lo), 0.0);
        prop_assert_eq!(h.cdf(hi), 1.0);
    }

    #[test]
    fn bernstein_support_is_first_and_last_coefficient(b in arb_bernstein()) {
        let c = b.coeffs();
        prop_assert_eq!(b.quantile(0.0).unwrap(), c[0]);
        prop_assert_eq!(b.quantile(1.0).unwrap(), *c.last().unwrap());
    }

    #[test]
    fn json_round_trip(d in arb_dist()) {
        let back: ForecastDist = serde_json::from_str(&serde_json::to_string(&d).unwrap()).unwrap();
        prop_assert_eq!(back, d);
    }
}
