//! Scalar numerics shared by the distribution and scoring code: standard
//! normal functions, adaptive quadrature, monotone root finding and seeded RNGs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::function::erf::{erfc, erfc_inv};
use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// 1/sqrt(pi)
pub const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;

pub fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

/// Inverse of the standard normal CDF on the open interval (0, 1).
pub fn std_normal_quantile(p: f64) -> f64 {
    let x = -SQRT_2 * erfc_inv(2.0 * p);
    if !x.is_finite() {
        return x;
    }
    // One Newton step lifts the inverse from ~1e-11 to full precision.
    let density = std_normal_pdf(x);
    if density > 0.0 {
        x - (std_normal_cdf(x) - p) / density
    } else {
        x
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Derivative of [`softplus`], the logistic sigmoid.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `e^x` for `x <= 0` (flushing below `e^-700`), accurate to about one ulp:
/// Cody–Waite reduction by ln 2 and the fdlibm rational approximation,
/// written without branches so it vectorizes.
#[inline(always)]
pub(crate) fn exp_nonpositive(x: f64) -> f64 {
    const ROUND: f64 = 6_755_399_441_055_744.0; // 1.5 * 2^52
    const LN2_HI: f64 = 6.931_471_803_691_238_164_90e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_700_02e-10;
    const P1: f64 = 1.666_666_666_666_660_190_37e-1;
    const P2: f64 = -2.777_777_777_701_559_338_42e-3;
    const P3: f64 = 6.613_756_321_437_934_361_17e-5;
    const P4: f64 = -1.653_390_220_546_525_153_90e-6;
    const P5: f64 = 4.138_136_797_057_238_460_39e-8;
    let x = x.max(-700.0);
    let t = x * std::f64::consts::LOG2_E + ROUND;
    let k = t - ROUND;
    let hi = x - k * LN2_HI;
    let lo = k * LN2_LO;
    let r = hi - lo;
    let r2 = r * r;
    let c = r - r2 * (P1 + r2 * (P2 + r2 * (P3 + r2 * (P4 + r2 * P5))));
    let y = 1.0 - ((lo - (r * c) / (2.0 - c)) - hi);
    let exponent = (t.to_bits() as i64 - ROUND.to_bits() as i64) + 1023;
    y * f64::from_bits((exponent as u64) << 52)
}

/// Dot product with four independent accumulators, so the loop pipelines
/// and vectorizes.
#[inline(always)]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (ca, ra) = a[..n].as_chunks::<4>();
    let (cb, rb) = b[..n].as_chunks::<4>();
    let mut acc = [0.0f64; 4];
    for (x, y) in ca.iter().zip(cb) {
        for j in 0..4 {
            acc[j] += x[j] * y[j];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `ln(1 + e)` for `e` in `[0, 1]`, accurate to about one ulp (fdlibm's
/// log kernel). Halving `1 + e` above `sqrt(2)` keeps the reduced argument
/// small; below it `e` itself is the exact reduced argument.
#[inline(always)]
fn ln_1p_unit(e: f64) -> f64 {
    const LN2_HI: f64 = 6.931_471_803_691_238_164_90e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_700_02e-10;
    const LG1: f64 = 6.666_666_666_666_735_130e-1;
    const LG2: f64 = 3.999_999_999_940_941_908e-1;
    const LG3: f64 = 2.857_142_874_366_239_149e-1;
    const LG4: f64 = 2.222_219_843_214_978_396e-1;
    const LG5: f64 = 1.818_357_216_161_805_012e-1;
    const LG6: f64 = 1.531_383_769_920_937_332e-1;
    const LG7: f64 = 1.479_819_860_511_658_591e-1;
    let big = e > std::f64::consts::SQRT_2 - 1.0;
    let f = if big { (e - 1.0) * 0.5 } else { e };
    let k = if big { 1.0 } else { 0.0 };
    let s = f / (2.0 + f);
    let z = s * s;
    let w = z * z;
    let t1 = w * (LG2 + w * (LG4 + w * LG6));
    let t2 = z * (LG1 + w * (LG3 + w * (LG5 + w * LG7)));
    let r = t2 + t1;
    let hfsq = 0.5 * f * f;
    k * LN2_HI - ((hfsq - (s * (hfsq + r) + k * LN2_LO)) - f)
}

/// Softplus and its derivative (the logistic sigmoid) sharing one
/// exponential; branch-free so loops over it vectorize. Agrees with
/// [`softplus`] and [`sigmoid`] to a few ulp.
#[inline(always)]
pub(crate) fn softplus_and_sigmoid(z: f64) -> (f64, f64) {
    let e = exp_nonpositive(-z.abs());
    let value = z.max(0.0) + ln_1p_unit(e);
    let num = if z >= 0.0 { 1.0 } else { e };
    (value, num / (1.0 + e))
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
// Gauss weights for nodes GK_NODES[1], [3], [5], [7].
const GAUSS_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gauss_kronrod_15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = GK_WEIGHTS[7] * fc;
    let mut gauss = GAUSS_WEIGHTS[3] * fc;
    for (j, (&x, &w)) in GK_NODES.iter().zip(GK_WEIGHTS.iter()).take(7).enumerate() {
        let dx = half * x;
        let pair = f(center - dx) + f(center + dx);
        kronrod += w * pair;
        if j % 2 == 1 {
            gauss += GAUSS_WEIGHTS[j / 2] * pair;
        }
    }
    (kronrod * half, (kronrod - gauss).abs() * half)
}

/// Adaptive Gauss–Kronrod (7/15) quadrature of `f` over `[a, b]` to
/// absolute error `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    fn recurse<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let (value, err) = gauss_kronrod_15(f, a, b);
        if err <= tol || depth == 0 || (b - a).abs() < 1e-14 {
            return value;
        }
        let mid = 0.5 * (a + b);
        recurse(f, a, mid, 0.5 * tol, depth - 1) + recurse(f, mid, b, 0.5 * tol, depth - 1)
    }
    if a == b {
        return 0.0;
    }
    recurse(&f, a, b, tol, 40)
}

/// Finds `z` in `[lo, hi]` with `g(z) = target` for a nondecreasing `g`,
/// using Newton steps where `g` supplies a positive slope and bisection
/// otherwise. Returns the smallest bracket endpoint satisfying `g(z) >= target`
/// once the bracket is narrower than `tol`.
pub fn solve_monotone<G>(g: G, target: f64, lo: f64, hi: f64, tol: f64) -> f64
where
    G: Fn(f64) -> (f64, Option<f64>),
{
    solve_monotone_from(g, target, lo, hi, tol, 0.5 * (lo + hi))
}

/// As [`solve_monotone`], with the first iterate at `start` (the midpoint
/// is used if `start` lies outside the bracket).
pub fn solve_monotone_from<G>(g: G, target: f64, mut lo: f64, mut hi: f64, tol: f64, start: f64) -> f64
where
    G: Fn(f64) -> (f64, Option<f64>),
{
    let mut z = if start > lo && start < hi { start } else { 0.5 * (lo + hi) };
    for _ in 0..200 {
        if hi - lo <= tol {
            break;
        }
        let (value, slope) = g(z);
        let diff = value - target;
        if diff == 0.0 {
            return z;
        }
        if diff < 0.0 {
            lo = z;
        } else {
            hi = z;
        }
        let newton = match slope {
            Some(s) if s > 0.0 && s.is_finite() => Some(z - diff / s),
            _ => None,
        };
        z = match newton {
            Some(n) if n > lo && n < hi => {
                // Newton steps that barely move are nudged so the bracket keeps shrinking.
                let step = (n - z).abs();
                if step < 0.25 * tol {
                    let nudge = 0.5 * tol;
                    if diff < 0.0 {
                        (n + nudge).min(hi)
                    } else {
                        (n - nudge).max(lo)
                    }
                } else {
                    n
                }
            }
            _ => 0.5 * (lo + hi),
        };
    }
    if hi - lo <= tol {
        0.5 * (lo + hi)
    } else {
        z
    }
}

/// Empirical quantile with linear interpolation between order statistics
/// (the common "type 7" definition). `sorted` must be ascending and nonempty.
pub fn empirical_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Median of a slice; NaN for an empty slice.
pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    empirical_quantile(&v, 0.5)
}
