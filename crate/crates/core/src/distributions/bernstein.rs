use rand::Rng;
use serde::{Deserialize, Serialize};

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};

/// Quantile function given as a linear combination of Bernstein basis
/// polynomials of degree `d = coeffs.len() - 1`. Support is `[coeffs[0], coeffs[d]]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BernsteinRepr")]
pub struct BernsteinQuantileDist {
    coeffs: Vec<f64>,
}

#[derive(Deserialize)]
struct BernsteinRepr {
    coeffs: Vec<f64>,
}

impl TryFrom<BernsteinRepr> for BernsteinQuantileDist {
    type Error = Error;
    fn try_from(r: BernsteinRepr) -> Result<Self> {
        BernsteinQuantileDist::new(r.coeffs)
    }
}

/// Evaluates `sum_j coeffs[j] * C(d, j) p^j (1-p)^(d-j)` with the
/// Bernstein–Horner scheme in `O(d)`; exact at `p = 0` and `p = 1`.
pub fn bernstein_eval(coeffs: &[f64], p: f64) -> f64 {
    horner(coeffs.len() - 1, |j| coeffs[j], p)
}

const BINOM_MAX: usize = 64;

/// Pascal's triangle up to `BINOM_MAX`; every entry fits in a `u64`.
const BINOM: [[u64; BINOM_MAX + 1]; BINOM_MAX + 1] = {
    let mut t = [[0u64; BINOM_MAX + 1]; BINOM_MAX + 1];
    let mut n = 0;
    while n <= BINOM_MAX {
        t[n][0] = 1;
        let mut k = 1;
        while k <= n {
            t[n][k] = t[n - 1][k - 1] + if k < n { t[n - 1][k] } else { 0 };
            k += 1;
        }
        n += 1;
    }
    t
};

/// `sum_j c(j) * B_jd(p)`: powers of `p` and binomials are carried
/// along while the partial sum is scaled by `1 - p` at every step.
#[inline(always)]
fn horner(degree: usize, c: impl Fn(usize) -> f64, p: f64) -> f64 {
    let q = 1.0 - p;
    let mut power = 1.0;
    let mut acc = c(0) * q;
    if degree <= BINOM_MAX {
        let row = &BINOM[degree];
        for i in 1..degree {
            power *= p;
            acc = (acc + power * row[i] as f64 * c(i)) * q;
        }
    } else {
        let mut binom = 1.0;
        for i in 1..degree {
            power *= p;
            binom = binom * (degree - i + 1) as f64 / i as f64;
            acc = (acc + power * binom * c(i)) * q;
        }
    }
    acc + power * p * c(degree)
}

/// `(Q(p), Q'(p))`; the derivative is `d` times the degree `d - 1`
/// polynomial of the coefficient differences.
fn eval_with_slope(coeffs: &[f64], p: f64) -> (f64, f64) {
    let degree = coeffs.len() - 1;
    let value = horner(degree, |j| coeffs[j], p);
    let slope = if degree == 1 {
        coeffs[1] - coeffs[0]
    } else {
        degree as f64 * horner(degree - 1, |j| coeffs[j + 1] - coeffs[j], p)
    };
    (value, slope)
}

thread_local! {
    static GRID_BASIS: RefCell<Vec<(usize, usize, Rc<Vec<f64>>)>> = const { RefCell::new(Vec::new()) };
}

/// Basis values at the levels `k / (K + 1)`, level-major
/// (`basis[k * (d + 1) + j]`), computed once per thread and shape.
pub(crate) fn grid_basis(degree: usize, k: usize) -> Rc<Vec<f64>> {
    GRID_BASIS.with(|cache| {
        let mut cache = cache.borrow_mut();
        if let Some((_, _, b)) = cache.iter().find(|(d, n, _)| *d == degree && *n == k) {
            return Rc::clone(b);
        }
        let basis: Vec<f64> = (1..=k)
            .flat_map(|i| bernstein_basis(degree, i as f64 / (k + 1) as f64))
            .collect();
        let basis = Rc::new(basis);
        cache.push((degree, k, Rc::clone(&basis)));
        basis
    })
}

/// The value of every basis polynomial `B_jd(p)`, `j = 0..=d`.
pub fn bernstein_basis(degree: usize, p: f64) -> Vec<f64> {
    let q = 1.0 - p;
    let mut basis = vec![0.0; degree + 1];
    basis[0] = 1.0;
    for k in 1..=degree {
        // Raise the degree by one in place, from the top down.
        let mut prev = 0.0;
        for j in 0..=k {
            let current = basis[j];
            basis[j] = q * current + p * prev;
            prev = current;
        }
    }
    basis
}

impl BernsteinQuantileDist {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() < 2 {
            return Err(Error::invalid("Bernstein quantile function needs degree >= 1"));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("Bernstein coefficients must be finite"));
        }
        if coeffs.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid("Bernstein coefficients must be nondecreasing"));
        }
        Ok(Self { coeffs })
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn support(&self) -> (f64, f64) {
        (self.coeffs[0], self.coeffs[self.degree()])
    }

    fn is_point_mass(&self) -> bool {
        self.coeffs[0] == self.coeffs[self.degree()]
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::domain(format!(
                "Bernstein quantile requires p in [0, 1], got {p}"
            )));
        }
        Ok(bernstein_eval(&self.coeffs, p))
    }

    /// Derivative of the quantile function.
    pub fn quantile_derivative(&self, p: f64) -> f64 {
        eval_with_slope(&self.coeffs, p).1
    }

    /// Quantiles at the `K` levels `k / (K + 1)`.
    pub fn grid_quantiles(&self, k: usize) -> Vec<f64> {
        let width = self.coeffs.len();
        grid_basis(self.degree(), k)
            .chunks_exact(width)
            .map(|row| row.iter().zip(&self.coeffs).map(|(b, c)| b * c).sum())
            .collect()
    }

    /// Solves `Q(p) = z` for an interior `z` by Newton's method inside a
    /// shrinking bracket, starting where the control polygon crosses `z`.
    /// Returns `(p, Q'(p))`.
    fn invert(&self, z: f64) -> (f64, f64) {
        let c = &self.coeffs;
        let d = self.degree();
        let j = c.partition_point(|&a| a <= z).clamp(1, d) - 1;
        let span = c[j + 1] - c[j];
        let frac = if span > 0.0 { ((z - c[j]) / span).clamp(0.0, 1.0) } else { 0.5 };
        let mut p = ((j as f64 + frac) / d as f64).clamp(0.0, 1.0);
        let (mut lo, mut hi) = (0.0, 1.0);
        let mut slope = 0.0;
        for _ in 0..100 {
            let (value, s) = eval_with_slope(c, p);
            slope = s;
            let diff = value - z;
            if diff == 0.0 {
                break;
            }
            if diff < 0.0 {
                lo = p;
            } else {
                hi = p;
            }
            let newton = if s > 0.0 { p - diff / s } else { f64::NAN };
            let next = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
            let done = (next - p).abs() <= 1e-15 || hi - lo <= 1e-15;
            p = next;
            if done {
                break;
            }
        }
        (p, slope)
    }

    /// Returns `(F(z), f(z))`. The density is `None` for a point mass.
    pub fn cdf_pdf(&self, z: f64) -> (f64, Option<f64>) {
        let (lo, hi) = self.support();
        if self.is_point_mass() {
            return (if z >= lo { 1.0 } else { 0.0 }, None);
        }
        if z < lo || z > hi {
            return (if z < lo { 0.0 } else { 1.0 }, Some(0.0));
        }
        let (p, slope) = if z == hi {
            (1.0, self.quantile_derivative(1.0))
        } else if z == lo {
            (0.0, self.quantile_derivative(0.0))
        } else {
            self.invert(z)
        };
        let density = if slope > 0.0 { 1.0 / slope } else { f64::INFINITY };
        (p, Some(density))
    }

    pub fn cdf(&self, z: f64) -> f64 {
        self.cdf_pdf(z).0
    }

    /// `P(Y < z)`; differs from [`Self::cdf`] only for a point mass.
    pub fn cdf_left(&self, z: f64) -> f64 {
        if self.is_point_mass() {
            return if z > self.coeffs[0] { 1.0 } else { 0.0 };
        }
        self.cdf(z)
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        bernstein_eval(&self.coeffs, rng.gen::<f64>())
    }

    /// Mean `sum_j alpha_j / (d + 1)`, since every basis polynomial integrates to `1/(d+1)`.
    pub fn mean(&self) -> f64 {
        self.coeffs.iter().sum::<f64>() / self.coeffs.len() as f64
    }
}
