//! Special functions shared by the losses, the mixture CDF and the field simulator.

use statrs::function::erf::erfc;
pub use statrs::function::gamma::{gamma, ln_gamma};

const EPS: f64 = 1e-16;
const TINY: f64 = 1e-300;
const MAX_ITER: usize = 100_000;

/// Natural log of the lower incomplete gamma function `γ(a, x) = ∫_0^x t^{a-1} e^{-t} dt`.
///
/// Uses the power series below `x = a + 1` and the Lentz continued fraction for the
/// complementary function above it, so the result stays accurate when `γ(a, x)` is
/// far below the floating-point range.
pub fn ln_lower_gamma(a: f64, x: f64) -> f64 {
    debug_assert!(a > 0.0);
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if x.is_infinite() {
        return ln_gamma(a);
    }
    if x < a + 1.0 {
        let mut ap = a;
        let mut term = 1.0 / a;
        let mut sum = term;
        for _ in 0..MAX_ITER {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * EPS {
                break;
            }
        }
        a * x.ln() - x + sum.ln()
    } else {
        let lga = ln_gamma(a);
        let ln_upper_ratio = -x + a * x.ln() - lga + upper_gamma_cf(a, x).ln();
        lga + (-ln_upper_ratio.exp()).ln_1p()
    }
}

/// Continued fraction for `Γ(a, x) e^x x^{-a}`, valid for `x > a + 1`.
fn upper_gamma_cf(a: f64, x: f64) -> f64 {
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized lower incomplete gamma `P(a, x) = γ(a, x) / Γ(a)`.
pub fn regularized_lower_gamma(a: f64, x: f64) -> f64 {
    (ln_lower_gamma(a, x) - ln_gamma(a)).exp().min(1.0)
}

/// Modified Bessel function of the second kind `K_ν(x)` for `x > 0`.
///
/// Evaluated from `K_ν(x) = ∫_0^∞ exp(-x cosh t) cosh(νt) dt` with the trapezoidal
/// rule. The integrand is analytic in a strip around the real axis, so the rule
/// converges geometrically; a step of 0.05 is well below double precision error.
pub fn bessel_k(nu: f64, x: f64) -> f64 {
    assert!(x > 0.0, "bessel_k requires x > 0");
    let nu = nu.abs();
    let h = 0.05;
    let f = |t: f64| (-x * t.cosh()).exp() * (nu * t).cosh();
    let mut sum = 0.5 * f(0.0);
    let mut prev = sum;
    let mut t = 0.0;
    loop {
        t += h;
        let v = f(t);
        sum += v;
        // past the peak of the integrand and negligible
        if v <= prev && v <= sum * 1e-18 {
            break;
        }
        prev = v;
        if t > 1e3 {
            break;
        }
    }
    sum * h
}

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Inverse logit.
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m.is_infinite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(xs);
    xs.iter().map(|x| (x - lse).exp()).collect()
}
