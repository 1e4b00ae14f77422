//! Cumulative distribution functions matching the parameterizations of [`crate::losses`].

use crate::losses::gpd_sigma_from_theta;
use crate::special::{ln_lower_gamma, regularized_lower_gamma};

/// `P(Y ≤ y)` for the dGPD with survival `P(Y ≥ k) = (1 + e^θ k)^{-α}`.
pub fn dgpd_cdf(y: f64, theta: f64, alpha: f64) -> f64 {
    if y < 0.0 {
        return 0.0;
    }
    let k = y.floor();
    -(-alpha * (theta.exp() * (k + 1.0)).ln_1p()).exp_m1()
}

/// `P(Y ≤ y)` for a Poisson count with mean `e^θ`.
pub fn poisson_cdf(y: f64, theta: f64) -> f64 {
    if y < 0.0 {
        return 0.0;
    }
    let k = y.floor();
    // P(Y ≤ k) = Q(k + 1, μ)
    1.0 - regularized_lower_gamma(k + 1.0, theta.exp())
}

/// GPD CDF of an excess `x` with scale `sigma` and shape `xi > 0`.
pub fn gpd_cdf(x: f64, sigma: f64, xi: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    -((-1.0 / xi) * (xi * x / sigma).ln_1p()).exp_m1()
}

/// GPD CDF of an excess under the `κ`-quantile parameterization.
pub fn gpd_cdf_theta(x: f64, theta: f64, xi: f64, kappa: f64) -> f64 {
    gpd_cdf(x, gpd_sigma_from_theta(theta, xi, kappa), xi)
}

/// Density of the gamma distribution with shape `k` and mean `e^θ`, truncated to `(0, u]`.
pub fn trgamma_pdf(x: f64, theta: f64, k: f64, u: f64) -> f64 {
    if x <= 0.0 || x > u {
        return 0.0;
    }
    let rate = k * (-theta).exp();
    let ln_f = k * rate.ln() + (k - 1.0) * x.ln() - rate * x - ln_lower_gamma(k, rate * u);
    ln_f.exp()
}

/// CDF of the truncated gamma on `(0, u]`; exactly 1 at and above `u`.
pub fn trgamma_cdf(x: f64, theta: f64, k: f64, u: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= u {
        return 1.0;
    }
    let rate = k * (-theta).exp();
    (ln_lower_gamma(k, rate * x) - ln_lower_gamma(k, rate * u)).exp().min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn dgpd_cdf_matches_pmf_sum() {
        let (theta, alpha) = (-0.4, 3.0);
        let mut acc = 0.0;
        for k in 0..30 {
            acc += crate::losses::dgpd_raw_pmf(k as f64, theta, alpha).unwrap().value;
            assert_relative_eq!(dgpd_cdf(k as f64, theta, alpha), acc, epsilon = 1e-14);
        }
        assert_eq!(dgpd_cdf(-1.0, theta, alpha), 0.0);
    }

    #[test]
    fn poisson_cdf_matches_pmf_sum() {
        let mu: f64 = 3.7;
        let mut acc = 0.0;
        let mut pmf = (-mu).exp();
        for k in 0..25 {
            acc += pmf;
            assert_relative_eq!(poisson_cdf(k as f64, mu.ln()), acc, epsilon = 1e-13);
            pmf *= mu / (k + 1) as f64;
        }
    }

    #[test]
    fn trgamma_cdf_reaches_one_at_truncation() {
        assert_eq!(trgamma_cdf(5.0, 0.3, 2.0, 5.0), 1.0);
        assert_relative_eq!(trgamma_cdf(5.0 - 1e-12, 0.3, 2.0, 5.0), 1.0, epsilon = 1e-10);
        // k = 1: exponential truncated at u
        let (theta, u): (f64, f64) = (0.5, 2.0);
        let rate = (-theta).exp();
        let want = (1.0 - (-rate * 1.0).exp()) / (1.0 - (-rate * u).exp());
        assert_relative_eq!(trgamma_cdf(1.0, theta, 1.0, u), want, epsilon = 1e-14);
    }

    #[test]
    fn gpd_cdf_at_kappa_quantile() {
        let (theta, xi, kappa): (f64, f64, f64) = (1.3, 0.8, 0.7);
        assert_relative_eq!(gpd_cdf_theta(theta.exp(), theta, xi, kappa), kappa, epsilon = 1e-14);
    }
}
