//! Differentiable losses with analytic first and second derivatives with respect to
//! the boosting estimate `θ`.
//!
//! Every loss except the (optional) raw dGPD pmf is a negative log-likelihood up to
//! terms that do not depend on `θ`:
//!
//! | kind            | `θ` models                                   |
//! |-----------------|----------------------------------------------|
//! | `poisson`       | log mean                                     |
//! | `dgpd`          | log of `e^θ` in `(1 + e^θ y)^{-α}`           |
//! | `trgamma`       | log scale `μ` of a right-truncated gamma     |
//! | `gpd`           | log of the `κ`-quantile of the excesses      |
//! | `cross_entropy` | class scores, passed through softmax         |
//! | `squared_log`   | mean of `log(1 + y)`                         |

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{ln_lower_gamma, log_sum_exp, softmax};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Poisson,
    Dgpd,
    Trgamma,
    Gpd,
    CrossEntropy,
    SquaredLog,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Poisson => "poisson",
            LossKind::Dgpd => "dgpd",
            LossKind::Trgamma => "trgamma",
            LossKind::Gpd => "gpd",
            LossKind::CrossEntropy => "cross_entropy",
            LossKind::SquaredLog => "squared_log",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "poisson" => LossKind::Poisson,
            "dgpd" => LossKind::Dgpd,
            "trgamma" => LossKind::Trgamma,
            "gpd" => LossKind::Gpd,
            "cross_entropy" => LossKind::CrossEntropy,
            "squared_log" => LossKind::SquaredLog,
            other => return Err(Error::InvalidParameter(format!("unknown loss kind '{other}'"))),
        })
    }
}

/// Loss value and derivatives for a scalar boosting estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossEval {
    pub value: f64,
    pub grad: f64,
    pub hess: f64,
}

/// Loss value, gradient and diagonal hessian for a vector of class scores.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiLossEval {
    pub value: f64,
    pub grad: Vec<f64>,
    pub hess: Vec<f64>,
}

fn is_false(b: &bool) -> bool {
    !*b
}

/// A loss identity plus its fixed hyperparameters. Only the fields relevant to
/// `kind` are read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSpec {
    pub kind: LossKind,
    /// dGPD tail parameter, `α = 1/ξ`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// GPD shape.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi: Option<f64>,
    /// Quantile level modelled by the GPD boosting estimate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    /// Gamma shape.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_shape: Option<f64>,
    /// Gamma right truncation point.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_trunc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_classes: Option<usize>,
    /// Per-class multipliers of the cross-entropy row weights.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_weights: Option<Vec<f64>>,
    /// Optimize the dGPD pmf itself instead of its negative log.
    #[serde(default, skip_serializing_if = "is_false")]
    pub raw_pmf_loss: bool,
}

impl LossSpec {
    fn bare(kind: LossKind) -> Self {
        Self {
            kind,
            alpha: None,
            xi: None,
            kappa: None,
            k_shape: None,
            u_trunc: None,
            n_classes: None,
            class_weights: None,
            raw_pmf_loss: false,
        }
    }

    pub fn poisson() -> Self {
        Self::bare(LossKind::Poisson)
    }

    pub fn dgpd(alpha: f64) -> Self {
        Self { alpha: Some(alpha), ..Self::bare(LossKind::Dgpd) }
    }

    pub fn trgamma(k_shape: f64, u_trunc: f64) -> Self {
        Self { k_shape: Some(k_shape), u_trunc: Some(u_trunc), ..Self::bare(LossKind::Trgamma) }
    }

    pub fn gpd(xi: f64, kappa: f64) -> Self {
        Self { xi: Some(xi), kappa: Some(kappa), ..Self::bare(LossKind::Gpd) }
    }

    pub fn cross_entropy(n_classes: usize) -> Self {
        Self { n_classes: Some(n_classes), ..Self::bare(LossKind::CrossEntropy) }
    }

    pub fn squared_log() -> Self {
        Self::bare(LossKind::SquaredLog)
    }

    fn required(&self, value: Option<f64>, name: &str) -> Result<f64> {
        value.ok_or_else(|| {
            Error::InvalidParameter(format!("loss '{}' requires '{name}'", self.kind.name()))
        })
    }

    pub fn alpha(&self) -> Result<f64> {
        self.required(self.alpha, "alpha")
    }

    pub fn xi(&self) -> Result<f64> {
        self.required(self.xi, "xi")
    }

    pub fn kappa(&self) -> Result<f64> {
        self.required(self.kappa, "kappa")
    }

    pub fn k_shape(&self) -> Result<f64> {
        self.required(self.k_shape, "k_shape")
    }

    pub fn u_trunc(&self) -> Result<f64> {
        self.required(self.u_trunc, "u_trunc")
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, name: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be positive and finite, got {v}")))
            }
        };
        match self.kind {
            LossKind::Poisson | LossKind::SquaredLog => Ok(()),
            LossKind::Dgpd => positive(self.alpha()?, "alpha"),
            LossKind::Trgamma => {
                positive(self.k_shape()?, "k_shape")?;
                positive(self.u_trunc()?, "u_trunc")
            }
            LossKind::Gpd => {
                positive(self.xi()?, "xi")?;
                let kappa = self.kappa()?;
                if kappa > 0.0 && kappa < 1.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!("kappa must lie in (0, 1), got {kappa}")))
                }
            }
            LossKind::CrossEntropy => {
                let c = self.n_classes();
                if c < 2 {
                    return Err(Error::InvalidParameter("cross_entropy needs n_classes >= 2".into()));
                }
                if let Some(w) = &self.class_weights {
                    if w.len() != c || w.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                        return Err(Error::InvalidParameter(
                            "class_weights must hold n_classes nonnegative values".into(),
                        ));
                    }
                }
                Ok(())
            }
        }
    }

    /// Number of boosting scores per observation.
    pub fn n_outputs(&self) -> usize {
        match self.kind {
            LossKind::CrossEntropy => self.n_classes(),
            _ => 1,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes.unwrap_or(0)
    }

    pub fn class_weight(&self, class: usize) -> f64 {
        self.class_weights.as_ref().map_or(1.0, |w| w[class])
    }

    pub fn is_multiclass(&self) -> bool {
        self.kind == LossKind::CrossEntropy
    }

    /// Evaluate a scalar loss.
    pub fn eval(&self, y: f64, theta: f64) -> Result<LossEval> {
        match self.kind {
            LossKind::Poisson => poisson(y, theta),
            LossKind::Dgpd if self.raw_pmf_loss => dgpd_raw_pmf(y, theta, self.alpha()?),
            LossKind::Dgpd => dgpd(y, theta, self.alpha()?),
            LossKind::Trgamma => trgamma(y, theta, self.k_shape()?, self.u_trunc()?),
            LossKind::Gpd => gpd(y, theta, self.xi()?, self.kappa()?),
            LossKind::SquaredLog => squared_log(y, theta),
            LossKind::CrossEntropy => Err(Error::InvalidParameter(
                "cross_entropy is evaluated on class labels, not scalar responses".into(),
            )),
        }
    }

    /// Evaluate the weighted cross-entropy for an observation of class `class`.
    /// The effective weight is `row_weight` times the class weight.
    pub fn eval_class(&self, class: usize, theta: &[f64], row_weight: f64) -> Result<MultiLossEval> {
        let c = self.n_classes();
        if class >= c || theta.len() != c {
            return Err(Error::InvalidData(format!(
                "class {class} / score length {} incompatible with {c} classes",
                theta.len()
            )));
        }
        cross_entropy_index(class, theta, row_weight * self.class_weight(class))
    }

    /// Reject responses outside the support of the loss.
    pub fn check_response(&self, y: f64) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidData(msg));
        match self.kind {
            LossKind::Poisson | LossKind::Dgpd => {
                if !(y >= 0.0 && y.is_finite() && y.fract() == 0.0) {
                    return bad(format!("count response must be a nonnegative integer, got {y}"));
                }
            }
            LossKind::Trgamma => {
                let u = self.u_trunc()?;
                if !(y > 0.0 && y <= u) {
                    return bad(format!("trgamma response must lie in (0, {u}], got {y}"));
                }
            }
            LossKind::Gpd => {
                if !(y > 0.0 && y.is_finite()) {
                    return bad(format!("gpd response must be a positive excess, got {y}"));
                }
            }
            LossKind::SquaredLog => {
                if !(y >= 0.0 && y.is_finite()) {
                    return bad(format!("squared_log response must be nonnegative, got {y}"));
                }
            }
            LossKind::CrossEntropy => {
                if !(y >= 0.0 && y.fract() == 0.0 && (y as usize) < self.n_classes()) {
                    return bad(format!("class label {y} out of range"));
                }
            }
        }
        Ok(())
    }
}

fn check_count(y: f64) -> Result<()> {
    if y >= 0.0 && y.is_finite() && y.fract() == 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidData(format!("count response must be a nonnegative integer, got {y}")))
    }
}

/// Poisson deviance-style loss `y log(y / e^θ) - y + e^θ`, with `0 log 0 = 0`.
pub fn poisson(y: f64, theta: f64) -> Result<LossEval> {
    check_count(y)?;
    let mu = theta.exp();
    let ylogy = if y > 0.0 { y * (y.ln() - theta) } else { 0.0 };
    Ok(LossEval { value: ylogy - y + mu, grad: mu - y, hess: mu })
}

/// Intermediate quantities of the dGPD pmf, all scaled by `(1 + e^θ y)^{-α}` to avoid underflow.
struct DgpdTerms {
    ln_pmf: f64,
    /// p'/p
    d1: f64,
    /// p''/p
    d2: f64,
}

fn dgpd_terms(y: f64, theta: f64, alpha: f64) -> Result<DgpdTerms> {
    check_count(y)?;
    if !(alpha > 0.0) {
        return Err(Error::InvalidParameter(format!("alpha must be positive, got {alpha}")));
    }
    let t = theta.exp();
    let a = t * y;
    let b = t * (y + 1.0);
    let la = a.ln_1p();
    // log((1+b)/(1+a)) without cancellation
    let gap = (t / (1.0 + a)).ln_1p();
    // p = (1+a)^{-α} (1 - r),  r = ((1+a)/(1+b))^α
    let r = (-alpha * gap).exp();
    let q = -(-alpha * gap).exp_m1();
    let ln_pmf = -alpha * la + q.ln();
    if !(q > 0.0) || !ln_pmf.is_finite() {
        return Err(Error::Numerical(format!(
            "dGPD pmf underflow at y = {y}, theta = {theta}, alpha = {alpha}"
        )));
    }
    let a1 = a / (1.0 + a);
    let b1 = b / (1.0 + b);
    let d1 = alpha * (r * b1 - a1) / q;
    let second = |s: f64| alpha * (alpha + 1.0) * s * s - alpha * s;
    let d2 = (second(a1) - r * second(b1)) / q;
    Ok(DgpdTerms { ln_pmf, d1, d2 })
}

/// Negative log of the discrete generalized Pareto pmf
/// `(1 + e^θ y)^{-α} - (1 + e^θ (y + 1))^{-α}`.
pub fn dgpd(y: f64, theta: f64, alpha: f64) -> Result<LossEval> {
    let t = dgpd_terms(y, theta, alpha)?;
    Ok(LossEval { value: -t.ln_pmf, grad: -t.d1, hess: -(t.d2 - t.d1 * t.d1) })
}

/// The dGPD pmf itself with its raw derivatives.
pub fn dgpd_raw_pmf(y: f64, theta: f64, alpha: f64) -> Result<LossEval> {
    let t = dgpd_terms(y, theta, alpha)?;
    let p = t.ln_pmf.exp();
    Ok(LossEval { value: p, grad: p * t.d1, hess: p * t.d2 })
}

/// Mean of the dGPD, `Σ_{k≥1} (1 + e^θ k)^{-α}`, defined for `α > 1`.
///
/// Terms are summed explicitly until the Euler–Maclaurin remainder of the tail is
/// below `tol`; the tail is then added in closed form (integral plus endpoint
/// corrections up to the third derivative).
pub fn dgpd_mean(theta: f64, alpha: f64, tol: f64) -> Result<f64> {
    if !(alpha > 1.0) {
        return Err(Error::MeanUndefined(alpha));
    }
    let t = theta.exp();
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Numerical(format!("dGPD mean: e^theta out of range at theta = {theta}")));
    }
    let poch = |n: usize| (0..n).map(|i| alpha + i as f64).product::<f64>();
    let (p1, p3, p5) = (poch(1), poch(3), poch(5));
    let f = |x: f64| (-alpha * (t * x).ln_1p()).exp();
    let dn = |x: f64, pn: f64, n: i32| pn * t.powi(n) * (-(alpha + n as f64) * (t * x).ln_1p()).exp();
    const MAX_TERMS: u64 = 50_000_000;
    let mut sum = 0.0;
    let mut k = 1u64;
    loop {
        let x = k as f64;
        let remainder = dn(x, p5, 5) / 30240.0;
        if remainder < tol {
            let integral = ((1.0 - alpha) * (t * x).ln_1p()).exp() / (t * (alpha - 1.0));
            // Σ_{j≥k} f(j) = ∫_k^∞ f + f(k)/2 - f'(k)/12 + f'''(k)/720 - ...
            let tail = integral + 0.5 * f(x) + dn(x, p1, 1) / 12.0 - dn(x, p3, 3) / 720.0;
            return Ok(sum + tail);
        }
        sum += f(x);
        k += 1;
        if k > MAX_TERMS {
            return Err(Error::Numerical(format!("dGPD mean did not converge at theta = {theta}")));
        }
    }
}

/// Negative log-likelihood (up to θ-free terms) of a gamma distribution with shape
/// `k` and mean `e^θ`, right-truncated at `u`.
pub fn trgamma(y: f64, theta: f64, k: f64, u: f64) -> Result<LossEval> {
    if !(k > 0.0 && u > 0.0) {
        return Err(Error::InvalidParameter(format!("trgamma needs k > 0 and u > 0, got k = {k}, u = {u}")));
    }
    if !(y > 0.0 && y <= u) {
        return Err(Error::InvalidData(format!("trgamma response must lie in (0, {u}], got {y}")));
    }
    let inv_mu = (-theta).exp();
    let ln_s = k.ln() + u.ln() - theta;
    let s = ln_s.exp();
    let lg = ln_lower_gamma(k, s);
    if !lg.is_finite() {
        return Err(Error::Numerical(format!("incomplete gamma underflow at theta = {theta}")));
    }
    // R = s γ_s(k, s) / γ(k, s) = s^k e^{-s} / γ(k, s)
    let ratio = (k * ln_s - s - lg).exp();
    let yk = y * k * inv_mu;
    Ok(LossEval {
        value: k * theta + yk + lg,
        grad: k - yk - ratio,
        hess: yk + ratio * (k - s - ratio),
    })
}

/// `(1 - κ)^{-ξ} - 1`, the factor linking the GPD scale to its `κ`-quantile.
pub fn gpd_quantile_factor(xi: f64, kappa: f64) -> f64 {
    (-xi * (-kappa).ln_1p()).exp_m1()
}

/// GPD scale `σ` whose `κ`-quantile equals `e^θ`.
pub fn gpd_sigma_from_theta(theta: f64, xi: f64, kappa: f64) -> f64 {
    xi * theta.exp() / gpd_quantile_factor(xi, kappa)
}

/// Boosting estimate `θ = log κ-quantile` for a GPD with scale `σ`.
pub fn gpd_theta_from_sigma(sigma: f64, xi: f64, kappa: f64) -> f64 {
    (gpd_quantile_factor(xi, kappa) * sigma / xi).ln()
}

/// GPD negative log density of an excess `y`, with the boosting estimate modelling
/// the log of the `κ`-quantile.
pub fn gpd(y: f64, theta: f64, xi: f64, kappa: f64) -> Result<LossEval> {
    if !(xi > 0.0 && kappa > 0.0 && kappa < 1.0) {
        return Err(Error::InvalidParameter(format!("gpd needs xi > 0 and kappa in (0,1), got xi = {xi}, kappa = {kappa}")));
    }
    if !(y > 0.0 && y.is_finite()) {
        return Err(Error::InvalidData(format!("gpd response must be a positive excess, got {y}")));
    }
    let c = gpd_quantile_factor(xi, kappa);
    let z = y * c * (-theta).exp();
    let m = (xi + 1.0) / xi;
    Ok(LossEval {
        value: m * z.ln_1p() + theta + xi.ln() - c.ln(),
        grad: 1.0 - m * z / (1.0 + z),
        hess: m * z / ((1.0 + z) * (1.0 + z)),
    })
}

/// Weighted cross-entropy on a one-hot label vector.
pub fn cross_entropy(y: &[f64], theta: &[f64], w: f64) -> Result<MultiLossEval> {
    if y.len() != theta.len() || y.len() < 2 {
        return Err(Error::InvalidData(format!(
            "cross_entropy needs matching label/score vectors of length >= 2, got {} and {}",
            y.len(),
            theta.len()
        )));
    }
    let ones = y.iter().filter(|v| **v == 1.0).count();
    let zeros = y.iter().filter(|v| **v == 0.0).count();
    if ones != 1 || zeros != y.len() - 1 {
        return Err(Error::InvalidData("cross_entropy label must be one-hot".into()));
    }
    let class = y.iter().position(|v| *v == 1.0).unwrap_or(0);
    cross_entropy_index(class, theta, w)
}

fn cross_entropy_index(class: usize, theta: &[f64], w: f64) -> Result<MultiLossEval> {
    if !(w >= 0.0 && w.is_finite()) {
        return Err(Error::InvalidData(format!("cross_entropy weight must be nonnegative, got {w}")));
    }
    let lse = log_sum_exp(theta);
    let p = softmax(theta);
    let grad = p
        .iter()
        .enumerate()
        .map(|(c, pc)| w * (pc - if c == class { 1.0 } else { 0.0 }))
        .collect();
    let hess = p.iter().map(|pc| w * pc * (1.0 - pc)).collect();
    Ok(MultiLossEval { value: -w * (theta[class] - lse), grad, hess })
}

/// Squared error on `log(1 + y)`.
pub fn squared_log(y: f64, theta: f64) -> Result<LossEval> {
    if !(y >= 0.0 && y.is_finite()) {
        return Err(Error::InvalidData(format!("squared_log response must be nonnegative, got {y}")));
    }
    let z = y.ln_1p();
    Ok(LossEval { value: 0.5 * (z - theta) * (z - theta), grad: theta - z, hess: 1.0 })
}
