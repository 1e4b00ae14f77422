//! Threshold scoring, cross-validation over tree-count checkpoints, the one-standard-error
//! rule, and Gaussian-process Bayesian optimization of hyperparameters.

use std::collections::HashSet;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::booster::{fit, BoostedModel, Targets, TrainParams};
use crate::dataset::{GridDataset, ObsKey, Response, BA_CLASS_COVARIATES, CNT_COVARIATE, DEFAULT_SIZE_THRESHOLD};
use crate::dist::{dgpd_cdf, poisson_cdf};
use crate::error::{Error, Result};
use crate::losses::{LossKind, LossSpec};
use crate::matrix::Matrix;
use crate::mixture::{fit_mixture, MixtureConfig, MixtureModel};
use crate::spatialcv::FoldSet;
use crate::special::{normal_cdf, normal_pdf};

/// Default count thresholds (28).
pub const DEFAULT_CNT_THRESHOLDS: [f64; 28] = [
    0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 12.0, 14.0, 16.0, 18.0, 20.0, 22.0, 24.0, 26.0, 28.0,
    30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0, 100.0,
];

/// Default burned-area thresholds in acres (28).
pub const DEFAULT_BA_THRESHOLDS: [f64; 28] = [
    0.0, 1.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0, 100.0, 150.0, 200.0, 250.0, 300.0, 400.0, 500.0,
    1000.0, 1500.0, 2000.0, 5000.0, 10000.0, 20000.0, 30000.0, 40000.0, 50000.0, 100000.0,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdScoreSpec {
    pub thresholds: Vec<f64>,
    pub weights: Vec<f64>,
}

impl ThresholdScoreSpec {
    pub fn new(thresholds: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let s = Self { thresholds, weights };
        s.validate()?;
        Ok(s)
    }

    /// Unit weights on the given thresholds.
    pub fn uniform(thresholds: Vec<f64>) -> Result<Self> {
        let w = vec![1.0; thresholds.len()];
        Self::new(thresholds, w)
    }

    pub fn default_for(response: Response) -> Self {
        let t = match response {
            Response::Cnt => DEFAULT_CNT_THRESHOLDS.to_vec(),
            Response::Ba => DEFAULT_BA_THRESHOLDS.to_vec(),
        };
        Self { weights: vec![1.0; t.len()], thresholds: t }
    }

    pub fn validate(&self) -> Result<()> {
        if self.thresholds.len() != self.weights.len() {
            return Err(Error::InvalidParameter(format!(
                "{} thresholds but {} weights",
                self.thresholds.len(),
                self.weights.len()
            )));
        }
        if self.thresholds.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidParameter("thresholds must be strictly ascending".into()));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidParameter("weights must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

/// `Σ_i Σ_j ω_j (1{y_i ≤ u_j} − p_ij)² / n`.
pub fn threshold_score(probs: &[Vec<f64>], ys: &[f64], spec: &ThresholdScoreSpec) -> Result<f64> {
    if probs.len() != ys.len() {
        return Err(Error::InvalidData(format!("{} prediction rows for {} responses", probs.len(), ys.len())));
    }
    if ys.is_empty() {
        return Err(Error::InvalidData("no rows to score".into()));
    }
    let j = spec.thresholds.len();
    let mut total = 0.0;
    for (i, (p, &y)) in probs.iter().zip(ys).enumerate() {
        if p.len() != j {
            return Err(Error::InvalidData(format!("row {i}: {} probabilities for {j} thresholds", p.len())));
        }
        for ((&u, &w), &pij) in spec.thresholds.iter().zip(&spec.weights).zip(p) {
            if !(0.0..=1.0).contains(&pij) {
                return Err(Error::InvalidData(format!("row {i}: probability {pij} outside [0, 1]")));
            }
            let ind = if y <= u { 1.0 } else { 0.0 };
            total += w * (ind - pij).powi(2);
        }
    }
    Ok(total / ys.len() as f64)
}

/// `P(Y ≤ u_j)` from a single count model (Poisson or dGPD) at each row of `xs`.
pub fn count_threshold_probs(model: &BoostedModel, xs: &Matrix, thresholds: &[f64]) -> Result<Vec<Vec<f64>>> {
    let cdf: Box<dyn Fn(f64, f64) -> f64> = match model.loss.kind {
        LossKind::Poisson => Box::new(poisson_cdf),
        LossKind::Dgpd => {
            let alpha = model.loss.alpha()?;
            Box::new(move |y, t| dgpd_cdf(y, t, alpha))
        }
        other => {
            return Err(Error::InvalidParameter(format!(
                "loss '{}' does not define a count distribution",
                other.name()
            )))
        }
    };
    let theta = model.predict_raw_scalar(xs)?;
    Ok(theta.iter().map(|&t| thresholds.iter().map(|&u| cdf(u, t)).collect()).collect())
}

/// Settings for an auxiliary imputation model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuxSpec {
    pub params: TrainParams,
    /// dGPD tail parameter of the count imputer.
    pub alpha: f64,
    /// Size-class threshold of the burned-area imputer.
    pub u: f64,
}

impl Default for AuxSpec {
    fn default() -> Self {
        Self { params: TrainParams::default(), alpha: 52.0, u: DEFAULT_SIZE_THRESHOLD }
    }
}

/// Deterministic feature engineering applied to a dataset before training or prediction.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturePlan {
    pub cross_fill_zeros: bool,
    /// Covariates that get a `<name>_nbr` neighbour average.
    pub neighbor_average: Vec<String>,
    pub impute_cnt: Option<AuxSpec>,
    pub impute_ba_classes: Option<AuxSpec>,
}

impl FeaturePlan {
    /// Apply the plan; auxiliary models are fitted on the entries observed in `ds` only.
    pub fn apply(&self, ds: &GridDataset) -> Result<GridDataset> {
        let mut out = if self.cross_fill_zeros { ds.cross_fill_zeros() } else { ds.clone() };
        for name in &self.neighbor_average {
            out = out.neighbor_average(name)?;
        }
        if let Some(aux) = &self.impute_cnt {
            let names = without(&out.feature_names(), &BA_CLASS_COVARIATES);
            let rows = observed_rows(&out, Response::Cnt);
            let y = rows.iter().map(|&i| out.rows()[i].cnt.unwrap() as f64).collect();
            let x = out.matrix_for(&names)?.select_rows(&rows);
            let model = fit(&x, &names, &Targets::Scalar(y), &LossSpec::dgpd(aux.alpha), &aux.params)?;
            out = out.impute_cnt_covariate(&model)?;
        }
        if let Some(aux) = &self.impute_ba_classes {
            let names = without(&out.feature_names(), &[CNT_COVARIATE]);
            let rows = observed_rows(&out, Response::Ba);
            let labels = rows.iter().map(|&i| crate::dataset::size_class(out.rows()[i].ba.unwrap(), aux.u)).collect();
            let x = out.matrix_for(&names)?.select_rows(&rows);
            let targets = Targets::Classes { labels, weights: None };
            let model = fit(&x, &names, &targets, &LossSpec::cross_entropy(3), &aux.params)?;
            out = out.impute_ba_class_covariates(&model, aux.u)?;
        }
        Ok(out)
    }
}

fn without(names: &[String], drop: &[&str]) -> Vec<String> {
    names.iter().filter(|n| !drop.contains(&n.as_str())).cloned().collect()
}

/// Indices of rows with the response observed.
pub fn observed_rows(ds: &GridDataset, response: Response) -> Vec<usize> {
    (0..ds.n_rows()).filter(|&i| ds.rows()[i].response(response).is_some()).collect()
}

/// Feature names a model of `response` may use: everything except covariates derived from
/// that same response.
pub fn model_features(ds: &GridDataset, response: Response) -> Vec<String> {
    match response {
        Response::Cnt => without(&ds.feature_names(), &[CNT_COVARIATE]),
        Response::Ba => without(&ds.feature_names(), &BA_CLASS_COVARIATES),
    }
}

/// A trainable model family scored in cross-validation.
pub trait CvRecipe {
    fn response(&self) -> Response;

    /// Train on the observed entries of `train` and return the validation score of rows
    /// `valid` (with true responses `truth`) after each checkpointed number of rounds.
    fn fit_score(&self, train: &GridDataset, valid: &[usize], truth: &[f64], checkpoints: &[usize]) -> Result<Vec<f64>>;
}

/// Poisson or dGPD count model.
#[derive(Debug, Clone, PartialEq)]
pub struct CountRecipe {
    pub loss: LossSpec,
    pub params: TrainParams,
    pub plan: FeaturePlan,
    pub score: ThresholdScoreSpec,
}

impl CountRecipe {
    /// Train on the observed counts of `ds` after applying the feature plan.
    pub fn train(&self, ds: &GridDataset) -> Result<(BoostedModel, GridDataset)> {
        let data = self.plan.apply(ds)?;
        let names = model_features(&data, Response::Cnt);
        let rows = observed_rows(&data, Response::Cnt);
        let y = rows.iter().map(|&i| data.rows()[i].cnt.unwrap() as f64).collect();
        let x = data.matrix_for(&names)?.select_rows(&rows);
        let model = fit(&x, &names, &Targets::Scalar(y), &self.loss, &self.params)?;
        Ok((model, data))
    }
}

impl CvRecipe for CountRecipe {
    fn response(&self) -> Response {
        Response::Cnt
    }

    fn fit_score(&self, train: &GridDataset, valid: &[usize], truth: &[f64], checkpoints: &[usize]) -> Result<Vec<f64>> {
        let (model, data) = self.train(train)?;
        let xs = data.matrix_for(&model.feature_names)?.select_rows(valid);
        checkpoints
            .iter()
            .map(|&t| {
                let probs = count_threshold_probs(&model.truncated(t), &xs, &self.score.thresholds)?;
                threshold_score(&probs, truth, &self.score)
            })
            .collect()
    }
}

/// Which mixture component the tree-count checkpoints apply to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixtureStage {
    #[default]
    All,
    Classifier,
    Bulk,
    Tail,
}

/// Three-component burned-area mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct SizeRecipe {
    pub config: MixtureConfig,
    pub plan: FeaturePlan,
    pub score: ThresholdScoreSpec,
    pub stage: MixtureStage,
}

impl SizeRecipe {
    pub fn train(&self, ds: &GridDataset) -> Result<(MixtureModel, GridDataset)> {
        let data = self.plan.apply(ds)?;
        let names = model_features(&data, Response::Ba);
        let rows = observed_rows(&data, Response::Ba);
        let y: Vec<f64> = rows.iter().map(|&i| data.rows()[i].ba.unwrap()).collect();
        let x = data.matrix_for(&names)?.select_rows(&rows);
        Ok((fit_mixture(&x, &names, &y, &self.config)?, data))
    }

    fn staged(&self, m: &MixtureModel, t: usize) -> MixtureModel {
        let mut out = m.clone();
        let all = self.stage == MixtureStage::All;
        if all || self.stage == MixtureStage::Classifier {
            out.classifier = m.classifier.truncated(t);
        }
        if all || self.stage == MixtureStage::Bulk {
            out.bulk = m.bulk.truncated(t);
        }
        if all || self.stage == MixtureStage::Tail {
            out.tail = m.tail.truncated(t);
        }
        out
    }
}

impl CvRecipe for SizeRecipe {
    fn response(&self) -> Response {
        Response::Ba
    }

    fn fit_score(&self, train: &GridDataset, valid: &[usize], truth: &[f64], checkpoints: &[usize]) -> Result<Vec<f64>> {
        let (model, data) = self.train(train)?;
        let xs = data.matrix_for(model.feature_names())?.select_rows(valid);
        checkpoints
            .iter()
            .map(|&t| {
                let probs = self.staged(&model, t).threshold_probs(&xs, &self.score.thresholds)?;
                threshold_score(&probs, truth, &self.score)
            })
            .collect()
    }
}

/// Validation scores per fold and checkpoint, with their mean and standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub checkpoints: Vec<usize>,
    /// `scores[fold][checkpoint]`.
    pub scores: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
}

impl CvResult {
    pub fn from_scores(checkpoints: Vec<usize>, scores: Vec<Vec<f64>>) -> Result<Self> {
        if scores.is_empty() || checkpoints.is_empty() {
            return Err(Error::InvalidData("cross-validation needs at least one fold and one checkpoint".into()));
        }
        if scores.iter().any(|s| s.len() != checkpoints.len()) {
            return Err(Error::InvalidData("every fold needs one score per checkpoint".into()));
        }
        let n = scores.len() as f64;
        let mut mean = Vec::new();
        let mut se = Vec::new();
        for j in 0..checkpoints.len() {
            let m = scores.iter().map(|s| s[j]).sum::<f64>() / n;
            let var = if scores.len() > 1 {
                scores.iter().map(|s| (s[j] - m).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            mean.push(m);
            se.push(var.sqrt() / n.sqrt());
        }
        Ok(Self { checkpoints, scores, mean, se })
    }

    /// Report with columns `T, mean_score, se, fold_0, …`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["T".to_string(), "mean_score".into(), "se".into()];
        header.extend((0..self.scores.len()).map(|f| format!("fold_{f}")));
        w.write_record(&header)?;
        for (j, t) in self.checkpoints.iter().enumerate() {
            let mut rec = vec![t.to_string(), self.mean[j].to_string(), self.se[j].to_string()];
            rec.extend(self.scores.iter().map(|s| s[j].to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Cross-validate `recipe` over `folds`. For each fold both responses' validation keys
/// are masked in the training data, so neither the model nor any imputation model
/// sees them.
pub fn run_cv<R: CvRecipe + ?Sized>(ds: &GridDataset, folds: &FoldSet, recipe: &R, checkpoints: &[usize]) -> Result<CvResult> {
    let response = recipe.response();
    let mut scores = Vec::with_capacity(folds.n_folds);
    for f in 0..folds.n_folds {
        let keys = folds.keys(f, response);
        let cnt_keys: HashSet<ObsKey> = folds.keys(f, Response::Cnt).iter().copied().collect();
        let ba_keys: HashSet<ObsKey> = folds.keys(f, Response::Ba).iter().copied().collect();
        let valid: Vec<usize> = (0..ds.n_rows())
            .filter(|&i| keys.contains(&ds.rows()[i].key()) && ds.rows()[i].response(response).is_some())
            .collect();
        if valid.is_empty() {
            return Err(Error::InvalidData(format!("fold {f} has no {} validation entries", response.name())));
        }
        let truth: Vec<f64> = valid.iter().map(|&i| ds.rows()[i].response(response).unwrap()).collect();
        let train = ds.mask(Response::Cnt, &cnt_keys).mask(Response::Ba, &ba_keys);
        scores.push(recipe.fit_score(&train, &valid, &truth, checkpoints)?);
    }
    CvResult::from_scores(checkpoints.to_vec(), scores)
}

/// Which end of the one-standard-error band to pick.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectDirection {
    #[default]
    Largest,
    Smallest,
}

/// Tree count chosen by the one-standard-error rule.
pub fn one_se_select(cv: &CvResult, direction: SelectDirection) -> usize {
    let best = (0..cv.mean.len()).fold(0, |b, j| if cv.mean[j] < cv.mean[b] { j } else { b });
    let tau = cv.mean[best] + cv.se[best];
    let within = (0..cv.mean.len()).filter(|&j| cv.mean[j] <= tau).map(|j| cv.checkpoints[j]);
    match direction {
        SelectDirection::Largest => within.max(),
        SelectDirection::Smallest => within.min(),
    }
    .unwrap_or(cv.checkpoints[best])
}

const BO_CANDIDATES: usize = 1024;
const BO_NOISE: f64 = 1e-6;
const BO_LENGTH_SCALE: f64 = 0.25;

fn check_box(bounds: &[(f64, f64)]) -> Result<()> {
    if bounds.is_empty() {
        return Err(Error::InvalidParameter("search box has no dimensions".into()));
    }
    for (d, &(lo, hi)) in bounds.iter().enumerate() {
        if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidParameter(format!("search box dimension {d} is degenerate: [{lo}, {hi}]")));
        }
    }
    Ok(())
}

/// Zero-mean GP surrogate on min-max normalized inputs with a squared-exponential kernel.
#[derive(Debug, Clone)]
pub struct GpSurrogate {
    xs: Vec<Vec<f64>>,
    alpha: DVector<f64>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    scale: f64,
    offset: f64,
    best: f64,
    bounds: Vec<(f64, f64)>,
}

impl GpSurrogate {
    pub fn fit(history: &[(Vec<f64>, f64)], bounds: &[(f64, f64)]) -> Result<Self> {
        check_box(bounds)?;
        if history.is_empty() {
            return Err(Error::InvalidParameter("GP surrogate needs at least one observation".into()));
        }
        let xs: Vec<Vec<f64>> = history.iter().map(|(x, _)| normalize(x, bounds)).collect::<Result<_>>()?;
        let ys: Vec<f64> = history.iter().map(|(_, y)| *y).collect();
        if ys.iter().any(|y| !y.is_finite()) {
            return Err(Error::InvalidData("scores in the tuning history must be finite".into()));
        }
        let n = ys.len() as f64;
        let offset = ys.iter().sum::<f64>() / n;
        let var = ys.iter().map(|y| (y - offset).powi(2)).sum::<f64>() / n;
        let scale = if var > 0.0 { var } else { 1.0 };
        let k = DMatrix::from_fn(xs.len(), xs.len(), |i, j| {
            scale * se_kernel(&xs[i], &xs[j]) + if i == j { BO_NOISE * scale } else { 0.0 }
        });
        let chol = k.cholesky().ok_or_else(|| Error::Numerical("GP kernel matrix is not positive definite".into()))?;
        let centred = DVector::from_iterator(ys.len(), ys.iter().map(|y| y - offset));
        let alpha = chol.solve(&centred);
        let best = ys.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(Self { xs, alpha, chol, scale, offset, best, bounds: bounds.to_vec() })
    }

    /// Posterior mean and standard deviation at a normalized point.
    fn predict_unit(&self, z: &[f64]) -> (f64, f64) {
        let kx = DVector::from_iterator(self.xs.len(), self.xs.iter().map(|x| self.scale * se_kernel(x, z)));
        let mu = self.offset + kx.dot(&self.alpha);
        let v = self.chol.solve(&kx);
        let var = (self.scale - kx.dot(&v)).max(0.0);
        (mu, var.sqrt())
    }

    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64)> {
        Ok(self.predict_unit(&normalize(x, &self.bounds)?))
    }

    fn ei_unit(&self, z: &[f64]) -> f64 {
        let (mu, sd) = self.predict_unit(z);
        if sd <= 1e-12 * self.scale.sqrt() {
            return (self.best - mu).max(0.0);
        }
        let u = (self.best - mu) / sd;
        ((self.best - mu) * normal_cdf(u) + sd * normal_pdf(u)).max(0.0)
    }

    /// Expected improvement (for minimization) at a point in the original units.
    pub fn expected_improvement(&self, x: &[f64]) -> Result<f64> {
        Ok(self.ei_unit(&normalize(x, &self.bounds)?))
    }
}

fn se_kernel(a: &[f64], b: &[f64]) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    (-0.5 * d2 / (BO_LENGTH_SCALE * BO_LENGTH_SCALE)).exp()
}

fn normalize(x: &[f64], bounds: &[(f64, f64)]) -> Result<Vec<f64>> {
    if x.len() != bounds.len() {
        return Err(Error::InvalidParameter(format!("point has {} coordinates, box has {}", x.len(), bounds.len())));
    }
    Ok(x.iter().zip(bounds).map(|(v, (lo, hi))| (v - lo) / (hi - lo)).collect())
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

fn nth_prime(n: usize) -> u64 {
    let mut primes = Vec::with_capacity(n + 1);
    let mut c = 2u64;
    while primes.len() <= n {
        if primes.iter().all(|p| !c.is_multiple_of(*p)) {
            primes.push(c);
        }
        c += 1;
    }
    primes[n]
}

/// Halton points in the unit cube with a seeded random shift (mod 1).
pub fn shifted_halton(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: Vec<f64> = (0..dim).map(|_| rng.random()).collect();
    let bases: Vec<u64> = (0..dim).map(nth_prime).collect();
    (1..=n as u64)
        .map(|i| bases.iter().zip(&shift).map(|(&b, s)| (radical_inverse(i, b) + s).fract()).collect())
        .collect()
}

/// Next point to evaluate: the expected-improvement maximizer over seeded quasi-random
/// candidates, or a seeded uniform draw when there is no history yet.
pub fn bo_suggest(history: &[(Vec<f64>, f64)], bounds: &[(f64, f64)], seed: u64) -> Result<Vec<f64>> {
    check_box(bounds)?;
    let denorm = |z: &[f64]| -> Vec<f64> { z.iter().zip(bounds).map(|(v, (lo, hi))| lo + v * (hi - lo)).collect() };
    if history.is_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z: Vec<f64> = (0..bounds.len()).map(|_| rng.random()).collect();
        return Ok(denorm(&z));
    }
    let gp = GpSurrogate::fit(history, bounds)?;
    let cands = shifted_halton(BO_CANDIDATES, bounds.len(), seed);
    let mut best = (f64::NEG_INFINITY, 0);
    for (i, z) in cands.iter().enumerate() {
        let ei = gp.ei_unit(z);
        if ei > best.0 {
            best = (ei, i);
        }
    }
    Ok(denorm(&cands[best.1]))
}

/// One tunable dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperParam {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    #[serde(default)]
    pub integer: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneRecord {
    pub iteration: usize,
    pub point: Vec<f64>,
    pub score: f64,
}

/// Sequential BO: `max_iters` evaluations of `objective` (lower is better). Integer
/// dimensions are rounded before evaluation and recorded rounded.
pub fn tune<F>(space: &[HyperParam], max_iters: usize, seed: u64, mut objective: F) -> Result<Vec<TuneRecord>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let bounds: Vec<(f64, f64)> = space.iter().map(|h| (h.lo, h.hi)).collect();
    check_box(&bounds)?;
    let mut history: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut log = Vec::new();
    for it in 0..max_iters {
        let mut point = bo_suggest(&history, &bounds, seed.wrapping_add(it as u64))?;
        for (v, h) in point.iter_mut().zip(space) {
            if h.integer {
                *v = v.round().clamp(h.lo.ceil(), h.hi.floor());
            }
        }
        let score = objective(&point)?;
        if !score.is_finite() {
            return Err(Error::Numerical(format!("objective returned {score} at iteration {it}")));
        }
        history.push((point.clone(), score));
        log.push(TuneRecord { iteration: it, point, score });
    }
    Ok(log)
}

/// Tuning log with columns `iteration, <names…>, score`.
pub fn write_tuning_log<W: Write>(space: &[HyperParam], log: &[TuneRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["iteration".to_string()];
    header.extend(space.iter().map(|h| h.name.clone()));
    header.push("score".into());
    w.write_record(&header)?;
    for r in log {
        let mut rec = vec![r.iteration.to_string()];
        rec.extend(r.point.iter().map(|v| v.to_string()));
        rec.push(r.score.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
