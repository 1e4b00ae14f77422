//! Boosting loop over regression trees with the regularized second-order objective,
//! plus the versioned JSON model document.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::losses::{LossKind, LossSpec};
use crate::matrix::Matrix;
use crate::tree::{grow_binned, sample_features, BinnedMatrix, GradientPairs, GrowParams, Tree};

pub const MODEL_FORMAT_VERSION: u32 = 1;

fn default_min_hessian() -> f64 {
    1e-6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainParams {
    pub n_trees: usize,
    pub lambda_reg: f64,
    pub eta: f64,
    pub max_leaves: usize,
    pub colsample: f64,
    pub n_quantile_bins: usize,
    /// Shrinkage applied to every tree.
    pub learning_rate: f64,
    pub seed: u64,
    /// Hessians below this value are raised to it before tree growth.
    pub min_hessian: f64,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            lambda_reg: 1.0,
            eta: 0.0,
            max_leaves: 8,
            colsample: 1.0,
            n_quantile_bins: 32,
            learning_rate: 0.1,
            seed: 0,
            min_hessian: default_min_hessian(),
        }
    }
}

impl TrainParams {
    pub fn grow_params(&self) -> GrowParams {
        GrowParams {
            max_leaves: self.max_leaves,
            lambda_reg: self.lambda_reg,
            eta: self.eta,
            n_quantile_bins: self.n_quantile_bins,
            colsample: self.colsample,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grow_params().validate()?;
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "learning_rate must lie in (0, 1], got {}",
                self.learning_rate
            )));
        }
        if !(self.min_hessian > 0.0) {
            return Err(Error::InvalidParameter("min_hessian must be positive".into()));
        }
        Ok(())
    }
}

/// Training responses: scalar values, or class labels with optional row weights.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Scalar(Vec<f64>),
    Classes { labels: Vec<usize>, weights: Option<Vec<f64>> },
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Scalar(v) => v.len(),
            Targets::Classes { labels, .. } => labels.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn row_weight(&self, i: usize) -> f64 {
        match self {
            Targets::Classes { weights: Some(w), .. } => w[i],
            _ => 1.0,
        }
    }

    fn check(&self, loss: &LossSpec) -> Result<()> {
        match (self, loss.is_multiclass()) {
            (Targets::Scalar(ys), false) => {
                for (row, y) in ys.iter().enumerate() {
                    loss.check_response(*y).map_err(|e| Error::Domain { row, message: e.to_string() })?;
                }
                Ok(())
            }
            (Targets::Classes { labels, weights }, true) => {
                if let Some(w) = weights {
                    if w.len() != labels.len() {
                        return Err(Error::InvalidData("class weights and labels differ in length".into()));
                    }
                    if let Some(row) = w.iter().position(|v| !(*v >= 0.0 && v.is_finite())) {
                        return Err(Error::Domain { row, message: "row weight must be nonnegative".into() });
                    }
                }
                let c = loss.n_classes();
                if let Some(row) = labels.iter().position(|l| *l >= c) {
                    return Err(Error::Domain { row, message: format!("class label out of range for {c} classes") });
                }
                Ok(())
            }
            _ => Err(Error::InvalidParameter(format!(
                "targets do not match loss '{}'",
                loss.kind.name()
            ))),
        }
    }
}

/// Total training loss `Σ_i L(y_i, θ_i)` for row-major scores (`n × C`).
pub fn total_loss(loss: &LossSpec, targets: &Targets, scores: &[f64]) -> Result<f64> {
    let c = loss.n_outputs();
    let mut total = 0.0;
    match targets {
        Targets::Scalar(ys) => {
            for (row, y) in ys.iter().enumerate() {
                total += loss.eval(*y, scores[row]).map_err(|e| domain(row, e))?.value;
            }
        }
        Targets::Classes { labels, .. } => {
            for (row, l) in labels.iter().enumerate() {
                let e = loss
                    .eval_class(*l, &scores[row * c..(row + 1) * c], targets.row_weight(row))
                    .map_err(|e| domain(row, e))?;
                total += e.value;
            }
        }
    }
    Ok(total)
}

fn domain(row: usize, e: Error) -> Error {
    match e {
        Error::Numerical(m) => Error::Numerical(format!("row {row}: {m}")),
        other => Error::Domain { row, message: other.to_string() },
    }
}

/// Constant boosting estimate minimizing the summed loss over all rows.
///
/// Scalar losses use Newton iteration on the summed gradient inside an expanding
/// bracket, falling back to bisection whenever the Newton step leaves the bracket or
/// the summed hessian is not positive. Cross-entropy uses the closed form
/// `log` of the weighted class frequencies, centred to mean zero.
pub fn initial_estimate(targets: &Targets, loss: &LossSpec) -> Result<Vec<f64>> {
    loss.validate()?;
    if targets.is_empty() {
        return Err(Error::InvalidData("initial estimate needs at least one response".into()));
    }
    targets.check(loss)?;
    match targets {
        Targets::Classes { labels, .. } => {
            let c = loss.n_classes();
            let mut freq = vec![0.0; c];
            for (row, l) in labels.iter().enumerate() {
                freq[*l] += targets.row_weight(row) * loss.class_weight(*l);
            }
            let total: f64 = freq.iter().sum();
            if !(total > 0.0) {
                return Err(Error::InvalidData("all cross-entropy weights are zero".into()));
            }
            let logs: Vec<f64> = freq.iter().map(|f| (f / total).max(1e-12).ln()).collect();
            let mean = logs.iter().sum::<f64>() / c as f64;
            Ok(logs.iter().map(|l| l - mean).collect())
        }
        Targets::Scalar(ys) => scalar_minimizer(ys, loss).map(|t| vec![t]),
    }
}

fn scalar_minimizer(ys: &[f64], loss: &LossSpec) -> Result<f64> {
    let derivs = |theta: f64| -> Result<(f64, f64)> {
        let mut g = 0.0;
        let mut h = 0.0;
        for (row, y) in ys.iter().enumerate() {
            let e = loss.eval(*y, theta).map_err(|e| domain(row, e))?;
            g += e.grad;
            h += e.hess;
        }
        Ok((g, h))
    };
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let start = match loss.kind {
        LossKind::SquaredLog => ys.iter().map(|y| y.ln_1p()).sum::<f64>() / ys.len() as f64,
        LossKind::Poisson | LossKind::Trgamma | LossKind::Gpd if mean > 0.0 => mean.ln(),
        _ => 0.0,
    };
    let no_root = || Error::Numerical(format!("initial estimate for '{}' did not converge", loss.kind.name()));

    let (g0, _) = derivs(start)?;
    if g0 == 0.0 {
        return Ok(start);
    }
    // expand towards the sign change of the summed gradient
    let dir = if g0 < 0.0 { 1.0 } else { -1.0 };
    let mut step = 1.0;
    let mut near = start;
    let mut far = start + dir * step;
    let mut found = false;
    for _ in 0..8 {
        let (g, h) = derivs(far).map_err(|_| no_root())?;
        if g == 0.0 && h > 0.0 {
            return Ok(far);
        }
        if (g > 0.0) == (g0 < 0.0) {
            found = true;
            break;
        }
        near = far;
        step *= 2.0;
        far = start + dir * step;
    }
    if !found {
        return Err(no_root());
    }
    let (mut lo, mut hi) = if dir > 0.0 { (near, far) } else { (far, near) };
    let mut theta = 0.5 * (lo + hi);
    for _ in 0..200 {
        let (g, h) = derivs(theta)?;
        if g == 0.0 {
            return Ok(theta);
        }
        if g < 0.0 {
            lo = theta;
        } else {
            hi = theta;
        }
        let newton = if h > 0.0 { theta - g / h } else { f64::NAN };
        let next = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if (next - theta).abs() <= 1e-13 * (1.0 + theta.abs()) || hi - lo <= 1e-13 * (1.0 + theta.abs()) {
            return Ok(next);
        }
        theta = next;
    }
    Err(no_root())
}

/// A fitted additive model `θ̂(x) = base_score + Σ_t f_t(x)`.
///
/// Multiclass models hold `C` trees per round, stored round-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoostedModel {
    pub format_version: u32,
    pub loss: LossSpec,
    #[serde(serialize_with = "ser_base", deserialize_with = "de_base")]
    pub base_score: Vec<f64>,
    pub feature_names: Vec<String>,
    pub trees: Vec<Tree>,
    pub params: TrainParams,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum BaseScoreDoc {
    Scalar(f64),
    Vector(Vec<f64>),
}

fn ser_base<S: Serializer>(v: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.len() == 1 {
        BaseScoreDoc::Scalar(v[0]).serialize(s)
    } else {
        BaseScoreDoc::Vector(v.to_vec()).serialize(s)
    }
}

fn de_base<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<f64>, D::Error> {
    Ok(match BaseScoreDoc::deserialize(d)? {
        BaseScoreDoc::Scalar(x) => vec![x],
        BaseScoreDoc::Vector(v) => v,
    })
}

/// Train a model; see [`fit_traced`].
pub fn fit(
    x: &Matrix,
    feature_names: &[String],
    targets: &Targets,
    loss: &LossSpec,
    params: &TrainParams,
) -> Result<BoostedModel> {
    fit_traced(x, feature_names, targets, loss, params).map(|(m, _)| m)
}

/// Train a model and return the summed training loss before the first round and
/// after every round (`n_trees + 1` values).
pub fn fit_traced(
    x: &Matrix,
    feature_names: &[String],
    targets: &Targets,
    loss: &LossSpec,
    params: &TrainParams,
) -> Result<(BoostedModel, Vec<f64>)> {
    loss.validate()?;
    params.validate()?;
    if feature_names.len() != x.n_cols() {
        return Err(Error::FeatureMismatch(format!(
            "{} feature names for {} columns",
            feature_names.len(),
            x.n_cols()
        )));
    }
    if targets.len() != x.n_rows() {
        return Err(Error::InvalidData(format!("{} responses for {} rows", targets.len(), x.n_rows())));
    }
    let base = initial_estimate(targets, loss)?;
    let n = x.n_rows();
    let c = loss.n_outputs();
    let mut scores: Vec<f64> = (0..n).flat_map(|_| base.iter().copied()).collect();
    let mut history = vec![total_loss(loss, targets, &scores)?];
    let binned = BinnedMatrix::new(x, params.n_quantile_bins);
    let rows: Vec<usize> = (0..n).collect();
    let grow = params.grow_params();
    let mut trees = Vec::with_capacity(params.n_trees * c);

    for round in 0..params.n_trees {
        let features = sample_features(x.n_cols(), params.colsample, params.seed, round as u64);
        let pairs = gradient_pairs(loss, targets, &scores, params.min_hessian)?;
        let mut round_trees = Vec::with_capacity(c);
        for gp in &pairs {
            let mut tree = grow_binned(&binned, gp, &rows, &features, &grow)?;
            tree.scale(params.learning_rate);
            round_trees.push(tree);
        }
        for (r, score_row) in scores.chunks_mut(c).enumerate() {
            let xr = x.row(r);
            for (k, tree) in round_trees.iter().enumerate() {
                score_row[k] += tree.predict(xr);
            }
        }
        trees.extend(round_trees);
        history.push(total_loss(loss, targets, &scores)?);
    }

    let model = BoostedModel {
        format_version: MODEL_FORMAT_VERSION,
        loss: loss.clone(),
        base_score: base,
        feature_names: feature_names.to_vec(),
        trees,
        params: params.clone(),
    };
    Ok((model, history))
}

/// One gradient/hessian vector pair per output.
fn gradient_pairs(loss: &LossSpec, targets: &Targets, scores: &[f64], min_hessian: f64) -> Result<Vec<GradientPairs>> {
    let c = loss.n_outputs();
    let n = targets.len();
    let mut g = vec![vec![0.0; n]; c];
    let mut h = vec![vec![0.0; n]; c];
    match targets {
        Targets::Scalar(ys) => {
            for (row, y) in ys.iter().enumerate() {
                let e = loss.eval(*y, scores[row]).map_err(|e| domain(row, e))?;
                g[0][row] = e.grad;
                h[0][row] = e.hess.max(min_hessian);
            }
        }
        Targets::Classes { labels, .. } => {
            for (row, l) in labels.iter().enumerate() {
                let e = loss
                    .eval_class(*l, &scores[row * c..(row + 1) * c], targets.row_weight(row))
                    .map_err(|e| domain(row, e))?;
                for k in 0..c {
                    g[k][row] = e.grad[k];
                    h[k][row] = e.hess[k].max(min_hessian);
                }
            }
        }
    }
    g.into_iter().zip(h).map(|(g, h)| GradientPairs::new(g, h)).collect()
}

impl BoostedModel {
    pub fn n_outputs(&self) -> usize {
        self.base_score.len()
    }

    /// Number of boosting rounds (trees per output).
    pub fn n_rounds(&self) -> usize {
        self.trees.len() / self.n_outputs().max(1)
    }

    /// Copy holding only the first `rounds` rounds.
    pub fn truncated(&self, rounds: usize) -> BoostedModel {
        let keep = rounds.min(self.n_rounds()) * self.n_outputs();
        BoostedModel { trees: self.trees[..keep].to_vec(), ..self.clone() }
    }

    /// Raw scores of one row using the first `rounds` rounds.
    pub fn predict_row_rounds(&self, x: &[f64], rounds: usize) -> Vec<f64> {
        let c = self.n_outputs();
        let mut out = self.base_score.clone();
        for (i, tree) in self.trees.iter().take(rounds.min(self.n_rounds()) * c).enumerate() {
            out[i % c] += tree.predict(x);
        }
        out
    }

    pub fn predict_row(&self, x: &[f64]) -> Vec<f64> {
        self.predict_row_rounds(x, self.n_rounds())
    }

    fn check_features(&self, xs: &Matrix) -> Result<()> {
        if xs.n_cols() != self.feature_names.len() {
            return Err(Error::FeatureMismatch(format!(
                "model expects {} features, got {}",
                self.feature_names.len(),
                xs.n_cols()
            )));
        }
        Ok(())
    }

    /// Raw boosting estimates, one vector of length `C` per row.
    pub fn predict_raw(&self, xs: &Matrix) -> Result<Vec<Vec<f64>>> {
        self.check_features(xs)?;
        Ok((0..xs.n_rows()).map(|r| self.predict_row(xs.row(r))).collect())
    }

    /// Raw boosting estimates of a single-output model.
    pub fn predict_raw_scalar(&self, xs: &Matrix) -> Result<Vec<f64>> {
        if self.n_outputs() != 1 {
            return Err(Error::InvalidParameter("model has more than one output".into()));
        }
        Ok(self.predict_raw(xs)?.into_iter().map(|v| v[0]).collect())
    }

    /// Raw scores after each checkpoint round count, indexed `[checkpoint][row][output]`.
    /// Tree prefixes are accumulated once, so checkpoints cost no refitting.
    pub fn predict_raw_staged(&self, xs: &Matrix, checkpoints: &[usize]) -> Result<Vec<Vec<Vec<f64>>>> {
        self.check_features(xs)?;
        let c = self.n_outputs();
        let mut order: Vec<usize> = (0..checkpoints.len()).collect();
        order.sort_by_key(|&i| checkpoints[i]);
        let mut out = vec![Vec::new(); checkpoints.len()];
        let mut current: Vec<Vec<f64>> = (0..xs.n_rows()).map(|_| self.base_score.clone()).collect();
        let mut done = 0usize;
        for i in order {
            let target = checkpoints[i].min(self.n_rounds());
            while done < target {
                for k in 0..c {
                    let tree = &self.trees[done * c + k];
                    for (r, row) in current.iter_mut().enumerate() {
                        row[k] += tree.predict(xs.row(r));
                    }
                }
                done += 1;
            }
            out[i] = current.clone();
        }
        Ok(out)
    }

    /// Canonical JSON document.
    pub fn save(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(doc: &str) -> Result<BoostedModel> {
        let value: serde_json::Value = serde_json::from_str(doc)?;
        let version = value
            .get("format_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::Schema("missing format_version".into()))?;
        if version != MODEL_FORMAT_VERSION as u64 {
            return Err(Error::Version { found: version as u32, expected: MODEL_FORMAT_VERSION });
        }
        let model: BoostedModel = serde_json::from_value(value).map_err(|e| Error::Schema(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    pub fn save_file(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.save()?)?;
        Ok(())
    }

    pub fn load_file(path: &std::path::Path) -> Result<BoostedModel> {
        BoostedModel::load(&std::fs::read_to_string(path)?)
    }

    fn validate(&self) -> Result<()> {
        self.loss.validate().map_err(|e| Error::Schema(e.to_string()))?;
        if self.base_score.len() != self.loss.n_outputs() {
            return Err(Error::Schema("base_score length does not match the loss".into()));
        }
        if !self.trees.len().is_multiple_of(self.n_outputs()) {
            return Err(Error::Schema("tree count is not a multiple of the output count".into()));
        }
        let p = self.feature_names.len();
        if self.trees.iter().any(|t| t.max_feature().is_some_and(|f| f >= p)) {
            return Err(Error::Schema("a tree references an unknown feature".into()));
        }
        Ok(())
    }

    /// Model-implied mean response for a raw score, where one is defined.
    pub fn response_mean(&self, theta: f64) -> Option<f64> {
        match self.loss.kind {
            LossKind::Poisson => Some(theta.exp()),
            LossKind::Dgpd => crate::losses::dgpd_mean(theta, self.loss.alpha.unwrap_or(0.0), 1e-10).ok(),
            LossKind::SquaredLog => Some(theta.exp_m1()),
            _ => None,
        }
    }
}
