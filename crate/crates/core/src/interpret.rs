//! Partial dependence and split-based covariate importance.

use std::io::Write;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::booster::BoostedModel;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::special::softmax;
use crate::tree::TreeNode;

pub const DEFAULT_PDP_SUBSAMPLE: usize = 10_000;

/// Map from raw model outputs to the quantity being averaged.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PdpTransform {
    /// Raw score of output 0.
    #[default]
    Raw,
    /// Model-implied mean response (Poisson, dGPD, squared_log).
    Mean,
    /// Softmax probability of one class.
    Probability(usize),
}

impl PdpTransform {
    fn apply(self, model: &BoostedModel, raw: &[f64]) -> Result<f64> {
        match self {
            PdpTransform::Raw => Ok(raw[0]),
            PdpTransform::Mean => model.response_mean(raw[0]).ok_or_else(|| {
                Error::InvalidParameter(format!("loss '{}' has no mean transform", model.loss.kind.name()))
            }),
            PdpTransform::Probability(c) => softmax(raw)
                .get(c)
                .copied()
                .ok_or_else(|| Error::InvalidParameter(format!("class {c} out of range"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdpResult {
    pub features: Vec<String>,
    pub grid: Vec<Vec<f64>>,
    pub estimate: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Monte Carlo standard error of each estimate (zero when every row is used).
    pub se: Vec<f64>,
}

impl PdpResult {
    /// Export with one column per feature, then `estimate, lo, hi`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = self.features.clone();
        header.extend(["estimate", "lo", "hi"].map(String::from));
        w.write_record(&header)?;
        for (k, g) in self.grid.iter().enumerate() {
            let mut rec: Vec<String> = g.iter().map(|v| v.to_string()).collect();
            rec.extend([self.estimate[k], self.lo[k], self.hi[k]].map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let (i, f) = (h.floor() as usize, h.fract());
    if i + 1 < sorted.len() {
        sorted[i] + f * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

/// Partial dependence of `model` on the features `s` (column indices of `xs`), evaluated
/// at each grid point: the average over a seeded subsample of `n_sub` rows of the
/// transformed prediction with the `s` columns overwritten by the grid point. Bands are
/// the 5% and 95% quantiles of the per-row values.
pub fn partial_dependence(
    model: &BoostedModel,
    xs: &Matrix,
    s: &[usize],
    grid: &[Vec<f64>],
    n_sub: usize,
    transform: PdpTransform,
    seed: u64,
) -> Result<PdpResult> {
    if s.is_empty() {
        return Err(Error::InvalidParameter("partial dependence needs at least one feature".into()));
    }
    let p = model.feature_names.len();
    if xs.n_cols() != p {
        return Err(Error::FeatureMismatch(format!("model expects {p} features, data has {}", xs.n_cols())));
    }
    for (k, &j) in s.iter().enumerate() {
        if j >= p || s[..k].contains(&j) {
            return Err(Error::InvalidParameter(format!("invalid or repeated feature index {j}")));
        }
    }
    if let Some(g) = grid.iter().find(|g| g.len() != s.len()) {
        return Err(Error::InvalidParameter(format!(
            "grid point has {} coordinates for {} features",
            g.len(),
            s.len()
        )));
    }
    let n = xs.n_rows();
    if n == 0 || n_sub == 0 {
        return Err(Error::InvalidData("partial dependence needs at least one row".into()));
    }
    let rows: Vec<usize> = if n_sub >= n {
        (0..n).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut r = sample(&mut rng, n, n_sub).into_vec();
        r.sort_unstable();
        r
    };
    let exact = rows.len() == n;
    let mut out = PdpResult {
        features: s.iter().map(|&j| model.feature_names[j].clone()).collect(),
        grid: grid.to_vec(),
        estimate: Vec::with_capacity(grid.len()),
        lo: Vec::with_capacity(grid.len()),
        hi: Vec::with_capacity(grid.len()),
        se: Vec::with_capacity(grid.len()),
    };
    let mut x = vec![0.0; p];
    for g in grid {
        if s.len() == p {
            // nothing left to average over: the curve is the prediction itself
            for (&j, &v) in s.iter().zip(g) {
                x[j] = v;
            }
            let v = transform.apply(model, &model.predict_row(&x))?;
            out.estimate.push(v);
            out.lo.push(v);
            out.hi.push(v);
            out.se.push(0.0);
            continue;
        }
        let mut vals = Vec::with_capacity(rows.len());
        for &i in &rows {
            x.copy_from_slice(xs.row(i));
            for (&j, &v) in s.iter().zip(g) {
                x[j] = v;
            }
            vals.push(transform.apply(model, &model.predict_row(&x))?);
        }
        let m = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / m;
        let se = if exact || vals.len() < 2 {
            0.0
        } else {
            (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0) / m).sqrt()
        };
        vals.sort_by(f64::total_cmp);
        out.estimate.push(mean);
        out.lo.push(quantile(&vals, 0.05));
        out.hi.push(quantile(&vals, 0.95));
        out.se.push(se);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImportanceMetric {
    Gain,
    Coverage,
}

impl std::str::FromStr for ImportanceMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gain" => Ok(ImportanceMetric::Gain),
            "coverage" | "cover" => Ok(ImportanceMetric::Coverage),
            other => Err(Error::InvalidParameter(format!("unknown importance metric '{other}'"))),
        }
    }
}

/// Per-feature share of total split gain or split coverage, for features used in at
/// least one split, in feature order. Empty when the model has no splits.
pub fn importance(model: &BoostedModel, metric: ImportanceMetric) -> Result<Vec<(String, f64)>> {
    let mut totals = vec![0.0; model.feature_names.len()];
    let mut used = vec![false; model.feature_names.len()];
    for t in &model.trees {
        for node in t.nodes() {
            if let TreeNode::Branch { feature, gain, cover, .. } = node {
                let v = match metric {
                    ImportanceMetric::Gain => *gain,
                    ImportanceMetric::Coverage => *cover,
                };
                if *feature >= totals.len() {
                    return Err(Error::Schema(format!("split on unknown feature {feature}")));
                }
                totals[*feature] += v.max(0.0);
                used[*feature] = true;
            }
        }
    }
    if !used.iter().any(|&u| u) {
        return Ok(Vec::new());
    }
    let sum: f64 = totals.iter().sum();
    if !(sum > 0.0) {
        return Err(Error::InvalidData("model records no positive split statistics".into()));
    }
    Ok(used
        .iter()
        .zip(&totals)
        .zip(&model.feature_names)
        .filter(|((u, _), _)| **u)
        .map(|((_, t), n)| (n.clone(), t / sum))
        .collect())
}

/// Export with columns `feature, proportion`.
pub fn write_importance_csv<W: Write>(imp: &[(String, f64)], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["feature", "proportion"])?;
    for (f, v) in imp {
        w.write_record([f.clone(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::booster::{fit, Targets, TrainParams, MODEL_FORMAT_VERSION};
    use crate::losses::LossSpec;
    use crate::tree::Tree;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn model(trees: Vec<Tree>, p: usize) -> BoostedModel {
        BoostedModel {
            format_version: MODEL_FORMAT_VERSION,
            loss: LossSpec::squared_log(),
            base_score: vec![0.5],
            feature_names: (0..p).map(|i| format!("x{i}")).collect(),
            trees,
            params: TrainParams::default(),
        }
    }

    fn stump_with(feature: usize, thr: f64, l: f64, r: f64, gain: f64, cover: f64) -> Tree {
        Tree::from_nodes(vec![
            TreeNode::Branch { feature, threshold: thr, default_left: true, left: 1, right: 2, gain, cover },
            TreeNode::Leaf { weight: l, cover: cover / 2.0 },
            TreeNode::Leaf { weight: r, cover: cover / 2.0 },
        ])
        .unwrap()
    }

    fn data(n: usize, p: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::new(n, p, (0..n * p).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn constant_model_pdp_is_flat() {
        let m = model(vec![], 2);
        let r = partial_dependence(&m, &data(50, 2, 1), &[0], &[vec![0.1], vec![0.9]], 20, PdpTransform::Raw, 0).unwrap();
        assert_eq!(r.estimate, vec![0.5, 0.5]);
        assert_eq!(r.lo, vec![0.5, 0.5]);
        assert_eq!(r.hi, vec![0.5, 0.5]);
    }

    #[test]
    fn additive_model_pdp_matches_closed_form() {
        // a(x0) + b(x1) with stumps; S = {0}: a(x) + base + mean_i b(x_i1)
        let m = model(vec![stump_with(0, 0.4, -1.0, 2.0, 1.0, 1.0), stump_with(1, 0.6, 3.0, -0.5, 1.0, 1.0)], 2);
        let xs = data(200, 2, 2);
        let mean_b = (0..200).map(|i| if xs.get(i, 1) <= 0.6 { 3.0 } else { -0.5 }).sum::<f64>() / 200.0;
        let r = partial_dependence(&m, &xs, &[0], &[vec![0.2], vec![0.7]], DEFAULT_PDP_SUBSAMPLE, PdpTransform::Raw, 0)
            .unwrap();
        assert_relative_eq!(r.estimate[0], 0.5 - 1.0 + mean_b, epsilon = 1e-12);
        assert_relative_eq!(r.estimate[1], 0.5 + 2.0 + mean_b, epsilon = 1e-12);
        assert_eq!(r.se, vec![0.0, 0.0]);
        for k in 0..2 {
            assert!(r.lo[k] <= r.estimate[k] && r.estimate[k] <= r.hi[k]);
        }
        // tree order does not matter
        let mut rev = m.clone();
        rev.trees.reverse();
        let r2 = partial_dependence(&rev, &xs, &[0], &[vec![0.2], vec![0.7]], 10_000, PdpTransform::Raw, 0).unwrap();
        assert_eq!(r.estimate, r2.estimate);
    }

    #[test]
    fn all_features_fixed_is_exact() {
        let m = model(vec![stump_with(0, 0.4, -1.0, 2.0, 1.0, 1.0), stump_with(1, 0.6, 3.0, -0.5, 1.0, 1.0)], 2);
        let xs = data(300, 2, 3);
        let r = partial_dependence(&m, &xs, &[1, 0], &[vec![0.9, 0.1]], 40, PdpTransform::Mean, 7).unwrap();
        let expect = (0.5f64 - 1.0 - 0.5).exp_m1();
        assert_relative_eq!(r.estimate[0], expect, epsilon = 1e-12);
        assert_eq!(r.lo[0], r.hi[0]);
    }

    #[test]
    fn pdp_argument_errors() {
        let m = model(vec![], 2);
        let xs = data(5, 2, 0);
        assert!(partial_dependence(&m, &xs, &[], &[vec![]], 5, PdpTransform::Raw, 0).is_err());
        assert!(partial_dependence(&m, &xs, &[0], &[vec![1.0, 2.0]], 5, PdpTransform::Raw, 0).is_err());
        assert!(partial_dependence(&m, &xs, &[0, 0], &[vec![1.0, 2.0]], 5, PdpTransform::Raw, 0).is_err());
        assert!(partial_dependence(&m, &xs, &[2], &[vec![1.0]], 5, PdpTransform::Raw, 0).is_err());
        assert!(partial_dependence(&m, &data(5, 3, 0), &[0], &[vec![1.0]], 5, PdpTransform::Raw, 0).is_err());
    }

    #[test]
    fn subsampled_pdp_is_seeded() {
        let m = model(vec![stump_with(1, 0.5, 0.0, 1.0, 1.0, 1.0)], 2);
        let xs = data(500, 2, 4);
        let a = partial_dependence(&m, &xs, &[0], &[vec![0.3]], 100, PdpTransform::Raw, 5).unwrap();
        assert_eq!(a, partial_dependence(&m, &xs, &[0], &[vec![0.3]], 100, PdpTransform::Raw, 5).unwrap());
        assert!(a.se[0] > 0.0);
        let mut out = Vec::new();
        a.write_csv(&mut out).unwrap();
        assert!(String::from_utf8(out).unwrap().starts_with("x0,estimate,lo,hi\n"));
    }

    #[test]
    fn importance_examples() {
        let one = model(vec![stump_with(1, 0.5, 0.0, 1.0, 2.0, 5.0)], 3);
        for metric in [ImportanceMetric::Gain, ImportanceMetric::Coverage] {
            assert_eq!(importance(&one, metric).unwrap(), vec![("x1".to_string(), 1.0)]);
        }
        let two = model(vec![stump_with(0, 0.5, 0.0, 1.0, 3.0, 5.0), stump_with(2, 0.5, 0.0, 1.0, 1.0, 5.0)], 3);
        let gain = importance(&two, ImportanceMetric::Gain).unwrap();
        assert_eq!(gain, vec![("x0".to_string(), 0.75), ("x2".to_string(), 0.25)]);
        let cover = importance(&two, ImportanceMetric::Coverage).unwrap();
        assert_eq!(cover, vec![("x0".to_string(), 0.5), ("x2".to_string(), 0.5)]);
        assert!(importance(&model(vec![Tree::single_leaf(1.0)], 2), ImportanceMetric::Gain).unwrap().is_empty());
        let mut out = Vec::new();
        write_importance_csv(&gain, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "feature,proportion\nx0,0.75\nx2,0.25\n");
    }

    #[test]
    fn importance_of_trained_model_sums_to_one() {
        let xs = data(300, 3, 9);
        let y: Vec<f64> = (0..300).map(|i| (3.0 * xs.get(i, 0) + xs.get(i, 2)).exp_m1()).collect();
        let names: Vec<String> = (0..3).map(|i| format!("x{i}")).collect();
        let params = TrainParams { n_trees: 10, ..Default::default() };
        let m = fit(&xs, &names, &Targets::Scalar(y), &LossSpec::squared_log(), &params).unwrap();
        for metric in [ImportanceMetric::Gain, ImportanceMetric::Coverage] {
            let imp = importance(&m, metric).unwrap();
            assert!(imp.iter().all(|(_, v)| *v >= 0.0));
            assert_relative_eq!(imp.iter().map(|(_, v)| v).sum::<f64>(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn quantile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 5.0);
        assert_relative_eq!(quantile(&v, 0.05), 1.2);
        assert_eq!(quantile(&[7.0], 0.95), 7.0);
    }
}
