//! Three-component burned-area model: a zero / medium / large classifier, a truncated
//! gamma bulk on `log(1 + BA)` below the threshold, and a GPD tail on excesses above it.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::booster::{fit, BoostedModel, Targets, TrainParams};
use crate::dataset::{size_class, GridDataset, DEFAULT_SIZE_THRESHOLD};
use crate::dist::{gpd_cdf, trgamma_cdf};
use crate::error::{Error, Result};
use crate::losses::{gpd_sigma_from_theta, LossKind, LossSpec};
use crate::matrix::Matrix;
use crate::special::{regularized_lower_gamma, softmax};

pub const MANIFEST_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_XI: f64 = 0.8;
pub const DEFAULT_KAPPA: f64 = 0.5;
pub const DEFAULT_K_SHAPE: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureModel {
    pub classifier: BoostedModel,
    pub bulk: BoostedModel,
    pub tail: BoostedModel,
    pub u: f64,
    pub xi: f64,
    pub kappa: f64,
    pub k_shape: f64,
}

impl MixtureModel {
    /// Assemble a mixture, checking that the components agree with each other.
    pub fn new(classifier: BoostedModel, bulk: BoostedModel, tail: BoostedModel, u: f64) -> Result<Self> {
        if !(u > 0.0 && u.is_finite()) {
            return Err(Error::InvalidParameter(format!("threshold u must be positive, got {u}")));
        }
        if classifier.loss.kind != LossKind::CrossEntropy || classifier.n_outputs() != 3 {
            return Err(Error::InvalidParameter("classifier must be 3-class cross-entropy".into()));
        }
        if bulk.loss.kind != LossKind::Trgamma {
            return Err(Error::InvalidParameter("bulk component must use the truncated gamma loss".into()));
        }
        if tail.loss.kind != LossKind::Gpd {
            return Err(Error::InvalidParameter("tail component must use the GPD loss".into()));
        }
        let trunc = bulk.loss.u_trunc()?;
        if (trunc - u.ln_1p()).abs() > 1e-9 * u.ln_1p() {
            return Err(Error::InvalidParameter(format!(
                "bulk truncation {trunc} does not match log(1 + u) = {}",
                u.ln_1p()
            )));
        }
        if bulk.feature_names != classifier.feature_names || tail.feature_names != classifier.feature_names {
            return Err(Error::FeatureMismatch("mixture components use different feature lists".into()));
        }
        let (xi, kappa, k_shape) = (tail.loss.xi()?, tail.loss.kappa()?, bulk.loss.k_shape()?);
        Ok(Self { classifier, bulk, tail, u, xi, kappa, k_shape })
    }

    pub fn feature_names(&self) -> &[String] {
        &self.classifier.feature_names
    }

    /// Bulk truncation point on the `log(1 + BA)` scale.
    pub fn bulk_truncation(&self) -> f64 {
        self.u.ln_1p()
    }

    /// Probabilities of (no fire, `0 < BA ≤ u`, `BA > u`).
    pub fn component_probs(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.classifier.predict_row(x))
    }

    fn bulk_theta(&self, x: &[f64]) -> f64 {
        self.bulk.predict_row(x)[0]
    }

    fn tail_theta(&self, x: &[f64]) -> f64 {
        self.tail.predict_row(x)[0]
    }

    /// `P(BA ≤ b | x)`.
    pub fn cdf(&self, x: &[f64], b: f64) -> Result<f64> {
        let p = self.component_probs(x);
        self.cdf_with(&p, self.bulk_theta(x), self.tail_theta(x), b)
    }

    fn cdf_with(&self, p: &[f64], bulk_theta: f64, tail_theta: f64, b: f64) -> Result<f64> {
        if !(b >= 0.0) {
            return Err(Error::InvalidParameter(format!("burned-area threshold must be nonnegative, got {b}")));
        }
        let f2 = trgamma_cdf(b.min(self.u).ln_1p(), bulk_theta, self.k_shape, self.bulk_truncation());
        let f3 = if b > self.u {
            gpd_cdf(b - self.u, gpd_sigma_from_theta(tail_theta, self.xi, self.kappa), self.xi)
        } else {
            0.0
        };
        Ok((p[0] + p[1] * f2 + p[2] * f3).clamp(0.0, 1.0))
    }

    /// Row `i`, column `j`: `P(BA ≤ thresholds[j] | xs[i])`.
    pub fn threshold_probs(&self, xs: &Matrix, thresholds: &[f64]) -> Result<Vec<Vec<f64>>> {
        if thresholds.windows(2).any(|w| !(w[0] <= w[1])) {
            return Err(Error::InvalidParameter("thresholds must be sorted ascending".into()));
        }
        if xs.n_cols() != self.feature_names().len() {
            return Err(Error::FeatureMismatch(format!(
                "model expects {} features, data has {}",
                self.feature_names().len(),
                xs.n_cols()
            )));
        }
        (0..xs.n_rows())
            .map(|i| {
                let c = self.conditional(xs.row(i));
                thresholds.iter().map(|&b| c.cdf(b)).collect()
            })
            .collect()
    }

    /// Draw one burned area from the fitted conditional distribution at `x`.
    pub fn sample<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> f64 {
        self.conditional(x).sample(rng)
    }

    /// The conditional distribution at `x`, with the three model predictions evaluated once.
    pub fn conditional(&self, x: &[f64]) -> ConditionalMixture<'_> {
        ConditionalMixture {
            model: self,
            probs: self.component_probs(x),
            bulk_theta: self.bulk_theta(x),
            tail_theta: self.tail_theta(x),
        }
    }

    /// Write the manifest and its three component documents next to `path`.
    pub fn save_manifest(&self, path: &Path) -> Result<()> {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("mixture").to_string();
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let names = ["classifier", "bulk", "tail"].map(|c| format!("{stem}.{c}.json"));
        self.classifier.save_file(&dir.join(&names[0]))?;
        self.bulk.save_file(&dir.join(&names[1]))?;
        self.tail.save_file(&dir.join(&names[2]))?;
        let [classifier, bulk, tail] = names;
        let manifest = MixtureManifest {
            format_version: MANIFEST_FORMAT_VERSION,
            classifier,
            bulk,
            tail,
            u: self.u,
            xi: self.xi,
            kappa: self.kappa,
            k_shape: self.k_shape,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Load a manifest; component paths are resolved relative to the manifest.
    pub fn load_manifest(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let m: MixtureManifest = serde_json::from_str(&text).map_err(|e| Error::Schema(format!("manifest: {e}")))?;
        if m.format_version != MANIFEST_FORMAT_VERSION {
            return Err(Error::Version { found: m.format_version, expected: MANIFEST_FORMAT_VERSION });
        }
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let resolve = |p: &str| -> PathBuf {
            let p = Path::new(p);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                dir.join(p)
            }
        };
        let model = Self::new(
            BoostedModel::load_file(&resolve(&m.classifier))?,
            BoostedModel::load_file(&resolve(&m.bulk))?,
            BoostedModel::load_file(&resolve(&m.tail))?,
            m.u,
        )?;
        let agree = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(1.0);
        if !agree(model.xi, m.xi) || !agree(model.kappa, m.kappa) || !agree(model.k_shape, m.k_shape) {
            return Err(Error::Schema("manifest shape parameters disagree with the component models".into()));
        }
        Ok(model)
    }
}

/// The fitted burned-area distribution at one covariate vector.
#[derive(Debug, Clone)]
pub struct ConditionalMixture<'a> {
    model: &'a MixtureModel,
    probs: Vec<f64>,
    bulk_theta: f64,
    tail_theta: f64,
}

impl ConditionalMixture<'_> {
    pub fn component_probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn cdf(&self, b: f64) -> Result<f64> {
        self.model.cdf_with(&self.probs, self.bulk_theta, self.tail_theta, b)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let m = self.model;
        let p = &self.probs;
        let v: f64 = rng.random();
        if v < p[0] {
            0.0
        } else if v < p[0] + p[1] {
            sample_truncated_gamma(m.k_shape, self.bulk_theta, m.bulk_truncation(), rng).exp_m1()
        } else {
            let sigma = gpd_sigma_from_theta(self.tail_theta, m.xi, m.kappa);
            let w: f64 = rng.random();
            // inverse CDF of the GPD excess; 1 - w lies in (0, 1]
            m.u + sigma * ((-m.xi * (1.0 - w).ln()).exp_m1()) / m.xi
        }
    }
}

/// Versioned mixture manifest document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureManifest {
    pub format_version: u32,
    pub classifier: String,
    pub bulk: String,
    pub tail: String,
    pub u: f64,
    pub xi: f64,
    pub kappa: f64,
    pub k_shape: f64,
}

/// True when a JSON document looks like a mixture manifest rather than a model.
pub fn is_manifest(doc: &str) -> bool {
    serde_json::from_str::<serde_json::Value>(doc)
        .ok()
        .and_then(|v| v.get("classifier").map(|c| c.is_string()))
        .unwrap_or(false)
}

/// Draw from a gamma with shape `k` and mean `e^θ`, truncated to `(0, u]`.
fn sample_truncated_gamma<R: Rng + ?Sized>(k: f64, theta: f64, u: f64, rng: &mut R) -> f64 {
    let scale = theta.exp() / k;
    let mass = regularized_lower_gamma(k, u / scale);
    if mass > 0.05 {
        let g = Gamma::new(k, scale).expect("valid gamma parameters");
        loop {
            let x: f64 = g.sample(rng);
            if x <= u && x > 0.0 {
                return x;
            }
        }
    }
    // low acceptance: invert the truncated CDF by bisection
    let target: f64 = rng.random::<f64>();
    let (mut lo, mut hi) = (0.0, u);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if trgamma_cdf(mid, theta, k, u) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Hyperparameters for fitting all three components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixtureConfig {
    pub u: f64,
    pub xi: f64,
    pub kappa: f64,
    pub k_shape: f64,
    pub classifier: TrainParams,
    pub bulk: TrainParams,
    pub tail: TrainParams,
}

impl Default for MixtureConfig {
    fn default() -> Self {
        Self {
            u: DEFAULT_SIZE_THRESHOLD,
            xi: DEFAULT_XI,
            kappa: DEFAULT_KAPPA,
            k_shape: DEFAULT_K_SHAPE,
            classifier: TrainParams::default(),
            bulk: TrainParams::default(),
            tail: TrainParams::default(),
        }
    }
}

/// Fit the classifier on every row, the bulk on `0 < BA ≤ u` and the tail on `BA > u`.
pub fn fit_mixture(x: &Matrix, feature_names: &[String], ba: &[f64], cfg: &MixtureConfig) -> Result<MixtureModel> {
    if ba.len() != x.n_rows() {
        return Err(Error::InvalidData(format!("{} responses for {} rows", ba.len(), x.n_rows())));
    }
    if let Some(i) = ba.iter().position(|b| !(*b >= 0.0 && b.is_finite())) {
        return Err(Error::Domain { row: i, message: format!("burned area must be nonnegative, got {}", ba[i]) });
    }
    let labels: Vec<usize> = ba.iter().map(|&b| size_class(b, cfg.u)).collect();
    let rows_of = |c: usize| -> Vec<usize> { (0..ba.len()).filter(|&i| labels[i] == c).collect() };
    let (bulk_rows, tail_rows) = (rows_of(1), rows_of(2));
    if bulk_rows.is_empty() || tail_rows.is_empty() {
        return Err(Error::InvalidData(format!(
            "mixture fitting needs burned areas both in (0, {u}] and above {u}",
            u = cfg.u
        )));
    }
    let classifier = fit(
        x,
        feature_names,
        &Targets::Classes { labels, weights: None },
        &LossSpec::cross_entropy(3),
        &cfg.classifier,
    )?;
    let bulk = fit(
        &x.select_rows(&bulk_rows),
        feature_names,
        &Targets::Scalar(bulk_rows.iter().map(|&i| ba[i].ln_1p()).collect()),
        &LossSpec::trgamma(cfg.k_shape, cfg.u.ln_1p()),
        &cfg.bulk,
    )?;
    let tail = fit(
        &x.select_rows(&tail_rows),
        feature_names,
        &Targets::Scalar(tail_rows.iter().map(|&i| ba[i] - cfg.u).collect()),
        &LossSpec::gpd(cfg.xi, cfg.kappa),
        &cfg.tail,
    )?;
    MixtureModel::new(classifier, bulk, tail, cfg.u)
}

/// Column label for the probability at one threshold.
pub fn threshold_column(t: f64) -> String {
    format!("p_le_{t}")
}

/// Prediction export: `cell, year, month`, then one probability column per threshold.
pub fn write_threshold_csv<W: Write>(ds: &GridDataset, thresholds: &[f64], probs: &[Vec<f64>], writer: W) -> Result<()> {
    if probs.len() != ds.n_rows() {
        return Err(Error::InvalidData(format!("{} prediction rows for {} data rows", probs.len(), ds.n_rows())));
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["cell".to_string(), "year".into(), "month".into()];
    header.extend(thresholds.iter().map(|&t| threshold_column(t)));
    w.write_record(&header)?;
    for (r, p) in ds.rows().iter().zip(probs) {
        let mut rec = vec![r.cell.to_string(), r.year.to_string(), r.month.to_string()];
        rec.extend(p.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::booster::MODEL_FORMAT_VERSION;
    use crate::dist::gpd_cdf_theta;
    use crate::tree::Tree;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn constant(loss: LossSpec, base: Vec<f64>) -> BoostedModel {
        BoostedModel {
            format_version: MODEL_FORMAT_VERSION,
            loss,
            base_score: base,
            feature_names: vec!["x".into()],
            trees: vec![],
            params: TrainParams::default(),
        }
    }

    fn mixture(p: [f64; 3], bulk_theta: f64, tail_theta: f64) -> MixtureModel {
        mixture_k(p, 2.0, bulk_theta, tail_theta)
    }

    fn mixture_k(p: [f64; 3], k: f64, bulk_theta: f64, tail_theta: f64) -> MixtureModel {
        let u: f64 = 200.0;
        MixtureModel::new(
            constant(LossSpec::cross_entropy(3), p.iter().map(|v| v.ln()).collect()),
            constant(LossSpec::trgamma(k, u.ln_1p()), vec![bulk_theta]),
            constant(LossSpec::gpd(0.8, 0.5), vec![tail_theta]),
            u,
        )
        .unwrap()
    }

    #[test]
    fn component_prob_examples() {
        let m = mixture([1.0, 1.0, 1.0], 2.0, 3.0);
        for v in m.component_probs(&[0.0]) {
            assert_relative_eq!(v, 1.0 / 3.0, epsilon = 1e-15);
        }
        let m = mixture([1.0, 2.0, 3.0], 2.0, 3.0);
        let p = m.component_probs(&[0.0]);
        assert_relative_eq!(p[0], 1.0 / 6.0, epsilon = 1e-15);
        assert_relative_eq!(p[1], 1.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(p[2], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn cdf_examples() {
        let m = mixture([0.9, 0.08, 0.02], 2.0, 3.0);
        assert_eq!(m.cdf(&[0.0], 0.0).unwrap(), m.component_probs(&[0.0])[0]);
        assert_relative_eq!(m.cdf(&[0.0], 1e300).unwrap(), 1.0, epsilon = 1e-12);
        assert!(m.cdf(&[0.0], -1.0).is_err());

        // pick the bulk score so that F2(100) = 0.75; with k = 2 the truncated CDF
        // never drops below (z / log 201)^2 ≈ 0.757, so use a larger shape
        let z = 100f64.ln_1p();
        let (mut lo, mut hi) = (-10.0, 10.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            // F2 decreases as the mean grows
            if trgamma_cdf(z, mid, 5.0, 200f64.ln_1p()) > 0.75 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let m = mixture_k([0.9, 0.08, 0.02], 5.0, 0.5 * (lo + hi), 3.0);
        assert_relative_eq!(m.cdf(&[0.0], 100.0).unwrap(), 0.96, epsilon = 1e-12);
    }

    #[test]
    fn cdf_shape_properties() {
        let m = mixture([0.5, 0.3, 0.2], 3.5, 4.0);
        let p = m.component_probs(&[0.0]);
        let grid: Vec<f64> = (0..2000).map(|i| i as f64 * 0.5).collect();
        let mut prev = 0.0;
        for &b in &grid {
            let c = m.cdf(&[0.0], b).unwrap();
            assert!((0.0..=1.0).contains(&c));
            assert!(c >= prev - 1e-15);
            if b > 0.0 && b <= 200.0 {
                assert!(c <= p[0] + p[1] + 1e-15);
            }
            prev = c;
        }
        // no jump across u
        let below = m.cdf(&[0.0], 200.0 - 1e-6).unwrap();
        let at = m.cdf(&[0.0], 200.0).unwrap();
        let above = m.cdf(&[0.0], 200.0 + 1e-6).unwrap();
        assert_relative_eq!(at, p[0] + p[1], epsilon = 1e-15);
        let sigma = gpd_sigma_from_theta(4.0, 0.8, 0.5);
        assert!((above - at).abs() <= p[2] * 1e-6 / sigma * 1.01);
        assert!((at - below) < 1e-6);
    }

    #[test]
    fn threshold_prob_examples() {
        let m = mixture([0.5, 0.3, 0.2], 3.5, 4.0);
        let xs = Matrix::new(2, 1, vec![0.0, 1.0]).unwrap();
        let out = m.threshold_probs(&xs, &[0.0, 1e300]).unwrap();
        for row in &out {
            assert_relative_eq!(row[0], 0.5, epsilon = 1e-15);
            assert_relative_eq!(row[1], 1.0, epsilon = 1e-12);
        }
        let out = m.threshold_probs(&xs, &[10.0, 10.0, 500.0]).unwrap();
        assert_eq!(out[0][0], out[0][1]);
        assert!(m.threshold_probs(&xs, &[10.0, 5.0]).is_err());
        let wide = Matrix::new(1, 2, vec![0.0, 1.0]).unwrap();
        assert!(matches!(m.threshold_probs(&wide, &[1.0]), Err(Error::FeatureMismatch(_))));
    }

    #[test]
    fn invariants_are_enforced() {
        let good = mixture([1.0, 1.0, 1.0], 1.0, 1.0);
        let wrong_trunc = constant(LossSpec::trgamma(2.0, 5.0), vec![0.0]);
        assert!(MixtureModel::new(good.classifier.clone(), wrong_trunc, good.tail.clone(), 200.0).is_err());
        let two = constant(LossSpec::cross_entropy(2), vec![0.0, 0.0]);
        assert!(MixtureModel::new(two, good.bulk.clone(), good.tail.clone(), 200.0).is_err());
    }

    #[test]
    fn monte_carlo_matches_cdf() {
        let mut m = mixture([0.4, 0.45, 0.15], 2.5, 3.0);
        m.bulk.trees.push(Tree::stump(0, 0.5, 0.5, -0.5));
        let x = [0.0];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 200_000;
        let mut draws: Vec<f64> = (0..n).map(|_| m.sample(&x, &mut rng)).collect();
        draws.sort_by(f64::total_cmp);
        for b in [0.0, 1.0, 5.0, 20.0, 60.0, 150.0, 199.0, 250.0, 1000.0, 1e4] {
            let emp = draws.partition_point(|&d| d <= b) as f64 / n as f64;
            assert!((emp - m.cdf(&x, b).unwrap()).abs() < 0.005, "b={b}");
        }
    }

    #[test]
    fn low_acceptance_sampler_stays_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = 1.0;
        let draws: Vec<f64> = (0..2000).map(|_| sample_truncated_gamma(3.0, 6.0, u, &mut rng)).collect();
        assert!(draws.iter().all(|&d| d > 0.0 && d <= u));
        let below_half = draws.iter().filter(|&&d| d <= 0.5).count() as f64 / 2000.0;
        assert!((below_half - trgamma_cdf(0.5, 6.0, 3.0, u)).abs() < 0.04);
    }

    #[test]
    fn fit_and_manifest_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 600;
        let xs: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let ba: Vec<f64> = xs
            .iter()
            .map(|&x| match (rng.random::<f64>() * 3.0) as usize {
                0 => 0.0,
                1 => 1.0 + 150.0 * x * rng.random::<f64>(),
                _ => 200.0 + 100.0 * rng.random::<f64>() * (1.0 + x),
            })
            .collect();
        let x = Matrix::new(n, 1, xs).unwrap();
        let cfg = MixtureConfig {
            classifier: TrainParams { n_trees: 5, ..Default::default() },
            bulk: TrainParams { n_trees: 5, ..Default::default() },
            tail: TrainParams { n_trees: 5, ..Default::default() },
            ..Default::default()
        };
        let m = fit_mixture(&x, &["x".to_string()], &ba, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mix.json");
        m.save_manifest(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(is_manifest(&text));
        assert!(!is_manifest(&m.tail.save().unwrap()));
        let back = MixtureModel::load_manifest(&path).unwrap();
        assert_eq!(back, m);
        assert!(fit_mixture(&x, &["x".to_string()], &vec![0.0; n], &cfg).is_err());
        // tail scores are the κ-quantile parameterization
        let t = m.tail_theta(&[0.3]);
        let q = gpd_cdf_theta(t.exp(), t, m.xi, m.kappa);
        assert_relative_eq!(q, m.kappa, epsilon = 1e-12);
    }

    #[test]
    fn prediction_csv_layout() {
        let ds = GridDataset::from_records(
            vec![crate::dataset::Record {
                lon: 0.0,
                lat: 0.0,
                year: 2001,
                month: 4,
                covariates: vec![],
                cnt: None,
                ba: None,
            }],
            vec![],
            0.5,
            &[4],
        )
        .unwrap();
        let mut out = Vec::new();
        write_threshold_csv(&ds, &[0.0, 10.5], &[vec![0.25, 0.5]], &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "cell,year,month,p_le_0,p_le_10.5\n0,2001,4,0.25,0.5\n");
    }
}
