//! TOML run configuration.

use std::path::{Path, PathBuf};

use evtboost::booster::TrainParams;
use evtboost::dataset::{CsvSchema, Response};
use evtboost::evaluate::{FeaturePlan, HyperParam, MixtureStage, SelectDirection, ThresholdScoreSpec};
use evtboost::losses::LossKind;
use evtboost::mixture::MixtureConfig;
use evtboost::spatialcv::{MaskModelParams, DEFAULT_N_FOLDS};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Input dataset; relative paths are resolved against the config file.
    pub data: Option<PathBuf>,
    pub schema: CsvSchema,
    pub features: FeaturePlan,
    pub count: CountSection,
    pub size: MixtureConfig,
    pub log_normal: LogNormalSection,
    pub score: ScoreSection,
    pub cv: CvSection,
    pub tune: TuneSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CountSection {
    pub loss: LossKind,
    pub alpha: f64,
    pub params: TrainParams,
}

impl Default for CountSection {
    fn default() -> Self {
        Self { loss: LossKind::Dgpd, alpha: 52.0, params: TrainParams::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogNormalSection {
    pub params: TrainParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreSection {
    pub cnt: ThresholdScoreSpec,
    pub ba: ThresholdScoreSpec,
}

impl Default for ScoreSection {
    fn default() -> Self {
        Self { cnt: ThresholdScoreSpec::default_for(Response::Cnt), ba: ThresholdScoreSpec::default_for(Response::Ba) }
    }
}

impl ScoreSection {
    pub fn for_response(&self, r: Response) -> &ThresholdScoreSpec {
        match r {
            Response::Cnt => &self.cnt,
            Response::Ba => &self.ba,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvSection {
    pub n_folds: usize,
    /// Tree counts to score; empty means ten evenly spaced counts up to `n_trees`.
    pub checkpoints: Vec<usize>,
    pub direction: SelectDirection,
    pub mask: MaskModelParams,
    /// Calibrate the mask intercepts to the dataset's observed masking rates.
    pub calibrate: bool,
    /// Which mixture component the checkpoints truncate.
    pub stage: MixtureStage,
}

impl Default for CvSection {
    fn default() -> Self {
        Self {
            n_folds: DEFAULT_N_FOLDS,
            checkpoints: Vec::new(),
            direction: SelectDirection::Largest,
            mask: MaskModelParams::default(),
            calibrate: true,
            stage: MixtureStage::All,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneSection {
    pub max_iters: usize,
    pub space: Vec<HyperParam>,
    /// Mixture component whose training parameters are tuned.
    pub component: MixtureStage,
}

impl Default for TuneSection {
    fn default() -> Self {
        Self { max_iters: 20, space: Vec::new(), component: MixtureStage::All }
    }
}

/// A parsed config together with the digest of its source text.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub sha256: String,
}

impl LoadedConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self { config: RunConfig::default(), sha256: digest(b"") });
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut config: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if let Some(d) = &config.data {
            if d.is_relative() {
                config.data = Some(path.parent().unwrap_or(Path::new("")).join(d));
            }
        }
        if let Some(d) = &config.data {
            if !d.exists() {
                return Err(CliError::Config(format!("data file {} does not exist", d.display())));
            }
        }
        Ok(Self { config, sha256: digest(text.as_bytes()) })
    }
}

pub fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default() {
        let c: RunConfig = toml::from_str("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.score.cnt.thresholds.len(), 28);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>("sed = 1").is_err());
        assert!(toml::from_str::<RunConfig>("[count]\nalpah = 3").is_err());
        assert!(toml::from_str::<RunConfig>("[count.params]\nntrees = 3").is_err());
    }

    #[test]
    fn sections_parse() {
        let text = r#"
seed = 4
[count]
loss = "poisson"
params = { n_trees = 7, learning_rate = 0.2 }
[size]
u = 150.0
[size.tail]
n_trees = 3
[features]
cross_fill_zeros = true
neighbor_average = ["x1"]
[features.impute_ba_classes]
u = 150.0
[cv]
checkpoints = [1, 5]
direction = "smallest"
[cv.mask]
beta = 1.0
[[tune.space]]
name = "learning_rate"
lo = 0.01
hi = 0.3
"#;
        let c: RunConfig = toml::from_str(text).unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.count.loss, LossKind::Poisson);
        assert_eq!(c.count.params.n_trees, 7);
        assert_eq!(c.size.tail.n_trees, 3);
        assert_eq!(c.size.u, 150.0);
        assert_eq!(c.cv.direction, SelectDirection::Smallest);
        assert_eq!(c.cv.mask.beta, 1.0);
        assert_eq!(c.tune.space.len(), 1);
        assert_eq!(c.features.impute_ba_classes.unwrap().u, 150.0);
    }
}
