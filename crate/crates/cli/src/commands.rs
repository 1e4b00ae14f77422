//! Subcommand implementations.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use evtboost::booster::{fit_traced, BoostedModel, Targets, TrainParams};
use evtboost::dataset::{size_class, GridDataset, Response};
use evtboost::evaluate::{
    count_threshold_probs, model_features, observed_rows, one_se_select, run_cv, threshold_score, tune,
    write_tuning_log, CountRecipe, CvRecipe, CvResult, MixtureStage, SizeRecipe, ThresholdScoreSpec,
};
use evtboost::interpret::{importance, partial_dependence, write_importance_csv, ImportanceMetric, PdpTransform};
use evtboost::losses::{LossKind, LossSpec};
use evtboost::mixture::{is_manifest, threshold_column, write_threshold_csv, MixtureModel};
use evtboost::spatialcv::{generate_folds, FoldSet};
use evtboost::synth::{generate, SynthConfig};
use evtboost::{Error, Matrix};

use crate::config::{digest, LoadedConfig, RunConfig};
use crate::{CliError, Command, RunInfo};

type CmdResult = Result<(), CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum TrainLoss {
    Poisson,
    Dgpd,
    SquaredLog,
    Trgamma,
    Gpd,
    CrossEntropy,
    Mixture,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RowSelection {
    /// Rows the loss models within the mixture (e.g. `BA > u` for gpd).
    Component,
    /// Every row with the response observed.
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ResponseArg {
    Cnt,
    Ba,
}

impl From<ResponseArg> for Response {
    fn from(r: ResponseArg) -> Self {
        match r {
            ResponseArg::Cnt => Response::Cnt,
            ResponseArg::Ba => Response::Ba,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub nx: usize,
    #[arg(long, default_value_t = 15)]
    pub ny: usize,
    /// Comma-separated years.
    #[arg(long, value_delimiter = ',', default_value = "2001,2002")]
    pub years: Vec<i32>,
    #[arg(long, default_value_t = 5.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.1)]
    pub mask_rate_cnt: f64,
    #[arg(long, default_value_t = 0.1)]
    pub mask_rate_ba: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Input data (overrides the config's `data`).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub loss: TrainLoss,
    /// Model document, or mixture manifest for `--loss mixture`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "component")]
    pub rows: RowSelection,
    /// Overrides the seed of every trained model.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the tree count of every trained model.
    #[arg(long)]
    pub n_trees: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model document or mixture manifest.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Thresholds, separated by whitespace, commas or newlines.
    #[arg(long)]
    pub thresholds: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CvFoldsArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub n_folds: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub folds: PathBuf,
    #[arg(long, value_enum)]
    pub response: ResponseArg,
    /// CV report CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub folds: PathBuf,
    #[arg(long, value_enum)]
    pub response: ResponseArg,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Tuning log CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Supplies threshold weights when its thresholds match the predictions.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long, value_enum)]
    pub response: ResponseArg,
}

#[derive(Debug, Args)]
pub struct PdpArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Comma-separated feature names.
    #[arg(long, value_delimiter = ',', required = true)]
    pub features: Vec<String>,
    /// Evenly spaced grid points per feature between its observed min and max.
    #[arg(long, default_value_t = 20)]
    pub grid_size: usize,
    #[arg(long, default_value_t = evtboost::interpret::DEFAULT_PDP_SUBSAMPLE)]
    pub n_sub: usize,
    /// `raw`, `mean`, or `prob:<class>`.
    #[arg(long, default_value = "raw")]
    pub transform: String,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ImportanceArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// `gain` or `coverage`.
    #[arg(long, default_value = "gain")]
    pub metric: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cmd: &Command) -> Result<RunInfo, (CliError, Option<RunInfo>)> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Train(a) => with_config(a.config.as_deref(), a.seed, |c, _| train(a, c)),
        Command::Predict(a) => with_config(a.config.as_deref(), None, |c, _| predict(a, c)),
        Command::Cvfolds(a) => with_config(a.config.as_deref(), a.seed, |c, s| cvfolds(a, c, s)),
        Command::Cv(a) => with_config(a.config.as_deref(), None, |c, _| cv(a, c)),
        Command::Tune(a) => with_config(a.config.as_deref(), a.seed, |c, s| tune_cmd(a, c, s)),
        Command::Score(a) => with_config(a.config.as_deref(), None, |c, _| score(a, c)),
        Command::Pdp(a) => with_config(a.config.as_deref(), a.seed, |c, s| pdp(a, c, s)),
        Command::Importance(a) => with_config(None, None, |_, _| importance_cmd(a)),
    }
}

fn with_config<F>(path: Option<&Path>, seed: Option<u64>, f: F) -> Result<RunInfo, (CliError, Option<RunInfo>)>
where
    F: FnOnce(&RunConfig, u64) -> CmdResult,
{
    let loaded = LoadedConfig::load(path).map_err(|e| (e, None))?;
    let seed = seed.unwrap_or(loaded.config.seed);
    let info = RunInfo { config_sha256: loaded.sha256.clone(), seed };
    match f(&loaded.config, seed) {
        Ok(()) => Ok(info),
        Err(e) => Err((e, Some(info))),
    }
}

fn require_file(path: &Path, what: &str) -> CmdResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{what} {} does not exist", path.display())))
    }
}

fn load_data(flag: Option<&Path>, cfg: &RunConfig) -> Result<GridDataset, CliError> {
    let path = flag
        .map(Path::to_path_buf)
        .or_else(|| cfg.data.clone())
        .ok_or_else(|| CliError::Config("no data file given (use --data or `data` in the config)".into()))?;
    require_file(&path, "data file")?;
    Ok(GridDataset::load_csv(&path, &cfg.schema)?)
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", path.display())))
}

fn synth(a: &SynthArgs) -> Result<RunInfo, (CliError, Option<RunInfo>)> {
    let cfg = SynthConfig {
        nx: a.nx,
        ny: a.ny,
        years: a.years.clone(),
        alpha: a.alpha,
        mask_rate_cnt: a.mask_rate_cnt,
        mask_rate_ba: a.mask_rate_ba,
        seed: a.seed,
        ..Default::default()
    };
    let info = RunInfo { config_sha256: digest(format!("{cfg:?}").as_bytes()), seed: a.seed };
    let res = (|| -> CmdResult {
        let ds = generate(&cfg)?;
        let mut w = create(&a.out)?;
        ds.write_csv(&mut w, "NA")?;
        w.flush().map_err(Error::from)?;
        println!("rows={}", ds.n_rows());
        println!("cells={}", ds.cells().len());
        Ok(())
    })();
    match res {
        Ok(()) => Ok(info),
        Err(e) => Err((e, Some(info))),
    }
}

/// Training data for one single-loss model.
struct Prepared {
    x: Matrix,
    names: Vec<String>,
    rows: Vec<usize>,
    targets: Targets,
    loss: LossSpec,
}

fn prepare(data: &GridDataset, kind: TrainLoss, rows_sel: RowSelection, cfg: &RunConfig) -> Result<Prepared, CliError> {
    let u = cfg.size.u;
    let response = match kind {
        TrainLoss::Poisson | TrainLoss::Dgpd => Response::Cnt,
        _ => Response::Ba,
    };
    let names = model_features(data, response);
    let observed = observed_rows(data, response);
    let value = |i: usize| data.rows()[i].response(response).unwrap();
    let component = rows_sel == RowSelection::Component;
    let (rows, targets, loss) = match kind {
        TrainLoss::Poisson | TrainLoss::Dgpd => {
            let loss = if kind == TrainLoss::Poisson { LossSpec::poisson() } else { LossSpec::dgpd(cfg.count.alpha) };
            let y = observed.iter().map(|&i| value(i)).collect();
            (observed, Targets::Scalar(y), loss)
        }
        TrainLoss::SquaredLog => {
            let y = observed.iter().map(|&i| value(i)).collect();
            (observed, Targets::Scalar(y), LossSpec::squared_log())
        }
        TrainLoss::CrossEntropy => {
            let labels = observed.iter().map(|&i| size_class(value(i), u)).collect();
            (observed, Targets::Classes { labels, weights: None }, LossSpec::cross_entropy(3))
        }
        TrainLoss::Trgamma => {
            let rows: Vec<usize> = if component {
                observed.into_iter().filter(|&i| size_class(value(i), u) == 1).collect()
            } else {
                observed
            };
            let y = rows.iter().map(|&i| value(i).ln_1p()).collect();
            (rows, Targets::Scalar(y), LossSpec::trgamma(cfg.size.k_shape, u.ln_1p()))
        }
        TrainLoss::Gpd => {
            let rows: Vec<usize> = if component {
                observed.into_iter().filter(|&i| size_class(value(i), u) == 2).collect()
            } else {
                observed
            };
            let y = rows.iter().map(|&i| value(i) - u).collect();
            (rows, Targets::Scalar(y), LossSpec::gpd(cfg.size.xi, cfg.size.kappa))
        }
        TrainLoss::Mixture => unreachable!("mixtures are trained per component"),
    };
    let x = data.matrix_for(&names)?.select_rows(&rows);
    Ok(Prepared { x, names, rows, targets, loss })
}

fn params_for(kind: TrainLoss, cfg: &RunConfig) -> TrainParams {
    match kind {
        TrainLoss::Poisson | TrainLoss::Dgpd => cfg.count.params.clone(),
        TrainLoss::SquaredLog => cfg.log_normal.params.clone(),
        TrainLoss::CrossEntropy => cfg.size.classifier.clone(),
        TrainLoss::Trgamma => cfg.size.bulk.clone(),
        TrainLoss::Gpd => cfg.size.tail.clone(),
        TrainLoss::Mixture => unreachable!("mixtures are trained per component"),
    }
}

/// Train one model; a domain error is reported with the dataset row index.
fn train_one(
    data: &GridDataset,
    kind: TrainLoss,
    a: &TrainArgs,
    cfg: &RunConfig,
) -> Result<(BoostedModel, Vec<f64>, usize), CliError> {
    let p = prepare(data, kind, a.rows, cfg)?;
    let mut params = params_for(kind, cfg);
    if let Some(s) = a.seed {
        params.seed = s;
    }
    if let Some(t) = a.n_trees {
        params.n_trees = t;
    }
    match fit_traced(&p.x, &p.names, &p.targets, &p.loss, &params) {
        Ok((m, hist)) => Ok((m, hist, p.rows.len())),
        Err(Error::Domain { row, message }) => Err(CliError::Core(Error::Domain { row: p.rows[row], message })),
        Err(e) => Err(e.into()),
    }
}

fn report(prefix: &str, m: &BoostedModel, hist: &[f64], n: usize) {
    println!("{prefix}loss={}", m.loss.kind.name());
    println!("{prefix}rounds={}", m.n_rounds());
    println!("{prefix}rows={n}");
    println!("{prefix}train_loss={}", hist.last().copied().unwrap_or(f64::NAN) / n.max(1) as f64);
}

fn train(a: &TrainArgs, cfg: &RunConfig) -> CmdResult {
    let ds = load_data(a.data.as_deref(), cfg)?;
    let data = cfg.features.apply(&ds)?;
    if a.loss == TrainLoss::Mixture {
        let mut parts = Vec::new();
        for (prefix, kind) in
            [("classifier_", TrainLoss::CrossEntropy), ("bulk_", TrainLoss::Trgamma), ("tail_", TrainLoss::Gpd)]
        {
            let args = TrainArgs { rows: RowSelection::Component, config: None, data: None, out: a.out.clone(), ..*a };
            let (m, hist, n) = train_one(&data, kind, &args, cfg)?;
            report(prefix, &m, &hist, n);
            parts.push(m);
        }
        let tail = parts.pop().unwrap();
        let bulk = parts.pop().unwrap();
        let classifier = parts.pop().unwrap();
        let mixture = MixtureModel::new(classifier, bulk, tail, cfg.size.u)?;
        mixture.save_manifest(&a.out)?;
        return Ok(());
    }
    let (m, hist, n) = train_one(&data, a.loss, a, cfg)?;
    m.save_file(&a.out)?;
    report("", &m, &hist, n);
    Ok(())
}

pub fn read_thresholds(path: &Path) -> Result<Vec<f64>, CliError> {
    require_file(path, "thresholds file")?;
    let text = std::fs::read_to_string(path).map_err(Error::from)?;
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        for tok in line.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()) {
            out.push(
                tok.parse::<f64>()
                    .map_err(|_| CliError::Data(format!("{}: bad threshold '{tok}'", path.display())))?,
            );
        }
    }
    Ok(out)
}

fn predict(a: &PredictArgs, cfg: &RunConfig) -> CmdResult {
    require_file(&a.model, "model file")?;
    let ds = load_data(a.data.as_deref(), cfg)?;
    let data = if ds.n_rows() == 0 { ds } else { cfg.features.apply(&ds)? };
    let doc = std::fs::read_to_string(&a.model).map_err(Error::from)?;
    let thresholds = a.thresholds.as_deref().map(read_thresholds).transpose()?;
    let mut w = create(&a.out)?;
    if is_manifest(&doc) {
        let m = MixtureModel::load_manifest(&a.model)?;
        let t = thresholds.unwrap_or_else(|| cfg.score.ba.thresholds.clone());
        let probs = m.threshold_probs(&data.matrix_for(m.feature_names())?, &t)?;
        write_threshold_csv(&data, &t, &probs, &mut w)?;
        println!("rows={}", probs.len());
        println!("columns={}", t.len());
    } else {
        let m = BoostedModel::load(&doc)?;
        let xs = data.matrix_for(&m.feature_names)?;
        match thresholds {
            Some(t) if matches!(m.loss.kind, LossKind::Poisson | LossKind::Dgpd) => {
                let probs = count_threshold_probs(&m, &xs, &t)?;
                write_threshold_csv(&data, &t, &probs, &mut w)?;
                println!("columns={}", t.len());
            }
            Some(_) => {
                return Err(CliError::Config(format!(
                    "threshold probabilities need a count model or a mixture, not '{}'",
                    m.loss.kind.name()
                )))
            }
            None => write_raw_predictions(&data, &m, &xs, &mut w)?,
        }
        println!("rows={}", data.n_rows());
    }
    w.flush().map_err(Error::from)?;
    Ok(())
}

fn write_raw_predictions<W: Write>(data: &GridDataset, m: &BoostedModel, xs: &Matrix, w: W) -> CmdResult {
    let raw = m.predict_raw(xs)?;
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["cell".to_string(), "year".into(), "month".into()];
    let k = m.n_outputs();
    let has_mean = k == 1 && m.response_mean(0.0).is_some();
    if k == 1 {
        header.push("raw".into());
        if has_mean {
            header.push("mean".into());
        }
    } else {
        header.extend((0..k).map(|c| format!("raw_{c}")));
        header.extend((0..k).map(|c| format!("prob_{c}")));
    }
    out.write_record(&header).map_err(Error::from)?;
    for (r, s) in data.rows().iter().zip(&raw) {
        let mut rec = vec![r.cell.to_string(), r.year.to_string(), r.month.to_string()];
        rec.extend(s.iter().map(|v| v.to_string()));
        if has_mean {
            let mean = m.response_mean(s[0]).ok_or_else(|| Error::Numerical("mean transform failed".into()))?;
            rec.push(mean.to_string());
        } else if k > 1 {
            rec.extend(evtboost::special::softmax(s).iter().map(|v| v.to_string()));
        }
        out.write_record(&rec).map_err(Error::from)?;
    }
    out.flush().map_err(Error::from)?;
    Ok(())
}

fn cvfolds(a: &CvFoldsArgs, cfg: &RunConfig, seed: u64) -> CmdResult {
    let ds = load_data(a.data.as_deref(), cfg)?;
    let params = if cfg.cv.calibrate { cfg.cv.mask.calibrated(&ds)? } else { cfg.cv.mask.clone() };
    let n_folds = a.n_folds.unwrap_or(cfg.cv.n_folds);
    let folds = generate_folds(&ds, &params, n_folds, seed)?;
    let mut w = create(&a.out)?;
    folds.write_csv(&ds, &mut w)?;
    w.flush().map_err(Error::from)?;
    println!("folds={n_folds}");
    println!("beta0_cnt={}", params.beta0_cnt);
    println!("beta0_ba={}", params.beta0_ba);
    println!("cnt_keys={}", folds.cnt.iter().map(|s| s.len()).sum::<usize>());
    println!("ba_keys={}", folds.ba.iter().map(|s| s.len()).sum::<usize>());
    Ok(())
}

fn load_folds(path: &Path, ds: &GridDataset, n_folds: usize) -> Result<FoldSet, CliError> {
    require_file(path, "folds file")?;
    let mut folds = FoldSet::read_csv(ds, File::open(path).map_err(Error::from)?)?;
    if folds.n_folds < n_folds {
        let extra = FoldSet::empty(n_folds - folds.n_folds);
        folds.cnt.extend(extra.cnt);
        folds.ba.extend(extra.ba);
        folds.n_folds = n_folds;
    }
    Ok(folds)
}

fn checkpoints(cfg: &RunConfig, response: Response) -> Vec<usize> {
    if !cfg.cv.checkpoints.is_empty() {
        return cfg.cv.checkpoints.clone();
    }
    let t = match response {
        Response::Cnt => cfg.count.params.n_trees,
        Response::Ba => match cfg.cv.stage {
            MixtureStage::Classifier => cfg.size.classifier.n_trees,
            MixtureStage::Bulk => cfg.size.bulk.n_trees,
            MixtureStage::Tail => cfg.size.tail.n_trees,
            MixtureStage::All => cfg.size.classifier.n_trees.max(cfg.size.bulk.n_trees).max(cfg.size.tail.n_trees),
        },
    };
    let mut out: Vec<usize> = (1..=10).map(|i| (i * t).div_ceil(10)).filter(|&c| c > 0).collect();
    out.dedup();
    if out.is_empty() {
        out.push(0);
    }
    out
}

fn recipe(cfg: &RunConfig, response: Response) -> Result<Box<dyn CvRecipe>, CliError> {
    Ok(match response {
        Response::Cnt => {
            let loss = match cfg.count.loss {
                LossKind::Poisson => LossSpec::poisson(),
                LossKind::Dgpd => LossSpec::dgpd(cfg.count.alpha),
                other => {
                    return Err(CliError::Config(format!("count models use poisson or dgpd, not '{}'", other.name())))
                }
            };
            Box::new(CountRecipe {
                loss,
                params: cfg.count.params.clone(),
                plan: cfg.features.clone(),
                score: cfg.score.cnt.clone(),
            })
        }
        Response::Ba => Box::new(SizeRecipe {
            config: cfg.size.clone(),
            plan: cfg.features.clone(),
            score: cfg.score.ba.clone(),
            stage: cfg.cv.stage,
        }),
    })
}

fn run_cv_with(cfg: &RunConfig, ds: &GridDataset, folds: &FoldSet, response: Response) -> Result<CvResult, CliError> {
    let r = recipe(cfg, response)?;
    Ok(run_cv(ds, folds, r.as_ref(), &checkpoints(cfg, response))?)
}

fn cv(a: &CvArgs, cfg: &RunConfig) -> CmdResult {
    let ds = load_data(a.data.as_deref(), cfg)?;
    let folds = load_folds(&a.folds, &ds, cfg.cv.n_folds)?;
    let result = run_cv_with(cfg, &ds, &folds, a.response.into())?;
    let mut w = create(&a.out)?;
    result.write_csv(&mut w)?;
    w.flush().map_err(Error::from)?;
    let best = (0..result.mean.len()).fold(0, |b, j| if result.mean[j] < result.mean[b] { j } else { b });
    println!("best_T={}", result.checkpoints[best]);
    println!("best_mean={}", result.mean[best]);
    println!("selected_T={}", one_se_select(&result, cfg.cv.direction));
    Ok(())
}

fn set_param(p: &mut TrainParams, name: &str, v: f64) -> bool {
    match name {
        "n_trees" => p.n_trees = v.round() as usize,
        "max_leaves" => p.max_leaves = v.round() as usize,
        "n_quantile_bins" => p.n_quantile_bins = v.round() as usize,
        "lambda_reg" => p.lambda_reg = v,
        "eta" => p.eta = v,
        "colsample" => p.colsample = v,
        "learning_rate" => p.learning_rate = v,
        _ => return false,
    }
    true
}

/// Apply one tuned value to a copy of the config.
fn apply_hyperparam(cfg: &mut RunConfig, response: Response, name: &str, v: f64) -> CmdResult {
    let known = match response {
        Response::Cnt => name == "alpha" && {
            cfg.count.alpha = v;
            true
        } || set_param(&mut cfg.count.params, name, v),
        Response::Ba => match name {
            "xi" => {
                cfg.size.xi = v;
                true
            }
            "kappa" => {
                cfg.size.kappa = v;
                true
            }
            "k_shape" => {
                cfg.size.k_shape = v;
                true
            }
            _ => {
                let stage = cfg.tune.component;
                let mut ok = true;
                if matches!(stage, MixtureStage::All | MixtureStage::Classifier) {
                    ok &= set_param(&mut cfg.size.classifier, name, v);
                }
                if matches!(stage, MixtureStage::All | MixtureStage::Bulk) {
                    ok &= set_param(&mut cfg.size.bulk, name, v);
                }
                if matches!(stage, MixtureStage::All | MixtureStage::Tail) {
                    ok &= set_param(&mut cfg.size.tail, name, v);
                }
                ok
            }
        },
    };
    if known {
        Ok(())
    } else {
        Err(CliError::Config(format!("'{name}' is not a tunable hyperparameter for {}", response.name())))
    }
}

fn tune_cmd(a: &TuneArgs, cfg: &RunConfig, seed: u64) -> CmdResult {
    let ds = load_data(a.data.as_deref(), cfg)?;
    let response: Response = a.response.into();
    let space = &cfg.tune.space;
    if space.is_empty() {
        return Err(CliError::Config("[tune] space is empty".into()));
    }
    for h in space {
        apply_hyperparam(&mut cfg.clone(), response, &h.name, h.lo)?;
    }
    let folds = load_folds(&a.folds, &ds, cfg.cv.n_folds)?;
    let mut cv_cfg = cfg.clone();
    if response == Response::Ba {
        cv_cfg.cv.stage = cfg.tune.component;
    }
    let max_iters = a.max_iters.unwrap_or(cfg.tune.max_iters);
    let mut failure: Option<CliError> = None;
    let log = tune(space, max_iters, seed, |point| {
        let mut c = cv_cfg.clone();
        for (h, &v) in space.iter().zip(point) {
            if let Err(e) = apply_hyperparam(&mut c, response, &h.name, v) {
                failure = Some(e);
                return Err(Error::InvalidParameter(h.name.clone()));
            }
        }
        match run_cv_with(&c, &ds, &folds, response) {
            Ok(r) => Ok(r.mean.iter().copied().fold(f64::INFINITY, f64::min)),
            Err(CliError::Core(e)) => Err(e),
            Err(e) => {
                let msg = e.to_string();
                failure = Some(e);
                Err(Error::InvalidParameter(msg))
            }
        }
    });
    let log = match (log, failure) {
        (_, Some(e)) => return Err(e),
        (r, None) => r?,
    };
    let mut w = create(&a.out)?;
    write_tuning_log(space, &log, &mut w)?;
    w.flush().map_err(Error::from)?;
    if let Some(best) = log.iter().min_by(|x, y| x.score.total_cmp(&y.score)) {
        println!("iterations={}", log.len());
        println!("best_iteration={}", best.iteration);
        println!("best_score={}", best.score);
        for (h, v) in space.iter().zip(&best.point) {
            println!("best_{}={v}", h.name);
        }
    }
    Ok(())
}

/// Threshold predictions keyed by (cell, year, month).
struct PredictionTable {
    thresholds: Vec<f64>,
    rows: Vec<((usize, i32, u32), Vec<f64>)>,
}

fn read_predictions(path: &Path) -> Result<PredictionTable, CliError> {
    require_file(path, "predictions file")?;
    let mut rdr = csv::Reader::from_path(path).map_err(Error::from)?;
    let headers = rdr.headers().map_err(Error::from)?.clone();
    if headers.len() < 3 || &headers[0] != "cell" || &headers[1] != "year" || &headers[2] != "month" {
        return Err(CliError::Data("predictions must start with cell,year,month".into()));
    }
    let thresholds = headers
        .iter()
        .skip(3)
        .map(|h| {
            h.strip_prefix("p_le_")
                .and_then(|t| t.parse::<f64>().ok())
                .filter(|t| threshold_column(*t) == h)
                .ok_or_else(|| CliError::Data(format!("column '{h}' is not a threshold probability")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(Error::from)?;
        let line = i as u64 + 2;
        let bad = |m: &str| CliError::Core(Error::MalformedRow { line, message: m.to_string() });
        let key = (
            rec[0].parse().map_err(|_| bad("bad cell"))?,
            rec[1].parse().map_err(|_| bad("bad year"))?,
            rec[2].parse().map_err(|_| bad("bad month"))?,
        );
        let p = rec.iter().skip(3).map(|v| v.parse::<f64>().map_err(|_| bad("bad probability"))).collect::<Result<_, _>>()?;
        rows.push((key, p));
    }
    Ok(PredictionTable { thresholds, rows })
}

fn score(a: &ScoreArgs, cfg: &RunConfig) -> CmdResult {
    let ds = load_data(a.data.as_deref(), cfg)?;
    let response: Response = a.response.into();
    let table = read_predictions(&a.predictions)?;
    let cfg_spec = cfg.score.for_response(response);
    let spec = if a.config.is_some() {
        if cfg_spec.thresholds != table.thresholds {
            return Err(CliError::Config("config thresholds do not match the prediction columns".into()));
        }
        cfg_spec.clone()
    } else {
        ThresholdScoreSpec::uniform(table.thresholds.clone())?
    };
    let index: HashMap<(usize, i32, u32), usize> =
        ds.rows().iter().enumerate().map(|(i, r)| ((r.cell, r.year, r.month), i)).collect();
    let mut probs = Vec::new();
    let mut ys = Vec::new();
    for (key, p) in table.rows {
        let i = *index
            .get(&key)
            .ok_or_else(|| CliError::Data(format!("prediction for unknown entry {key:?}")))?;
        if let Some(y) = ds.rows()[i].response(response) {
            probs.push(p);
            ys.push(y);
        }
    }
    let s = threshold_score(&probs, &ys, &spec)?;
    println!("score={s}");
    println!("n={}", ys.len());
    Ok(())
}

fn parse_transform(s: &str) -> Result<PdpTransform, CliError> {
    match s {
        "raw" => Ok(PdpTransform::Raw),
        "mean" => Ok(PdpTransform::Mean),
        _ => s
            .strip_prefix("prob:")
            .and_then(|c| c.parse().ok())
            .map(PdpTransform::Probability)
            .ok_or_else(|| CliError::Config(format!("unknown transform '{s}' (raw, mean, prob:<class>)"))),
    }
}

fn load_single_model(path: &Path) -> Result<BoostedModel, CliError> {
    require_file(path, "model file")?;
    let doc = std::fs::read_to_string(path).map_err(Error::from)?;
    if is_manifest(&doc) {
        return Err(CliError::Config("this command needs a single model document, not a mixture manifest".into()));
    }
    Ok(BoostedModel::load(&doc)?)
}

fn pdp(a: &PdpArgs, cfg: &RunConfig, seed: u64) -> CmdResult {
    let model = load_single_model(&a.model)?;
    let transform = parse_transform(&a.transform)?;
    if a.grid_size == 0 {
        return Err(CliError::Config("grid size must be positive".into()));
    }
    let ds = load_data(a.data.as_deref(), cfg)?;
    let data = cfg.features.apply(&ds)?;
    let xs = data.matrix_for(&model.feature_names)?;
    let s = a
        .features
        .iter()
        .map(|f| {
            model
                .feature_names
                .iter()
                .position(|n| n == f)
                .ok_or_else(|| CliError::Config(format!("model has no feature '{f}'")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let axes: Vec<Vec<f64>> = s
        .iter()
        .map(|&j| {
            let (lo, hi) = xs
                .column(j)
                .filter(|v| !v.is_nan())
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            if !lo.is_finite() {
                return Err(CliError::Data(format!("feature '{}' has no observed values", model.feature_names[j])));
            }
            if a.grid_size == 1 || lo == hi {
                return Ok(vec![lo]);
            }
            let n = a.grid_size - 1;
            Ok((0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect())
        })
        .collect::<Result<_, _>>()?;
    let mut grid: Vec<Vec<f64>> = vec![vec![]];
    for axis in &axes {
        grid = grid.iter().flat_map(|g| axis.iter().map(move |&v| [g.as_slice(), &[v]].concat())).collect();
    }
    let r = partial_dependence(&model, &xs, &s, &grid, a.n_sub, transform, seed)?;
    let mut w = create(&a.out)?;
    r.write_csv(&mut w)?;
    w.flush().map_err(Error::from)?;
    println!("points={}", grid.len());
    Ok(())
}

fn importance_cmd(a: &ImportanceArgs) -> CmdResult {
    let model = load_single_model(&a.model)?;
    let metric: ImportanceMetric = a.metric.parse()?;
    let imp = importance(&model, metric)?;
    for (f, v) in &imp {
        println!("{f}={v}");
    }
    if let Some(out) = &a.out {
        let mut w = create(out)?;
        write_importance_csv(&imp, &mut w)?;
        w.flush().map_err(Error::from)?;
    }
    Ok(())
}
