use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use evtboost::booster::{fit, BoostedModel, Targets, TrainParams, MODEL_FORMAT_VERSION};
use evtboost::dataset::{CsvSchema, GridDataset, Response};
use evtboost::evaluate::{count_threshold_probs, model_features, observed_rows, threshold_score, ThresholdScoreSpec};
use evtboost::losses::LossSpec;
use evtboost::mixture::write_threshold_csv;
use evtboost::tree::Tree;

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let ws = Self { dir: tempfile::tempdir().unwrap() };
        ws.run(&["synth", "--out", "data.csv", "--seed", "5", "--nx", "8", "--ny", "6", "--years", "2001"]);
        ws
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn write(&self, name: &str, text: &str) {
        std::fs::write(self.path(name), text).unwrap();
    }

    fn read(&self, name: &str) -> String {
        std::fs::read_to_string(self.path(name)).unwrap()
    }

    fn exec(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_evtboost"))
            .current_dir(self.dir.path())
            .args(args)
            .output()
            .unwrap()
    }

    /// Run and require success; returns stdout.
    fn run(&self, args: &[&str]) -> String {
        let out = self.exec(args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    }
}

fn value<'a>(stdout: &'a str, key: &str) -> &'a str {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .unwrap_or_else(|| panic!("no {key}= in {stdout}"))
}

const CONFIG: &str = r#"
data = "data.csv"
[count]
alpha = 5.0
[count.params]
n_trees = 12
[size.classifier]
n_trees = 8
[size.bulk]
n_trees = 8
[size.tail]
n_trees = 8
"#;

#[test]
fn train_reports_rounds_and_is_repeatable() {
    let ws = Workspace::new();
    ws.write("c.toml", CONFIG);
    let out = ws.run(&["train", "--config", "c.toml", "--loss", "dgpd", "--out", "a.json"]);
    assert_eq!(value(&out, "rounds"), "12");
    assert_eq!(value(&out, "loss"), "dgpd");
    assert!(value(&out, "train_loss").parse::<f64>().unwrap().is_finite());
    ws.run(&["train", "--config", "c.toml", "--loss", "dgpd", "--out", "b.json"]);
    assert_eq!(ws.read("a.json"), ws.read("b.json"));
    let other = ws.run(&["train", "--config", "c.toml", "--loss", "dgpd", "--out", "c.json", "--n-trees", "3"]);
    assert_eq!(value(&other, "rounds"), "3");
}

#[test]
fn gpd_on_all_rows_is_a_data_error_with_row_index() {
    let ws = Workspace::new();
    ws.write("c.toml", CONFIG);
    let out = ws.exec(&["train", "--config", "c.toml", "--loss", "gpd", "--rows", "all", "--out", "g.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("row"));
    ws.run(&["train", "--config", "c.toml", "--loss", "gpd", "--out", "g.json"]);
}

#[test]
fn exit_codes_follow_the_contract() {
    let ws = Workspace::new();
    ws.write("bad_key.toml", "data = \"data.csv\"\nsurprise = 1\n");
    ws.write("no_data.toml", "data = \"missing.csv\"\n");
    ws.write("c.toml", CONFIG);
    let code = |args: &[&str]| ws.exec(args).status.code();
    assert_eq!(code(&["train", "--config", "bad_key.toml", "--loss", "dgpd", "--out", "m.json"]), Some(1));
    assert_eq!(code(&["train", "--config", "no_data.toml", "--loss", "dgpd", "--out", "m.json"]), Some(1));
    assert_eq!(code(&["train", "--config", "absent.toml", "--loss", "dgpd", "--out", "m.json"]), Some(1));
    assert_eq!(code(&["no-such-command"]), Some(1));
    assert_eq!(code(&["--help"]), Some(0));

    let mut text = ws.read("data.csv");
    text.push_str("-110.25,35.25,2001,13,1,2,0.1,0.2,0.3\n");
    ws.write("broken.csv", &text);
    assert_eq!(
        code(&["train", "--config", "c.toml", "--data", "broken.csv", "--loss", "dgpd", "--out", "m.json"]),
        Some(2)
    );

    // the count imputer needs a finite dGPD mean
    ws.write("heavy.toml", &format!("{CONFIG}\n[features.impute_cnt]\nalpha = 0.8\n[features.impute_cnt.params]\nn_trees = 3\n"));
    assert_eq!(code(&["train", "--config", "heavy.toml", "--loss", "cross_entropy", "--out", "m.json"]), Some(3));
}

#[test]
fn predict_shapes_and_empty_input() {
    let ws = Workspace::new();
    ws.write("c.toml", CONFIG);
    ws.run(&["train", "--config", "c.toml", "--loss", "mixture", "--out", "mix.json"]);
    ws.write("two.txt", "10\n200\n");
    ws.run(&["predict", "--config", "c.toml", "--model", "mix.json", "--thresholds", "two.txt", "--out", "p.csv"]);
    let p = ws.read("p.csv");
    let n_rows = ws.read("data.csv").lines().count() - 1;
    assert_eq!(p.lines().next().unwrap(), "cell,year,month,p_le_10,p_le_200");
    assert_eq!(p.lines().count() - 1, n_rows);

    ws.run(&["predict", "--config", "c.toml", "--model", "mix.json", "--out", "p28.csv"]);
    assert_eq!(ws.read("p28.csv").lines().next().unwrap().split(',').count(), 3 + 28);

    let header = ws.read("data.csv").lines().next().unwrap().to_string();
    ws.write("empty.csv", &format!("{header}\n"));
    ws.run(&["predict", "--config", "c.toml", "--model", "mix.json", "--data", "empty.csv", "--out", "e.csv"]);
    assert_eq!(ws.read("e.csv").lines().count(), 1);

    // a model trained on other features is rejected
    ws.write("x.csv", &ws.read("data.csv").replace("noise", "other"));
    let out = ws.exec(&["predict", "--config", "c.toml", "--model", "mix.json", "--data", "x.csv", "--out", "x_p.csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn perfect_predictions_score_zero() {
    let ws = Workspace::new();
    let ds = GridDataset::load_csv(&ws.path("data.csv"), &CsvSchema::default()).unwrap();
    let thresholds = [0.0, 1.0, 3.0];
    let probs: Vec<Vec<f64>> = ds
        .rows()
        .iter()
        .map(|o| thresholds.iter().map(|t| o.cnt.map_or(0.5, |c| ((c as f64) <= *t) as u8 as f64)).collect())
        .collect();
    let mut buf = Vec::new();
    write_threshold_csv(&ds, &thresholds, &probs, &mut buf).unwrap();
    std::fs::write(ws.path("perfect.csv"), buf).unwrap();
    let out = ws.run(&["score", "--data", "data.csv", "--predictions", "perfect.csv", "--response", "cnt"]);
    assert_eq!(value(&out, "score"), "0");
    assert_eq!(value(&out, "n").parse::<usize>().unwrap(), observed_rows(&ds, Response::Cnt).len());
}

#[test]
fn single_split_importance() {
    let ws = Workspace::new();
    let model = BoostedModel {
        format_version: MODEL_FORMAT_VERSION,
        loss: LossSpec::squared_log(),
        base_score: vec![0.0],
        feature_names: vec!["a".into(), "b".into()],
        trees: vec![Tree::from_nodes(vec![
            evtboost::tree::TreeNode::Branch {
                feature: 1,
                threshold: 0.0,
                default_left: true,
                left: 1,
                right: 2,
                gain: 2.5,
                cover: 10.0,
            },
            evtboost::tree::TreeNode::Leaf { weight: -1.0, cover: 5.0 },
            evtboost::tree::TreeNode::Leaf { weight: 1.0, cover: 5.0 },
        ])
        .unwrap()],
        params: TrainParams::default(),
    };
    model.save_file(&ws.path("stump.json")).unwrap();
    for metric in ["gain", "coverage"] {
        let out = ws.run(&["importance", "--model", "stump.json", "--metric", metric]);
        assert_eq!(out, "b=1\n");
    }
}

#[test]
fn tune_honors_max_iters() {
    let ws = Workspace::new();
    ws.write(
        "c.toml",
        &format!(
            "{CONFIG}\n[cv]\nn_folds = 2\ncheckpoints = [4, 8]\n[[tune.space]]\nname = \"max_leaves\"\nlo = 2\nhi = 8\ninteger = true\n"
        ),
    );
    ws.run(&["cvfolds", "--config", "c.toml", "--out", "folds.csv"]);
    let out = ws.run(&[
        "tune", "--config", "c.toml", "--folds", "folds.csv", "--response", "cnt", "--max-iters", "3", "--out", "log.csv",
    ]);
    assert_eq!(value(&out, "iterations"), "3");
    let log = ws.read("log.csv");
    assert_eq!(log.lines().next().unwrap(), "iteration,max_leaves,score");
    assert_eq!(log.lines().count(), 4);
    for line in log.lines().skip(1) {
        let leaves: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(leaves.fract(), 0.0);
    }
}

#[test]
fn runs_are_logged_with_config_hash() {
    let ws = Workspace::new();
    ws.write("c.toml", CONFIG);
    ws.run(&["train", "--config", "c.toml", "--loss", "poisson", "--out", "m.json", "--run-log", "runs.log"]);
    ws.exec(&["train", "--config", "absent.toml", "--loss", "poisson", "--out", "m.json", "--run-log", "runs.log"]);
    let log = ws.read("runs.log");
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].contains("cmd=train") && lines[0].contains("seed=0") && lines[0].ends_with("exit=0"));
    let hash = lines[0].split("config_sha256=").nth(1).unwrap().split(' ').next().unwrap();
    assert_eq!(hash.len(), 64);
    assert!(lines[0].contains("wall_ms="));
    assert!(lines[1].ends_with("exit=1"));
}

/// The same pipeline done in-process.
fn in_process(data: &Path, thresholds: &[f64]) -> (Vec<u8>, f64) {
    let ds = GridDataset::load_csv(data, &CsvSchema::default()).unwrap();
    let names = model_features(&ds, Response::Cnt);
    let rows = observed_rows(&ds, Response::Cnt);
    let y = rows.iter().map(|&i| ds.rows()[i].cnt.unwrap() as f64).collect();
    let params = TrainParams { n_trees: 12, ..Default::default() };
    let x = ds.matrix_for(&names).unwrap();
    let model = fit(&x.select_rows(&rows), &names, &Targets::Scalar(y), &LossSpec::dgpd(5.0), &params).unwrap();
    let probs = count_threshold_probs(&model, &x, thresholds).unwrap();
    let mut buf = Vec::new();
    write_threshold_csv(&ds, thresholds, &probs, &mut buf).unwrap();
    let truth: Vec<f64> = rows.iter().map(|&i| ds.rows()[i].cnt.unwrap() as f64).collect();
    let kept: Vec<Vec<f64>> = rows.iter().map(|&i| probs[i].clone()).collect();
    let score = threshold_score(&kept, &truth, &ThresholdScoreSpec::uniform(thresholds.to_vec()).unwrap()).unwrap();
    (buf, score)
}

#[test]
fn cli_pipeline_matches_in_process_pipeline() {
    let ws = Workspace::new();
    ws.write("c.toml", CONFIG);
    ws.write("t.txt", "# count thresholds\n0, 1, 2, 5\n10\n");
    ws.run(&["train", "--config", "c.toml", "--loss", "dgpd", "--out", "m.json"]);
    ws.run(&["predict", "--config", "c.toml", "--model", "m.json", "--thresholds", "t.txt", "--out", "p.csv"]);
    let out = ws.run(&["score", "--data", "data.csv", "--predictions", "p.csv", "--response", "cnt"]);
    let (csv, score) = in_process(&ws.path("data.csv"), &[0.0, 1.0, 2.0, 5.0, 10.0]);
    assert_eq!(std::fs::read(ws.path("p.csv")).unwrap(), csv);
    assert_eq!(value(&out, "score"), score.to_string());
}
