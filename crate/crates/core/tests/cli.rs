use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;
use ttadc::data::{sidecar_path, Dataset};
use ttadc::experiment::{ExperimentConfig, ALL_SHIFTED};
use ttadc::metrics::MetricsRow;
use ttadc::model::{HeadLayout, MultiHeadModel};
use ttadc::rng::derive_seed;

struct Workspace {
    dir: TempDir,
    config: PathBuf,
}

impl Workspace {
    fn new(edit: impl FnOnce(&mut ExperimentConfig)) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::default();
        cfg.n_train = 200;
        cfg.n_eval = 60;
        cfg.n_test = 60;
        cfg.train.epochs = 2;
        cfg.adapt.steps = 5;
        cfg.seeds = vec![0];
        cfg.lambda_grid = vec![1.0, 2.0];
        cfg.output_dir = dir.path().join("out");
        edit(&mut cfg);
        let config = dir.path().join("config.json");
        std::fs::write(&config, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
        Self { dir, config }
    }

    fn out(&self) -> PathBuf {
        self.dir.path().join("out")
    }

    fn run(&self, command: &str, extra: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_ttadc"))
            .arg(command)
            .arg("--config")
            .arg(&self.config)
            .args(extra)
            .env("TTADC_THREADS", "1")
            .output()
            .unwrap()
    }

    fn ok(&self, command: &str, extra: &[&str]) {
        let out = self.run(command, extra);
        assert!(out.status.success(), "{command} failed: {}", String::from_utf8_lossy(&out.stderr));
    }
}

fn rows(path: &Path) -> Vec<MetricsRow> {
    csv::Reader::from_path(path).unwrap().deserialize().map(|r| r.unwrap()).collect()
}

fn csv_records(path: &Path) -> Vec<csv::StringRecord> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .unwrap()
        .records()
        .map(|r| r.unwrap())
        .collect()
}

#[test]
fn generate_writes_every_set_with_the_configured_sizes() {
    let ws = Workspace::new(|_| {});
    ws.ok("generate", &[]);
    let data = ws.out().join("data");
    assert_eq!(Dataset::load(&data.join("train.csv")).unwrap().len(), 200);
    assert_eq!(Dataset::load(&data.join("eval.csv")).unwrap().len(), 60);
    for set in ["reverse", "dom1", "dom3", "dom5"] {
        let d = Dataset::load(&data.join(format!("{set}.csv"))).unwrap();
        assert_eq!(d.len(), 60);
        assert!(sidecar_path(&data.join(format!("{set}.csv"))).exists());
    }
    let before = std::fs::read(data.join("dom3.csv")).unwrap();
    ws.ok("generate", &[]);
    assert_eq!(std::fs::read(data.join("dom3.csv")).unwrap(), before);
}

#[test]
fn seed_flag_changes_the_data() {
    let ws = Workspace::new(|_| {});
    ws.ok("generate", &[]);
    let a = std::fs::read(ws.out().join("data/train.csv")).unwrap();
    ws.ok("generate", &["--seed", "99"]);
    assert_ne!(std::fs::read(ws.out().join("data/train.csv")).unwrap(), a);
}

#[test]
fn invalid_config_exits_with_code_two_and_a_location() {
    let ws = Workspace::new(|_| {});
    let text = std::fs::read_to_string(&ws.config).unwrap().replace("\"n_train\": 200", "\"n_train\": -5");
    std::fs::write(&ws.config, text).unwrap();
    let out = ws.run("generate", &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line"));
}

#[test]
fn unknown_test_set_name_is_a_config_error() {
    let ws = Workspace::new(|_| {});
    ws.ok("generate", &[]);
    ws.ok("train", &[]);
    assert_eq!(ws.run("adapt-eval", &["--test", "nowhere"]).status.code(), Some(2));
}

#[test]
fn missing_inputs_exit_with_code_three() {
    let ws = Workspace::new(|_| {});
    assert_eq!(ws.run("train", &[]).status.code(), Some(3));
    assert_eq!(ws.run("adapt-eval", &[]).status.code(), Some(3));
    assert_eq!(ws.run("head-expertise", &[]).status.code(), Some(3));
    let missing = ws.dir.path().join("absent.json");
    let out = Command::new(env!("CARGO_BIN_EXE_ttadc"))
        .args(["generate", "--config"])
        .arg(&missing)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn bad_arguments_exit_with_code_two() {
    let out = Command::new(env!("CARGO_BIN_EXE_ttadc")).arg("no-such-command").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let help = Command::new(env!("CARGO_BIN_EXE_ttadc")).arg("--help").output().unwrap();
    assert_eq!(help.status.code(), Some(0));
}

#[test]
fn zero_epochs_checkpoint_is_the_initialisation() {
    let ws = Workspace::new(|c| {
        c.train.epochs = 0;
        c.seed = 5;
    });
    ws.ok("generate", &[]);
    ws.ok("train", &[]);
    let train = Dataset::load(&ws.out().join("data/train.csv")).unwrap();
    let saved = MultiHeadModel::load(&ws.out().join("models/ttadc.json")).unwrap();
    let fresh = MultiHeadModel::with_layout(
        train.dim(),
        Default::default(),
        HeadLayout::OneDominating { lambda: 2.0 },
        &train.label_distribution().unwrap(),
        derive_seed(5, "init"),
    )
    .unwrap();
    assert_eq!(saved, fresh);
}

#[test]
fn training_logs_one_row_per_epoch_and_head() {
    let ws = Workspace::new(|c| c.train.epochs = 3);
    ws.ok("generate", &[]);
    ws.ok("train", &[]);
    let log = csv_records(&ws.out().join("models/ttadc_log.csv"));
    assert_eq!(&log[0], &csv::StringRecord::from(vec!["epoch", "head", "loss"]));
    assert_eq!(log.len() - 1, 3 * 5);
    assert_eq!(csv_records(&ws.out().join("models/baseline_log.csv")).len() - 1, 3);
}

#[test]
fn adapt_eval_reports_three_rows_per_set() {
    let ws = Workspace::new(|_| {});
    ws.ok("generate", &[]);
    ws.ok("train", &[]);
    ws.ok("adapt-eval", &[]);
    let reports = ws.out().join("reports");
    let all = rows(&reports.join("adapt_eval.csv"));
    assert_eq!(all.len(), 3 * 5);
    for set in ["eval", "reverse", "dom1", "dom3", "dom5"] {
        let methods: Vec<&str> = all.iter().filter(|r| r.test_set == set).map(|r| r.method.as_str()).collect();
        assert_eq!(methods, ["baseline", "ttadc_uniform", "ttadc_adapted"]);
        let report: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(reports.join(format!("adapt_{set}.json"))).unwrap()).unwrap();
        let w = report["final_weights"].as_array().unwrap();
        let sum: f64 = w.iter().map(|v| v.as_f64().unwrap()).sum();
        assert!((sum - 1.0).abs() <= 1e-12);
    }
    ws.ok("adapt-eval", &["--test", "dom3"]);
    assert_eq!(rows(&reports.join("adapt_eval.csv")).len(), 3);
}

#[test]
fn zero_adaptation_steps_leave_the_uniform_result() {
    let ws = Workspace::new(|c| c.adapt.steps = 0);
    ws.ok("generate", &[]);
    ws.ok("train", &[]);
    ws.ok("adapt-eval", &["--test", "reverse"]);
    let all = rows(&ws.out().join("reports/adapt_eval.csv"));
    let (uniform, adapted) = (&all[1], &all[2]);
    assert_eq!(uniform.accuracy, adapted.accuracy);
    assert_eq!(uniform.obuchowski, adapted.obuchowski);
    assert_eq!(uniform.weights, adapted.weights);
}

#[test]
fn sweep_covers_the_grid_and_lambda_one_matches_balanced() {
    let ws = Workspace::new(|c| {
        c.seeds = vec![0, 1, 2];
        c.lambda_grid = vec![1.0, 2.0, 4.0];
    });
    ws.ok("sweep-lambda", &[]);
    let reports = ws.out().join("reports");
    let all = rows(&reports.join("sweep_lambda.csv"));
    let mut runs: Vec<(u64, u64)> = all
        .iter()
        .filter(|r| r.method == "ttadc_adapted" && r.test_set == "eval")
        .map(|r| (r.seed, r.lambda.unwrap().to_bits()))
        .collect();
    runs.dedup();
    assert_eq!(runs.len(), 9);
    for r in all.iter().filter(|r| r.method.starts_with("ttadc") && r.lambda == Some(1.0)) {
        let twin = all
            .iter()
            .find(|b| b.method == r.method.replace("ttadc", "balanced") && b.seed == r.seed && b.test_set == r.test_set)
            .unwrap();
        assert_eq!((r.accuracy, r.mean_auc, r.obuchowski), (twin.accuracy, twin.mean_auc, twin.obuchowski));
    }
    let summary = csv_records(&reports.join("sweep_lambda_summary.csv"));
    let shifted = summary.iter().filter(|r| &r[2] == ALL_SHIFTED && &r[0] == "ttadc_adapted").count();
    assert_eq!(shifted, 3);
}

#[test]
fn head_expertise_is_a_square_matrix() {
    let ws = Workspace::new(|_| {});
    ws.ok("generate", &[]);
    ws.ok("train", &[]);
    ws.ok("head-expertise", &[]);
    let records = csv_records(&ws.out().join("reports/head_expertise.csv"));
    assert_eq!(&records[0], &csv::StringRecord::from(vec!["head", "dom1", "dom2", "dom3", "dom4", "dom5"]));
    assert_eq!(records.len(), 1 + 5 + 1);
    for (k, r) in records[1..6].iter().enumerate() {
        assert_eq!(r[0].parse::<usize>().unwrap(), k + 1);
        for cell in r.iter().skip(1) {
            assert!((0.0..=1.0).contains(&cell.parse::<f64>().unwrap()));
        }
    }
    assert_eq!(&records[6][0], "argmax");
}

#[test]
fn diverging_training_exits_with_code_four() {
    let ws = Workspace::new(|c| c.train.learning_rate = 1e300);
    ws.ok("generate", &[]);
    let out = ws.run("train", &[]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}
