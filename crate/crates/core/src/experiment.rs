//! Synthetic label-shift benchmark: data splits, model fitting, adaptation and
//! evaluation, the λ sweep and the head-expertise matrix.
//!
//! Every random stream is derived from a run seed with [`derive_seed`]; the
//! `seed` fields inside the nested training and adaptation configs are
//! overwritten per run.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{generate, Dataset, GeneratorSpec};
use crate::error::{Error, Result};
use crate::metrics::{self, score_rows, MetricsReport, MetricsRow};
use crate::model::{Architecture, EpochSummary, HeadLayout, MultiHeadModel, TrainConfig};
use crate::ordinal::{dominating_distribution, DominatingSpec, LabelDistribution};
use crate::rng::derive_seed;
use crate::tta::{adapt, aggregate, AdaptConfig, AdaptReport, AggregationWeights};

/// Environment variable capping the worker threads of the λ sweep.
pub const THREADS_ENV: &str = "TTADC_THREADS";

/// Class-conditional geometry of the benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSpec {
    pub classes: usize,
    pub dim: usize,
    pub separation: f64,
    pub noise: f64,
    pub offset: f64,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        Self {
            classes: 5,
            dim: 8,
            separation: 1.0,
            noise: 1.25,
            offset: 2.0,
        }
    }
}

/// Label distribution of a test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shift {
    Explicit { probs: LabelDistribution },
    OneDominating { class: usize, lambda: f64 },
}

impl Shift {
    pub fn distribution(&self, classes: usize) -> Result<LabelDistribution> {
        match self {
            Shift::Explicit { probs } => {
                if probs.classes() != classes {
                    return Err(Error::invalid(format!(
                        "test distribution has {} classes, benchmark has {classes}",
                        probs.classes()
                    )));
                }
                Ok(probs.clone())
            }
            Shift::OneDominating { class, lambda } => Ok(dominating_distribution(
                &DominatingSpec::new(*class, *lambda, classes)?,
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestSetSpec {
    pub name: String,
    pub shift: Shift,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub benchmark: BenchmarkSpec,
    pub train_distribution: LabelDistribution,
    pub n_train: usize,
    pub n_eval: usize,
    pub n_test: usize,
    pub test_sets: Vec<TestSetSpec>,
    #[serde(default)]
    pub architecture: Architecture,
    /// `train.lambda` sets the heads of the single-run model.
    pub train: TrainConfig,
    pub adapt: AdaptConfig,
    pub lambda_grid: Vec<f64>,
    /// λ of the one-dominating pools used for head expertise.
    pub expertise_lambda: f64,
    pub seeds: Vec<u64>,
    /// Run seed of the single-run commands.
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let explicit = |probs: Vec<f64>| Shift::Explicit {
            probs: LabelDistribution::new(probs).expect("valid default distribution"),
        };
        let dominating = |class| Shift::OneDominating { class, lambda: 2.0 };
        Self {
            benchmark: BenchmarkSpec::default(),
            train_distribution: LabelDistribution::new(vec![0.40, 0.25, 0.15, 0.12, 0.08])
                .expect("valid default distribution"),
            n_train: 4000,
            n_eval: 2000,
            n_test: 2000,
            test_sets: vec![
                TestSetSpec {
                    name: "reverse".into(),
                    shift: explicit(vec![0.08, 0.12, 0.15, 0.25, 0.40]),
                },
                TestSetSpec {
                    name: "dom1".into(),
                    shift: dominating(1),
                },
                TestSetSpec {
                    name: "dom3".into(),
                    shift: dominating(3),
                },
                TestSetSpec {
                    name: "dom5".into(),
                    shift: dominating(5),
                },
            ],
            architecture: Architecture::default(),
            train: TrainConfig {
                epochs: 150,
                ..TrainConfig::default()
            },
            adapt: AdaptConfig::default(),
            lambda_grid: vec![1.0, 2.0, 4.0, 8.0],
            expertise_lambda: 2.0,
            seeds: vec![0, 1, 2, 3, 4],
            seed: 0,
            output_dir: PathBuf::from("out"),
        }
    }
}

/// Name of the in-distribution evaluation split.
pub const EVAL_SET: &str = "eval";

impl ExperimentConfig {
    /// Parses and validates; any failure is a config error.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let k = self.benchmark.classes;
        if self.train_distribution.classes() != k {
            return bad(format!(
                "train_distribution has {} classes, benchmark has {k}",
                self.train_distribution.classes()
            ));
        }
        if self.seeds.is_empty() {
            return bad("seeds must be nonempty".into());
        }
        if self.lambda_grid.is_empty() || self.lambda_grid.iter().any(|l| !(*l >= 1.0)) {
            return bad(format!("lambda_grid must be nonempty with every λ >= 1: {:?}", self.lambda_grid));
        }
        if !(self.expertise_lambda >= 1.0) {
            return bad(format!("expertise_lambda must be >= 1, got {}", self.expertise_lambda));
        }
        let mut names = BTreeSet::new();
        for t in &self.test_sets {
            let ok_name = !t.name.is_empty()
                && t.name != EVAL_SET
                && t.name != "train"
                && t.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
            if !ok_name || !names.insert(t.name.as_str()) {
                return bad(format!("test set name {:?} is empty, reserved, duplicated or not [A-Za-z0-9_-]", t.name));
            }
            t.shift.distribution(k).map_err(|e| Error::Config(format!("test set {}: {e}", t.name)))?;
        }
        let config_err = |e: Error| Error::Config(e.to_string());
        for (n, what) in [(self.n_train, "n_train"), (self.n_eval, "n_eval"), (self.n_test, "n_test")] {
            self.generator(&self.train_distribution, n, 0)
                .validate()
                .map_err(|e| Error::Config(format!("{what}: {e}")))?;
        }
        self.train.validate().map_err(config_err)?;
        self.adapt.validate().map_err(config_err)?;
        Ok(())
    }

    pub fn generator(&self, distribution: &LabelDistribution, n: usize, seed: u64) -> GeneratorSpec {
        GeneratorSpec {
            classes: self.benchmark.classes,
            dim: self.benchmark.dim,
            separation: self.benchmark.separation,
            noise: self.benchmark.noise,
            offset: self.benchmark.offset,
            distribution: distribution.clone(),
            n,
            seed,
        }
    }

    pub fn train_config(&self, run_seed: u64, lambda: f64) -> TrainConfig {
        TrainConfig {
            lambda,
            seed: derive_seed(run_seed, "train"),
            ..self.train.clone()
        }
    }

    /// Adaptation streams depend on the run seed and the test-set name.
    pub fn adapt_config(&self, run_seed: u64, set: &str) -> AdaptConfig {
        let mut cfg = self.adapt.clone();
        cfg.seed = derive_seed(run_seed, &format!("adapt/{set}"));
        cfg.augmentation.seed = derive_seed(run_seed, &format!("augment/{set}"));
        cfg
    }

    pub fn test_distribution(&self, name: &str) -> Result<LabelDistribution> {
        if name == EVAL_SET {
            return Ok(self.train_distribution.clone());
        }
        self.test_sets
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::invalid(format!("unknown test set {name:?}")))?
            .shift
            .distribution(self.benchmark.classes)
    }

    /// `eval` followed by the configured test sets.
    pub fn evaluation_sets(&self) -> Vec<String> {
        std::iter::once(EVAL_SET.to_string())
            .chain(self.test_sets.iter().map(|t| t.name.clone()))
            .collect()
    }
}

pub struct Splits {
    pub train: Dataset,
    /// `eval` first, then the test sets in config order.
    pub evaluation: Vec<(String, Dataset)>,
}

impl Splits {
    pub fn get(&self, name: &str) -> Option<&Dataset> {
        self.evaluation.iter().find(|(n, _)| n == name).map(|(_, d)| d)
    }
}

pub fn generate_train(cfg: &ExperimentConfig, run_seed: u64) -> Result<Dataset> {
    generate(&cfg.generator(&cfg.train_distribution, cfg.n_train, derive_seed(run_seed, "data/train")))
}

/// The named evaluation set (`eval` or a configured test set).
pub fn generate_evaluation_set(cfg: &ExperimentConfig, run_seed: u64, name: &str) -> Result<Dataset> {
    let (n, dist) = if name == EVAL_SET {
        (cfg.n_eval, cfg.train_distribution.clone())
    } else {
        (cfg.n_test, cfg.test_distribution(name)?)
    };
    generate(&cfg.generator(&dist, n, derive_seed(run_seed, &format!("data/{name}"))))
}

pub fn generate_splits(cfg: &ExperimentConfig, run_seed: u64) -> Result<Splits> {
    let evaluation = cfg
        .evaluation_sets()
        .into_iter()
        .map(|name| generate_evaluation_set(cfg, run_seed, &name).map(|d| (name, d)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Splits {
        train: generate_train(cfg, run_seed)?,
        evaluation,
    })
}

/// One pool per dominating class `j = 1..K`, each of size `n_test`.
pub fn dominating_pools(cfg: &ExperimentConfig, run_seed: u64, lambda: f64) -> Result<Vec<Dataset>> {
    (1..=cfg.benchmark.classes)
        .map(|j| {
            let dist = dominating_distribution(&DominatingSpec::new(j, lambda, cfg.benchmark.classes)?);
            generate(&cfg.generator(&dist, cfg.n_test, derive_seed(run_seed, &format!("data/pool{j}"))))
        })
        .collect()
}

/// A trained model with the configuration it was trained under.
pub struct Fitted {
    pub model: MultiHeadModel,
    pub config: TrainConfig,
    pub log: Vec<EpochSummary>,
}

/// Trains a fresh model; every layout shares the initial trunk of `run_seed`.
pub fn fit(cfg: &ExperimentConfig, train: &Dataset, layout: HeadLayout, run_seed: u64) -> Result<Fitted> {
    let dist = train.label_distribution()?;
    let mut model = MultiHeadModel::with_layout(
        train.dim(),
        cfg.architecture.clone(),
        layout,
        &dist,
        derive_seed(run_seed, "init"),
    )?;
    let lambda = match layout {
        HeadLayout::OneDominating { lambda } => lambda,
        _ => 1.0,
    };
    let config = cfg.train_config(run_seed, lambda);
    let log = model.train(train, &config)?;
    Ok(Fitted { model, config, log })
}

/// Metrics of the aggregated output on clean inputs.
pub fn evaluate(model: &MultiHeadModel, weights: &AggregationWeights, data: &Dataset) -> Result<MetricsReport> {
    let agg = aggregate(model, weights, data.features())?;
    if agg.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("aggregated probabilities".into()));
    }
    let preds = score_rows(agg.data(), data.labels(), model.classes() - 1);
    metrics::evaluate(&preds, model.classes())
}

/// Uniform-weight and adapted rows of a multi-head model on one set.
pub struct Evaluated {
    pub rows: Vec<MetricsRow>,
    pub report: AdaptReport,
}

/// Evaluates `model` under uniform weights, adapts the weights on the
/// unlabeled features of `data`, and evaluates again. Rows are named
/// `{label}_uniform` and `{label}_adapted`.
pub fn evaluate_adapted(
    cfg: &ExperimentConfig,
    model: &MultiHeadModel,
    label: &str,
    set: &str,
    data: &Dataset,
    run_seed: u64,
    lambda: Option<f64>,
) -> Result<Evaluated> {
    let uniform = AggregationWeights::uniform(model.head_count());
    let adapt_cfg = cfg.adapt_config(run_seed, set);
    let outcome = adapt(model, &uniform, data.features(), &adapt_cfg)?;
    let before = evaluate(model, &uniform, data)?;
    let after = evaluate(model, &outcome.weights, data)?;
    let rows = vec![
        MetricsRow::new(&format!("{label}_uniform"), set, run_seed, lambda, &before, &uniform.weights()),
        MetricsRow::new(&format!("{label}_adapted"), set, run_seed, lambda, &after, &outcome.weights.weights()),
    ];
    Ok(Evaluated {
        rows,
        report: AdaptReport::new(&uniform, &outcome, &adapt_cfg),
    })
}

pub fn baseline_row(model: &MultiHeadModel, set: &str, data: &Dataset, run_seed: u64) -> Result<MetricsRow> {
    let weights = AggregationWeights::uniform(model.head_count());
    let report = evaluate(model, &weights, data)?;
    Ok(MetricsRow::new("baseline", set, run_seed, None, &report, &[]))
}

/// One independent unit of the sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SweepCell {
    Baseline { seed: u64 },
    Balanced { seed: u64 },
    Ttadc { seed: u64, lambda: f64 },
}

impl SweepCell {
    pub fn seed(&self) -> u64 {
        match *self {
            SweepCell::Baseline { seed } | SweepCell::Balanced { seed } | SweepCell::Ttadc { seed, .. } => seed,
        }
    }
}

pub fn sweep_cells(cfg: &ExperimentConfig, seeds: &[u64]) -> Vec<SweepCell> {
    seeds
        .iter()
        .flat_map(|&seed| {
            [SweepCell::Baseline { seed }, SweepCell::Balanced { seed }]
                .into_iter()
                .chain(cfg.lambda_grid.iter().map(move |&lambda| SweepCell::Ttadc { seed, lambda }))
        })
        .collect()
}

/// Rows of one cell together with the model it trained.
pub struct CellOutcome {
    pub cell: SweepCell,
    pub rows: Vec<MetricsRow>,
    pub model: MultiHeadModel,
}

/// Trains and evaluates one cell on `eval` and every test set.
pub fn run_cell(cfg: &ExperimentConfig, cell: SweepCell) -> Result<CellOutcome> {
    let seed = cell.seed();
    let splits = generate_splits(cfg, seed)?;
    let (layout, label, lambda) = match cell {
        SweepCell::Baseline { .. } => (HeadLayout::Plain, "baseline", None),
        SweepCell::Balanced { .. } => (HeadLayout::Balanced, "balanced", None),
        SweepCell::Ttadc { lambda, .. } => (HeadLayout::OneDominating { lambda }, "ttadc", Some(lambda)),
    };
    let fitted = fit(cfg, &splits.train, layout, seed)?;
    let mut rows = Vec::new();
    for (set, data) in &splits.evaluation {
        if layout == HeadLayout::Plain {
            rows.push(baseline_row(&fitted.model, set, data, seed)?);
        } else {
            rows.extend(evaluate_adapted(cfg, &fitted.model, label, set, data, seed, lambda)?.rows);
        }
    }
    Ok(CellOutcome {
        cell,
        rows,
        model: fitted.model,
    })
}

/// Worker count from [`THREADS_ENV`], if set to a positive integer.
pub fn threads_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|n| *n > 0)
}

/// Runs every cell, in parallel when `threads` allows; outcomes come back in cell order.
pub fn sweep_outcomes(cfg: &ExperimentConfig, seeds: &[u64], threads: Option<usize>) -> Result<Vec<CellOutcome>> {
    let cells = sweep_cells(cfg, seeds);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    pool.install(|| cells.par_iter().map(|&c| run_cell(cfg, c)).collect())
}

/// Long-format rows of [`sweep_outcomes`].
pub fn sweep(cfg: &ExperimentConfig, seeds: &[u64], threads: Option<usize>) -> Result<Vec<MetricsRow>> {
    Ok(sweep_outcomes(cfg, seeds, threads)?
        .into_iter()
        .flat_map(|o| o.rows)
        .collect())
}

/// Mean over seeds of one (method, λ, test set) group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub lambda: Option<f64>,
    pub test_set: String,
    pub seeds: usize,
    pub accuracy: f64,
    pub mean_auc: f64,
    pub obuchowski: f64,
}

/// Name of the summary group averaging every shifted test set.
pub const ALL_SHIFTED: &str = "all_shifted";

/// Groups in first-appearance order, plus one [`ALL_SHIFTED`] group per
/// (method, λ) averaging every set except `eval`.
pub fn summarize(rows: &[MetricsRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(String, Option<f64>, String)> = Vec::new();
    let key_of = |r: &MetricsRow, set: &str| (r.method.clone(), r.lambda, set.to_string());
    for r in rows {
        for set in [r.test_set.as_str(), ALL_SHIFTED] {
            if set == ALL_SHIFTED && r.test_set == EVAL_SET {
                continue;
            }
            let k = key_of(r, set);
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
    }
    keys.into_iter()
        .map(|(method, lambda, test_set)| {
            let group: Vec<&MetricsRow> = rows
                .iter()
                .filter(|r| {
                    r.method == method
                        && r.lambda == lambda
                        && (r.test_set == test_set || (test_set == ALL_SHIFTED && r.test_set != EVAL_SET))
                })
                .collect();
            let mean = |f: fn(&MetricsRow) -> f64| group.iter().map(|r| f(r)).sum::<f64>() / group.len() as f64;
            let seeds: BTreeSet<u64> = group.iter().map(|r| r.seed).collect();
            SummaryRow {
                seeds: seeds.len(),
                accuracy: mean(|r| r.accuracy),
                mean_auc: mean(|r| r.mean_auc),
                obuchowski: mean(|r| r.obuchowski),
                method,
                lambda,
                test_set,
            }
        })
        .collect()
}

/// Accuracy of every head on every one-dominating pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertiseMatrix {
    pub lambda: f64,
    /// `accuracy[head][pool]`, both 0-based.
    pub accuracy: Vec<Vec<f64>>,
    /// Best head (1-based) per pool; the lowest index wins ties.
    pub column_argmax: Vec<usize>,
    /// Pools whose best head is the one calibrated towards their dominating class.
    pub diagonal_hits: usize,
}

pub fn head_expertise(model: &MultiHeadModel, pools: &[Dataset], lambda: f64) -> Result<ExpertiseMatrix> {
    let heads = model.head_count();
    let mut accuracy = vec![vec![0.0; pools.len()]; heads];
    for (j, pool) in pools.iter().enumerate() {
        for (k, row) in accuracy.iter_mut().enumerate() {
            let report = evaluate(model, &AggregationWeights::one_hot(heads, k), pool)?;
            row[j] = report.accuracy;
        }
    }
    let column_argmax: Vec<usize> = (0..pools.len())
        .map(|j| {
            (0..heads).fold(0, |best, k| if accuracy[k][j] > accuracy[best][j] { k } else { best }) + 1
        })
        .collect();
    let diagonal_hits = column_argmax.iter().enumerate().filter(|(j, &a)| a == j + 1).count();
    Ok(ExpertiseMatrix {
        lambda,
        accuracy,
        column_argmax,
        diagonal_hits,
    })
}
