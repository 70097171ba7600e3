//! `ttadc` command-line driver.
//!
//! Output layout under the output directory:
//!
//! ```text
//! data/{train,eval,<test>}.csv (+ .json sidecars)
//! models/{baseline,ttadc}.json, models/{baseline,ttadc}_log.csv
//! reports/adapt_eval.csv, reports/adapt_<set>.json
//! reports/sweep_lambda.csv, reports/sweep_lambda_summary.csv
//! reports/head_expertise.csv, reports/head_expertise.json
//! ```

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::data::{write_json, Dataset};
use crate::error::{Error, Result};
use crate::experiment::{
    baseline_row, dominating_pools, evaluate_adapted, fit, generate_splits, head_expertise, summarize,
    sweep, threads_from_env, ExperimentConfig,
};
use crate::metrics::write_rows;
use crate::model::{EpochSummary, HeadLayout, MultiHeadModel};

#[derive(Debug, Parser)]
#[command(name = "ttadc", version, about = "Label-shift adaptation for ordinal classifiers on a synthetic benchmark")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write train, eval and test CSVs with provenance sidecars.
    Generate(CommonArgs),
    /// Train the uncalibrated baseline and the multi-head model.
    Train(CommonArgs),
    /// Evaluate baseline, uniform aggregation and adapted aggregation.
    AdaptEval(AdaptEvalArgs),
    /// Train and evaluate every (λ, seed) cell.
    SweepLambda(CommonArgs),
    /// Accuracy of every head on every one-dominating pool.
    HeadExpertise(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the run seed (and, for the sweep, the seed list).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AdaptEvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Restrict to one evaluation set.
    #[arg(long)]
    pub test: Option<String>,
}

struct Run {
    cfg: ExperimentConfig,
    seed: u64,
    out: PathBuf,
}

impl Run {
    fn new(args: &CommonArgs) -> Result<Self> {
        let cfg = ExperimentConfig::load(&args.config)?;
        Ok(Self {
            seed: args.seed.unwrap_or(cfg.seed),
            out: args.out.clone().unwrap_or_else(|| cfg.output_dir.clone()),
            cfg,
        })
    }

    fn dir(&self, sub: &str) -> Result<PathBuf> {
        let d = self.out.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        Ok(d)
    }

    fn data_path(&self, set: &str) -> PathBuf {
        self.out.join("data").join(format!("{set}.csv"))
    }

    fn model_path(&self, name: &str) -> PathBuf {
        self.out.join("models").join(format!("{name}.json"))
    }
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingInput(path.to_path_buf()))
    }
}

#[derive(Serialize)]
struct LogRow {
    epoch: usize,
    head: usize,
    loss: f64,
}

fn write_log(path: &Path, log: &[EpochSummary]) -> Result<()> {
    let rows: Vec<LogRow> = log
        .iter()
        .flat_map(|e| {
            e.head_losses.iter().enumerate().map(move |(k, &loss)| LogRow {
                epoch: e.epoch,
                head: k + 1,
                loss,
            })
        })
        .collect();
    write_rows(path, &rows)
}

pub fn cmd_generate(args: &CommonArgs) -> Result<()> {
    let run = Run::new(args)?;
    run.dir("data")?;
    let splits = generate_splits(&run.cfg, run.seed)?;
    splits.train.save(&run.data_path("train"))?;
    for (set, data) in &splits.evaluation {
        data.save(&run.data_path(set))?;
    }
    eprintln!("wrote {} data sets to {}", splits.evaluation.len() + 1, run.out.join("data").display());
    Ok(())
}

pub fn cmd_train(args: &CommonArgs) -> Result<()> {
    let run = Run::new(args)?;
    let train = Dataset::load(&run.data_path("train"))?;
    let dir = run.dir("models")?;
    let layouts = [
        ("baseline", HeadLayout::Plain),
        ("ttadc", HeadLayout::OneDominating { lambda: run.cfg.train.lambda }),
    ];
    for (name, layout) in layouts {
        let fitted = fit(&run.cfg, &train, layout, run.seed)?;
        fitted.model.save(&run.model_path(name), Some(fitted.config.clone()))?;
        write_log(&dir.join(format!("{name}_log.csv")), &fitted.log)?;
        if let Some(last) = fitted.log.last() {
            eprintln!("{name}: epoch {} mean loss {:.6}", last.epoch, last.total);
        }
    }
    Ok(())
}

pub fn cmd_adapt_eval(args: &AdaptEvalArgs) -> Result<()> {
    let run = Run::new(&args.common)?;
    let sets = match &args.test {
        Some(name) => {
            run.cfg.test_distribution(name).map_err(|e| Error::Config(e.to_string()))?;
            vec![name.clone()]
        }
        None => run.cfg.evaluation_sets(),
    };
    let ttadc_path = run.model_path("ttadc");
    require(&ttadc_path)?;
    for set in &sets {
        require(&run.data_path(set))?;
    }
    let ttadc = MultiHeadModel::load(&ttadc_path)?;
    let baseline_path = run.model_path("baseline");
    let baseline = if baseline_path.exists() {
        Some(MultiHeadModel::load(&baseline_path)?)
    } else {
        None
    };
    let lambda = ttadc.head_specs().first().and_then(|h| h.lambda);
    let reports = run.dir("reports")?;
    let mut rows = Vec::new();
    for set in &sets {
        let data = Dataset::load(&run.data_path(set))?;
        if let Some(b) = &baseline {
            rows.push(baseline_row(b, set, &data, run.seed)?);
        }
        let evaluated = evaluate_adapted(&run.cfg, &ttadc, "ttadc", set, &data, run.seed, lambda)?;
        write_json(&reports.join(format!("adapt_{set}.json")), &evaluated.report)?;
        rows.extend(evaluated.rows);
    }
    write_rows(&reports.join("adapt_eval.csv"), &rows)?;
    for r in &rows {
        eprintln!("{:<16} {:<10} acc {:.4} auc {:.4} oi {:.4}", r.method, r.test_set, r.accuracy, r.mean_auc, r.obuchowski);
    }
    Ok(())
}

pub fn cmd_sweep_lambda(args: &CommonArgs) -> Result<()> {
    let run = Run::new(args)?;
    let seeds = match args.seed {
        Some(s) => vec![s],
        None => run.cfg.seeds.clone(),
    };
    let rows = sweep(&run.cfg, &seeds, threads_from_env())?;
    let reports = run.dir("reports")?;
    write_rows(&reports.join("sweep_lambda.csv"), &rows)?;
    let summary = summarize(&rows);
    write_rows(&reports.join("sweep_lambda_summary.csv"), &summary)?;
    for s in summary.iter().filter(|s| s.test_set == crate::experiment::ALL_SHIFTED) {
        let lambda = s.lambda.map(|l| l.to_string()).unwrap_or_default();
        eprintln!("{:<16} λ={:<4} acc {:.4} auc {:.4} oi {:.4}", s.method, lambda, s.accuracy, s.mean_auc, s.obuchowski);
    }
    Ok(())
}

pub fn cmd_head_expertise(args: &CommonArgs) -> Result<()> {
    let run = Run::new(args)?;
    let path = run.model_path("ttadc");
    require(&path)?;
    let model = MultiHeadModel::load(&path)?;
    let pools = dominating_pools(&run.cfg, run.seed, run.cfg.expertise_lambda)?;
    let matrix = head_expertise(&model, &pools, run.cfg.expertise_lambda)?;
    let reports = run.dir("reports")?;
    let csv_path = reports.join("head_expertise.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    let mut header = vec!["head".to_string()];
    header.extend((1..=pools.len()).map(|j| format!("dom{j}")));
    w.write_record(&header)?;
    for (k, row) in matrix.accuracy.iter().enumerate() {
        let mut rec = vec![(k + 1).to_string()];
        rec.extend(row.iter().map(|a| a.to_string()));
        w.write_record(&rec)?;
    }
    let mut rec = vec!["argmax".to_string()];
    rec.extend(matrix.column_argmax.iter().map(|a| a.to_string()));
    w.write_record(&rec)?;
    w.flush().map_err(|e| Error::io(&csv_path, e))?;
    write_json(&reports.join("head_expertise.json"), &matrix)?;
    eprintln!(
        "column argmax {:?}; diagonal hits {}/{}",
        matrix.column_argmax,
        matrix.diagonal_hits,
        pools.len()
    );
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Train(a) => cmd_train(a),
        Command::AdaptEval(a) => cmd_adapt_eval(a),
        Command::SweepLambda(a) => cmd_sweep_lambda(a),
        Command::HeadExpertise(a) => cmd_head_expertise(a),
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
