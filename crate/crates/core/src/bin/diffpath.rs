//! Command-line front end for the detection pipeline.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use diffpath::config::PipelineConfig;
use diffpath::data::{generate_toy_dataset, Dataset, DatasetKind};
use diffpath::error::{Error, Result};
use diffpath::eval::{auroc, ScoredSets};
use diffpath::persist::{load_density, save_density, save_mlp};
use diffpath::pipeline::{
    extract_statistics, fit_density, histogram_csv, load_score, loss_curve_csv, push_trajectories, read_scores_csv,
    read_statistics_csv, report_csv, run_detection, score_statistics, scores_csv, statistics_csv, train_score_model,
    TaskResult,
};
use diffpath::schedule::TimestepGrid;
use diffpath::stats::StatisticKind;
use diffpath::tensor_file::TensorFile;
use diffpath::theory::verify_report;

#[derive(Parser)]
#[command(name = "diffpath", version, about = "Diffusion-path OOD detection")]
struct Cli {
    /// Pipeline config file (`dotted.key = value`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `grid.nfe`.
    #[arg(long, global = true)]
    nfe: Option<usize>,
    /// Write integrated trajectories to this tensor file.
    #[arg(long, global = true)]
    dump_trajectories: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a toy dataset (gaussian, gmm, ring, moons, negated(<kind>)).
    GenData {
        #[arg(long)]
        kind: String,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        /// Generator parameter `key=value`; repeatable.
        #[arg(long = "param", value_parser = parse_param)]
        params: Vec<(String, String)>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train an MLP ε-predictor by denoising score matching.
    TrainScore {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        loss_csv: Option<PathBuf>,
    },
    /// Integrate samples and write one statistics CSV.
    Extract {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to the first of `statistic.kinds`.
        #[arg(long)]
        statistic: Option<StatisticKind>,
    },
    /// Fit the configured density to a statistics CSV.
    FitDensity {
        #[arg(long)]
        stats: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Log-likelihood of each statistics row under a saved density.
    Score {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        stats: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// AUROC of inlier against outlier score files.
    Evaluate {
        #[arg(long)]
        inlier: PathBuf,
        #[arg(long)]
        outlier: PathBuf,
        #[arg(long, default_value = "task")]
        task: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        hist: Option<PathBuf>,
    },
    /// Full detection run driven by the config.
    Run,
    /// Closed-form checks on the Ornstein-Uhlenbeck example.
    Verify,
}

fn parse_param(s: &str) -> std::result::Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| format!("expected key=value, got '{s}'"))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::from_file(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(n) = cli.nfe {
        cfg.nfe = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::GenData { kind, n, params, out } => {
            let kind = DatasetKind::parse(kind, params)?;
            generate_toy_dataset(&kind, *n, cfg.seed)?.save(out)?;
        }
        Command::TrainScore { data, out, loss_csv } => {
            let data = Dataset::load(data)?;
            let outcome = train_score_model(&cfg, &data)?;
            save_mlp(&outcome.net, out)?;
            if let Some(p) = loss_csv {
                write(p, &loss_curve_csv(&outcome.loss_curve))?;
            }
            if let Some(l) = outcome.final_loss() {
                println!("final loss {l}");
            }
        }
        Command::Extract { input, out, statistic } => {
            let data = Dataset::load(input)?;
            let score = load_score(&cfg)?;
            let schedule = cfg.schedule.build()?;
            let grid = TimestepGrid::uniform(&schedule, cfg.nfe)?;
            let kind = statistic.unwrap_or(cfg.statistics[0]);
            let keep = cli.dump_trajectories.is_some();
            let ex = extract_statistics(&score, &schedule, &grid, &data.samples, &[kind], keep)?;
            write(out, &statistics_csv(&ex.rows[0]))?;
            if let (Some(path), Some(trajs)) = (&cli.dump_trajectories, &ex.trajectories) {
                let mut f = TensorFile::new();
                push_trajectories(&mut f, "data", trajs)?;
                f.write(path)?;
            }
        }
        Command::FitDensity { stats, out } => {
            let rows = read_statistics_csv(stats)?;
            save_density(&fit_density(&rows, &cfg.density, cfg.seed)?, out)?;
        }
        Command::Score { model, stats, out } => {
            let model = load_density(model)?;
            let rows = read_statistics_csv(stats)?;
            write(out, &scores_csv(&score_statistics(&model, &rows)?))?;
        }
        Command::Evaluate {
            inlier,
            outlier,
            task,
            out,
            hist,
        } => {
            let sets = ScoredSets::new(read_scores_csv(inlier)?, read_scores_csv(outlier)?)?;
            let report = report_csv(&[TaskResult {
                task: task.clone(),
                n_in: sets.inlier_scores.len(),
                n_out: sets.outlier_scores.len(),
                auroc: auroc(&sets),
            }]);
            match out {
                Some(p) => write(p, &report)?,
                None => print!("{report}"),
            }
            if let Some(p) = hist {
                write(
                    p,
                    &histogram_csv(&[("inlier", &sets.inlier_scores), ("outlier", &sets.outlier_scores)])?,
                )?;
            }
        }
        Command::Run => {
            let report = run_detection(&cfg, cli.dump_trajectories.as_deref())?;
            print!("{}", report.report_csv());
        }
        Command::Verify => {
            let checks = verify_report(cfg.seed)?;
            let mut ok = true;
            for c in &checks {
                println!(
                    "{} {}: measured {:.3e}, tolerance {:.1e}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.measured,
                    c.tolerance
                );
                ok &= c.passed;
            }
            if !ok {
                return Err(Error::Numeric("verification failed".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
