//! End-to-end detection: integrate, summarize, fit, score, evaluate.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;

use crate::config::{DensityConfig, DensityKind, PipelineConfig, ScoreConfig};
use crate::data::{equalize_resolutions, read_numeric_csv, Dataset};
use crate::ddim::{integrate_forward, Trajectory};
use crate::density::{gmm_fit_em, gmm_select, kde_fit, scott_bandwidth, DensityModel};
use crate::error::{Error, Result};
use crate::eval::{auroc, common_range, histogram, ScoredSets};
use crate::mlp::MlpScoreNet;
use crate::persist::{load_mlp, quantize_density, save_density};
use crate::schedule::{NoiseSchedule, TimestepGrid};
use crate::score::ScoreFunction;
use crate::stats::StatisticKind;
use crate::tensor_file::TensorFile;
use crate::train::{train, TrainOutcome};

const HISTOGRAM_BINS: usize = 30;
/// Multiples of Scott's bandwidth tried when a hold-out split is configured.
const KDE_BANDWIDTH_FACTORS: [f64; 5] = [0.5, 0.75, 1.0, 1.5, 2.0];

/// Wraps a score and counts ε evaluations.
pub struct CountingScore<S> {
    inner: S,
    count: AtomicUsize,
}

impl<S: ScoreFunction> CountingScore<S> {
    pub fn new(inner: S) -> Self {
        Self {
            inner,
            count: AtomicUsize::new(0),
        }
    }

    pub fn evaluations(&self) -> usize {
        self.count.load(Ordering::Relaxed)
    }
}

impl<S: ScoreFunction> ScoreFunction for CountingScore<S> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn kind(&self) -> &'static str {
        self.inner.kind()
    }

    fn epsilon(&self, schedule: &NoiseSchedule, x: &[f64], t: usize) -> Result<Vec<f64>> {
        self.count.fetch_add(1, Ordering::Relaxed);
        self.inner.epsilon(schedule, x, t)
    }
}

/// Statistics for one dataset: `rows[k][i]` is statistic `kinds[k]` of sample `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub kinds: Vec<StatisticKind>,
    pub rows: Vec<Vec<Vec<f64>>>,
    pub trajectories: Option<Vec<Trajectory>>,
}

impl Extraction {
    pub fn statistic(&self, kind: StatisticKind) -> Option<&[Vec<f64>]> {
        self.kinds.iter().position(|k| *k == kind).map(|i| self.rows[i].as_slice())
    }
}

/// Integrate every sample once and compute each requested statistic from the
/// same trajectory. Samples run in parallel; output order follows input order.
pub fn extract_statistics<S: ScoreFunction + ?Sized>(
    score: &S,
    schedule: &NoiseSchedule,
    grid: &TimestepGrid,
    samples: &[Vec<f64>],
    kinds: &[StatisticKind],
    keep_trajectories: bool,
) -> Result<Extraction> {
    if kinds.is_empty() {
        return Err(Error::Empty("statistic kinds"));
    }
    let per_sample: Vec<(Vec<Vec<f64>>, Option<Trajectory>)> = samples
        .par_iter()
        .map(|x| {
            let traj = integrate_forward(x, score, schedule, grid)?;
            let stats = kinds
                .iter()
                .map(|k| Ok(k.compute(&traj)?.values))
                .collect::<Result<Vec<_>>>()?;
            Ok((stats, keep_trajectories.then_some(traj)))
        })
        .collect::<Result<_>>()?;
    let mut rows = vec![Vec::with_capacity(samples.len()); kinds.len()];
    let mut trajectories = keep_trajectories.then(Vec::new);
    for (stats, traj) in per_sample {
        for (k, s) in stats.into_iter().enumerate() {
            rows[k].push(s);
        }
        if let (Some(all), Some(t)) = (trajectories.as_mut(), traj) {
            all.push(t);
        }
    }
    Ok(Extraction {
        kinds: kinds.to_vec(),
        rows,
        trajectories,
    })
}

fn total_log_likelihood(model: &DensityModel, points: &[Vec<f64>]) -> Result<f64> {
    points.iter().map(|p| model.log_likelihood(p)).sum()
}

/// Fit the configured density to training statistics.
///
/// With a hold-out split, GMM candidates (and KDE bandwidths when not fixed)
/// are chosen by held-out log-likelihood and fitted on the remainder;
/// otherwise GMMs are chosen by BIC on all points.
pub fn fit_density(stats: &[Vec<f64>], cfg: &DensityConfig, seed: u64) -> Result<DensityModel> {
    let first = stats.first().ok_or(Error::Empty("training statistics"))?;
    let use_kde = match cfg.kind {
        DensityKind::Kde => true,
        DensityKind::Gmm => false,
        DensityKind::Auto => first.len() == 1,
    };
    let n_hold = (stats.len() as f64 * cfg.split_fraction).floor() as usize;
    if n_hold == 0 {
        return if use_kde {
            let h = match cfg.kde_bandwidth {
                Some(h) => h,
                None => scott_bandwidth(stats)?,
            };
            Ok(DensityModel::Kde(kde_fit(stats, h)?))
        } else {
            Ok(DensityModel::Gmm(gmm_select(stats, &cfg.k_grid, &cfg.cov_types, cfg.em_options(seed))?))
        };
    }
    if n_hold >= stats.len() {
        return Err(Error::param("split fraction leaves no points to fit"));
    }
    let (fit, hold) = stats.split_at(stats.len() - n_hold);
    let candidates: Vec<DensityModel> = if use_kde {
        match cfg.kde_bandwidth {
            Some(h) => vec![DensityModel::Kde(kde_fit(fit, h)?)],
            None => {
                let h = scott_bandwidth(fit)?;
                KDE_BANDWIDTH_FACTORS
                    .iter()
                    .map(|f| Ok(DensityModel::Kde(kde_fit(fit, h * f)?)))
                    .collect::<Result<_>>()?
            }
        }
    } else {
        let mut pairs: Vec<_> = cfg
            .k_grid
            .iter()
            .flat_map(|&k| cfg.cov_types.iter().map(move |&c| (k, c)))
            .collect();
        pairs.sort();
        pairs.dedup();
        pairs
            .par_iter()
            .map(|&(k, c)| Ok(DensityModel::Gmm(gmm_fit_em(fit, k, c, cfg.em_options(seed))?)))
            .collect::<Result<_>>()?
    };
    let mut best: Option<(f64, DensityModel)> = None;
    for m in candidates {
        let ll = total_log_likelihood(&m, hold)?;
        if best.as_ref().is_none_or(|(b, _)| ll > *b) {
            best = Some((ll, m));
        }
    }
    Ok(best.expect("at least one candidate").1)
}

/// Log-likelihood of each statistic row under `model`.
pub fn score_statistics(model: &DensityModel, stats: &[Vec<f64>]) -> Result<Vec<f64>> {
    stats.par_iter().map(|s| model.log_likelihood(s)).collect()
}

/// One row of the evaluation report.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskResult {
    pub task: String,
    pub n_in: usize,
    pub n_out: usize,
    pub auroc: f64,
}

pub fn report_csv(results: &[TaskResult]) -> String {
    let mut out = String::from("task,n_in,n_out,auroc\n");
    for r in results {
        out.push_str(&format!("{},{},{},{}\n", r.task, r.n_in, r.n_out, r.auroc));
    }
    out
}

pub fn statistics_csv(rows: &[Vec<f64>]) -> String {
    let width = rows.first().map_or(0, Vec::len);
    let mut out = String::from("sample_id");
    for j in 1..=width {
        out.push_str(&format!(",stat_{j}"));
    }
    out.push('\n');
    for (i, r) in rows.iter().enumerate() {
        out.push_str(&i.to_string());
        for v in r {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

/// Statistic rows from a `sample_id,stat_1..` file.
pub fn read_statistics_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let rows = read_numeric_csv(path, true)?;
    if rows.is_empty() {
        return Err(Error::Empty("statistics file"));
    }
    rows.into_iter()
        .map(|r| {
            if r.len() < 2 {
                return Err(Error::Format(format!("{}: rows need an id and a statistic", path.display())));
            }
            Ok(r[1..].to_vec())
        })
        .collect()
}

pub fn scores_csv(scores: &[f64]) -> String {
    let mut out = String::from("sample_id,score\n");
    for (i, s) in scores.iter().enumerate() {
        out.push_str(&format!("{i},{s}\n"));
    }
    out
}

pub fn read_scores_csv(path: &Path) -> Result<Vec<f64>> {
    read_numeric_csv(path, true)?
        .into_iter()
        .map(|r| match r.as_slice() {
            [_, s] => Ok(*s),
            _ => Err(Error::Format(format!("{}: expected sample_id,score rows", path.display()))),
        })
        .collect()
}

/// `set,bin_start,bin_end,count` rows over a shared range for all sets.
pub fn histogram_csv(sets: &[(&str, &[f64])]) -> Result<String> {
    let mut out = String::from("set,bin_start,bin_end,count\n");
    let Some(range) = common_range(sets.iter().map(|(_, v)| *v)) else {
        return Ok(out);
    };
    for (name, values) in sets {
        let h = histogram(values, HISTOGRAM_BINS, range)?;
        for (i, c) in h.counts.iter().enumerate() {
            out.push_str(&format!("{name},{},{},{c}\n", h.edges[i], h.edges[i + 1]));
        }
    }
    Ok(out)
}

pub fn loss_curve_csv(curve: &[(usize, f64)]) -> String {
    let mut out = String::from("step,loss\n");
    for (step, loss) in curve {
        out.push_str(&format!("{step},{loss}\n"));
    }
    out
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Trajectories as `[n, nfe, d]` state and ε sections and a `[n, nfe − 1, d]`
/// derivative section, prefixed by `set`.
pub fn push_trajectories(file: &mut TensorFile, set: &str, trajs: &[Trajectory]) -> Result<()> {
    let Some(first) = trajs.first() else {
        return Ok(());
    };
    let (n, len, d) = (trajs.len(), first.len(), first.dim());
    let flat = |f: &dyn Fn(&Trajectory) -> &Vec<Vec<f64>>| -> Vec<f64> {
        trajs.iter().flat_map(|t| f(t).iter().flatten().copied()).collect()
    };
    file.push(format!("{set}.states"), &[n, len, d], &flat(&|t| &t.states))?;
    file.push(format!("{set}.epsilons"), &[n, len, d], &flat(&|t| &t.epsilons))?;
    file.push(format!("{set}.eps_time_derivs"), &[n, len - 1, d], &flat(&|t| &t.eps_time_derivs))?;
    Ok(())
}

/// Score model described by the config: the analytic mixture or a saved network.
pub fn load_score(cfg: &PipelineConfig) -> Result<Box<dyn ScoreFunction>> {
    match &cfg.score {
        ScoreConfig::AnalyticGmm(spec) => Ok(Box::new(spec.clone())),
        ScoreConfig::Mlp => {
            let path = cfg
                .mlp
                .path
                .as_ref()
                .ok_or_else(|| Error::Config("score.mlp.path is required for an mlp score".into()))?;
            Ok(Box::new(load_mlp(path)?))
        }
    }
}

/// Train a fresh network on `data` with the config's architecture and seed.
pub fn train_score_model(cfg: &PipelineConfig, data: &Dataset) -> Result<TrainOutcome> {
    let schedule = cfg.schedule.build()?;
    let net = MlpScoreNet::new(data.dim(), &cfg.mlp.hidden, cfg.mlp.embedding, cfg.seed)?;
    let mut tc = cfg.train.clone();
    tc.seed = cfg.seed;
    train(net, &schedule, &data.samples, &tc)
}

/// Everything a detection run produced.
#[derive(Debug, Clone)]
pub struct DetectionReport {
    pub results: Vec<TaskResult>,
    /// Fitted densities per statistic, as stored on disk.
    pub densities: Vec<(StatisticKind, DensityModel)>,
    pub train: Extraction,
    pub test_inlier: Extraction,
    pub outliers: Vec<Extraction>,
    /// ε evaluations made by the score model over the whole run.
    pub score_evaluations: usize,
}

impl DetectionReport {
    pub fn report_csv(&self) -> String {
        report_csv(&self.results)
    }

    pub fn auroc(&self, kind: StatisticKind) -> Option<f64> {
        let suffix = format!("/{}", kind.name());
        self.results.iter().find(|r| r.task.ends_with(&suffix)).map(|r| r.auroc)
    }
}

/// Where a run writes its artifacts.
#[derive(Debug, Clone, Default)]
pub struct OutputOptions {
    pub dir: Option<PathBuf>,
    pub dump_trajectories: Option<PathBuf>,
}

/// Run detection on in-memory datasets with the given score model.
pub fn detect<S: ScoreFunction + ?Sized>(
    cfg: &PipelineConfig,
    score: &S,
    train: &Dataset,
    test_inlier: &Dataset,
    outliers: &[Dataset],
    output: &OutputOptions,
) -> Result<DetectionReport> {
    cfg.validate()?;
    if outliers.is_empty() {
        return Err(Error::Empty("outlier datasets"));
    }
    let mut sets: Vec<Dataset> = std::iter::once(train.clone())
        .chain(std::iter::once(test_inlier.clone()))
        .chain(outliers.iter().cloned())
        .collect();
    if let Some(res) = cfg.model_res {
        sets = equalize_resolutions(&sets, res).map_err(|e| e.in_stage("preprocess"))?;
    }
    let schedule = cfg.schedule.build().map_err(|e| e.in_stage("schedule"))?;
    let grid = TimestepGrid::uniform(&schedule, cfg.nfe).map_err(|e| e.in_stage("schedule"))?;
    let counter = CountingScore::new(score);
    let keep = output.dump_trajectories.is_some();
    let mut extractions = sets
        .iter()
        .map(|d| extract_statistics(&counter, &schedule, &grid, &d.samples, &cfg.statistics, keep))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.in_stage("extract"))?;

    let labels: Vec<String> = std::iter::once("train".to_string())
        .chain(std::iter::once("test_inlier".to_string()))
        .chain((0..outliers.len()).map(|i| format!("outlier{i}")))
        .collect();

    if let Some(dir) = &output.dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut results = Vec::new();
    let mut densities = Vec::new();
    for (ki, kind) in cfg.statistics.iter().enumerate() {
        let fitted = fit_density(&extractions[0].rows[ki], &cfg.density, cfg.seed).map_err(|e| e.in_stage("fit density"))?;
        // score with exactly what is persisted
        let model = quantize_density(&fitted).map_err(|e| e.in_stage("fit density"))?;
        let scores: Vec<Vec<f64>> = extractions[1..]
            .iter()
            .map(|ex| score_statistics(&model, &ex.rows[ki]))
            .collect::<Result<_>>()
            .map_err(|e| e.in_stage("score"))?;
        for (oi, out_scores) in scores[1..].iter().enumerate() {
            let sets = ScoredSets::new(scores[0].clone(), out_scores.clone()).map_err(|e| e.in_stage("evaluate"))?;
            results.push(TaskResult {
                task: format!("{}_vs_{}/{}", test_inlier.name, outliers[oi].name, kind.name()).replace(',', ";"),
                n_in: sets.inlier_scores.len(),
                n_out: sets.outlier_scores.len(),
                auroc: auroc(&sets),
            });
        }
        if let Some(dir) = &output.dir {
            let write = || -> Result<()> {
                for (label, ex) in labels.iter().zip(&extractions) {
                    write_text(&dir.join(format!("stats_{label}_{}.csv", kind.name())), &statistics_csv(&ex.rows[ki]))?;
                }
                for (label, s) in labels[1..].iter().zip(&scores) {
                    write_text(&dir.join(format!("scores_{label}_{}.csv", kind.name())), &scores_csv(s))?;
                }
                let named: Vec<(&str, &[f64])> = labels[1..].iter().map(String::as_str).zip(scores.iter().map(Vec::as_slice)).collect();
                write_text(&dir.join(format!("hist_{}.csv", kind.name())), &histogram_csv(&named)?)?;
                save_density(&model, dir.join(format!("density_{}.dptn", kind.name())))
            };
            write().map_err(|e| e.in_stage("write outputs"))?;
        }
        densities.push((*kind, model));
    }
    if let Some(dir) = &output.dir {
        write_text(&dir.join("report.csv"), &report_csv(&results)).map_err(|e| e.in_stage("write outputs"))?;
    }
    if let Some(path) = &output.dump_trajectories {
        let mut file = TensorFile::new();
        file.push("grid.indices", &[grid.len()], &grid.indices().iter().map(|i| *i as f64).collect::<Vec<_>>())?;
        for (label, ex) in labels.iter().zip(&extractions) {
            push_trajectories(&mut file, label, ex.trajectories.as_deref().unwrap_or(&[]))?;
        }
        file.write(path).map_err(|e| e.in_stage("write outputs"))?;
    }
    let outlier_ex = extractions.split_off(2);
    let test_ex = extractions.pop().expect("test set");
    let train_ex = extractions.pop().expect("train set");
    Ok(DetectionReport {
        results,
        densities,
        train: train_ex,
        test_inlier: test_ex,
        outliers: outlier_ex,
        score_evaluations: counter.evaluations(),
    })
}

/// Full run from a config: load data and score model, detect, write outputs.
pub fn run_detection(cfg: &PipelineConfig, dump_trajectories: Option<&Path>) -> Result<DetectionReport> {
    let need = |p: &Option<PathBuf>, key: &str| {
        p.clone().ok_or_else(|| Error::Config(format!("'{key}' is required")))
    };
    let train_path = need(&cfg.data.train, "data.train")?;
    let test_path = need(&cfg.data.test_inlier, "data.test_inlier")?;
    if cfg.data.outliers.is_empty() {
        return Err(Error::Config("'data.outliers' is required".into()));
    }
    let load = |p: &Path| Dataset::load(p).map_err(|e| e.in_stage("load data"));
    let train = load(&train_path)?;
    let test = load(&test_path)?;
    let outliers = cfg.data.outliers.iter().map(|p| load(p)).collect::<Result<Vec<_>>>()?;
    let score = load_score(cfg).map_err(|e| e.in_stage("load score"))?;
    detect(
        cfg,
        &score,
        &train,
        &test,
        &outliers,
        &OutputOptions {
            dir: cfg.output_dir.clone(),
            dump_trajectories: dump_trajectories.map(Path::to_path_buf),
        },
    )
}
