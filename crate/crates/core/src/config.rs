//! Pipeline configuration from a `dotted.key = value` file.
//!
//! Values use TOML syntax (quoted strings, `[a, b]` lists). Every key must be
//! known; a typo is an error rather than a silently ignored setting. Relative
//! paths are resolved against the directory of the config file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::density::{CovarianceType, EmOptions};
use crate::error::{Error, Result};
use crate::mlp::TimeEmbedding;
use crate::schedule::{NoiseSchedule, DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_STEPS};
use crate::score::GaussianMixtureSpec;
use crate::stats::StatisticKind;
use crate::train::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleChoice {
    Linear,
    Cosine,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleConfig {
    pub kind: ScheduleChoice,
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub t_max: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            kind: ScheduleChoice::Linear,
            steps: DEFAULT_STEPS,
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
            t_max: 1.0,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        let s = match self.kind {
            ScheduleChoice::Linear => NoiseSchedule::linear(self.steps, self.beta_start, self.beta_end)?,
            ScheduleChoice::Cosine => NoiseSchedule::cosine(self.steps)?,
        };
        s.with_horizon(self.t_max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpConfig {
    pub path: Option<PathBuf>,
    pub hidden: Vec<usize>,
    pub embedding: TimeEmbedding,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            path: None,
            hidden: vec![64, 64],
            embedding: TimeEmbedding::Scalar,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScoreConfig {
    AnalyticGmm(GaussianMixtureSpec),
    /// Network loaded from `MlpConfig::path`.
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DensityKind {
    /// KDE for scalar statistics, GMM otherwise.
    Auto,
    Kde,
    Gmm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityConfig {
    pub kind: DensityKind,
    /// `None` selects Scott's rule.
    pub kde_bandwidth: Option<f64>,
    pub k_grid: Vec<usize>,
    pub cov_types: Vec<CovarianceType>,
    pub max_iters: usize,
    pub tol: f64,
    /// Fraction of training statistics held out to choose among GMM candidates;
    /// 0 uses every training point and selects by BIC.
    pub split_fraction: f64,
}

impl Default for DensityConfig {
    fn default() -> Self {
        Self {
            kind: DensityKind::Auto,
            kde_bandwidth: None,
            k_grid: vec![1, 2, 3, 4, 5],
            cov_types: CovarianceType::ALL.to_vec(),
            max_iters: 200,
            tol: 1e-6,
            split_fraction: 0.0,
        }
    }
}

impl DensityConfig {
    pub fn em_options(&self, seed: u64) -> EmOptions {
        EmOptions {
            max_iters: self.max_iters,
            tol: self.tol,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DataConfig {
    pub train: Option<PathBuf>,
    pub test_inlier: Option<PathBuf>,
    pub outliers: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub schedule: ScheduleConfig,
    pub score: ScoreConfig,
    pub mlp: MlpConfig,
    pub nfe: usize,
    pub statistics: Vec<StatisticKind>,
    pub density: DensityConfig,
    pub train: TrainConfig,
    pub seed: u64,
    pub data: DataConfig,
    pub output_dir: Option<PathBuf>,
    /// Square side length images are resized to before integration.
    pub model_res: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            schedule: ScheduleConfig::default(),
            score: ScoreConfig::Mlp,
            mlp: MlpConfig::default(),
            nfe: 10,
            statistics: vec![StatisticKind::SixD],
            density: DensityConfig::default(),
            train: TrainConfig::default(),
            seed: 0,
            data: DataConfig::default(),
            output_dir: None,
            model_res: None,
        }
    }
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, toml::Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            toml::Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other.clone());
            }
        }
    }
}

struct Value<'a> {
    key: &'a str,
    value: &'a toml::Value,
}

impl Value<'_> {
    fn err(&self, want: &str) -> Error {
        Error::Config(format!("'{}' must be {want}, got {}", self.key, self.value))
    }

    fn float(&self) -> Result<f64> {
        match self.value {
            toml::Value::Float(f) => Ok(*f),
            toml::Value::Integer(i) => Ok(*i as f64),
            _ => Err(self.err("a number")),
        }
    }

    fn uint(&self) -> Result<u64> {
        match self.value {
            toml::Value::Integer(i) if *i >= 0 => Ok(*i as u64),
            _ => Err(self.err("a nonnegative integer")),
        }
    }

    fn usize(&self) -> Result<usize> {
        usize::try_from(self.uint()?).map_err(|_| self.err("a smaller integer"))
    }

    fn str(&self) -> Result<&str> {
        self.value.as_str().ok_or_else(|| self.err("a string"))
    }

    fn list(&self) -> Result<Vec<Value<'_>>> {
        match self.value {
            toml::Value::Array(a) => Ok(a.iter().map(|value| Value { key: self.key, value }).collect()),
            // a single value is a one-element list
            _ => Ok(vec![Value {
                key: self.key,
                value: self.value,
            }]),
        }
    }

    fn floats(&self) -> Result<Vec<f64>> {
        self.list()?.iter().map(Value::float).collect()
    }

    fn float_rows(&self) -> Result<Vec<Vec<f64>>> {
        self.list()?.iter().map(Value::floats).collect()
    }

    fn path(&self, base: &Path) -> Result<PathBuf> {
        let p = PathBuf::from(self.str()?);
        Ok(if p.is_absolute() { p } else { base.join(p) })
    }
}

impl PipelineConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, base)
    }

    /// Parse config text; relative paths are joined onto `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
        let mut flat = BTreeMap::new();
        flatten("", &table, &mut flat);
        let mut cfg = PipelineConfig::default();
        let mut gmm_weights = None;
        let mut gmm_means = None;
        let mut gmm_variances = None;
        let mut score_kind = None;
        let mut frequencies = None;
        let mut embedding_name = None;
        for (key, value) in &flat {
            let v = Value { key, value };
            match key.as_str() {
                "seed" => cfg.seed = v.uint()?,
                "schedule.kind" => {
                    cfg.schedule.kind = match v.str()? {
                        "linear" => ScheduleChoice::Linear,
                        "cosine" => ScheduleChoice::Cosine,
                        _ => return Err(v.err("'linear' or 'cosine'")),
                    }
                }
                "schedule.steps" => cfg.schedule.steps = v.usize()?,
                "schedule.beta_start" => cfg.schedule.beta_start = v.float()?,
                "schedule.beta_end" => cfg.schedule.beta_end = v.float()?,
                "schedule.t_max" => cfg.schedule.t_max = v.float()?,
                "score.kind" => score_kind = Some(v.str()?.to_string()),
                "score.gmm.weights" => gmm_weights = Some(v.floats()?),
                "score.gmm.means" => gmm_means = Some(v.float_rows()?),
                "score.gmm.variances" => gmm_variances = Some(v.float_rows()?),
                "score.mlp.path" => cfg.mlp.path = Some(v.path(base)?),
                "score.mlp.hidden" => cfg.mlp.hidden = v.list()?.iter().map(Value::usize).collect::<Result<_>>()?,
                "score.mlp.embedding" => embedding_name = Some(v.str()?.to_string()),
                "score.mlp.frequencies" => frequencies = Some(v.usize()?),
                "grid.nfe" => cfg.nfe = v.usize()?,
                "statistic.kinds" => {
                    cfg.statistics = v.list()?.iter().map(|s| s.str()?.parse()).collect::<Result<_>>()?
                }
                "density.kind" => {
                    cfg.density.kind = match v.str()? {
                        "auto" => DensityKind::Auto,
                        "kde" => DensityKind::Kde,
                        "gmm" => DensityKind::Gmm,
                        _ => return Err(v.err("'auto', 'kde' or 'gmm'")),
                    }
                }
                "density.kde.bandwidth" => {
                    cfg.density.kde_bandwidth = match value {
                        toml::Value::String(s) if s == "auto" => None,
                        _ => Some(v.float()?),
                    }
                }
                "density.gmm.k_grid" => {
                    cfg.density.k_grid = v.list()?.iter().map(Value::usize).collect::<Result<_>>()?
                }
                "density.gmm.cov_types" => {
                    cfg.density.cov_types = v.list()?.iter().map(|s| s.str()?.parse()).collect::<Result<_>>()?
                }
                "density.gmm.max_iters" => cfg.density.max_iters = v.usize()?,
                "density.gmm.tol" => cfg.density.tol = v.float()?,
                "density.split_fraction" => cfg.density.split_fraction = v.float()?,
                "train.epochs" => cfg.train.epochs = v.usize()?,
                "train.batch_size" => cfg.train.batch_size = v.usize()?,
                "train.learning_rate" => cfg.train.learning_rate = v.float()?,
                "train.report_every" => cfg.train.report_every = v.usize()?,
                "data.train" => cfg.data.train = Some(v.path(base)?),
                "data.test_inlier" => cfg.data.test_inlier = Some(v.path(base)?),
                "data.outliers" => {
                    cfg.data.outliers = v.list()?.iter().map(|p| p.path(base)).collect::<Result<_>>()?
                }
                "output.dir" => cfg.output_dir = Some(v.path(base)?),
                "preprocess.model_res" => cfg.model_res = Some(v.usize()?),
                other => return Err(Error::Config(format!("unknown key '{other}'"))),
            }
        }
        match embedding_name.as_deref() {
            // frequencies alone imply the sinusoidal embedding
            None => {
                if let Some(f) = frequencies {
                    cfg.mlp.embedding = TimeEmbedding::Sinusoidal { frequencies: f };
                }
            }
            Some("scalar") => cfg.mlp.embedding = TimeEmbedding::Scalar,
            Some("sinusoidal") => {
                cfg.mlp.embedding = TimeEmbedding::Sinusoidal {
                    frequencies: frequencies.unwrap_or(6),
                }
            }
            Some(other) => return Err(Error::Config(format!("unknown embedding '{other}'"))),
        }
        cfg.score = match score_kind.as_deref().unwrap_or("mlp") {
            "mlp" => ScoreConfig::Mlp,
            "analytic_gmm" => {
                let means = gmm_means.ok_or_else(|| Error::Config("'score.gmm.means' is required".into()))?;
                let k = means.len();
                let dim = means.first().map_or(0, Vec::len);
                let weights = gmm_weights.unwrap_or_else(|| vec![1.0 / k as f64; k]);
                let variances = gmm_variances.unwrap_or_else(|| vec![vec![1.0; dim]; k]);
                ScoreConfig::AnalyticGmm(
                    GaussianMixtureSpec::new(weights, means, variances).map_err(|e| Error::Config(e.to_string()))?,
                )
            }
            other => return Err(Error::Config(format!("unknown score kind '{other}'"))),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nfe < 2 {
            return Err(Error::Config(format!("grid.nfe must be at least 2, got {}", self.nfe)));
        }
        if self.statistics.is_empty() {
            return Err(Error::Config("statistic.kinds must not be empty".into()));
        }
        if self.density.k_grid.is_empty() || self.density.k_grid.contains(&0) {
            return Err(Error::Config("density.gmm.k_grid must hold positive values".into()));
        }
        if self.density.cov_types.is_empty() {
            return Err(Error::Config("density.gmm.cov_types must not be empty".into()));
        }
        if !(0.0..1.0).contains(&self.density.split_fraction) {
            return Err(Error::Config("density.split_fraction must lie in [0, 1)".into()));
        }
        if let Some(h) = self.density.kde_bandwidth {
            if !(h > 0.0) {
                return Err(Error::Config("density.kde.bandwidth must be positive".into()));
            }
        }
        if self.model_res == Some(0) {
            return Err(Error::Config("preprocess.model_res must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<PipelineConfig> {
        PipelineConfig::parse(text, Path::new("/base"))
    }

    #[test]
    fn defaults_from_empty_file() {
        assert_eq!(parse("").unwrap(), PipelineConfig::default());
    }

    #[test]
    fn full_example() {
        let cfg = parse(
            r#"
seed = 7
schedule.kind = "cosine"
schedule.steps = 500
score.kind = "analytic_gmm"
score.gmm.means = [[2.0, 0.0], [-2.0, 0.0]]
grid.nfe = 25
statistic.kinds = ["1d", "6d"]
density.kind = "gmm"
density.gmm.k_grid = [1, 2]
density.gmm.cov_types = ["full"]
density.kde.bandwidth = 0.5
data.train = "train.csv"
data.outliers = ["/abs/out.csv", "b.csv"]
output.dir = "out"
"#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.schedule.kind, ScheduleChoice::Cosine);
        assert_eq!(cfg.nfe, 25);
        assert_eq!(cfg.statistics, vec![StatisticKind::Curvature, StatisticKind::SixD]);
        assert_eq!(cfg.density.cov_types, vec![CovarianceType::Full]);
        assert_eq!(cfg.density.kde_bandwidth, Some(0.5));
        assert_eq!(cfg.data.train, Some(PathBuf::from("/base/train.csv")));
        assert_eq!(cfg.data.outliers, vec![PathBuf::from("/abs/out.csv"), PathBuf::from("/base/b.csv")]);
        match cfg.score {
            ScoreConfig::AnalyticGmm(g) => assert_eq!(g.weights(), &[0.5, 0.5]),
            _ => panic!("expected analytic score"),
        }
        assert_eq!(cfg.schedule.build().unwrap().num_steps(), 500);
    }

    #[test]
    fn table_headers_are_dotted_keys() {
        let cfg = parse("[grid]\nnfe = 30\n").unwrap();
        assert_eq!(cfg.nfe, 30);
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(matches!(parse("grid.nfee = 3"), Err(Error::Config(_))));
        assert!(matches!(parse("grid.nfe = 1"), Err(Error::Config(_))));
        assert!(matches!(parse("grid.nfe = \"x\""), Err(Error::Config(_))));
        assert!(matches!(parse("statistic.kinds = [\"2d\"]"), Err(Error::Config(_))));
        assert!(matches!(parse("score.kind = \"analytic_gmm\""), Err(Error::Config(_))));
        assert!(matches!(parse("density.split_fraction = 1.0"), Err(Error::Config(_))));
        assert!(matches!(parse("this is not toml"), Err(Error::Config(_))));
    }

    #[test]
    fn embedding_keys() {
        let cfg = parse("score.mlp.embedding = \"scalar\"").unwrap();
        assert_eq!(cfg.mlp.embedding, TimeEmbedding::Scalar);
        let cfg = parse("score.mlp.frequencies = 3").unwrap();
        assert_eq!(cfg.mlp.embedding, TimeEmbedding::Sinusoidal { frequencies: 3 });
    }
}
