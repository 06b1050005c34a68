use std::path::Path;

use diffpath::config::{DensityKind, PipelineConfig, ScoreConfig};
use diffpath::data::{generate_toy_dataset, DatasetKind};
use diffpath::density::{gmm_fit_em, CovarianceType, DensityModel, EmOptions};
use diffpath::persist::{density_from_file, density_to_file, load_density, quantize_density, save_density};
use diffpath::pipeline::{detect, read_scores_csv, read_statistics_csv, OutputOptions};
use diffpath::score::GaussianMixtureSpec;
use diffpath::stats::StatisticKind;
use diffpath::tensor_file::TensorFile;
use diffpath::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn analytic_config(nfe: usize) -> (PipelineConfig, GaussianMixtureSpec) {
    let spec = GaussianMixtureSpec::symmetric_pair(vec![2.0, 0.0]).unwrap();
    let cfg = PipelineConfig {
        score: ScoreConfig::AnalyticGmm(spec.clone()),
        nfe,
        statistics: vec![StatisticKind::FirstOrder, StatisticKind::Curvature, StatisticKind::SixD],
        seed: 9,
        ..PipelineConfig::default()
    };
    (cfg, spec)
}

#[test]
fn single_integration_pass_per_sample() {
    let (cfg, spec) = analytic_config(8);
    let ring = DatasetKind::Ring { radius: 2.0, width: 0.2 };
    let train = generate_toy_dataset(&ring, 150, 1).unwrap();
    let test = generate_toy_dataset(&ring, 120, 2).unwrap();
    let outs = [
        generate_toy_dataset(&DatasetKind::Moons { noise: 0.1 }, 90, 3).unwrap(),
        generate_toy_dataset(&ring, 60, 4).unwrap().negated(),
    ];
    let report = detect(&cfg, &spec, &train, &test, &outs, &OutputOptions::default()).unwrap();
    // three statistics share one trajectory per sample
    assert_eq!(report.score_evaluations, (150 + 120 + 90 + 60) * 8);
    assert_eq!(report.results.len(), 3 * 2);
    for (ki, _) in cfg.statistics.iter().enumerate() {
        assert_eq!(report.train.rows[ki].len(), 150);
        assert_eq!(report.test_inlier.rows[ki].len(), 120);
        assert_eq!(report.outliers[0].rows[ki].len(), 90);
        assert_eq!(report.outliers[1].rows[ki].len(), 60);
    }
}

#[test]
fn outputs_are_written_and_reproducible() {
    let (cfg, spec) = analytic_config(6);
    let g = DatasetKind::Gaussian {
        mean: vec![2.0, 0.0],
        std: 1.0,
    };
    let train = generate_toy_dataset(&g, 200, 1).unwrap();
    let test = generate_toy_dataset(&g, 100, 2).unwrap();
    let out = generate_toy_dataset(&DatasetKind::Moons { noise: 0.1 }, 100, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let d = dir.path().join(name);
        let opts = OutputOptions {
            dir: Some(d.clone()),
            dump_trajectories: Some(d.join("traj.dptn")),
        };
        detect(&cfg, &spec, &train, &test, std::slice::from_ref(&out), &opts).unwrap();
        d
    };
    let a = run("a");
    let b = run("b");
    for kind in ["first_order", "1d", "6d"] {
        for label in ["train", "test_inlier", "outlier0"] {
            let f = format!("stats_{label}_{kind}.csv");
            assert!(a.join(&f).exists(), "{f}");
        }
        let rows = read_statistics_csv(&a.join(format!("stats_train_{kind}.csv"))).unwrap();
        assert_eq!(rows.len(), 200);
        let scores = read_scores_csv(&a.join(format!("scores_outlier0_{kind}.csv"))).unwrap();
        assert_eq!(scores.len(), 100);
        assert!(a.join(format!("hist_{kind}.csv")).exists());
        let da = std::fs::read(a.join(format!("density_{kind}.dptn"))).unwrap();
        let db = std::fs::read(b.join(format!("density_{kind}.dptn"))).unwrap();
        assert_eq!(da, db);
    }
    assert_eq!(
        std::fs::read(a.join("report.csv")).unwrap(),
        std::fs::read(b.join("report.csv")).unwrap()
    );
    let traj = TensorFile::read(a.join("traj.dptn")).unwrap();
    assert!(traj.contains("grid.indices"));
}

#[test]
fn exchangeable_sets_give_chance_auroc() {
    let (mut cfg, spec) = analytic_config(10);
    cfg.statistics = vec![StatisticKind::SixD];
    let g = DatasetKind::Gaussian {
        mean: vec![2.0, 0.0],
        std: 1.0,
    };
    let train = generate_toy_dataset(&g, 1000, 1).unwrap();
    let test = generate_toy_dataset(&g, 1000, 2).unwrap();
    let same = generate_toy_dataset(&g, 1000, 3).unwrap();
    let report = detect(&cfg, &spec, &train, &test, &[same], &OutputOptions::default()).unwrap();
    let a = report.auroc(StatisticKind::SixD).unwrap();
    assert!((0.45..=0.55).contains(&a), "auroc {a}");
}

#[test]
fn persisted_density_scores_like_the_scored_model() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut n = || -> f64 { StandardNormal.sample(&mut rng) };
    let pts: Vec<Vec<f64>> = (0..400)
        .map(|i| {
            let c = if i % 2 == 0 { 2.0 } else { -2.0 };
            vec![c + n(), n(), 0.5 * n()]
        })
        .collect();
    for cov in CovarianceType::ALL {
        let fitted = DensityModel::Gmm(gmm_fit_em(&pts, 3, cov, EmOptions::default()).unwrap());
        let quantized = quantize_density(&fitted).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gmm.dptn");
        save_density(&quantized, &path).unwrap();
        let loaded = load_density(&path).unwrap();
        for p in pts.iter().take(100) {
            let a = quantized.log_likelihood(p).unwrap();
            let b = loaded.log_likelihood(p).unwrap();
            assert_eq!(a.to_bits(), b.to_bits(), "{cov:?}");
            let c = fitted.log_likelihood(p).unwrap();
            assert!((a - c).abs() < 1e-4 * (1.0 + c.abs()));
        }
        // saving the loaded model reproduces the file
        let bytes = density_to_file(&loaded).unwrap().to_bytes();
        assert_eq!(bytes, std::fs::read(&path).unwrap());
        assert!(density_from_file(&TensorFile::from_bytes(&bytes).unwrap()).is_ok());
    }
}

#[test]
fn malformed_tensor_files_are_rejected() {
    let mut f = TensorFile::new();
    f.push("x", &[2], &[1.0, 2.0]).unwrap();
    let good = f.to_bytes();

    let mut bad_magic = good.clone();
    bad_magic[0] = b'X';
    assert!(matches!(TensorFile::from_bytes(&bad_magic), Err(Error::Format(_))));

    let mut bad_version = good.clone();
    bad_version[4..8].copy_from_slice(&7u32.to_le_bytes());
    assert!(matches!(TensorFile::from_bytes(&bad_version), Err(Error::UnsupportedVersion(7))));

    assert!(matches!(TensorFile::from_bytes(&good[..good.len() - 1]), Err(Error::Format(_))));
}

fn parse(text: &str) -> Result<PipelineConfig, Error> {
    PipelineConfig::parse(text, Path::new("/tmp"))
}

#[test]
fn config_parsing_and_errors() {
    let cfg = parse(
        "seed = 3\ngrid.nfe = 25\nstatistic.kinds = [\"1d\", \"6d\"]\ndensity.kind = \"gmm\"\ndata.train = \"a.csv\"\n",
    )
    .unwrap();
    assert_eq!(cfg.seed, 3);
    assert_eq!(cfg.nfe, 25);
    assert_eq!(cfg.statistics, vec![StatisticKind::Curvature, StatisticKind::SixD]);
    assert_eq!(cfg.density.kind, DensityKind::Gmm);
    assert_eq!(cfg.data.train.as_deref(), Some(Path::new("/tmp/a.csv")));

    for text in [
        "no_such_key = 1",
        "grid.nfe = 1",
        "statistic.kinds = [\"9d\"]",
        "schedule.kind = \"quadratic\"",
        "density.kind = \"flow\"",
        "seed = ",
    ] {
        let err = parse(text).unwrap_err();
        assert_eq!(err.exit_code(), 1, "{text}: {err}");
    }
}

#[test]
fn missing_data_is_a_config_error() {
    let cfg = parse("score.kind = \"analytic_gmm\"\nscore.gmm.means = [[1.0, 0.0]]\n").unwrap();
    let err = diffpath::pipeline::run_detection(&cfg, None).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
}
