//! Inliers versus their own negation under a sign-symmetric score.
//!
//! The base model is an equal mixture at `±m`, so ε is odd in `x`. Negated
//! samples then trace exactly negated paths: every unsigned statistic is
//! unchanged, while signed power sums flip sign.
//!
//! Run with `cargo run --release --example sign_flip`.

use diffpath::config::{DensityKind, PipelineConfig, ScoreConfig};
use diffpath::data::{generate_toy_dataset, DatasetKind};
use diffpath::pipeline::{detect, OutputOptions};
use diffpath::score::GaussianMixtureSpec;
use diffpath::stats::StatisticKind;

fn main() -> diffpath::Result<()> {
    let m = vec![2.0, 0.0];
    let base = GaussianMixtureSpec::symmetric_pair(m.clone())?;
    let mut cfg = PipelineConfig {
        score: ScoreConfig::AnalyticGmm(base.clone()),
        nfe: 10,
        statistics: vec![StatisticKind::Curvature, StatisticKind::SixD],
        seed: 3,
        ..PipelineConfig::default()
    };
    cfg.density.kind = DensityKind::Auto;

    let inlier = DatasetKind::Gaussian { mean: m, std: 1.0 };
    let train = generate_toy_dataset(&inlier, 2000, 1)?;
    let test = generate_toy_dataset(&inlier, 2000, 2)?;
    let flipped = test.negated();

    let report = detect(&cfg, &base, &train, &test, &[flipped], &OutputOptions::default())?;
    print!("{}", report.report_csv());
    println!("score evaluations: {}", report.score_evaluations);
    Ok(())
}
