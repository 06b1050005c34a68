//! Full detection run with a learned score: ring inliers against a shifted
//! Gaussian, writing statistics, densities, histograms and the report.
//!
//! Run with `cargo run --release --example end_to_end [OUTPUT_DIR]`.

use std::path::PathBuf;

use diffpath::config::PipelineConfig;
use diffpath::data::{generate_toy_dataset, DatasetKind};
use diffpath::mlp::TimeEmbedding;
use diffpath::persist::{load_mlp, save_mlp};
use diffpath::pipeline::{detect, train_score_model, OutputOptions};
use diffpath::stats::StatisticKind;

fn main() -> diffpath::Result<()> {
    let out = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("diffpath_end_to_end"), PathBuf::from);
    std::fs::create_dir_all(&out).map_err(|e| diffpath::Error::Io {
        path: out.display().to_string(),
        source: e,
    })?;

    let ring = DatasetKind::Ring { radius: 2.0, width: 0.1 };
    let shifted = DatasetKind::Gaussian {
        mean: vec![3.0, 0.0],
        std: 1.0,
    };
    let score_data = generate_toy_dataset(&ring, 8192, 1)?;
    let train = generate_toy_dataset(&ring, 1000, 2)?;
    let test = generate_toy_dataset(&ring, 1000, 3)?;
    let outliers = generate_toy_dataset(&shifted, 1000, 4)?;

    let mut cfg = PipelineConfig {
        nfe: 20,
        statistics: vec![StatisticKind::Curvature, StatisticKind::SixD],
        seed: 7,
        ..PipelineConfig::default()
    };
    cfg.train.epochs = 60;
    cfg.mlp.embedding = TimeEmbedding::Sinusoidal { frequencies: 6 };

    let outcome = train_score_model(&cfg, &score_data)?;
    println!("final DSM loss {:.4}", outcome.final_loss().unwrap_or(f64::NAN));
    let model_path = out.join("score.dptn");
    save_mlp(&outcome.net, &model_path)?;
    let net = load_mlp(&model_path)?;

    let report = detect(
        &cfg,
        &net,
        &train,
        &test,
        &[outliers],
        &OutputOptions {
            dir: Some(out.clone()),
            dump_trajectories: None,
        },
    )?;
    print!("{}", report.report_csv());
    println!("artifacts in {}", out.display());
    Ok(())
}
