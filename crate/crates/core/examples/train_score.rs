//! Train an MLP ε-predictor on a two-mode 2-D mixture and compare it with the
//! exact ε of that mixture.
//!
//! Run with `cargo run --release --example train_score`.

use std::time::Instant;

use diffpath::data::{generate_toy_dataset, DatasetKind};
use diffpath::mlp::{MlpScoreNet, TimeEmbedding};
use diffpath::schedule::NoiseSchedule;
use diffpath::score::{GaussianMixtureSpec, ScoreFunction};
use diffpath::train::{train, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn main() -> diffpath::Result<()> {
    let schedule = NoiseSchedule::linear(1000, 1e-4, 0.02)?;
    let kind = DatasetKind::Gmm {
        means: vec![vec![2.0, 0.0], vec![-2.0, 0.0]],
        std: 1.0,
    };
    let data = generate_toy_dataset(&kind, 8192, 11)?;
    let truth = GaussianMixtureSpec::symmetric_pair(vec![2.0, 0.0])?;

    let net = MlpScoreNet::new(2, &[64, 64], TimeEmbedding::Sinusoidal { frequencies: 6 }, 5)?;
    let cfg = TrainConfig {
        epochs: 60,
        batch_size: 256,
        seed: 5,
        report_every: 200,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let outcome = train(net, &schedule, &data.samples, &cfg)?;
    println!("trained {} steps in {:.1?}", outcome.loss_curve.last().map_or(0, |e| e.0), start.elapsed());
    for (step, loss) in &outcome.loss_curve {
        println!("step {step:>6}  loss {loss:.4}");
    }

    // probes: diffused data at ten noise levels
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let probes = generate_toy_dataset(&kind, 512, 12)?;
    let (mut err, mut norm) = (0.0, 0.0);
    for t in (1..=10).map(|k| k * 100) {
        for x0 in &probes.samples {
            let noise: Vec<f64> = (0..2).map(|_| StandardNormal.sample(&mut rng)).collect();
            let x = schedule.forward_marginal_sample(x0, t, &noise)?;
            let want = truth.epsilon(&schedule, &x, t)?;
            let got = outcome.net.epsilon(&schedule, &x, t)?;
            err += want.iter().zip(&got).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            norm += want.iter().map(|a| a * a).sum::<f64>();
        }
    }
    println!("relative ε error against the exact mixture: {:.4}", (err / norm).sqrt());
    Ok(())
}
