//! Deterministic inversion of a few samples to noise, and the statistics
//! computed along each path.
//!
//! Run with `cargo run --example ddim_inversion`.

use diffpath::ddim::{integrate_batch, integrate_forward};
use diffpath::schedule::{NoiseSchedule, TimestepGrid};
use diffpath::score::GaussianMixtureSpec;
use diffpath::stats::StatisticKind;

fn main() -> diffpath::Result<()> {
    let schedule = NoiseSchedule::linear(1000, 1e-4, 0.02)?;
    let grid = TimestepGrid::uniform(&schedule, 10)?;
    let score = GaussianMixtureSpec::symmetric_pair(vec![2.0, 0.0])?;

    let traj = integrate_forward(&[2.5, -0.3], &score, &schedule, &grid)?;
    println!("{:>5} {:>22} {:>22}", "t", "state", "epsilon");
    for ((t, x), e) in grid.indices().iter().zip(&traj.states).zip(&traj.epsilons) {
        println!("{t:>5} {:>10.4} {:>10.4}  {:>10.4} {:>10.4}", x[0], x[1], e[0], e[1]);
    }

    let samples = vec![vec![2.0, 0.0], vec![-2.0, 0.0], vec![0.0, 3.0], vec![6.0, 6.0]];
    let trajs = integrate_batch(&samples, &score, &schedule, &grid)?;
    for (x0, t) in samples.iter().zip(&trajs) {
        println!("start {x0:?}");
        for kind in StatisticKind::ALL {
            let s = kind.compute(t)?;
            let vals: Vec<String> = s.values.iter().map(|v| format!("{v:.4e}")).collect();
            println!("  {:>11}: [{}]", kind.name(), vals.join(", "));
        }
    }
    Ok(())
}
