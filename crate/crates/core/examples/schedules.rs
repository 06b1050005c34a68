//! Linear and cosine noise schedules and the timestep grids built on them.
//!
//! Run with `cargo run --example schedules`.

use diffpath::schedule::{NoiseSchedule, TimestepGrid};

fn main() -> diffpath::Result<()> {
    let linear = NoiseSchedule::linear(1000, 1e-4, 0.02)?;
    let cosine = NoiseSchedule::cosine(1000)?;
    for (name, s) in [("linear", &linear), ("cosine", &cosine)] {
        println!("{name} schedule, {} steps", s.num_steps());
        println!("{:>6} {:>12} {:>12} {:>12}", "t", "alpha_bar", "sigma", "gamma");
        for t in [0, 1, 10, 100, 250, 500, 750, 1000] {
            println!("{t:>6} {:>12.6} {:>12.6} {:>12.4}", s.alpha_bar(t), s.sigma(t), s.gamma(t));
        }
    }

    let grid = TimestepGrid::uniform(&linear, 10)?;
    println!("10-point grid: {:?}", grid.indices());
    let gammas: Vec<String> = grid.gamma_values().iter().map(|g| format!("{g:.3}")).collect();
    println!("gamma on grid: [{}]", gammas.join(", "));
    Ok(())
}
