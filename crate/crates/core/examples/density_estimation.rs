//! KDE with Scott's bandwidth and BIC-selected Gaussian mixtures.
//!
//! Run with `cargo run --release --example density_estimation`.

use diffpath::data::{generate_toy_dataset, DatasetKind};
use diffpath::density::{gmm_select, kde_fit, scott_bandwidth, CovarianceType, EmOptions};

fn main() -> diffpath::Result<()> {
    let kind = DatasetKind::Gmm {
        means: vec![vec![-3.0, 0.0], vec![3.0, 0.0], vec![0.0, 4.0]],
        std: 0.7,
    };
    let train = generate_toy_dataset(&kind, 1500, 1)?.samples;
    let held_out = generate_toy_dataset(&kind, 500, 2)?.samples;
    let mean_ll = |f: &dyn Fn(&[f64]) -> diffpath::Result<f64>| -> diffpath::Result<f64> {
        let mut total = 0.0;
        for p in &held_out {
            total += f(p)?;
        }
        Ok(total / held_out.len() as f64)
    };

    let h = scott_bandwidth(&train)?;
    let kde = kde_fit(&train, h)?;
    println!("KDE bandwidth {h:.4}, held-out mean log-likelihood {:.4}", mean_ll(&|p| kde.log_likelihood(p))?);

    let gmm = gmm_select(&train, &[1, 2, 3, 4, 5], &CovarianceType::ALL, EmOptions::default())?;
    println!(
        "GMM selected K={} ({}), BIC {:.1}, {} EM iterations",
        gmm.num_components(),
        gmm.cov_type().name(),
        gmm.bic(&train)?,
        gmm.fit.iterations
    );
    for (w, m) in gmm.weights().iter().zip(gmm.means()) {
        println!("  weight {w:.3} mean [{:.3}, {:.3}]", m[0], m[1]);
    }
    println!("held-out mean log-likelihood {:.4}", mean_ll(&|p| gmm.log_likelihood(p))?);
    Ok(())
}
