//! Numerical checks on the Ornstein-Uhlenbeck example: the KL identity, the
//! straight-line transport path and linear growth of the path statistic.
//!
//! Run with `cargo run --release --example theory_checks`.

use diffpath::theory::{
    gaussian_kl_closed_form, ot_path_check, statistic_proportionality_check, theorem1_rhs_numeric,
    theorem1_tail_residual, verify_report, InnerExpectation, OuProcessSpec,
};

fn main() -> diffpath::Result<()> {
    let (a0, a1) = ([1.0, 0.5], [-0.5, 0.0]);
    let spec = OuProcessSpec::new(6.0, 2000, 10_000, 0)?;
    let kl = gaussian_kl_closed_form(&a0, &a1)?;
    let closed = theorem1_rhs_numeric(&a0, &a1, &spec, InnerExpectation::ClosedForm)?;
    let mc = theorem1_rhs_numeric(&a0, &a1, &spec, InnerExpectation::MonteCarlo)?;
    let tail = theorem1_tail_residual(&a0, &a1, spec.horizon)?;
    println!("KL {kl:.6}; integral {closed:.6} (closed-form inner), {mc:.6} (Monte Carlo inner); tail {tail:.2e}");

    let ot = ot_path_check(&[2.0, 0.0], &[0.3, -0.1], &OuProcessSpec::new(8.0, 10_000, 1, 0)?)?;
    println!(
        "transport path: max error {:.2e}, endpoint residual {:.3e} (expected {:.3e}), speed {:.4}",
        ot.max_path_error, ot.endpoint_residual, ot.expected_endpoint_residual, ot.integrated_speed
    );

    let p = statistic_proportionality_check(&[0.5, 1.0, 2.0, 4.0], &[1.0, 1.0], &spec)?;
    println!("integrated speed vs |a|: slope {:.4}, R^2 {:.6}", p.numeric_slope, p.numeric_r_squared);

    for c in verify_report(0)? {
        println!("{} {}: {:.3e} (tolerance {:.1e})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.measured, c.tolerance);
    }
    Ok(())
}
