//! Closed-form checks on the Ornstein-Uhlenbeck process `dx = −x dt + √2 dw`.
//!
//! Starting from `N(a, I)` the marginal at time `t` is `N(a·e^{−t}, I)`, so the
//! probability-flow velocity is `−a·e^{−t}` everywhere and the flow converges to
//! the translation `x ↦ x − a`. The KL divergence between two such starts is
//! recovered from the time integral of the score difference.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};

/// Squared diffusion coefficient `g²`.
const G_SQUARED: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuProcessSpec {
    pub horizon: f64,
    /// Quadrature nodes for time integrals, Euler steps for path integration.
    pub steps: usize,
    pub mc_samples: usize,
    pub seed: u64,
}

impl OuProcessSpec {
    pub fn new(horizon: f64, steps: usize, mc_samples: usize, seed: u64) -> Result<Self> {
        let spec = Self {
            horizon,
            steps,
            mc_samples,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::param(format!("horizon must be positive, got {}", self.horizon)));
        }
        if self.steps == 0 || self.mc_samples == 0 {
            return Err(Error::param("step and sample counts must be at least 1"));
        }
        Ok(())
    }

    fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }
}

impl Default for OuProcessSpec {
    fn default() -> Self {
        Self {
            horizon: 6.0,
            steps: 2000,
            mc_samples: 10_000,
            seed: 0,
        }
    }
}

fn diff_norm_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `KL(N(a0, I) ‖ N(a1, I)) = ½‖a0 − a1‖²`.
pub fn gaussian_kl_closed_form(a0: &[f64], a1: &[f64]) -> Result<f64> {
    check_dim(a0.len(), a1.len())?;
    Ok(0.5 * diff_norm_sq(a0, a1))
}

/// Noise level of the marginal relative to the start, `√(1 − e^{−2t})`.
fn sigma(t: f64) -> f64 {
    (-(-2.0 * t).exp_m1()).sqrt()
}

/// `ε(x, t) = −σ_t ∇log p_t(x)` for `p_t = N(a·e^{−t}, I)`.
fn ou_epsilon(x: &[f64], a: &[f64], t: f64) -> Vec<f64> {
    let s = sigma(t);
    let decay = (-t).exp();
    x.iter().zip(a).map(|(xi, ai)| s * (xi - ai * decay)).collect()
}

/// How the inner expectation over `x ∼ φ_t` is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerExpectation {
    ClosedForm,
    MonteCarlo,
}

/// `∫_0^T ½ E_{x∼φ_t}[g²/σ_t² ‖ε_φ − ε_ψ‖²] dt` by the midpoint rule.
///
/// Midpoint nodes keep away from `t = 0` where `σ_t` vanishes. The part of the
/// divergence beyond the horizon is given by [`theorem1_tail_residual`].
pub fn theorem1_rhs_numeric(a0: &[f64], a1: &[f64], spec: &OuProcessSpec, inner: InnerExpectation) -> Result<f64> {
    check_dim(a0.len(), a1.len())?;
    spec.validate()?;
    let dt = spec.dt();
    let d = a0.len();
    let integrand = |node: usize| -> f64 {
        let t = (node as f64 + 0.5) * dt;
        let s2 = sigma(t).powi(2);
        let expectation = match inner {
            InnerExpectation::ClosedForm => s2 * diff_norm_sq(a0, a1) * (-2.0 * t).exp(),
            InnerExpectation::MonteCarlo => {
                let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
                rng.set_stream(node as u64);
                let decay = (-t).exp();
                let mut x = vec![0.0; d];
                let mut acc = 0.0;
                for _ in 0..spec.mc_samples {
                    for (xi, ai) in x.iter_mut().zip(a0) {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        *xi = ai * decay + z;
                    }
                    acc += diff_norm_sq(&ou_epsilon(&x, a0, t), &ou_epsilon(&x, a1, t));
                }
                acc / spec.mc_samples as f64
            }
        };
        0.5 * G_SQUARED / s2 * expectation
    };
    let values: Vec<f64> = (0..spec.steps).into_par_iter().map(integrand).collect();
    Ok(values.iter().sum::<f64>() * dt)
}

/// `KL(φ_T ‖ ψ_T) = ½‖a0 − a1‖² e^{−2T}`, the divergence left at the horizon.
pub fn theorem1_tail_residual(a0: &[f64], a1: &[f64], horizon: f64) -> Result<f64> {
    Ok(gaussian_kl_closed_form(a0, a1)? * (-2.0 * horizon).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct OtPathReport {
    pub horizon: f64,
    pub steps: usize,
    /// Max over grid points of `‖x_k − (x0 + a(e^{−t_k} − 1))‖`.
    pub max_path_error: f64,
    /// `‖x_T − (x0 − a)‖` for the integrated path.
    pub endpoint_residual: f64,
    /// `‖a‖e^{−T}`, the residual of the exact path.
    pub expected_endpoint_residual: f64,
    /// Max of `|‖dx/dt‖ − ‖a‖e^{−t}|`.
    pub max_velocity_error: f64,
    /// Same for the second derivative, from differences of the velocity.
    pub max_acceleration_error: f64,
    /// `∫ ‖dx/dt‖ dt` along the integrated path.
    pub integrated_speed: f64,
}

/// Euler-integrate the probability-flow ODE of `N(a, I)` from `x0` and compare
/// with the closed-form path.
pub fn ot_path_check(a: &[f64], x0: &[f64], spec: &OuProcessSpec) -> Result<OtPathReport> {
    check_dim(a.len(), x0.len())?;
    spec.validate()?;
    let dt = spec.dt();
    let a_norm = norm(a);
    // dx/dt = f(x, t) − ½g² ∇log p_t(x)
    let velocity = |x: &[f64], t: f64| -> Vec<f64> {
        let decay = (-t).exp();
        x.iter()
            .zip(a)
            .map(|(xi, ai)| -xi + 0.5 * G_SQUARED * (xi - ai * decay))
            .collect()
    };
    let exact = |t: f64| -> Vec<f64> { x0.iter().zip(a).map(|(x, ai)| x + ai * (-t).exp_m1()).collect() };

    let mut x = x0.to_vec();
    let mut max_path_error = 0.0f64;
    let mut max_velocity_error = 0.0f64;
    let mut max_acceleration_error = 0.0f64;
    let mut integrated_speed = 0.0;
    let mut prev_v: Option<Vec<f64>> = None;
    for k in 0..=spec.steps {
        let t = k as f64 * dt;
        max_path_error = max_path_error.max(diff_norm_sq(&x, &exact(t)).sqrt());
        let v = velocity(&x, t);
        max_velocity_error = max_velocity_error.max((norm(&v) - a_norm * (-t).exp()).abs());
        if let Some(p) = &prev_v {
            let acc: Vec<f64> = v.iter().zip(p).map(|(n, o)| (n - o) / dt).collect();
            let mid = t - 0.5 * dt;
            max_acceleration_error = max_acceleration_error.max((norm(&acc) - a_norm * (-mid).exp()).abs());
        }
        if k == spec.steps {
            break;
        }
        integrated_speed += norm(&v) * dt;
        x.iter_mut().zip(&v).for_each(|(xi, vi)| *xi += dt * vi);
        prev_v = Some(v);
    }
    let target: Vec<f64> = x0.iter().zip(a).map(|(x, ai)| x - ai).collect();
    Ok(OtPathReport {
        horizon: spec.horizon,
        steps: spec.steps,
        max_path_error,
        endpoint_residual: diff_norm_sq(&x, &target).sqrt(),
        expected_endpoint_residual: a_norm * (-spec.horizon).exp(),
        max_velocity_error,
        max_acceleration_error,
        integrated_speed,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProportionalityReport {
    pub scales: Vec<f64>,
    /// `‖a‖(1 − e^{−T})`, the exact integrated speed.
    pub closed_form: Vec<f64>,
    /// Integrated speed along the Euler path.
    pub numeric: Vec<f64>,
    /// Least-squares slope through the origin of `closed_form` on `scales`.
    pub slope: f64,
    pub r_squared: f64,
    pub max_relative_residual: f64,
    pub numeric_slope: f64,
    pub numeric_r_squared: f64,
}

/// Fit `y = c·s` and return `(c, R², max relative residual)`.
fn fit_through_origin(s: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let ss: f64 = s.iter().map(|v| v * v).sum();
    let slope = if ss > 0.0 {
        s.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / ss
    } else {
        0.0
    };
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let res: f64 = s.iter().zip(y).map(|(a, b)| (b - slope * a).powi(2)).sum();
    let tot: f64 = y.iter().map(|b| (b - mean).powi(2)).sum();
    let r2 = if tot > 0.0 { 1.0 - res / tot } else if res == 0.0 { 1.0 } else { 0.0 };
    let rel = s
        .iter()
        .zip(y)
        .filter(|(_, b)| **b != 0.0)
        .map(|(a, b)| ((b - slope * a) / b).abs())
        .fold(0.0, f64::max);
    (slope, r2, rel)
}

/// Check that the time-integrated derivative norm grows linearly in `‖a‖` for
/// `a = scale · direction`.
pub fn statistic_proportionality_check(
    scales: &[f64],
    direction: &[f64],
    spec: &OuProcessSpec,
) -> Result<ProportionalityReport> {
    if scales.is_empty() {
        return Err(Error::Empty("scales"));
    }
    if scales.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
        return Err(Error::param("scales must be nonnegative"));
    }
    let dn = norm(direction);
    if !(dn > 0.0 && dn.is_finite()) {
        return Err(Error::param("direction must be a nonzero vector"));
    }
    let unit: Vec<f64> = direction.iter().map(|v| v / dn).collect();
    let origin = vec![0.0; unit.len()];
    let closed_form: Vec<f64> = scales.iter().map(|s| s * -(-spec.horizon).exp_m1()).collect();
    let numeric = scales
        .iter()
        .map(|s| {
            let a: Vec<f64> = unit.iter().map(|u| u * s).collect();
            Ok(ot_path_check(&a, &origin, spec)?.integrated_speed)
        })
        .collect::<Result<Vec<f64>>>()?;
    let (slope, r_squared, max_relative_residual) = fit_through_origin(scales, &closed_form);
    let (numeric_slope, numeric_r_squared, _) = fit_through_origin(scales, &numeric);
    Ok(ProportionalityReport {
        scales: scales.to_vec(),
        closed_form,
        numeric,
        slope,
        r_squared,
        max_relative_residual,
        numeric_slope,
        numeric_r_squared,
    })
}

/// One line of the verification report.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckResult {
    fn below(name: &'static str, measured: f64, tolerance: f64) -> Self {
        Self {
            name,
            measured,
            tolerance,
            passed: measured < tolerance,
        }
    }
}

/// Relative change of successive endpoint residuals at horizons 4, 6, 8
/// against `e^{−2}`; the worst of the two ratios.
pub fn endpoint_decay_error(a: &[f64], steps: usize) -> Result<f64> {
    let origin = vec![0.0; a.len()];
    let residuals = [4.0, 6.0, 8.0]
        .iter()
        .map(|&h| Ok(ot_path_check(a, &origin, &OuProcessSpec::new(h, steps, 1, 0)?)?.endpoint_residual))
        .collect::<Result<Vec<f64>>>()?;
    let expected = (-2.0f64).exp();
    Ok(residuals
        .windows(2)
        .map(|w| (w[1] / w[0] / expected - 1.0).abs())
        .fold(0.0, f64::max))
}

/// Run every closed-form check with the default tolerances.
pub fn verify_report(seed: u64) -> Result<Vec<CheckResult>> {
    let a0 = [1.0, 0.0];
    let a1 = [0.0, 0.0];
    let kl = gaussian_kl_closed_form(&a0, &a1)?;
    let spec = OuProcessSpec::new(6.0, 2000, 10_000, seed)?;
    let closed = theorem1_rhs_numeric(&a0, &a1, &spec, InnerExpectation::ClosedForm)?;
    let mc = theorem1_rhs_numeric(&a0, &a1, &spec, InnerExpectation::MonteCarlo)?;
    let a = [2.0, 0.0];
    let origin = [0.0, 0.0];
    let path = ot_path_check(&a, &origin, &OuProcessSpec::new(8.0, 10_000, 1, seed)?)?;
    let far = ot_path_check(&a, &origin, &OuProcessSpec::new(10.0, 10_000, 1, seed)?)?;
    let decay = endpoint_decay_error(&a, 1_000_000)?;
    let prop = statistic_proportionality_check(&[1.0, 2.0, 4.0, 8.0], &[1.0, 0.0], &OuProcessSpec::new(8.0, 10_000, 1, seed)?)?;
    Ok(vec![
        CheckResult::below("kl_closed_form_inner_rel_error", (closed - kl).abs() / kl, 0.01),
        CheckResult::below("kl_monte_carlo_inner_rel_error", (mc - kl).abs() / kl, 0.03),
        CheckResult::below("ot_path_max_error", path.max_path_error, 1e-3),
        CheckResult::below("ot_endpoint_error_t10", far.endpoint_residual, 1e-3),
        CheckResult::below("ot_velocity_norm_error", path.max_velocity_error, 1e-3),
        CheckResult::below("ot_acceleration_norm_error", path.max_acceleration_error, 1e-3),
        CheckResult::below("ot_endpoint_decay_rel_error", decay, 0.2),
        CheckResult::below("proportionality_rel_residual", prop.max_relative_residual, 1e-6),
        CheckResult::below("proportionality_numeric_1_minus_r2", 1.0 - prop.numeric_r_squared, 1e-9),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(h: f64, steps: usize) -> OuProcessSpec {
        OuProcessSpec::new(h, steps, 1000, 3).unwrap()
    }

    #[test]
    fn kl_examples() {
        assert_eq!(gaussian_kl_closed_form(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(gaussian_kl_closed_form(&[1.0, 0.0], &[0.0, 0.0]).unwrap(), 0.5);
        assert_eq!(gaussian_kl_closed_form(&[3.0, 4.0], &[0.0, 0.0]).unwrap(), 12.5);
        assert!(gaussian_kl_closed_form(&[1.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(OuProcessSpec::new(0.0, 10, 1, 0).is_err());
        assert!(OuProcessSpec::new(1.0, 0, 1, 0).is_err());
        assert!(OuProcessSpec::new(1.0, 1, 0, 0).is_err());
    }

    #[test]
    fn identical_starts_give_zero() {
        let s = spec(6.0, 100);
        for inner in [InnerExpectation::ClosedForm, InnerExpectation::MonteCarlo] {
            assert_eq!(theorem1_rhs_numeric(&[1.0, 2.0], &[1.0, 2.0], &s, inner).unwrap(), 0.0);
        }
    }

    #[test]
    fn rhs_recovers_kl() {
        let s = OuProcessSpec::new(6.0, 2000, 10_000, 1).unwrap();
        let v = theorem1_rhs_numeric(&[1.0, 0.0], &[0.0, 0.0], &s, InnerExpectation::ClosedForm).unwrap();
        assert!((v - 0.5).abs() < 0.005, "{v}");
        let tail = theorem1_tail_residual(&[1.0, 0.0], &[0.0, 0.0], 6.0).unwrap();
        assert!((v + tail - 0.5).abs() < 1e-5);
    }

    #[test]
    fn quadrature_error_shrinks_with_doubling() {
        let mut last = f64::INFINITY;
        for steps in [50, 100, 200, 400] {
            let v = theorem1_rhs_numeric(&[1.0, -1.0], &[0.0, 0.5], &spec(8.0, steps), InnerExpectation::ClosedForm).unwrap();
            let err = (v - gaussian_kl_closed_form(&[1.0, -1.0], &[0.0, 0.5]).unwrap()).abs();
            assert!(err < last);
            last = err;
        }
    }

    #[test]
    fn rhs_nonnegative() {
        let v = theorem1_rhs_numeric(&[0.3], &[-0.2], &spec(2.0, 20), InnerExpectation::MonteCarlo).unwrap();
        assert!(v >= -1e-9);
    }

    #[test]
    fn zero_shift_path_is_constant() {
        let r = ot_path_check(&[0.0, 0.0], &[1.0, -1.0], &spec(5.0, 100)).unwrap();
        assert_eq!(r.max_path_error, 0.0);
        assert_eq!(r.endpoint_residual, 0.0);
        assert_eq!(r.max_velocity_error, 0.0);
        assert_eq!(r.max_acceleration_error, 0.0);
    }

    #[test]
    fn endpoint_reaches_translation() {
        let r = ot_path_check(&[2.0, 0.0], &[0.0, 0.0], &spec(10.0, 10_000)).unwrap();
        assert!(r.endpoint_residual < 1e-3, "{}", r.endpoint_residual);
        assert!(r.max_velocity_error < 1e-3);
    }

    #[test]
    fn proportionality() {
        let r = statistic_proportionality_check(&[1.0, 2.0], &[3.0, 4.0], &spec(6.0, 1000)).unwrap();
        assert!((r.closed_form[1] / r.closed_form[0] - 2.0).abs() < 1e-15);
        let r = statistic_proportionality_check(&[1.0, 2.0, 4.0, 8.0], &[0.0, 1.0], &spec(6.0, 1000)).unwrap();
        assert!(r.r_squared > 1.0 - 1e-9);
        assert!(r.max_relative_residual < 1e-6);
        let r = statistic_proportionality_check(&[0.0], &[1.0], &spec(6.0, 10)).unwrap();
        assert_eq!(r.closed_form, vec![0.0]);
        assert_eq!(r.numeric, vec![0.0]);
        assert!(statistic_proportionality_check(&[-1.0], &[1.0], &spec(6.0, 10)).is_err());
        assert!(statistic_proportionality_check(&[1.0], &[0.0], &spec(6.0, 10)).is_err());
    }
}
