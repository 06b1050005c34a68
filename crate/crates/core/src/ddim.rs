//! Forward (inversion) integration of the DDIM ODE `dx̄ = ε(x, t) dγ`, with
//! `x̄ = x √(1 + γ²) = x / √ᾱ`.
//!
//! Explicit Euler with ε evaluated at the left end of each step:
//! `x̄_{n+1} = x̄_n + (γ_{n+1} − γ_n) ε(x_n, t_n)`. The data point is placed at
//! the first grid index and ε is also evaluated at the final state, giving
//! one evaluation per grid point.

use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::schedule::{NoiseSchedule, TimestepGrid};
use crate::score::ScoreFunction;

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: TimestepGrid,
    pub states: Vec<Vec<f64>>,
    pub epsilons: Vec<Vec<f64>>,
    /// Finite-difference `∂ₜε`, one fewer than `epsilons`.
    pub eps_time_derivs: Vec<Vec<f64>>,
}

impl Trajectory {
    /// Build from raw parts, checking shapes; derivatives are recomputed from `epsilons`.
    pub fn from_parts(grid: TimestepGrid, states: Vec<Vec<f64>>, epsilons: Vec<Vec<f64>>) -> Result<Self> {
        check_dim(grid.len(), states.len())?;
        check_dim(grid.len(), epsilons.len())?;
        let d = states[0].len();
        for v in states.iter().chain(&epsilons) {
            check_dim(d, v.len())?;
        }
        let eps_time_derivs = finite_difference_eps_derivative(&epsilons, &grid)?;
        Ok(Self {
            grid,
            states,
            epsilons,
            eps_time_derivs,
        })
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("trajectory is never empty")
    }

    /// `x̄_n = x_n √(1 + γ_n²)`.
    pub fn rescaled_state(&self, n: usize) -> Vec<f64> {
        let scale = (1.0 + self.grid.gamma_values()[n].powi(2)).sqrt();
        self.states[n].iter().map(|v| v * scale).collect()
    }

    /// Elementwise negation of states, ε and derivatives.
    pub fn negated(&self) -> Self {
        let neg = |vs: &Vec<Vec<f64>>| vs.iter().map(|v| v.iter().map(|x| -x).collect()).collect();
        Self {
            grid: self.grid.clone(),
            states: neg(&self.states),
            epsilons: neg(&self.epsilons),
            eps_time_derivs: neg(&self.eps_time_derivs),
        }
    }
}

/// `(ε_{n+1} − ε_n) / Δt_n` along the grid, in continuous time.
pub fn finite_difference_eps_derivative(epsilons: &[Vec<f64>], grid: &TimestepGrid) -> Result<Vec<Vec<f64>>> {
    if grid.len() < 2 {
        return Err(Error::param("finite differences need at least two grid points"));
    }
    check_dim(grid.len(), epsilons.len())?;
    Ok(epsilons
        .windows(2)
        .zip(grid.delta_ts())
        .map(|(pair, dt)| pair[1].iter().zip(&pair[0]).map(|(b, a)| (b - a) / dt).collect())
        .collect())
}

fn finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Integrate one sample from the first grid index to `T`.
pub fn integrate_forward<S: ScoreFunction + ?Sized>(
    x0: &[f64],
    score: &S,
    schedule: &NoiseSchedule,
    grid: &TimestepGrid,
) -> Result<Trajectory> {
    check_dim(score.dim(), x0.len())?;
    if !finite(x0) {
        return Err(Error::Integration { step: 0 });
    }
    let n = grid.len();
    let gammas = grid.gamma_values();
    let mut states = Vec::with_capacity(n);
    let mut epsilons = Vec::with_capacity(n);
    let mut x = x0.to_vec();
    for (step, &t) in grid.indices().iter().enumerate() {
        let eps = score.epsilon(schedule, &x, t)?;
        check_dim(x.len(), eps.len())?;
        if !finite(&eps) {
            return Err(Error::Integration { step });
        }
        if step + 1 < n {
            let scale = (1.0 + gammas[step].powi(2)).sqrt();
            let next_scale = (1.0 + gammas[step + 1].powi(2)).sqrt();
            let h = gammas[step + 1] - gammas[step];
            let next: Vec<f64> = x
                .iter()
                .zip(&eps)
                .map(|(xi, ei)| (xi * scale + h * ei) / next_scale)
                .collect();
            if !finite(&next) {
                return Err(Error::Integration { step: step + 1 });
            }
            states.push(std::mem::replace(&mut x, next));
        } else {
            states.push(x.clone());
        }
        epsilons.push(eps);
    }
    let eps_time_derivs = finite_difference_eps_derivative(&epsilons, grid)?;
    Ok(Trajectory {
        grid: grid.clone(),
        states,
        epsilons,
        eps_time_derivs,
    })
}

/// [`integrate_forward`] over many samples in parallel; output order follows input order.
pub fn integrate_batch<S: ScoreFunction + ?Sized>(
    samples: &[Vec<f64>],
    score: &S,
    schedule: &NoiseSchedule,
    grid: &TimestepGrid,
) -> Result<Vec<Trajectory>> {
    samples
        .par_iter()
        .map(|x0| integrate_forward(x0, score, schedule, grid))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::cosine_alpha_bar;
    use crate::score::{GaussianMixtureSpec, NegationConjugate};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn linear() -> NoiseSchedule {
        NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap()
    }

    /// ε that ignores x and is linear in continuous time: ε(t) = base + slope·t.
    struct LinearInTime {
        base: Vec<f64>,
        slope: Vec<f64>,
    }

    impl ScoreFunction for LinearInTime {
        fn dim(&self) -> usize {
            self.base.len()
        }
        fn kind(&self) -> &'static str {
            "test"
        }
        fn epsilon(&self, s: &NoiseSchedule, _x: &[f64], t: usize) -> Result<Vec<f64>> {
            let tc = s.continuous_time(t);
            Ok(self.base.iter().zip(&self.slope).map(|(b, v)| b + v * tc).collect())
        }
    }

    #[test]
    fn stationary_standard_normal_path() {
        let s = linear();
        let spec = GaussianMixtureSpec::isotropic(vec![0.0, 0.0]).unwrap();
        let grid = TimestepGrid::uniform(&s, 1000).unwrap();
        let x0 = [0.9, -1.4];
        let traj = integrate_forward(&x0, &spec, &s, &grid).unwrap();
        let end = traj.final_state();
        for i in 0..2 {
            assert!((end[i] - x0[i]).abs() < 2e-2 * x0[i].abs(), "{end:?}");
        }
        assert_eq!(traj.states.len(), 1000);
        assert_eq!(traj.eps_time_derivs.len(), 999);
    }

    #[test]
    fn derivatives_of_constant_and_linear_eps() {
        let s = linear();
        let grid = TimestepGrid::uniform(&s, 25).unwrap();
        let flat = LinearInTime {
            base: vec![1.0, -2.0],
            slope: vec![0.0, 0.0],
        };
        let traj = integrate_forward(&[0.0, 0.0], &flat, &s, &grid).unwrap();
        assert!(traj.eps_time_derivs.iter().flatten().all(|v| *v == 0.0));

        let ramp = LinearInTime {
            base: vec![0.5, 0.0],
            slope: vec![3.0, -1.5],
        };
        let traj = integrate_forward(&[0.0, 0.0], &ramp, &s, &grid).unwrap();
        for d in &traj.eps_time_derivs {
            assert!((d[0] - 3.0).abs() < 1e-9 && (d[1] + 1.5).abs() < 1e-9, "{d:?}");
        }
    }

    #[test]
    fn derivative_needs_two_points() {
        let s = linear();
        let grid = TimestepGrid::uniform(&s, 4).unwrap();
        assert!(finite_difference_eps_derivative(&[vec![1.0]], &grid).is_err());
    }

    #[test]
    fn derivative_tracks_closed_form_for_gaussian() {
        // cosine schedule: ᾱ(u) continuous, so σ'(u) is available in closed form
        let s = NoiseSchedule::cosine(1000).unwrap();
        let a = vec![2.0, 0.0];
        let spec = GaussianMixtureSpec::isotropic(a.clone()).unwrap();
        for nfe in [25, 50, 100] {
            let grid = TimestepGrid::uniform(&s, nfe).unwrap();
            let traj = integrate_forward(&[1.0, 0.5], &spec, &s, &grid).unwrap();
            let mut err = 0.0;
            let mut norm = 0.0;
            // the forward difference is centred between grid points; the first
            // interval is skipped because σ' is singular at u = 0
            for (n, d) in traj.eps_time_derivs.iter().enumerate().skip(1) {
                let u0 = s.continuous_time(grid.indices()[n]);
                let u = 0.5 * (u0 + s.continuous_time(grid.indices()[n + 1]));
                let ab = cosine_alpha_bar(u);
                let ab0 = cosine_alpha_bar(u0);
                // ᾱ'(u) = f'(u)/f(0), f(u) = cos²θ(u), θ = (u + s)/(1 + s)·π/2
                let theta = |u: f64| (u + 0.008) / 1.008 * std::f64::consts::FRAC_PI_2;
                let f0 = theta(0.0).cos().powi(2);
                let dab = -(2.0 * theta(u)).sin() * std::f64::consts::FRAC_PI_2 / 1.008 / f0;
                let sigma = (1.0 - ab).sqrt();
                let dsigma = -dab / (2.0 * sigma);
                let x = &traj.states[n];
                // along the exact path x − √ᾱ a is constant, so only σ varies
                for i in 0..2 {
                    let exact = dsigma * (x[i] - ab0.sqrt() * a[i]);
                    err += (d[i] - exact).powi(2);
                    norm += exact.powi(2);
                }
            }
            let rel = (err / norm).sqrt();
            assert!(rel < 2.0 / nfe as f64, "nfe={nfe}: rel={rel}");
        }
    }

    #[test]
    fn transports_gaussian_to_standard_normal() {
        let s = linear();
        let spec = GaussianMixtureSpec::isotropic(vec![2.0, 0.0]).unwrap();
        let grid = TimestepGrid::uniform(&s, 100).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let samples: Vec<Vec<f64>> = (0..1024)
            .map(|_| {
                let a: f64 = StandardNormal.sample(&mut rng);
                let b: f64 = StandardNormal.sample(&mut rng);
                vec![2.0 + a, b]
            })
            .collect();
        let trajs = integrate_batch(&samples, &spec, &s, &grid).unwrap();
        let mean0: f64 = trajs.iter().map(|t| t.final_state()[0]).sum::<f64>() / 1024.0;
        assert!(mean0.abs() < 0.15, "{mean0}");
    }

    #[test]
    fn negation_equivariance_under_symmetric_score() {
        let s = linear();
        let spec = GaussianMixtureSpec::symmetric_pair(vec![1.5, -0.5]).unwrap();
        let grid = TimestepGrid::uniform(&s, 20).unwrap();
        let x0 = [0.7, 1.1];
        let a = integrate_forward(&x0, &spec, &s, &grid).unwrap();
        let b = integrate_forward(&[-0.7, -1.1], &spec, &s, &grid).unwrap();
        let na = a.negated();
        for (p, q) in na.states.iter().flatten().zip(b.states.iter().flatten()) {
            assert!((p - q).abs() < 1e-10);
        }
        for (p, q) in na.epsilons.iter().flatten().zip(b.epsilons.iter().flatten()) {
            assert!((p - q).abs() < 1e-10);
        }
    }

    #[test]
    fn conjugate_score_mirrors_path() {
        let s = linear();
        let spec = GaussianMixtureSpec::isotropic(vec![2.0, 1.0]).unwrap();
        let grid = TimestepGrid::uniform(&s, 10).unwrap();
        let a = integrate_forward(&[2.5, 0.0], &spec, &s, &grid).unwrap();
        let b = integrate_forward(&[-2.5, 0.0], &NegationConjugate(&spec), &s, &grid).unwrap();
        for (p, q) in a.states.iter().flatten().zip(b.states.iter().flatten()) {
            assert!((p + q).abs() < 1e-12);
        }
    }

    #[test]
    fn euler_converges_first_order() {
        let s = NoiseSchedule::linear(1025, 1e-4, 0.02).unwrap();
        let a = [2.0, 0.0];
        let spec = GaussianMixtureSpec::isotropic(a.to_vec()).unwrap();
        let x0 = [0.5, -0.3];
        // exact path keeps x − √ᾱ a constant
        let exact: Vec<f64> = (0..2)
            .map(|i| x0[i] - s.alpha_bar(1).sqrt() * a[i] + s.alpha_bar(1025).sqrt() * a[i])
            .collect();
        let err = |nfe: usize| {
            let grid = TimestepGrid::from_indices(&s, (0..nfe).map(|k| 1 + k * 1024 / (nfe - 1)).collect()).unwrap();
            let traj = integrate_forward(&x0, &spec, &s, &grid).unwrap();
            let end = traj.final_state();
            ((end[0] - exact[0]).powi(2) + (end[1] - exact[1]).powi(2)).sqrt()
        };
        let errs: Vec<f64> = [65, 129, 257, 513].iter().map(|&n| err(n)).collect();
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((ratio - 2.0).abs() < 0.4, "errors {errs:?}");
        }
    }

    #[test]
    fn rejects_non_finite() {
        let s = linear();
        let spec = GaussianMixtureSpec::isotropic(vec![0.0]).unwrap();
        let grid = TimestepGrid::uniform(&s, 5).unwrap();
        assert!(matches!(
            integrate_forward(&[f64::NAN], &spec, &s, &grid),
            Err(Error::Integration { step: 0 })
        ));
    }
}
