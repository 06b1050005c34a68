//! ε-parameterized score functions, `ε(x, t) = −σ_t ∇ log p_t(x)`.

use crate::error::{check_dim, Error, Result};
use crate::schedule::NoiseSchedule;

/// Anything that predicts the noise ε for a state at a schedule index.
///
/// Implementations are pure: the same `(x, t)` always gives the same ε.
pub trait ScoreFunction: Send + Sync {
    fn dim(&self) -> usize;

    fn kind(&self) -> &'static str;

    fn epsilon(&self, schedule: &NoiseSchedule, x: &[f64], t: usize) -> Result<Vec<f64>>;
}

impl<S: ScoreFunction + ?Sized> ScoreFunction for &S {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn kind(&self) -> &'static str {
        (**self).kind()
    }
    fn epsilon(&self, schedule: &NoiseSchedule, x: &[f64], t: usize) -> Result<Vec<f64>> {
        (**self).epsilon(schedule, x, t)
    }
}

impl<S: ScoreFunction + ?Sized> ScoreFunction for Box<S> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn kind(&self) -> &'static str {
        (**self).kind()
    }
    fn epsilon(&self, schedule: &NoiseSchedule, x: &[f64], t: usize) -> Result<Vec<f64>> {
        (**self).epsilon(schedule, x, t)
    }
}

/// Diagonal-covariance Gaussian mixture in `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixtureSpec {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<Vec<f64>>,
}

impl GaussianMixtureSpec {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<Vec<f64>>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::param("mixture needs at least one component"));
        }
        if means.len() != weights.len() || variances.len() != weights.len() {
            return Err(Error::param("weights, means and variances differ in length"));
        }
        let dim = means[0].len();
        if dim == 0 {
            return Err(Error::param("mixture dimension must be positive"));
        }
        for (m, v) in means.iter().zip(&variances) {
            check_dim(dim, m.len())?;
            check_dim(dim, v.len())?;
            if v.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
                return Err(Error::param("covariance entries must be positive"));
            }
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::param("mixture weights must be nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::param(format!("mixture weights sum to {total}, not 1")));
        }
        Ok(Self {
            weights,
            means,
            variances,
        })
    }

    /// Single component `N(mean, I)`.
    pub fn isotropic(mean: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        Self::new(vec![1.0], vec![mean], vec![vec![1.0; d]])
    }

    /// Equal-weight pair `N(+m, I)`, `N(−m, I)`; symmetric under negation.
    pub fn symmetric_pair(mean: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        let neg = mean.iter().map(|v| -v).collect();
        Self::new(vec![0.5, 0.5], vec![mean, neg], vec![vec![1.0; d]; 2])
    }

    /// Build from flat row-major lists as stored in config files.
    pub fn from_flat(dim: usize, weights: Vec<f64>, means: &[f64], variances: &[f64]) -> Result<Self> {
        let k = weights.len();
        if dim == 0 || means.len() != k * dim || variances.len() != k * dim {
            return Err(Error::param(format!(
                "flat mixture lists need {} entries for {k} components in {dim} dims",
                k * dim
            )));
        }
        Self::new(
            weights,
            means.chunks(dim).map(<[f64]>::to_vec).collect(),
            variances.chunks(dim).map(<[f64]>::to_vec).collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn variances(&self) -> &[Vec<f64>] {
        &self.variances
    }

    /// Per-component log weight + log density of the diffused marginal at `(x, t)`,
    /// together with each component's mean and variance at that time.
    fn diffused_terms(&self, schedule: &NoiseSchedule, x: &[f64], t: usize) -> Vec<(f64, Vec<f64>, Vec<f64>)> {
        let scale = schedule.alpha_bar(t).sqrt();
        let a = schedule.alpha_bar(t);
        let s2 = schedule.sigma(t).powi(2);
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.variances)
            .map(|((&w, mean), var)| {
                let m: Vec<f64> = mean.iter().map(|v| scale * v).collect();
                let v: Vec<f64> = var.iter().map(|v| a * v + s2).collect();
                let mut log = w.ln();
                for i in 0..x.len() {
                    let r = x[i] - m[i];
                    log -= 0.5 * ((2.0 * std::f64::consts::PI * v[i]).ln() + r * r / v[i]);
                }
                (log, m, v)
            })
            .collect()
    }

    /// `log p_t(x)` of the diffused mixture.
    pub fn log_marginal_density(&self, schedule: &NoiseSchedule, x: &[f64], t: usize) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        let logs: Vec<f64> = self
            .diffused_terms(schedule, x, t)
            .into_iter()
            .map(|(l, _, _)| l)
            .collect();
        Ok(log_sum_exp(&logs))
    }

    /// `−σ_t ∇ log p_t(x)` where `p_t` has components `N(√ᾱ_t μ_k, ᾱ_t Σ_k + σ_t² I)`.
    pub fn epsilon_at(&self, schedule: &NoiseSchedule, x: &[f64], t: usize) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        let terms = self.diffused_terms(schedule, x, t);
        let logs: Vec<f64> = terms.iter().map(|(l, _, _)| *l).collect();
        let norm = log_sum_exp(&logs);
        let sigma = schedule.sigma(t);
        let mut eps = vec![0.0; x.len()];
        for (log, m, v) in &terms {
            let r = (log - norm).exp();
            if r == 0.0 {
                continue;
            }
            for i in 0..x.len() {
                eps[i] += r * (x[i] - m[i]) / v[i];
            }
        }
        eps.iter_mut().for_each(|e| *e *= sigma);
        Ok(eps)
    }
}

/// Free-function form of [`GaussianMixtureSpec::epsilon_at`].
pub fn analytic_gmm_epsilon(
    spec: &GaussianMixtureSpec,
    schedule: &NoiseSchedule,
    x: &[f64],
    t: usize,
) -> Result<Vec<f64>> {
    spec.epsilon_at(schedule, x, t)
}

impl ScoreFunction for GaussianMixtureSpec {
    fn dim(&self) -> usize {
        GaussianMixtureSpec::dim(self)
    }
    fn kind(&self) -> &'static str {
        "analytic_gmm"
    }
    fn epsilon(&self, schedule: &NoiseSchedule, x: &[f64], t: usize) -> Result<Vec<f64>> {
        self.epsilon_at(schedule, x, t)
    }
}

/// `x ↦ −ε(−x, t)`: the score of the sign-flipped distribution.
#[derive(Debug, Clone)]
pub struct NegationConjugate<S>(pub S);

pub fn negation_conjugate<S: ScoreFunction>(score: S) -> NegationConjugate<S> {
    NegationConjugate(score)
}

impl<S: ScoreFunction> ScoreFunction for NegationConjugate<S> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn kind(&self) -> &'static str {
        "negation_conjugate"
    }
    fn epsilon(&self, schedule: &NoiseSchedule, x: &[f64], t: usize) -> Result<Vec<f64>> {
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let mut eps = self.0.epsilon(schedule, &neg, t)?;
        eps.iter_mut().for_each(|e| *e = -*e);
        Ok(eps)
    }
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
