//! Discretized variance-preserving noise schedules.
//!
//! A schedule holds, for every step `t ∈ 1..=T`, the per-step noise `β_t`,
//! the cumulative signal level `ᾱ_t = ∏_{s≤t}(1 − β_s)`, the noise level
//! `σ_t = √(1 − ᾱ_t)` and the DDIM time variable `γ_t = σ_t / √ᾱ_t`.
//! Index `t = 0` is the clean-data boundary (`ᾱ = 1`, `σ = γ = 0`) and is
//! accepted by every accessor.
//!
//! Continuous time is a uniform map of the index: `t_k = k / T · t_max`.

use crate::error::{check_dim, Error, Result};

/// Offset used by the squared-cosine profile.
pub const COSINE_OFFSET: f64 = 0.008;
/// Upper clamp on per-step β for the cosine profile.
pub const COSINE_MAX_BETA: f64 = 0.999;

pub const DEFAULT_STEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    Linear,
    Cosine,
    Custom,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
    sigmas: Vec<f64>,
    gammas: Vec<f64>,
    continuous_horizon: f64,
}

/// `γ = √((1 − ᾱ)/ᾱ)`; zero at `ᾱ = 1`.
pub fn gamma_from_alpha_bar(alpha_bar: f64) -> f64 {
    ((1.0 - alpha_bar) / alpha_bar).max(0.0).sqrt()
}

impl NoiseSchedule {
    /// Build a schedule from an explicit β sequence.
    pub fn from_betas(betas: Vec<f64>, kind: ScheduleKind) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::param("schedule needs at least one step"));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::param(format!("beta {b} outside (0, 1)")));
        }
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        if *alpha_bars.last().unwrap() <= 0.0 {
            return Err(Error::param("cumulative alpha underflowed to zero"));
        }
        let sigmas = alpha_bars.iter().map(|a| (1.0 - a).sqrt()).collect();
        let gammas = alpha_bars.iter().map(|&a| gamma_from_alpha_bar(a)).collect();
        Ok(Self {
            kind,
            betas,
            alpha_bars,
            sigmas,
            gammas,
            continuous_horizon: 1.0,
        })
    }

    /// Linearly spaced β from `beta_start` to `beta_end` over `steps` steps.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::param("schedule needs at least one step"));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::param(format!(
                "need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"
            )));
        }
        let betas = if steps == 1 {
            vec![beta_start]
        } else {
            let span = beta_end - beta_start;
            (0..steps)
                .map(|i| beta_start + span * i as f64 / (steps - 1) as f64)
                .collect()
        };
        Self::from_betas(betas, ScheduleKind::Linear)
    }

    /// Squared-cosine profile `ᾱ(u) = f(u)/f(0)`, `f(u) = cos²(((u + s)/(1 + s))·π/2)`,
    /// with per-step β clamped to [`COSINE_MAX_BETA`].
    pub fn cosine(steps: usize) -> Result<Self> {
        if steps < 2 {
            return Err(Error::param("cosine schedule needs at least two steps"));
        }
        let betas = (0..steps)
            .map(|i| {
                let a0 = cosine_alpha_bar(i as f64 / steps as f64);
                let a1 = cosine_alpha_bar((i + 1) as f64 / steps as f64);
                (1.0 - a1 / a0).clamp(f64::MIN_POSITIVE, COSINE_MAX_BETA)
            })
            .collect();
        Self::from_betas(betas, ScheduleKind::Cosine)
    }

    /// Override the continuous-time length (default 1).
    pub fn with_horizon(mut self, t_max: f64) -> Result<Self> {
        if !(t_max > 0.0 && t_max.is_finite()) {
            return Err(Error::param(format!("t_max must be positive, got {t_max}")));
        }
        self.continuous_horizon = t_max;
        Ok(self)
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn num_steps(&self) -> usize {
        self.betas.len()
    }

    pub fn continuous_horizon(&self) -> f64 {
        self.continuous_horizon
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn gammas(&self) -> &[f64] {
        &self.gammas
    }

    fn check_index(&self, t: usize) {
        assert!(
            t <= self.num_steps(),
            "timestep {t} outside 0..={}",
            self.num_steps()
        );
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.check_index(t);
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.check_index(t);
        if t == 0 {
            0.0
        } else {
            self.sigmas[t - 1]
        }
    }

    pub fn gamma(&self, t: usize) -> f64 {
        self.check_index(t);
        if t == 0 {
            0.0
        } else {
            self.gammas[t - 1]
        }
    }

    /// Continuous time of index `t`.
    pub fn continuous_time(&self, t: usize) -> f64 {
        t as f64 / self.num_steps() as f64 * self.continuous_horizon
    }

    /// Fraction `t / T`, the time input of learned score networks.
    pub fn time_fraction(&self, t: usize) -> f64 {
        t as f64 / self.num_steps() as f64
    }

    /// Draw from `q(x_t | x_0) = N(√ᾱ_t x_0, σ_t² I)` given a unit-normal `noise`.
    pub fn forward_marginal_sample(&self, x0: &[f64], t: usize, noise: &[f64]) -> Result<Vec<f64>> {
        check_dim(x0.len(), noise.len())?;
        if t == 0 || t > self.num_steps() {
            return Err(Error::param(format!(
                "timestep {t} outside 1..={}",
                self.num_steps()
            )));
        }
        let scale = self.alpha_bar(t).sqrt();
        let sigma = self.sigma(t);
        Ok(x0
            .iter()
            .zip(noise)
            .map(|(x, n)| scale * x + sigma * n)
            .collect())
    }
}

/// Continuous squared-cosine `ᾱ(u)` for `u ∈ [0, 1]`.
pub fn cosine_alpha_bar(u: f64) -> f64 {
    let f = |u: f64| {
        let angle = (u + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * std::f64::consts::FRAC_PI_2;
        angle.cos().powi(2)
    };
    f(u) / f(0.0)
}

/// Indices of the schedule visited by DDIM inversion.
#[derive(Debug, Clone, PartialEq)]
pub struct TimestepGrid {
    indices: Vec<usize>,
    gamma_values: Vec<f64>,
    delta_ts: Vec<f64>,
}

impl TimestepGrid {
    /// Uniform subsequence of `1..=T` with `nfe` entries, first `1`, last `T`.
    pub fn uniform(schedule: &NoiseSchedule, nfe: usize) -> Result<Self> {
        let steps = schedule.num_steps();
        if nfe < 2 || nfe > steps {
            return Err(Error::param(format!("nfe must be in 2..={steps}, got {nfe}")));
        }
        let stride = (steps - 1) as f64 / (nfe - 1) as f64;
        let indices: Vec<usize> = (0..nfe)
            .map(|k| 1 + (k as f64 * stride).round() as usize)
            .collect();
        Self::from_indices(schedule, indices)
    }

    /// Grid over explicit indices (strictly increasing, in `1..=T`, at least two).
    pub fn from_indices(schedule: &NoiseSchedule, indices: Vec<usize>) -> Result<Self> {
        if indices.len() < 2 {
            return Err(Error::param("grid needs at least two timesteps"));
        }
        if indices[0] == 0 || *indices.last().unwrap() > schedule.num_steps() {
            return Err(Error::param("grid indices must lie in 1..=T"));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::param("grid indices must be strictly increasing"));
        }
        let gamma_values = indices.iter().map(|&t| schedule.gamma(t)).collect();
        let delta_ts = indices
            .windows(2)
            .map(|w| schedule.continuous_time(w[1]) - schedule.continuous_time(w[0]))
            .collect();
        Ok(Self {
            indices,
            gamma_values,
            delta_ts,
        })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn gamma_values(&self) -> &[f64] {
        &self.gamma_values
    }

    pub fn delta_ts(&self) -> &[f64] {
        &self.delta_ts
    }
}
