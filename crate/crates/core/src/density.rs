//! Density estimates over path statistics: Gaussian KDE and EM-fitted GMMs.
//!
//! Both report log-likelihoods, which serve directly as in-distribution
//! scores (higher means more typical of the training statistics).

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::score::log_sum_exp;

/// Relative covariance floor, scaled by the mean per-feature data variance.
pub const COVARIANCE_FLOOR: f64 = 1e-6;
const LLOYD_ITERS: usize = 100;
/// Loose enough for weights read back from single precision.
const WEIGHT_SUM_TOLERANCE: f64 = 1e-6;

fn check_points(points: &[Vec<f64>]) -> Result<usize> {
    let first = points.first().ok_or(Error::Empty("density training points"))?;
    let k = first.len();
    if k == 0 {
        return Err(Error::param("points must have at least one feature"));
    }
    for p in points {
        check_dim(k, p.len())?;
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite training point".into()));
        }
    }
    Ok(k)
}

/// Mean over features of the per-feature (biased) variance.
fn mean_feature_variance(points: &[Vec<f64>]) -> f64 {
    let n = points.len() as f64;
    let k = points[0].len();
    (0..k)
        .map(|j| {
            let mean = points.iter().map(|p| p[j]).sum::<f64>() / n;
            points.iter().map(|p| (p[j] - mean).powi(2)).sum::<f64>() / n
        })
        .sum::<f64>()
        / k as f64
}

// ---------------------------------------------------------------------------
// KDE
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct KdeModel {
    points: Vec<Vec<f64>>,
    bandwidth: f64,
}

/// Scott's rule `h = σ̄ · N^{−1/(k+4)}` with `σ̄²` the mean feature variance.
/// Falls back to `σ̄ = 1` for constant data.
pub fn scott_bandwidth(points: &[Vec<f64>]) -> Result<f64> {
    let k = check_points(points)?;
    let var = mean_feature_variance(points);
    let spread = if var > 0.0 { var.sqrt() } else { 1.0 };
    Ok(spread * (points.len() as f64).powf(-1.0 / (k as f64 + 4.0)))
}

/// Isotropic Gaussian-kernel KDE over `points` with bandwidth `h`.
pub fn kde_fit(points: &[Vec<f64>], bandwidth: f64) -> Result<KdeModel> {
    check_points(points)?;
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::param(format!("bandwidth must be positive, got {bandwidth}")));
    }
    Ok(KdeModel {
        points: points.to_vec(),
        bandwidth,
    })
}

impl KdeModel {
    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    /// `log (1/N Σ_i N(x; p_i, h² I))`.
    pub fn log_likelihood(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        let h2 = self.bandwidth * self.bandwidth;
        let log_norm = -0.5 * self.dim() as f64 * (2.0 * PI * h2).ln() - (self.points.len() as f64).ln();
        let terms: Vec<f64> = self
            .points
            .iter()
            .map(|p| -0.5 * p.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / h2)
            .collect();
        Ok(log_sum_exp(&terms) + log_norm)
    }
}

pub fn kde_log_likelihood(model: &KdeModel, x: &[f64]) -> Result<f64> {
    model.log_likelihood(x)
}

// ---------------------------------------------------------------------------
// GMM
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CovarianceType {
    Diagonal,
    Tied,
    Full,
}

impl CovarianceType {
    pub const ALL: [CovarianceType; 3] = [CovarianceType::Diagonal, CovarianceType::Tied, CovarianceType::Full];

    pub fn name(self) -> &'static str {
        match self {
            CovarianceType::Diagonal => "diagonal",
            CovarianceType::Tied => "tied",
            CovarianceType::Full => "full",
        }
    }

    pub(crate) fn code(self) -> u32 {
        match self {
            CovarianceType::Diagonal => 0,
            CovarianceType::Tied => 1,
            CovarianceType::Full => 2,
        }
    }

    pub(crate) fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(CovarianceType::Diagonal),
            1 => Ok(CovarianceType::Tied),
            2 => Ok(CovarianceType::Full),
            c => Err(Error::Format(format!("unknown covariance type code {c}"))),
        }
    }

    /// Free covariance parameters for `components` components in `dim` dimensions.
    fn parameter_count(self, components: usize, dim: usize) -> usize {
        match self {
            CovarianceType::Diagonal => components * dim,
            CovarianceType::Tied => dim * (dim + 1) / 2,
            CovarianceType::Full => components * dim * (dim + 1) / 2,
        }
    }
}

impl fmt::Display for CovarianceType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CovarianceType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diagonal" | "diag" => Ok(CovarianceType::Diagonal),
            "tied" => Ok(CovarianceType::Tied),
            "full" => Ok(CovarianceType::Full),
            other => Err(Error::Config(format!("unknown covariance type '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FitInfo {
    /// Total training log-likelihood after each accepted EM step (entry 0 is the initialization).
    pub history: Vec<f64>,
    pub iterations: usize,
    pub seed: u64,
}

impl FitInfo {
    pub fn final_log_likelihood(&self) -> f64 {
        self.history.last().copied().unwrap_or(f64::NAN)
    }
}

/// Cholesky factor and log-determinant of one covariance.
#[derive(Debug, Clone, PartialEq)]
struct Factor {
    lower: DMatrix<f64>,
    log_det: f64,
}

impl Factor {
    fn new(cov: &DMatrix<f64>) -> Result<Self> {
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numeric("covariance is not positive definite".into()))?;
        let lower = chol.l();
        let log_det = 2.0 * lower.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(Self { lower, log_det })
    }

    /// `log N(x; mean, Σ)`.
    fn log_pdf(&self, x: &[f64], mean: &[f64]) -> f64 {
        let k = x.len();
        let mut y = vec![0.0; k];
        let mut maha = 0.0;
        for i in 0..k {
            let mut acc = x[i] - mean[i];
            for j in 0..i {
                acc -= self.lower[(i, j)] * y[j];
            }
            y[i] = acc / self.lower[(i, i)];
            maha += y[i] * y[i];
        }
        -0.5 * (k as f64 * (2.0 * PI).ln() + self.log_det + maha)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    cov_type: CovarianceType,
    /// One matrix per component, or a single shared matrix when tied.
    covariances: Vec<DMatrix<f64>>,
    factors: Vec<Factor>,
    pub fit: FitInfo,
}

impl GmmModel {
    pub fn new(
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        cov_type: CovarianceType,
        covariances: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(Error::Empty("mixture components"));
        }
        check_dim(k, means.len())?;
        let dim = means[0].len();
        for m in &means {
            check_dim(dim, m.len())?;
        }
        check_dim(if cov_type == CovarianceType::Tied { 1 } else { k }, covariances.len())?;
        for c in &covariances {
            check_dim(dim, c.nrows())?;
            check_dim(dim, c.ncols())?;
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(*w >= 0.0)) || (total - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(Error::param("mixture weights must form a simplex"));
        }
        let factors = covariances.iter().map(Factor::new).collect::<Result<_>>()?;
        Ok(Self {
            weights,
            means,
            cov_type,
            covariances,
            factors,
            fit: FitInfo::default(),
        })
    }

    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn cov_type(&self) -> CovarianceType {
        self.cov_type
    }

    pub fn covariances(&self) -> &[DMatrix<f64>] {
        &self.covariances
    }

    /// Covariance of component `k`.
    pub fn covariance(&self, k: usize) -> &DMatrix<f64> {
        match self.cov_type {
            CovarianceType::Tied => &self.covariances[0],
            _ => &self.covariances[k],
        }
    }

    fn factor(&self, k: usize) -> &Factor {
        match self.cov_type {
            CovarianceType::Tied => &self.factors[0],
            _ => &self.factors[k],
        }
    }

    fn weighted_log_pdfs(&self, x: &[f64]) -> Vec<f64> {
        (0..self.num_components())
            .map(|k| self.weights[k].ln() + self.factor(k).log_pdf(x, &self.means[k]))
            .collect()
    }

    pub fn log_likelihood(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok(log_sum_exp(&self.weighted_log_pdfs(x)))
    }

    pub fn total_log_likelihood(&self, points: &[Vec<f64>]) -> Result<f64> {
        points.iter().map(|p| self.log_likelihood(p)).sum()
    }

    /// Number of free parameters: weights, means and covariances.
    pub fn parameter_count(&self) -> usize {
        let (k, d) = (self.num_components(), self.dim());
        (k - 1) + k * d + self.cov_type.parameter_count(k, d)
    }

    /// `−2·LL + p·ln N` on `points`.
    pub fn bic(&self, points: &[Vec<f64>]) -> Result<f64> {
        let ll = self.total_log_likelihood(points)?;
        Ok(-2.0 * ll + self.parameter_count() as f64 * (points.len() as f64).ln())
    }
}

pub fn gmm_log_likelihood(model: &GmmModel, x: &[f64]) -> Result<f64> {
    model.log_likelihood(x)
}

/// Smallest allowed covariance eigenvalue for `points`.
fn covariance_floor(points: &[Vec<f64>]) -> f64 {
    let scale = mean_feature_variance(points);
    COVARIANCE_FLOOR * if scale > 0.0 { scale } else { 1.0 }
}

/// Raise eigenvalues below `floor` to `floor`; untouched when already above it.
fn clamp_eigenvalues(cov: DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(cov.clone());
    if eig.eigenvalues.iter().all(|v| *v >= floor) {
        return cov;
    }
    let clamped = eig.eigenvalues.map(|v| v.max(floor));
    let u = &eig.eigenvectors;
    u * DMatrix::from_diagonal(&clamped) * u.transpose()
}

/// Maximization step from responsibilities `resp` (N × K).
fn m_step(points: &[Vec<f64>], resp: &[Vec<f64>], cov_type: CovarianceType, floor: f64) -> Result<GmmModel> {
    let n = points.len();
    let dim = points[0].len();
    let k = resp[0].len();
    let nk: Vec<f64> = (0..k)
        .map(|c| resp.iter().map(|r| r[c]).sum::<f64>() + 10.0 * f64::EPSILON)
        .collect();
    let total: f64 = nk.iter().sum();
    let weights: Vec<f64> = nk.iter().map(|v| v / total).collect();
    let means: Vec<Vec<f64>> = (0..k)
        .map(|c| {
            let mut m = vec![0.0; dim];
            for (p, r) in points.iter().zip(resp) {
                for j in 0..dim {
                    m[j] += r[c] * p[j];
                }
            }
            m.iter_mut().for_each(|v| *v /= nk[c]);
            m
        })
        .collect();
    let scatter = |c: usize| {
        let mut s = DMatrix::<f64>::zeros(dim, dim);
        for (p, r) in points.iter().zip(resp) {
            let diff = DVector::from_iterator(dim, p.iter().zip(&means[c]).map(|(a, b)| a - b));
            s += r[c] * &diff * diff.transpose();
        }
        s
    };
    let covariances = match cov_type {
        CovarianceType::Full => (0..k).map(|c| clamp_eigenvalues(scatter(c) / nk[c], floor)).collect(),
        CovarianceType::Diagonal => (0..k)
            .map(|c| {
                let mut diag = vec![0.0; dim];
                for (p, r) in points.iter().zip(resp) {
                    for j in 0..dim {
                        diag[j] += r[c] * (p[j] - means[c][j]).powi(2);
                    }
                }
                DMatrix::from_diagonal(&DVector::from_iterator(
                    dim,
                    diag.iter().map(|v| (v / nk[c]).max(floor)),
                ))
            })
            .collect(),
        CovarianceType::Tied => {
            let mut s = DMatrix::<f64>::zeros(dim, dim);
            for c in 0..k {
                s += scatter(c);
            }
            vec![clamp_eigenvalues(s / n as f64, floor)]
        }
    };
    GmmModel::new(weights, means, cov_type, covariances)
}

/// Responsibilities and total log-likelihood.
fn e_step(model: &GmmModel, points: &[Vec<f64>]) -> (Vec<Vec<f64>>, f64) {
    let mut total = 0.0;
    let resp = points
        .iter()
        .map(|p| {
            let logs = model.weighted_log_pdfs(p);
            let norm = log_sum_exp(&logs);
            total += norm;
            logs.iter().map(|l| (l - norm).exp()).collect()
        })
        .collect();
    (resp, total)
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// k-means++ seeding followed by Lloyd iterations; returns hard assignments.
fn kmeans_assignments(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = points.len();
    let mut centers = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| squared_distance(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if target < *d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.push(points[idx].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(squared_distance(p, &centers[centers.len() - 1]));
        }
    }
    let nearest = |p: &[f64], centers: &[Vec<f64>]| {
        let mut best = (0, f64::INFINITY);
        for (c, center) in centers.iter().enumerate() {
            let d = squared_distance(p, center);
            if d < best.1 {
                best = (c, d);
            }
        }
        best.0
    };
    let mut assign: Vec<usize> = points.iter().map(|p| nearest(p, &centers)).collect();
    for _ in 0..LLOYD_ITERS {
        let dim = points[0].len();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assign) {
            counts[a] += 1;
            sums[a].iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centers)).collect();
        if next == assign {
            break;
        }
        assign = next;
    }
    assign
}

/// Options for a single EM fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmOptions {
    pub max_iters: usize,
    /// Minimum gain in total log-likelihood for a step to be kept.
    pub tol: f64,
    pub seed: u64,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            max_iters: 200,
            tol: 1e-6,
            seed: 0,
        }
    }
}

/// Fit a `components`-component mixture by EM from a k-means initialization.
///
/// A step whose gain in total log-likelihood falls below `tol` ends the fit and
/// is discarded, so `tol = ∞` returns the initialization itself.
pub fn gmm_fit_em(points: &[Vec<f64>], components: usize, cov_type: CovarianceType, opts: EmOptions) -> Result<GmmModel> {
    check_points(points)?;
    if components == 0 {
        return Err(Error::param("need at least one mixture component"));
    }
    if points.len() < components {
        return Err(Error::param(format!(
            "{} points cannot support {components} components",
            points.len()
        )));
    }
    let floor = covariance_floor(points);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let assign = kmeans_assignments(points, components, &mut rng);
    let hard: Vec<Vec<f64>> = assign
        .iter()
        .map(|&a| (0..components).map(|c| if c == a { 1.0 } else { 0.0 }).collect())
        .collect();
    let mut model = m_step(points, &hard, cov_type, floor)?;
    let (mut resp, mut ll) = e_step(&model, points);
    let mut history = vec![ll];
    let mut iterations = 0;
    while iterations < opts.max_iters {
        let candidate = m_step(points, &resp, cov_type, floor)?;
        let (next_resp, next_ll) = e_step(&candidate, points);
        if !next_ll.is_finite() {
            return Err(Error::Numeric("EM produced a non-finite log-likelihood".into()));
        }
        if !(next_ll - ll >= opts.tol) {
            break;
        }
        model = candidate;
        resp = next_resp;
        ll = next_ll;
        history.push(ll);
        iterations += 1;
    }
    model.fit = FitInfo {
        history,
        iterations,
        seed: opts.seed,
    };
    Ok(model)
}

/// Fit every `(K, covariance type)` pair and keep the lowest BIC.
///
/// Ties go to the smaller K, then to the earlier covariance type
/// (diagonal, tied, full).
pub fn gmm_select(
    points: &[Vec<f64>],
    k_grid: &[usize],
    cov_types: &[CovarianceType],
    opts: EmOptions,
) -> Result<GmmModel> {
    if k_grid.is_empty() || cov_types.is_empty() {
        return Err(Error::param("model selection grids must be nonempty"));
    }
    let mut pairs: Vec<(usize, CovarianceType)> = k_grid
        .iter()
        .flat_map(|&k| cov_types.iter().map(move |&c| (k, c)))
        .collect();
    pairs.sort();
    pairs.dedup();
    let fits: Vec<(f64, GmmModel)> = pairs
        .par_iter()
        .map(|&(k, c)| {
            let model = gmm_fit_em(points, k, c, opts)?;
            Ok((model.bic(points)?, model))
        })
        .collect::<Result<_>>()?;
    let mut best: Option<(f64, GmmModel)> = None;
    for (bic, model) in fits {
        if best.as_ref().is_none_or(|(b, _)| bic < *b) {
            best = Some((bic, model));
        }
    }
    Ok(best.expect("grid is nonempty").1)
}

/// A fitted density over statistics.
#[derive(Debug, Clone, PartialEq)]
pub enum DensityModel {
    Kde(KdeModel),
    Gmm(GmmModel),
}

impl DensityModel {
    pub fn dim(&self) -> usize {
        match self {
            DensityModel::Kde(m) => m.dim(),
            DensityModel::Gmm(m) => m.dim(),
        }
    }

    pub fn log_likelihood(&self, x: &[f64]) -> Result<f64> {
        match self {
            DensityModel::Kde(m) => m.log_likelihood(x),
            DensityModel::Gmm(m) => m.log_likelihood(x),
        }
    }
}
