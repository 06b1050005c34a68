//! Denoising score matching for [`MlpScoreNet`].

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::mlp::MlpScoreNet;
use crate::schedule::NoiseSchedule;

/// Rows per parallel work unit; fixed so gradient sums do not depend on the thread count.
const CHUNK: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Steps between loss-curve entries.
    pub report_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 256,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            report_every: 100,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.report_every == 0 {
            return Err(Error::param("batch size and report interval must be positive"));
        }
        if !(self.learning_rate > 0.0) || !(self.adam_eps > 0.0) {
            return Err(Error::param("learning rate and adam epsilon must be positive"));
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return Err(Error::param("moment constants must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// One DSM training example: `x_t`, its index and the target noise.
struct Draw {
    x_t: Vec<f64>,
    t: usize,
    noise: Vec<f64>,
}

fn draw_batch<R: Rng>(schedule: &NoiseSchedule, rows: &[&[f64]], rng: &mut R) -> Result<Vec<Draw>> {
    rows.iter()
        .map(|x0| {
            let t = rng.random_range(1..=schedule.num_steps());
            let noise: Vec<f64> = (0..x0.len()).map(|_| rng.sample(StandardNormal)).collect();
            let x_t = schedule.forward_marginal_sample(x0, t, &noise)?;
            Ok(Draw { x_t, t, noise })
        })
        .collect()
}

fn check_batch(net: &MlpScoreNet, rows: &[&[f64]]) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::Empty("training batch"));
    }
    rows.iter().try_for_each(|r| check_dim(net.dim(), r.len()))
}

/// Mean over the batch of `‖ε_net(x_t, t) − ε‖²`, with `t` uniform on `1..=T`
/// and `ε` unit normal, all drawn from `seed`.
pub fn dsm_loss(net: &MlpScoreNet, schedule: &NoiseSchedule, batch: &[Vec<f64>], seed: u64) -> Result<f64> {
    let rows: Vec<&[f64]> = batch.iter().map(Vec::as_slice).collect();
    check_batch(net, &rows)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws = draw_batch(schedule, &rows, &mut rng)?;
    let mut total = 0.0;
    for d in &draws {
        let out = net.forward(&d.x_t, schedule.time_fraction(d.t))?;
        total += out.iter().zip(&d.noise).map(|(o, e)| (o - e).powi(2)).sum::<f64>();
    }
    Ok(total / draws.len() as f64)
}

/// [`dsm_loss`] together with its gradient with respect to the flat parameters.
pub fn dsm_loss_and_grad(
    net: &MlpScoreNet,
    schedule: &NoiseSchedule,
    batch: &[&[f64]],
    seed: u64,
) -> Result<(f64, Vec<f64>)> {
    check_batch(net, batch)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws = draw_batch(schedule, batch, &mut rng)?;
    let scale = 1.0 / draws.len() as f64;
    let partials: Vec<(f64, Vec<f64>)> = draws
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grad = vec![0.0; net.num_params()];
            let mut loss = 0.0;
            for d in chunk {
                let (out, cache) = net.forward_cached(&d.x_t, schedule.time_fraction(d.t));
                let resid: Vec<f64> = out.iter().zip(&d.noise).map(|(o, e)| o - e).collect();
                loss += resid.iter().map(|r| r * r).sum::<f64>();
                let g_out: Vec<f64> = resid.iter().map(|r| 2.0 * scale * r).collect();
                net.backward(&cache, &g_out, &mut grad);
            }
            (loss, grad)
        })
        .collect();
    let mut loss = 0.0;
    let mut grad = vec![0.0; net.num_params()];
    for (l, g) in partials {
        loss += l;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    Ok((loss * scale, grad))
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        self.step += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.step);
        let c2 = 1.0 - cfg.beta2.powi(self.step);
        for i in 0..params.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * grad[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= cfg.learning_rate * mh / (vh.sqrt() + cfg.adam_eps);
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: MlpScoreNet,
    /// `(step, mean loss since previous entry)`, one entry per report interval
    /// plus a final entry for any trailing partial interval.
    pub loss_curve: Vec<(usize, f64)>,
}

impl TrainOutcome {
    pub fn final_loss(&self) -> Option<f64> {
        self.loss_curve.last().map(|(_, l)| *l)
    }
}

/// Adam on the DSM objective over shuffled minibatches of `dataset`.
pub fn train(mut net: MlpScoreNet, schedule: &NoiseSchedule, dataset: &[Vec<f64>], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Empty("training dataset"));
    }
    for row in dataset {
        check_dim(net.dim(), row.len())?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = net.parameters();
    let mut adam = Adam::new(params.len());
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut loss_curve = Vec::new();
    let mut window = (0.0, 0usize);
    let mut step = 0;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&[f64]> = idx.iter().map(|&i| dataset[i].as_slice()).collect();
            let step_seed: u64 = rng.random();
            let (loss, grad) = dsm_loss_and_grad(&net, schedule, &batch, step_seed)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Training { epoch });
            }
            adam.update(&mut params, &grad, cfg);
            net.set_parameters(&params)?;
            step += 1;
            window.0 += loss;
            window.1 += 1;
            if step % cfg.report_every == 0 {
                loss_curve.push((step, window.0 / window.1 as f64));
                window = (0.0, 0);
            }
        }
    }
    if window.1 > 0 {
        loss_curve.push((step, window.0 / window.1 as f64));
    }
    Ok(TrainOutcome { net, loss_curve })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::{Dense, TimeEmbedding};
    use crate::score::GaussianMixtureSpec;
    use rand_distr::Distribution;

    fn gaussian_rows(n: usize, mean: [f64; 2], seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let a: f64 = StandardNormal.sample(&mut rng);
                let b: f64 = StandardNormal.sample(&mut rng);
                vec![mean[0] + a, mean[1] + b]
            })
            .collect()
    }

    #[test]
    fn zero_net_loss_is_dimension() {
        let s = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
        let net = MlpScoreNet::from_layers(2, TimeEmbedding::Scalar, vec![Dense::zeros(3, 4), Dense::zeros(4, 2)]).unwrap();
        let batch = gaussian_rows(20_000, [2.0, 0.0], 1);
        let loss = dsm_loss(&net, &s, &batch, 7).unwrap();
        assert!((loss - 2.0).abs() < 0.06, "{loss}");
    }

    #[test]
    fn analytic_score_beats_zero_net() {
        // the analytic score is not an MlpScoreNet, so evaluate its DSM loss directly
        let s = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
        let spec = GaussianMixtureSpec::isotropic(vec![2.0, 0.0]).unwrap();
        let batch = gaussian_rows(20_000, [2.0, 0.0], 2);
        let rows: Vec<&[f64]> = batch.iter().map(Vec::as_slice).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draws = draw_batch(&s, &rows, &mut rng).unwrap();
        let mut analytic = 0.0;
        let mut zero = 0.0;
        for d in &draws {
            let e = spec.epsilon_at(&s, &d.x_t, d.t).unwrap();
            analytic += e.iter().zip(&d.noise).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            zero += d.noise.iter().map(|b| b * b).sum::<f64>();
        }
        assert!(analytic < zero);
        // E‖ε − E[ε|x_t]‖² = d·E[1 − σ_t²] for unit-variance data
        let floor: f64 = (1..=1000).map(|t| 2.0 * s.alpha_bar(t)).sum::<f64>() / 1000.0;
        let mean = analytic / draws.len() as f64;
        assert!((mean - floor).abs() < 0.05, "{mean} vs {floor}");
    }

    #[test]
    fn loss_is_reproducible() {
        let s = NoiseSchedule::linear(100, 1e-4, 0.02).unwrap();
        let net = MlpScoreNet::new(2, &[8], TimeEmbedding::Scalar, 3).unwrap();
        let batch = vec![vec![0.5, -1.0]];
        let a = dsm_loss(&net, &s, &batch, 42).unwrap();
        let b = dsm_loss(&net, &s, &batch, 42).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert!(dsm_loss(&net, &s, &[], 42).is_err());
    }

    #[test]
    fn loss_and_grad_agree_with_loss() {
        let s = NoiseSchedule::linear(100, 1e-4, 0.02).unwrap();
        let net = MlpScoreNet::new(2, &[8, 8], TimeEmbedding::Scalar, 3).unwrap();
        let batch = gaussian_rows(70, [1.0, 1.0], 4);
        let rows: Vec<&[f64]> = batch.iter().map(Vec::as_slice).collect();
        let (l, _) = dsm_loss_and_grad(&net, &s, &rows, 9).unwrap();
        let l2 = dsm_loss(&net, &s, &batch, 9).unwrap();
        assert!((l - l2).abs() < 1e-12 * l2);
    }

    #[test]
    fn zero_epochs_leave_parameters() {
        let s = NoiseSchedule::linear(100, 1e-4, 0.02).unwrap();
        let net = MlpScoreNet::new(2, &[8], TimeEmbedding::Scalar, 3).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let out = train(net.clone(), &s, &gaussian_rows(10, [0.0, 0.0], 0), &cfg).unwrap();
        assert_eq!(out.net, net);
        assert!(out.loss_curve.is_empty());
    }

    #[test]
    fn divergence_names_epoch() {
        let s = NoiseSchedule::linear(100, 1e-4, 0.02).unwrap();
        let net = MlpScoreNet::new(2, &[8], TimeEmbedding::Scalar, 3).unwrap();
        let data = vec![vec![f64::NAN, 0.0]; 4];
        let err = train(net, &s, &data, &TrainConfig { epochs: 2, ..TrainConfig::default() }).unwrap_err();
        assert!(matches!(err, Error::Training { epoch: 0 }));
    }

    #[test]
    fn fixed_seed_fixed_curve() {
        let s = NoiseSchedule::linear(200, 1e-4, 0.02).unwrap();
        let data = gaussian_rows(256, [2.0, 0.0], 5);
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 64,
            report_every: 4,
            ..TrainConfig::default()
        };
        let net = MlpScoreNet::new(2, &[16], TimeEmbedding::Scalar, 1).unwrap();
        let a = train(net.clone(), &s, &data, &cfg).unwrap();
        let b = train(net, &s, &data, &cfg).unwrap();
        assert_eq!(a.loss_curve, b.loss_curve);
        assert_eq!(a.net, b.net);
        assert_eq!(a.loss_curve.len(), 5);
    }
}
