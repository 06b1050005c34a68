//! Small fully connected ε-predictor with hand-written backpropagation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Error, Result};
use crate::schedule::NoiseSchedule;
use crate::score::ScoreFunction;

/// How the time fraction `t / T` is fed to the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeEmbedding {
    /// `t / T` appended as one extra input.
    Scalar,
    /// `sin(π 2^k τ), cos(π 2^k τ)` for `k < frequencies`.
    Sinusoidal { frequencies: usize },
}

impl TimeEmbedding {
    pub fn width(&self) -> usize {
        match self {
            TimeEmbedding::Scalar => 1,
            TimeEmbedding::Sinusoidal { frequencies } => 2 * frequencies,
        }
    }

    fn extend(&self, tau: f64, out: &mut Vec<f64>) {
        match self {
            TimeEmbedding::Scalar => out.push(tau),
            TimeEmbedding::Sinusoidal { frequencies } => {
                for k in 0..*frequencies {
                    let w = std::f64::consts::PI * f64::from(1u32 << k.min(30));
                    out.push((w * tau).sin());
                    out.push((w * tau).cos());
                }
            }
        }
    }
}

/// Affine layer `y = W x + b`, `W` stored row-major `outputs × inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, weights: Vec<f64>, biases: Vec<f64>) -> Result<Self> {
        check_dim(inputs * outputs, weights.len())?;
        check_dim(outputs, biases.len())?;
        Ok(Self {
            inputs,
            outputs,
            weights,
            biases,
        })
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.biases)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }

    fn num_params(&self) -> usize {
        self.weights.len() + self.biases.len()
    }
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpScoreNet {
    dim: usize,
    embedding: TimeEmbedding,
    layers: Vec<Dense>,
}

/// Activations kept from a forward pass for backpropagation.
pub(crate) struct ForwardCache {
    inputs: Vec<Vec<f64>>,
    pre_activations: Vec<Vec<f64>>,
}

impl MlpScoreNet {
    /// Network from explicit layers; hidden layers use SiLU, the last is linear.
    pub fn from_layers(dim: usize, embedding: TimeEmbedding, layers: Vec<Dense>) -> Result<Self> {
        let first = layers.first().ok_or(Error::Empty("network layers"))?;
        check_dim(dim + embedding.width(), first.inputs)?;
        check_dim(dim, layers.last().unwrap().outputs)?;
        for pair in layers.windows(2) {
            check_dim(pair[0].outputs, pair[1].inputs)?;
        }
        let net = Self {
            dim,
            embedding,
            layers,
        };
        if !net.parameters().iter().all(|p| p.is_finite()) {
            return Err(Error::param("network parameters must be finite"));
        }
        Ok(net)
    }

    /// Xavier-uniform initialized network with the given hidden widths.
    pub fn new(dim: usize, hidden: &[usize], embedding: TimeEmbedding, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::param("network dimension must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut widths = vec![dim + embedding.width()];
        widths.extend_from_slice(hidden);
        widths.push(dim);
        let layers = widths
            .windows(2)
            .map(|w| {
                let bound = (6.0 / (w[0] + w[1]) as f64).sqrt();
                let weights = (0..w[0] * w[1])
                    .map(|_| rng.random_range(-bound..bound))
                    .collect();
                Dense {
                    inputs: w[0],
                    outputs: w[1],
                    weights,
                    biases: vec![0.0; w[1]],
                }
            })
            .collect();
        Self::from_layers(dim, embedding, layers)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embedding(&self) -> TimeEmbedding {
        self.embedding
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    /// Layer widths from input to output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].inputs];
        w.extend(self.layers.iter().map(|l| l.outputs));
        w
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Dense::num_params).sum()
    }

    /// All parameters, layer by layer: weights then biases.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.biases);
        }
        out
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        check_dim(self.num_params(), params.len())?;
        let mut offset = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&params[offset..offset + nw]);
            offset += nw;
            let nb = l.biases.len();
            l.biases.copy_from_slice(&params[offset..offset + nb]);
            offset += nb;
        }
        Ok(())
    }

    fn network_input(&self, x: &[f64], tau: f64) -> Vec<f64> {
        let mut input = Vec::with_capacity(x.len() + self.embedding.width());
        input.extend_from_slice(x);
        self.embedding.extend(tau, &mut input);
        input
    }

    /// Output for state `x` at time fraction `tau = t / T`.
    pub fn forward(&self, x: &[f64], tau: f64) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        let mut h = self.network_input(x, tau);
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.apply(&h);
            if i < last {
                h.iter_mut().for_each(|v| *v = silu(*v));
            }
        }
        Ok(h)
    }

    pub(crate) fn forward_cached(&self, x: &[f64], tau: f64) -> (Vec<f64>, ForwardCache) {
        let mut h = self.network_input(x, tau);
        let last = self.layers.len() - 1;
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre_activations: Vec::with_capacity(self.layers.len()),
        };
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.apply(&h);
            cache.inputs.push(h);
            h = if i < last { z.iter().map(|v| silu(*v)).collect() } else { z.clone() };
            cache.pre_activations.push(z);
        }
        (h, cache)
    }

    /// Accumulate `∂L/∂θ` into `grad` (flat, same order as [`parameters`](Self::parameters))
    /// given `∂L/∂output`.
    pub(crate) fn backward(&self, cache: &ForwardCache, grad_output: &[f64], grad: &mut [f64]) {
        let offsets: Vec<usize> = self
            .layers
            .iter()
            .scan(0, |acc, l| {
                let start = *acc;
                *acc += l.num_params();
                Some(start)
            })
            .collect();
        let last = self.layers.len() - 1;
        let mut delta = grad_output.to_vec();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            if i < last {
                for (d, z) in delta.iter_mut().zip(&cache.pre_activations[i]) {
                    *d *= silu_grad(*z);
                }
            }
            let input = &cache.inputs[i];
            let base = offsets[i];
            for (o, d) in delta.iter().enumerate() {
                let row = &mut grad[base + o * layer.inputs..base + (o + 1) * layer.inputs];
                for (g, x) in row.iter_mut().zip(input) {
                    *g += d * x;
                }
                grad[base + layer.weights.len() + o] += d;
            }
            if i > 0 {
                let mut next = vec![0.0; layer.inputs];
                for (o, d) in delta.iter().enumerate() {
                    let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (n, w) in next.iter_mut().zip(row) {
                        *n += d * w;
                    }
                }
                delta = next;
            }
        }
    }
}

/// Free-function form of the network's ε prediction.
pub fn mlp_epsilon(net: &MlpScoreNet, schedule: &NoiseSchedule, x: &[f64], t: usize) -> Result<Vec<f64>> {
    net.forward(x, schedule.time_fraction(t))
}

impl ScoreFunction for MlpScoreNet {
    fn dim(&self) -> usize {
        self.dim
    }
    fn kind(&self) -> &'static str {
        "mlp"
    }
    fn epsilon(&self, schedule: &NoiseSchedule, x: &[f64], t: usize) -> Result<Vec<f64>> {
        mlp_epsilon(self, schedule, x, t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_network_outputs_zero() {
        let net = MlpScoreNet::from_layers(
            2,
            TimeEmbedding::Scalar,
            vec![Dense::zeros(3, 8), Dense::zeros(8, 2)],
        )
        .unwrap();
        let s = NoiseSchedule::linear(100, 1e-4, 0.02).unwrap();
        assert_eq!(net.epsilon(&s, &[1.0, -2.0], 40).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn single_linear_layer_is_affine() {
        // y = [[1,0,2],[0,1,-1]] · [x0, x1, τ] + [0.5, -0.5]
        let layer = Dense::new(3, 2, vec![1.0, 0.0, 2.0, 0.0, 1.0, -1.0], vec![0.5, -0.5]).unwrap();
        let net = MlpScoreNet::from_layers(2, TimeEmbedding::Scalar, vec![layer]).unwrap();
        let s = NoiseSchedule::linear(100, 1e-4, 0.02).unwrap();
        let out = net.epsilon(&s, &[3.0, 4.0], 25).unwrap();
        assert_eq!(out, vec![3.0 + 0.5 + 0.5, 4.0 - 0.25 - 0.5]);
    }

    #[test]
    fn dimension_checks() {
        let net = MlpScoreNet::new(2, &[4], TimeEmbedding::Scalar, 0).unwrap();
        assert!(net.forward(&[1.0], 0.5).is_err());
        assert!(MlpScoreNet::from_layers(2, TimeEmbedding::Scalar, vec![Dense::zeros(2, 2)]).is_err());
        assert!(MlpScoreNet::from_layers(
            2,
            TimeEmbedding::Scalar,
            vec![Dense::new(3, 2, vec![f64::NAN; 6], vec![0.0; 2]).unwrap()]
        )
        .is_err());
    }

    #[test]
    fn sinusoidal_width() {
        let net = MlpScoreNet::new(2, &[8], TimeEmbedding::Sinusoidal { frequencies: 3 }, 1).unwrap();
        assert_eq!(net.widths(), vec![8, 8, 2]);
        assert_eq!(net.forward(&[0.1, 0.2], 0.3).unwrap().len(), 2);
    }

    #[test]
    fn parameter_round_trip() {
        let mut net = MlpScoreNet::new(3, &[5, 4], TimeEmbedding::Scalar, 9).unwrap();
        let p = net.parameters();
        assert_eq!(p.len(), net.num_params());
        let shifted: Vec<f64> = p.iter().map(|v| v + 1.0).collect();
        net.set_parameters(&shifted).unwrap();
        assert_eq!(net.parameters(), shifted);
    }

    #[test]
    fn backward_matches_finite_differences_of_output() {
        let net = MlpScoreNet::new(2, &[6, 5], TimeEmbedding::Scalar, 4).unwrap();
        let x = [0.3, -0.8];
        let tau = 0.37;
        // L = c · f(x)
        let c = [0.7, -1.1];
        let (_, cache) = net.forward_cached(&x, tau);
        let mut grad = vec![0.0; net.num_params()];
        net.backward(&cache, &c, &mut grad);
        let p0 = net.parameters();
        let mut probe = net.clone();
        for i in 0..p0.len() {
            let h = 1e-6;
            let mut p = p0.clone();
            p[i] += h;
            probe.set_parameters(&p).unwrap();
            let up: f64 = probe.forward(&x, tau).unwrap().iter().zip(&c).map(|(a, b)| a * b).sum();
            p[i] -= 2.0 * h;
            probe.set_parameters(&p).unwrap();
            let dn: f64 = probe.forward(&x, tau).unwrap().iter().zip(&c).map(|(a, b)| a * b).sum();
            let fd = (up - dn) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-6 * fd.abs().max(1.0), "param {i}");
        }
    }
}
