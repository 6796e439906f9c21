//! Small fully connected network: rectifier hidden layers, identity output.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::stochastic::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
    /// Row-major, `outputs` rows of `inputs` weights.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Layer {
            inputs,
            outputs,
            activation,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Pre-activations and activations of one forward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// `acts[0]` is the input, `acts[i + 1]` the output of layer `i`.
    pub acts: Vec<Vec<f64>>,
    pub pre: Vec<Vec<f64>>,
}

impl Mlp {
    /// Network with the given layer widths, all parameters zero.
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "need input and output widths");
        let last = sizes.len() - 2;
        Mlp {
            layers: sizes
                .windows(2)
                .enumerate()
                .map(|(i, w)| Layer::zeros(w[0], w[1], if i == last { Activation::Identity } else { Activation::Relu }))
                .collect(),
        }
    }

    /// He-initialised weights, zero biases.
    pub fn new(sizes: &[usize], rng: &mut RngStream) -> Self {
        let mut net = Mlp::zeros(sizes);
        for layer in &mut net.layers {
            let scale = (2.0 / layer.inputs as f64).sqrt();
            for w in &mut layer.weights {
                let z: f64 = StandardNormal.sample(rng.rng_mut());
                *w = z * scale;
            }
        }
        net
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].inputs];
        s.extend(self.layers.iter().map(|l| l.outputs));
        s
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(l.biases.iter()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|p| p.is_finite())
    }

    pub fn forward_cached(&self, input: &[f64]) -> MlpCache {
        assert_eq!(input.len(), self.layers[0].inputs, "input width");
        let mut acts = vec![input.to_vec()];
        let mut pre = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let x = acts.last().unwrap();
            let z: Vec<f64> = (0..layer.outputs)
                .map(|o| {
                    let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    layer.biases[o] + row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>()
                })
                .collect();
            let a = match layer.activation {
                Activation::Relu => z.iter().map(|&v| v.max(0.0)).collect(),
                Activation::Identity => z.clone(),
            };
            pre.push(z);
            acts.push(a);
        }
        MlpCache { acts, pre }
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        self.forward_cached(input).acts.pop().unwrap()
    }

    /// Masked squared-error loss `0.5 * sum over masked outputs (q - target)^2`.
    pub fn loss(&self, input: &[f64], target: &[f64], mask: &[bool]) -> f64 {
        let q = self.forward(input);
        q.iter()
            .zip(target)
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|((q, t), _)| 0.5 * (q - t).powi(2))
            .sum()
    }

    /// Adds the gradient of [`Mlp::loss`] to `grad` and returns the loss.
    pub fn backward_into(&self, input: &[f64], target: &[f64], mask: &[bool], grad: &mut Mlp) -> f64 {
        let cache = self.forward_cached(input);
        let out = cache.acts.last().unwrap();
        let mut loss = 0.0;
        let mut delta: Vec<f64> = out
            .iter()
            .zip(target)
            .zip(mask)
            .map(|((q, t), &m)| {
                if m {
                    loss += 0.5 * (q - t).powi(2);
                    q - t
                } else {
                    0.0
                }
            })
            .collect();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            if layer.activation == Activation::Relu {
                for (d, z) in delta.iter_mut().zip(&cache.pre[li]) {
                    if *z <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let x = &cache.acts[li];
            let g = &mut grad.layers[li];
            for o in 0..layer.outputs {
                if delta[o] == 0.0 {
                    continue;
                }
                g.biases[o] += delta[o];
                let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (w, xi) in row.iter_mut().zip(x) {
                    *w += delta[o] * xi;
                }
            }
            if li > 0 {
                let mut prev = vec![0.0; layer.inputs];
                for o in 0..layer.outputs {
                    if delta[o] == 0.0 {
                        continue;
                    }
                    let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (p, w) in prev.iter_mut().zip(row) {
                        *p += delta[o] * w;
                    }
                }
                delta = prev;
            }
        }
        loss
    }

    /// Gradient of [`Mlp::loss`] with respect to every parameter.
    pub fn backward(&self, input: &[f64], target: &[f64], mask: &[bool]) -> (f64, Mlp) {
        let mut grad = Mlp::zeros(&self.sizes());
        let loss = self.backward_into(input, target, mask, &mut grad);
        (loss, grad)
    }

    pub fn zero_like(&self) -> Mlp {
        let mut z = self.clone();
        z.params_mut().for_each(|p| *p = 0.0);
        z
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Mlp {
        // 2-2-4 net with hand-picked weights
        let mut net = Mlp::zeros(&[2, 2, 4]);
        net.layers[0].weights = vec![1.0, 0.0, 0.0, 1.0];
        net.layers[0].biases = vec![0.1, -0.2];
        net.layers[1].weights = vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.5, -0.5];
        net.layers[1].biases = vec![0.0, 0.0, 0.0, 0.25];
        net
    }

    #[test]
    fn zero_network_outputs_zero() {
        assert_eq!(Mlp::zeros(&[2, 50, 4]).forward(&[0.3, 0.7]), vec![0.0; 4]);
    }

    #[test]
    fn toy_forward_by_hand() {
        let q = toy().forward(&[0.3, 0.7]);
        // hidden = relu([0.4, 0.5])
        let expect = [0.4, 0.5, 0.9, 0.5 * 0.4 - 0.5 * 0.5 + 0.25];
        for (a, b) in q.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        // second hidden unit negative: relu cuts it
        let q = toy().forward(&[0.3, 0.1]);
        assert!((q[1] - 0.0).abs() < 1e-12);
    }

    #[test]
    fn positive_region_is_linear() {
        let net = toy();
        let a = net.forward_cached(&[0.3, 0.7]);
        let b = net.forward_cached(&[0.6, 1.4]);
        // biases break exact scaling of outputs, so compare hidden pre-activations minus bias
        for i in 0..2 {
            let za = a.pre[0][i] - net.layers[0].biases[i];
            let zb = b.pre[0][i] - net.layers[0].biases[i];
            assert!((zb - 2.0 * za).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_loss_gives_zero_gradient() {
        let net = Mlp::new(&[2, 8, 4], &mut RngStream::new(3));
        let x = [0.2, 0.9];
        let q = net.forward(&x);
        let (loss, g) = net.backward(&x, &q, &[true; 4]);
        assert_eq!(loss, 0.0);
        assert!(g.params().all(|&p| p == 0.0));
    }

    #[test]
    fn masked_outputs_get_no_gradient() {
        let net = Mlp::new(&[2, 8, 4], &mut RngStream::new(4));
        let (_, g) = net.backward(&[0.5, 0.5], &[10.0; 4], &[false, true, false, false]);
        let out = &g.layers[1];
        for o in [0, 2, 3] {
            assert!(out.weights[o * 8..(o + 1) * 8].iter().all(|&w| w == 0.0));
            assert_eq!(out.biases[o], 0.0);
        }
        assert!(out.biases[1] != 0.0);
    }
}
