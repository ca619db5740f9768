use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ExpertError;

/// Fully connected policy network: `hidden_layers` ReLU layers of equal
/// width followed by a linear output layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpArchitecture {
    pub input_dim: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub output_dim: usize,
}

impl MlpArchitecture {
    /// Widths of every layer, input first.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim];
        w.extend(std::iter::repeat_n(self.hidden_width, self.hidden_layers));
        w.push(self.output_dim);
        w
    }
}

/// Number of trainable weights and biases.
pub fn param_count(arch: &MlpArchitecture) -> usize {
    let h = arch.hidden_width;
    let n = arch.hidden_layers;
    if n == 0 {
        return arch.input_dim * arch.output_dim + arch.output_dim;
    }
    arch.input_dim * h + (n - 1) * h * h + arch.output_dim * h + n * h + arch.output_dim
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs × inputs`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.outputs {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            let mut acc = self.bias[o];
            for (w, xi) in row.iter().zip(x) {
                acc += w * xi;
            }
            out.push(acc);
        }
    }
}

/// Layer stack of a policy network. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub arch: MlpArchitecture,
    pub layers: Vec<Dense>,
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    /// Input of every layer (the input features first).
    inputs: Vec<Vec<f64>>,
}

impl Mlp {
    pub fn zeros(arch: MlpArchitecture) -> Self {
        let w = arch.widths();
        Self {
            arch,
            layers: w.windows(2).map(|p| Dense::zeros(p[0], p[1])).collect(),
        }
    }

    /// Uniform fan-in initialization: every weight and bias of a layer with
    /// `n` inputs is drawn from `U(-1/√n, 1/√n)`.
    pub fn init<R: Rng + ?Sized>(arch: MlpArchitecture, rng: &mut R) -> Self {
        let mut net = Self::zeros(arch);
        for layer in &mut net.layers {
            let bound = 1.0 / (layer.inputs as f64).sqrt();
            for w in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *w = rng.random_range(-bound..bound);
            }
        }
        net
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Parameters flattened layer by layer, weights before biases.
    pub fn flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            v.extend_from_slice(&l.weights);
            v.extend_from_slice(&l.bias);
        }
        v
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    pub fn from_flat(arch: MlpArchitecture, values: &[f64]) -> Result<Self, ExpertError> {
        let mut net = Self::zeros(arch);
        if values.len() != net.num_params() {
            return Err(ExpertError::Shape {
                what: "parameter vector",
                expected: net.num_params(),
                got: values.len(),
            });
        }
        for (p, v) in net.params_mut().zip(values) {
            *p = *v;
        }
        Ok(net)
    }

    fn check_input(&self, x: &[f64]) -> Result<(), ExpertError> {
        if x.len() != self.arch.input_dim {
            return Err(ExpertError::Shape {
                what: "feature vector",
                expected: self.arch.input_dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Dense forward pass; ReLU on hidden layers, linear output.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, ExpertError> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.apply(&cur, &mut next);
            if i != last {
                next.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    pub fn forward_cached(
        &self,
        x: &[f64],
        cache: &mut ForwardCache,
    ) -> Result<Vec<f64>, ExpertError> {
        self.check_input(x)?;
        cache.inputs.clear();
        cache.inputs.push(x.to_vec());
        let last = self.layers.len() - 1;
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            layer.apply(cache.inputs.last().unwrap(), &mut out);
            if i != last {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
                cache.inputs.push(std::mem::take(&mut out));
            }
        }
        Ok(out)
    }

    /// Accumulates `∂L/∂θ` into `grad` given `∂L/∂z` at the output.
    pub fn backward(&self, cache: &ForwardCache, d_out: &[f64], grad: &mut Mlp) {
        let mut delta = d_out.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache.inputs[i];
            let g = &mut grad.layers[i];
            for o in 0..layer.outputs {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                g.bias[o] += d;
                let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (gw, xi) in row.iter_mut().zip(input) {
                    *gw += d * xi;
                }
            }
            if i == 0 {
                break;
            }
            let mut prev = vec![0.0; layer.inputs];
            for o in 0..layer.outputs {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += d * w;
                }
            }
            // ReLU gate: the stored input of layer i is the activation of
            // layer i-1, zero exactly where the unit was off.
            for (p, a) in prev.iter_mut().zip(input) {
                if *a <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
    }

    pub fn add_scaled(&mut self, other: &Mlp, scale: f64) {
        for (a, b) in self.params_mut().zip(other.params()) {
            *a += scale * b;
        }
    }

    pub fn norm(&self) -> f64 {
        self.params().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::rng_from;

    #[test]
    fn param_count_examples() {
        let a = |i, n, h, o| MlpArchitecture {
            input_dim: i,
            hidden_layers: n,
            hidden_width: h,
            output_dim: o,
        };
        assert_eq!(param_count(&a(36, 10, 400, 9)), 1_462_009);
        assert_eq!(param_count(&a(2, 1, 3, 1)), 13);
        assert_eq!(param_count(&a(32, 10, 400, 4)), 1_458_404);
        for arch in [a(36, 3, 64, 9), a(4, 2, 8, 5), a(2, 1, 3, 1)] {
            assert_eq!(Mlp::zeros(arch).num_params(), param_count(&arch));
        }
    }

    #[test]
    fn zero_network_gives_zero_logits() {
        let arch = MlpArchitecture {
            input_dim: 5,
            hidden_layers: 2,
            hidden_width: 4,
            output_dim: 3,
        };
        let z = Mlp::zeros(arch)
            .forward(&[1.0, -2.0, 3.0, 0.5, 9.0])
            .unwrap();
        assert_eq!(z, vec![0.0; 3]);
    }

    #[test]
    fn hand_worked_forward() {
        // 2 -> 1 -> 1: h = relu(0.5*x1 - 1.0*x2 + 0.25), z = 2h - 1.
        let arch = MlpArchitecture {
            input_dim: 2,
            hidden_layers: 1,
            hidden_width: 1,
            output_dim: 1,
        };
        let net = Mlp::from_flat(arch, &[0.5, -1.0, 0.25, 2.0, -1.0]).unwrap();
        assert_eq!(net.forward(&[3.0, 1.0]).unwrap(), vec![2.0 * 0.75 - 1.0]);
        // Hidden unit clipped: 0.5 - 3 + 0.25 < 0.
        assert_eq!(net.forward(&[1.0, 3.0]).unwrap(), vec![-1.0]);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let arch = MlpArchitecture {
            input_dim: 3,
            hidden_layers: 1,
            hidden_width: 2,
            output_dim: 1,
        };
        assert!(matches!(
            Mlp::zeros(arch).forward(&[1.0]),
            Err(ExpertError::Shape { .. })
        ));
        assert!(Mlp::from_flat(arch, &[0.0; 3]).is_err());
    }

    #[test]
    fn outputs_stay_finite() {
        let arch = MlpArchitecture {
            input_dim: 6,
            hidden_layers: 3,
            hidden_width: 16,
            output_dim: 4,
        };
        let net = Mlp::init(arch, &mut rng_from(1, &[]));
        let z = net.forward(&[1e3, -1e3, 5.0, 0.0, 2.0, -7.0]).unwrap();
        assert!(z.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn backward_matches_finite_differences_on_a_linear_readout() {
        let arch = MlpArchitecture {
            input_dim: 3,
            hidden_layers: 2,
            hidden_width: 5,
            output_dim: 2,
        };
        let net = Mlp::init(arch, &mut rng_from(2, &[]));
        let x = [0.3, -0.7, 1.1];
        let c = [0.8, -1.3];
        let loss = |n: &Mlp| {
            n.forward(&x)
                .unwrap()
                .iter()
                .zip(&c)
                .map(|(z, c)| z * c)
                .sum::<f64>()
        };
        let mut cache = ForwardCache::default();
        net.forward_cached(&x, &mut cache).unwrap();
        let mut grad = Mlp::zeros(arch);
        net.backward(&cache, &c, &mut grad);
        let flat = net.flat();
        for (i, g) in grad.flat().iter().enumerate() {
            let h = 1e-6;
            let mut p = flat.clone();
            p[i] += h;
            let up = loss(&Mlp::from_flat(arch, &p).unwrap());
            p[i] -= 2.0 * h;
            let down = loss(&Mlp::from_flat(arch, &p).unwrap());
            let fd = (up - down) / (2.0 * h);
            assert!((fd - g).abs() < 1e-7, "param {i}: {g} vs {fd}");
        }
    }
}
