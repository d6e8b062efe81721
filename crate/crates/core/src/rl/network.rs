//! Small feedforward Q-network with hand-written backpropagation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs × inputs`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weights: vec![0.0; inputs * outputs], biases: vec![0.0; outputs] }
    }

    fn row(&self, o: usize) -> &[f64] {
        &self.weights[o * self.inputs..(o + 1) * self.inputs]
    }

    fn unit(&self, o: usize, x: &[f64]) -> f64 {
        self.biases[o] + self.row(o).iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend((0..self.outputs).map(|o| self.unit(o, x)));
    }
}

/// Fixed `outputs × size` matrix of Legendre polynomials evaluated on an
/// evenly spaced grid over [-1, 1]. The last layer then learns `size`
/// coefficients per state instead of one value per action, so neighbouring
/// actions on a continuous grid share what is learned about each other.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionBasis {
    pub size: usize,
    values: Vec<f64>,
}

impl ActionBasis {
    pub fn legendre(n_actions: usize, size: usize) -> Result<Self> {
        if size == 0 || size > n_actions {
            return Err(Error::InvalidInput(format!("basis size {size} must be in 1..={n_actions}")));
        }
        let mut values = Vec::with_capacity(n_actions * size);
        for i in 0..n_actions {
            let x = if n_actions == 1 { 0.0 } else { -1.0 + 2.0 * i as f64 / (n_actions - 1) as f64 };
            let (mut prev, mut cur) = (0.0, 1.0);
            for k in 0..size {
                values.push(cur);
                let next = if k == 0 { x } else { ((2 * k + 1) as f64 * x * cur - k as f64 * prev) / (k + 1) as f64 };
                (prev, cur) = (cur, next);
            }
        }
        Ok(Self { size, values })
    }

    fn row(&self, action: usize) -> &[f64] {
        &self.values[action * self.size..(action + 1) * self.size]
    }
}

/// `tanh` hidden layers and a linear output layer, one output per discrete action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QNetwork {
    pub sizes: Vec<usize>,
    pub layers: Vec<Layer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_basis: Option<ActionBasis>,
}

/// Squared-error TD loss and its parameter gradient, flattened like [`QNetwork::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct LossGradient {
    pub loss: f64,
    pub gradient: Vec<f64>,
}

/// One regression sample: push `Q(observation, action)` toward `target`.
#[derive(Debug, Clone, PartialEq)]
pub struct TdSample<'a> {
    pub observation: &'a [f64],
    pub action: usize,
    pub target: f64,
}

impl QNetwork {
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        Self::zeros_with_basis(sizes, None)
    }

    /// With `basis = Some(m)` the last layer produces `m` Legendre coefficients
    /// that a fixed [`ActionBasis`] maps onto the `sizes.last()` actions.
    pub fn zeros_with_basis(sizes: &[usize], basis: Option<usize>) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidInput(format!("invalid layer sizes {sizes:?}")));
        }
        let n_out = sizes[sizes.len() - 1];
        let action_basis = basis.map(|m| ActionBasis::legendre(n_out, m)).transpose()?;
        let mut widths = sizes.to_vec();
        if let Some(b) = &action_basis {
            *widths.last_mut().expect("nonempty") = b.size;
        }
        let layers = widths.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect();
        Ok(Self { sizes: sizes.to_vec(), layers, action_basis })
    }

    /// Weights and biases uniform in ±1/√fan_in.
    pub fn init(sizes: &[usize], rng: &mut impl Rng) -> Result<Self> {
        Self::init_with_basis(sizes, None, rng)
    }

    pub fn init_with_basis(sizes: &[usize], basis: Option<usize>, rng: &mut impl Rng) -> Result<Self> {
        let mut net = Self::zeros_with_basis(sizes, basis)?;
        for layer in &mut net.layers {
            let bound = 1.0 / (layer.inputs as f64).sqrt();
            for w in layer.weights.iter_mut().chain(layer.biases.iter_mut()) {
                *w = rng.random_range(-bound..=bound);
            }
        }
        Ok(net)
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("at least two sizes")
    }

    /// Width of the last hidden layer, or the input width for a linear network.
    pub fn feature_dim(&self) -> usize {
        self.sizes[self.sizes.len() - 2]
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::InvalidInput(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        Ok(())
    }

    /// Activations entering each layer: `trace[0]` is the input,
    /// `trace[last]` the last hidden layer's output.
    fn hidden_trace(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut trace = Vec::with_capacity(self.layers.len());
        trace.push(x.to_vec());
        for layer in &self.layers[..self.layers.len() - 1] {
            let mut out = Vec::with_capacity(layer.outputs);
            layer.apply(trace.last().expect("nonempty"), &mut out);
            out.iter_mut().for_each(|v| *v = v.tanh());
            trace.push(out);
        }
        trace
    }

    fn head(&self, features: &[f64]) -> Vec<f64> {
        let mut out = Vec::new();
        self.layers.last().expect("nonempty").apply(features, &mut out);
        match &self.action_basis {
            Some(b) => (0..self.output_dim()).map(|a| b.row(a).iter().zip(&out).map(|(p, c)| p * c).sum()).collect(),
            None => out,
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let trace = self.hidden_trace(x);
        Ok(self.head(trace.last().expect("nonempty")))
    }

    /// Q-row together with the last hidden activations.
    pub fn forward_with_features(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_input(x)?;
        let mut trace = self.hidden_trace(x);
        let features = trace.pop().expect("nonempty");
        Ok((self.head(&features), features))
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.biases);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.n_params() {
            return Err(Error::InvalidInput(format!(
                "expected {} parameters, got {}",
                self.n_params(),
                params.len()
            )));
        }
        let mut rest = params;
        for l in &mut self.layers {
            let (w, tail) = rest.split_at(l.weights.len());
            l.weights.copy_from_slice(w);
            let (b, tail) = tail.split_at(l.biases.len());
            l.biases.copy_from_slice(b);
            rest = tail;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }

    /// `L = (1/B) Σ ½ (Q(s_i, a_i) − y_i)²` and `∂L/∂θ`.
    pub fn td_loss_gradient(&self, batch: &[TdSample<'_>]) -> Result<LossGradient> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        let mut grads: Vec<Layer> = self.layers.iter().map(|l| Layer::zeros(l.inputs, l.outputs)).collect();
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        let last = self.layers.len() - 1;
        for sample in batch {
            self.check_input(sample.observation)?;
            if sample.action >= self.output_dim() {
                return Err(Error::InvalidInput(format!("action {} out of range", sample.action)));
            }
            let trace = self.hidden_trace(sample.observation);
            let features = &trace[last];
            // (output unit, weight) pairs whose combination is Q(s, a)
            let mix: Vec<(usize, f64)> = match &self.action_basis {
                Some(b) => b.row(sample.action).iter().copied().enumerate().collect(),
                None => vec![(sample.action, 1.0)],
            };
            let out_layer = &self.layers[last];
            let q: f64 = mix.iter().map(|(j, w)| w * out_layer.unit(*j, features)).sum();
            let err = q - sample.target;
            loss += 0.5 * err * err * scale;

            // output layer: only the units feeding the taken action receive gradient
            let out_grad = &mut grads[last];
            let n_in = out_layer.inputs;
            let mut delta = vec![0.0; n_in];
            for (j, w) in mix {
                let g = err * scale * w;
                let row = j * n_in;
                for (gw, h) in out_grad.weights[row..row + n_in].iter_mut().zip(features) {
                    *gw += g * h;
                }
                out_grad.biases[j] += g;
                for (d, w) in delta.iter_mut().zip(out_layer.row(j)) {
                    *d += g * w;
                }
            }

            for l in (0..last).rev() {
                let layer = &self.layers[l];
                let output = &trace[l + 1];
                let input = &trace[l];
                // through tanh: d/dz tanh(z) = 1 − tanh²(z)
                for (d, h) in delta.iter_mut().zip(output) {
                    *d *= 1.0 - h * h;
                }
                let lg = &mut grads[l];
                for o in 0..layer.outputs {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    lg.biases[o] += d;
                    for (gw, x) in lg.weights[o * layer.inputs..(o + 1) * layer.inputs].iter_mut().zip(input) {
                        *gw += d * x;
                    }
                }
                if l > 0 {
                    let mut next = vec![0.0; layer.inputs];
                    for (o, d) in delta.iter().enumerate() {
                        for (n, w) in next.iter_mut().zip(layer.row(o)) {
                            *n += d * w;
                        }
                    }
                    delta = next;
                }
            }
        }
        let mut gradient = Vec::with_capacity(self.n_params());
        for l in &grads {
            gradient.extend_from_slice(&l.weights);
            gradient.extend_from_slice(&l.biases);
        }
        Ok(LossGradient { loss, gradient })
    }

    /// Plain gradient descent step, `θ ← θ − lr·g`.
    pub fn sgd_step(&mut self, gradient: &[f64], learning_rate: f64) {
        let mut i = 0;
        for l in &mut self.layers {
            for p in l.weights.iter_mut().chain(l.biases.iter_mut()) {
                *p -= learning_rate * gradient[i];
                i += 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_outputs_zero_and_exposes_features() {
        let net = QNetwork::zeros(&[3, 5, 4, 2]).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 0.5]).unwrap(), vec![0.0, 0.0]);
        let (_, f) = net.forward_with_features(&[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(f.len(), 4);
        assert_eq!(net.feature_dim(), 4);
        assert!(net.forward(&[1.0]).is_err());
    }

    #[test]
    fn params_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = QNetwork::init(&[2, 4, 3], &mut rng).unwrap();
        assert_eq!(net.n_params(), 2 * 4 + 4 + 4 * 3 + 3);
        let mut other = QNetwork::zeros(&[2, 4, 3]).unwrap();
        other.set_params(&net.params()).unwrap();
        assert_eq!(net, other);
        for l in &net.layers {
            let bound = 1.0 / (l.inputs as f64).sqrt();
            assert!(l.weights.iter().all(|w| w.abs() <= bound));
        }
    }

    #[test]
    fn linear_network_features_are_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = QNetwork::init(&[3, 2], &mut rng).unwrap();
        let (_, f) = net.forward_with_features(&[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(f, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn legendre_basis_rows() {
        let b = ActionBasis::legendre(3, 3).unwrap();
        // x = -1, 0, 1: P0 = 1, P1 = x, P2 = (3x² − 1)/2
        assert_eq!(b.values, vec![1.0, -1.0, 1.0, 1.0, 0.0, -0.5, 1.0, 1.0, 1.0]);
        assert!(ActionBasis::legendre(3, 4).is_err());
        let net = QNetwork::zeros_with_basis(&[2, 4, 200], Some(6)).unwrap();
        assert_eq!(net.output_dim(), 200);
        assert_eq!(net.n_params(), 2 * 4 + 4 + 4 * 6 + 6);
    }

    #[test]
    fn basis_head_gradient_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = QNetwork::init_with_basis(&[2, 3, 7], Some(3), &mut rng).unwrap();
        let batch = [TdSample { observation: &[0.3, -0.2], action: 5, target: 0.4 }];
        let g = net.td_loss_gradient(&batch).unwrap().gradient;
        let p = net.params();
        for i in 0..p.len() {
            let mut probe = net.clone();
            let mut q = p.clone();
            q[i] += 1e-6;
            probe.set_params(&q).unwrap();
            let up = probe.td_loss_gradient(&batch).unwrap().loss;
            q[i] -= 2e-6;
            probe.set_params(&q).unwrap();
            let down = probe.td_loss_gradient(&batch).unwrap().loss;
            let fd = (up - down) / 2e-6;
            assert!((fd - g[i]).abs() <= 1e-6 * fd.abs().max(1.0), "param {i}");
        }
    }

    #[test]
    fn sgd_reduces_loss_on_fixed_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut net = QNetwork::init(&[2, 8, 3], &mut rng).unwrap();
        let xs = [[0.1, 0.2], [-0.5, 0.3], [0.9, -0.4]];
        let batch: Vec<TdSample> =
            xs.iter().enumerate().map(|(i, x)| TdSample { observation: x, action: i, target: i as f64 }).collect();
        let start = net.td_loss_gradient(&batch).unwrap().loss;
        for _ in 0..200 {
            let g = net.td_loss_gradient(&batch).unwrap();
            net.sgd_step(&g.gradient, 0.1);
        }
        assert!(net.td_loss_gradient(&batch).unwrap().loss < start * 0.1);
    }
}
