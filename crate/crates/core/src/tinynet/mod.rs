//! Small dense networks with hand-written backprop.
//!
//! Networks are plain values: `[in, h1, .., out]` widths, one hidden
//! activation and one output activation. Batches are row-major
//! `(batch, features)` matrices.

mod adam;
pub mod gradcheck;
mod io;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adam::{Adam, AdamConfig};
pub use io::{load, save};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
}

impl Activation {
    fn apply(self, x: &mut Array2<f64>) {
        match self {
            Activation::Identity => {}
            Activation::Relu => x.mapv_inplace(|v| v.max(0.0)),
            Activation::Sigmoid => x.mapv_inplace(|v| 1.0 / (1.0 + (-v).exp())),
        }
    }

    /// Multiplies `grad` by the derivative, expressed through the
    /// activation's output.
    fn backprop(self, grad: &mut Array2<f64>, out: &Array2<f64>) {
        match self {
            Activation::Identity => {}
            Activation::Relu => Zip::from(grad).and(out).for_each(|g, &y| {
                if y <= 0.0 {
                    *g = 0.0;
                }
            }),
            Activation::Sigmoid => Zip::from(grad).and(out).for_each(|g, &y| *g *= y * (1.0 - y)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `(fan_in, fan_out)`
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
    hidden: Activation,
    output: Activation,
}

/// Layer outputs from a forward pass; `activations[0]` is the input.
#[derive(Debug, Clone)]
pub struct Trace {
    pub activations: Vec<Array2<f64>>,
}

impl Trace {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("trace holds the input")
    }
}

/// Parameter gradients, shaped like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| Dense { weights: Array2::zeros(l.weights.raw_dim()), bias: Array1::zeros(l.bias.len()) })
                .collect(),
        }
    }

    pub fn scale(&mut self, k: f64) {
        for l in &mut self.layers {
            l.weights *= k;
            l.bias *= k;
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights += &b.weights;
            a.bias += &b.bias;
        }
    }

    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.weights.iter().chain(l.bias.iter()).map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }
}

fn flatten_layers(layers: &[Dense]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in layers {
        out.extend(l.weights.iter());
        out.extend(l.bias.iter());
    }
    out
}

impl Mlp {
    /// Weights and biases drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn new<R: Rng + ?Sized>(widths: &[usize], hidden: Activation, output: Activation, rng: &mut R) -> Self {
        let mut net = Self::zeros(widths, hidden, output);
        for l in &mut net.layers {
            let bound = 1.0 / (l.weights.nrows() as f64).sqrt();
            l.weights.mapv_inplace(|_| rng.random_range(-bound..bound));
            l.bias.mapv_inplace(|_| rng.random_range(-bound..bound));
        }
        net
    }

    pub fn zeros(widths: &[usize], hidden: Activation, output: Activation) -> Self {
        assert!(widths.len() >= 2, "a network needs at least input and output widths");
        let layers = widths
            .windows(2)
            .map(|w| Dense { weights: Array2::zeros((w[0], w[1])), bias: Array1::zeros(w[1]) })
            .collect();
        Mlp { layers, hidden, output }
    }

    pub fn from_layers(layers: Vec<Dense>, hidden: Activation, output: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Structure("network has no layers".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.weights.ncols() {
                return Err(Error::Shape { expected: l.weights.ncols(), got: l.bias.len() });
            }
            if i > 0 && layers[i - 1].weights.ncols() != l.weights.nrows() {
                return Err(Error::Shape { expected: layers[i - 1].weights.ncols(), got: l.weights.nrows() });
            }
        }
        Ok(Mlp { layers, hidden, output })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(self.layers.iter().map(|l| l.weights.ncols()));
        w
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").weights.ncols()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    fn activation_of(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.output
        } else {
            self.hidden
        }
    }

    pub fn forward_trace(&self, x: ArrayView2<f64>) -> Result<Trace> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape { expected: self.input_dim(), got: x.ncols() });
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_owned());
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = activations[i].dot(&l.weights);
            z += &l.bias;
            self.activation_of(i).apply(&mut z);
            activations.push(z);
        }
        Ok(Trace { activations })
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut trace = self.forward_trace(x)?;
        Ok(trace.activations.pop().expect("non-empty"))
    }

    pub fn forward_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::Structure(e.to_string()))?;
        Ok(self.forward(view)?.into_iter().collect())
    }

    /// Gradients of `sum(upstream * output)` with respect to the parameters
    /// (summed over the batch) and to the input.
    pub fn backward(&self, trace: &Trace, upstream: ArrayView2<f64>) -> Result<(Gradients, Array2<f64>)> {
        self.backprop(trace, upstream, true).map(|(g, x)| (g.expect("requested"), x))
    }

    /// Input gradient only; skips parameter gradients.
    pub fn input_gradient(&self, trace: &Trace, upstream: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.backprop(trace, upstream, false).map(|(_, x)| x)
    }

    fn backprop(&self, trace: &Trace, upstream: ArrayView2<f64>, params: bool) -> Result<(Option<Gradients>, Array2<f64>)> {
        let out = trace.output();
        if upstream.dim() != out.dim() {
            return Err(Error::Shape { expected: out.len(), got: upstream.len() });
        }
        let mut grads = params.then(|| Gradients::zeros_like(self));
        let mut delta = upstream.to_owned();
        for i in (0..self.layers.len()).rev() {
            self.activation_of(i).backprop(&mut delta, &trace.activations[i + 1]);
            if let Some(g) = grads.as_mut() {
                let w = trace.activations[i].t().dot(&delta);
                g.layers[i].weights = if w.is_standard_layout() { w } else { w.as_standard_layout().into_owned() };
                g.layers[i].bias = delta.sum_axis(Axis(0));
            }
            delta = delta.dot(&self.layers[i].weights.t());
        }
        Ok((grads, delta))
    }

    pub fn params_flat(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape { expected: self.num_params(), got: flat.len() });
        }
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|w| *w = it.next().expect("length checked"));
            l.bias.iter_mut().for_each(|b| *b = it.next().expect("length checked"));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    fn same_shape(&self, other: &Mlp) -> bool {
        self.widths() == other.widths()
    }

    /// `self <- omega * online + (1 - omega) * self`
    pub fn soft_update(&mut self, online: &Mlp, omega: f64) -> Result<()> {
        if !self.same_shape(online) {
            return Err(Error::Structure("soft update between differently shaped networks".into()));
        }
        if !(omega > 0.0 && omega <= 1.0) {
            return Err(Error::Domain(format!("soft update rate {omega} outside (0, 1]")));
        }
        for (t, o) in self.layers.iter_mut().zip(&online.layers) {
            Zip::from(&mut t.weights).and(&o.weights).for_each(|t, &o| *t = omega * o + (1.0 - omega) * *t);
            Zip::from(&mut t.bias).and(&o.bias).for_each(|t, &o| *t = omega * o + (1.0 - omega) * *t);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(&[4, 8, 2], Activation::Relu, Activation::Identity);
        assert_eq!(net.forward_one(&[1.0, -2.0, 3.0, 0.5]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn sigmoid_head_in_open_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::new(&[5, 64, 512, 3], Activation::Relu, Activation::Sigmoid, &mut rng);
        for _ in 0..20 {
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(-5.0..5.0)).collect();
            for y in net.forward_one(&x).unwrap() {
                assert!(y > 0.0 && y < 1.0);
            }
        }
    }

    #[test]
    fn forward_matches_hand_computation() {
        // 2 -> 2 (relu) -> 1 (identity)
        let l1 = Dense { weights: array![[1.0, -1.0], [0.5, 2.0]], bias: array![0.1, -0.2] };
        let l2 = Dense { weights: array![[3.0], [-1.0]], bias: array![0.25] };
        let net = Mlp::from_layers(vec![l1, l2], Activation::Relu, Activation::Identity).unwrap();
        // h = relu([1*1 + 2*0.5 + 0.1, 1*-1 + 2*2 - 0.2]) = [2.1, 2.8]
        // y = 3*2.1 - 2.8 + 0.25 = 3.75
        let y = net.forward_one(&[1.0, 2.0]).unwrap();
        assert!((y[0] - 3.75).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let net = Mlp::zeros(&[4, 3], Activation::Relu, Activation::Identity);
        assert!(matches!(net.forward_one(&[1.0]), Err(Error::Shape { .. })));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Mlp::new(&[3, 6, 2], Activation::Relu, Activation::Sigmoid, &mut rng);
        let x = array![[0.1, 0.2, 0.3]];
        let trace = net.forward_trace(x.view()).unwrap();
        let (g, dx) = net.backward(&trace, Array2::zeros((1, 2)).view()).unwrap();
        assert_eq!(g.norm(), 0.0);
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batch_gradients_are_sums_of_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::new(&[3, 5, 2], Activation::Relu, Activation::Identity, &mut rng);
        let x = array![[0.1, 0.2, 0.3], [-0.4, 0.5, 0.9]];
        let up = array![[1.0, -0.5], [0.25, 2.0]];
        let (g, _) = net.backward(&net.forward_trace(x.view()).unwrap(), up.view()).unwrap();
        let mut sum = Gradients::zeros_like(&net);
        for r in 0..2 {
            let xr = x.slice(ndarray::s![r..r + 1, ..]);
            let ur = up.slice(ndarray::s![r..r + 1, ..]);
            let (gr, _) = net.backward(&net.forward_trace(xr).unwrap(), ur).unwrap();
            sum.add_assign(&gr);
        }
        for (a, b) in g.flatten().iter().zip(sum.flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn flat_params_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = Mlp::new(&[3, 4, 2], Activation::Relu, Activation::Identity, &mut rng);
        let mut other = Mlp::zeros(&[3, 4, 2], Activation::Relu, Activation::Identity);
        other.set_params_flat(&net.params_flat()).unwrap();
        assert_eq!(net, other);
        assert!(other.set_params_flat(&[1.0]).is_err());
    }

    #[test]
    fn soft_update_rules() {
        let online = {
            let mut n = Mlp::zeros(&[2, 2, 1], Activation::Relu, Activation::Identity);
            n.set_params_flat(&vec![1.0; n.num_params()]).unwrap();
            n
        };
        let mut target = Mlp::zeros(&[2, 2, 1], Activation::Relu, Activation::Identity);
        target.soft_update(&online, 0.01).unwrap();
        assert!(target.params_flat().iter().all(|&v| (v - 0.01).abs() < 1e-15));

        let mut t2 = Mlp::zeros(&[2, 2, 1], Activation::Relu, Activation::Identity);
        t2.soft_update(&online, 1.0).unwrap();
        assert_eq!(t2, online);

        // gap shrinks by (1 - omega) each step
        let mut t3 = Mlp::zeros(&[2, 2, 1], Activation::Relu, Activation::Identity);
        for k in 1..=200 {
            t3.soft_update(&online, 0.05).unwrap();
            let gap = 1.0 - t3.params_flat()[0];
            assert!((gap - 0.95f64.powi(k)).abs() < 1e-12);
        }
        assert!(t3.is_finite());

        assert!(t2.soft_update(&online, 0.0).is_err());
        let wrong = Mlp::zeros(&[3, 2, 1], Activation::Relu, Activation::Identity);
        assert!(t2.soft_update(&wrong, 0.5).is_err());
    }
}
