//! Dense layers and multi-layer perceptrons with taped forward passes.

use rand::distributions::{Distribution, Uniform};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation's own output.
    /// Valid for all three variants; ReLU uses the y > 0 convention at 0.
    pub fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }

    /// Stable integer code for checkpoints.
    pub fn code(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Activation::Identity),
            1 => Ok(Activation::Relu),
            2 => Ok(Activation::Tanh),
            other => Err(Error::Format(format!("unknown activation code {other}"))),
        }
    }
}

/// One affine layer: `y = W x + b`, weights row-major `[out_dim x in_dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseParams {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Uniform fan-in initialization: W, b ~ U(-1/sqrt(in_dim), 1/sqrt(in_dim)).
    pub fn init_uniform(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        Self {
            in_dim,
            out_dim,
            weights: (0..in_dim * out_dim).map(|_| dist.sample(rng)).collect(),
            bias: (0..out_dim).map(|_| dist.sample(rng)).collect(),
        }
    }

    /// Normal(0, std) weights with zero bias; used for near-zero output heads.
    pub fn init_normal(in_dim: usize, out_dim: usize, std: f64, rng: &mut ChaCha8Rng) -> Self {
        let normal: Vec<f64> = (0..in_dim * out_dim)
            .map(|_| standard_normal(rng) * std)
            .collect();
        Self {
            in_dim,
            out_dim,
            weights: normal,
            bias: vec![0.0; out_dim],
        }
    }

    pub fn affine(&self, x: &[f64], out: &mut Vec<f64>) {
        debug_assert_eq!(x.len(), self.in_dim);
        out.clear();
        for o in 0..self.out_dim {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.bias[o];
            for (w, v) in row.iter().zip(x) {
                acc += w * v;
            }
            out.push(acc);
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Box-Muller standard normal draw.
pub fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Multi-layer perceptron. Layer i feeds layer i+1; each layer has its own
/// activation applied after the affine map.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<DenseParams>,
    activations: Vec<Activation>,
}

/// Recorded forward pass: the input plus each layer's post-activation output.
#[derive(Debug, Clone)]
pub struct MlpTape {
    input: Vec<f64>,
    outputs: Vec<Vec<f64>>,
}

impl MlpTape {
    pub fn output(&self) -> &[f64] {
        self.outputs.last().unwrap_or(&self.input)
    }
}

/// Per-layer gradients, same shapes as the network's parameters.
#[derive(Debug, Clone)]
pub struct MlpGrad {
    pub layers: Vec<DenseParams>,
}

impl Mlp {
    pub fn new(layers: Vec<DenseParams>, activations: Vec<Activation>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("mlp needs at least one layer".into()));
        }
        if layers.len() != activations.len() {
            return Err(Error::Config(format!(
                "{} layers but {} activations",
                layers.len(),
                activations.len()
            )));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::Config(format!(
                    "layer output dim {} feeds layer input dim {}",
                    pair[0].out_dim, pair[1].in_dim
                )));
            }
        }
        Ok(Self {
            layers,
            activations,
        })
    }

    /// Standard three-layer architecture used by every network in the crate:
    /// two hidden layers of width `hidden` plus a linear output layer. The
    /// output layer starts near zero (normal(0, 0.01) weights, zero bias).
    pub fn three_layer(
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
        hidden_act: Activation,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let layers = vec![
            DenseParams::init_uniform(in_dim, hidden, rng),
            DenseParams::init_uniform(hidden, hidden, rng),
            DenseParams::init_normal(hidden, out_dim, 0.01, rng),
        ];
        let activations = vec![hidden_act, hidden_act, Activation::Identity];
        Self::new(layers, activations).expect("consistent construction")
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    pub fn layers(&self) -> &[DenseParams] {
        &self.layers
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_recorded(x)?.0)
    }

    pub fn forward_recorded(&self, x: &[f64]) -> Result<(Vec<f64>, MlpTape)> {
        if x.len() != self.in_dim() {
            return Err(Error::Shape(format!(
                "mlp expects input dim {}, got {}",
                self.in_dim(),
                x.len()
            )));
        }
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut current = x.to_vec();
        for (layer, act) in self.layers.iter().zip(&self.activations) {
            let mut next = Vec::with_capacity(layer.out_dim);
            layer.affine(&current, &mut next);
            for v in &mut next {
                *v = act.apply(*v);
            }
            outputs.push(next.clone());
            current = next;
        }
        let tape = MlpTape {
            input: x.to_vec(),
            outputs,
        };
        Ok((current, tape))
    }

    /// Reverse pass. `upstream` is dL/d(output); returns parameter gradients
    /// and dL/d(input). The tape must come from `forward_recorded` on this
    /// same architecture.
    pub fn backward(&self, tape: &MlpTape, upstream: &[f64]) -> Result<(MlpGrad, Vec<f64>)> {
        if tape.outputs.len() != self.layers.len() {
            return Err(Error::Usage(
                "tape does not match network depth".to_string(),
            ));
        }
        if upstream.len() != self.out_dim() {
            return Err(Error::Shape(format!(
                "upstream dim {} but output dim {}",
                upstream.len(),
                self.out_dim()
            )));
        }
        let mut grad = MlpGrad::zeros_like(self);
        let mut delta = upstream.to_vec();
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let out = &tape.outputs[li];
            if out.len() != layer.out_dim {
                return Err(Error::Usage("tape layer width mismatch".to_string()));
            }
            let inp: &[f64] = if li == 0 {
                &tape.input
            } else {
                &tape.outputs[li - 1]
            };
            // Through the activation: delta_pre = delta * act'(y).
            for (d, y) in delta.iter_mut().zip(out) {
                *d *= self.activations[li].grad_from_output(*y);
            }
            let g = &mut grad.layers[li];
            let mut d_input = vec![0.0; layer.in_dim];
            for (o, &d) in delta.iter().enumerate() {
                g.bias[o] += d;
                let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                let grow = &mut g.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for i in 0..layer.in_dim {
                    grow[i] += d * inp[i];
                    d_input[i] += d * row[i];
                }
            }
            delta = d_input;
        }
        Ok((grad, delta))
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseParams::param_count).sum()
    }

    /// Appends parameters in a fixed order: per layer, weights row-major
    /// then bias. `read_flat` consumes the same order.
    pub fn write_flat(&self, out: &mut Vec<f64>) {
        for layer in &self.layers {
            out.extend_from_slice(&layer.weights);
            out.extend_from_slice(&layer.bias);
        }
    }

    pub fn read_flat(&mut self, reader: &mut FlatReader) -> Result<()> {
        for layer in &mut self.layers {
            let w = reader.take(layer.weights.len())?;
            layer.weights.copy_from_slice(w);
            let b = reader.take(layer.bias.len())?;
            layer.bias.copy_from_slice(b);
        }
        Ok(())
    }
}

impl MlpGrad {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Self {
            layers: mlp
                .layers
                .iter()
                .map(|l| DenseParams::zeros(l.in_dim, l.out_dim))
                .collect(),
        }
    }

    pub fn accumulate(&mut self, other: &MlpGrad) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x += y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for layer in &mut self.layers {
            for w in &mut layer.weights {
                *w *= factor;
            }
            for b in &mut layer.bias {
                *b *= factor;
            }
        }
    }

    pub fn write_flat(&self, out: &mut Vec<f64>) {
        for layer in &self.layers {
            out.extend_from_slice(&layer.weights);
            out.extend_from_slice(&layer.bias);
        }
    }
}

/// Sequential cursor over a flat parameter vector.
pub struct FlatReader<'a> {
    data: &'a [f64],
    pos: usize,
}

impl<'a> FlatReader<'a> {
    pub fn new(data: &'a [f64]) -> Self {
        Self { data, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [f64]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Shape(format!(
                "flat vector exhausted: need {} more values, {} remain",
                n,
                self.data.len() - self.pos
            )));
        }
        let slice = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    pub fn finish(self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(Error::Shape(format!(
                "flat vector has {} unread values",
                self.data.len() - self.pos
            )));
        }
        Ok(())
    }
}
