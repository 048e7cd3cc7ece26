//! Minimal dense-network substrate: forward passes with gradient tapes,
//! exact reverse-mode gradients, an adaptive-moment optimizer, sinusoidal
//! step embeddings, and bit-exact checkpoints.
//!
//! Everything is plain `f64` and single-threaded by construction; a net is
//! `Clone`, and read-only forward passes on separate clones are safe to run
//! concurrently.

use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, RngExt};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Mish,
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Mish => x * softplus(x).tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Mish => {
                let sp = softplus(x);
                let t = sp.tanh();
                let sigmoid = 1.0 / (1.0 + (-x).exp());
                t + x * (1.0 - t * t) * sigmoid
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Activation::Mish => "mish",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mish" => Ok(Activation::Mish),
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

/// Numerically stable ln(1 + e^x).
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// Row-major `[out_dim × in_dim]`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<Layer>,
}

impl DenseNet {
    /// Builds a net from a dimension chain `dims[0] → dims[1] → …`, one
    /// activation per layer. Weights are initialized uniformly in
    /// `±1/sqrt(fan_in)`, biases at zero.
    pub fn new<R: Rng + ?Sized>(
        dims: &[usize],
        activations: &[Activation],
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config("a net needs at least one layer".into()));
        }
        if activations.len() != dims.len() - 1 {
            return Err(Error::Config(format!(
                "expected {} activations for {} layers",
                dims.len() - 1,
                dims.len() - 1
            )));
        }
        if dims.contains(&0) {
            return Err(Error::Config("layer dimensions must be nonzero".into()));
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for (l, window) in dims.windows(2).enumerate() {
            let (in_dim, out_dim) = (window[0], window[1]);
            let bound = 1.0 / (in_dim as f64).sqrt();
            let weight = (0..in_dim * out_dim)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            layers.push(Layer {
                weight,
                bias: vec![0.0; out_dim],
                in_dim,
                out_dim,
                activation: activations[l],
            });
        }
        Ok(DenseNet { layers })
    }

    /// Convenience constructor: hidden layers share one activation, the
    /// output layer is linear.
    pub fn mlp<R: Rng + ?Sized>(
        in_dim: usize,
        hidden: &[usize],
        out_dim: usize,
        hidden_activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(in_dim);
        dims.extend_from_slice(hidden);
        dims.push(out_dim);
        let mut acts = vec![hidden_activation; hidden.len()];
        acts.push(Activation::Identity);
        DenseNet::new(&dims, &acts, rng)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Forward pass without recording a tape.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut current = input.to_vec();
        for layer in &self.layers {
            current = layer_forward(layer, &current).0;
        }
        Ok(current)
    }

    /// Forward pass recording the primal values the backward pass needs.
    pub fn forward_traced(&self, input: &[f64]) -> Result<(Vec<f64>, Tape)> {
        self.check_input(input)?;
        let mut tape = Tape {
            inputs: Vec::with_capacity(self.layers.len()),
            preacts: Vec::with_capacity(self.layers.len()),
            consumed: false,
        };
        let mut current = input.to_vec();
        for layer in &self.layers {
            tape.inputs.push(current.clone());
            let (out, preact) = layer_forward(layer, &current);
            tape.preacts.push(preact);
            current = out;
        }
        Ok((current, tape))
    }

    /// Reverse pass: gradients of `adjoint · output` with respect to every
    /// parameter, plus the adjoint of the input vector. The tape is
    /// consumed; reusing it is an error.
    pub fn backward(&self, tape: &mut Tape, output_adjoint: &[f64]) -> Result<Gradients> {
        if tape.consumed {
            return Err(Error::TapeReused);
        }
        if tape.inputs.len() != self.layers.len() {
            return Err(Error::Dimension {
                context: "backward tape",
                expected: self.layers.len(),
                actual: tape.inputs.len(),
            });
        }
        if output_adjoint.len() != self.output_dim() {
            return Err(Error::Dimension {
                context: "backward adjoint",
                expected: self.output_dim(),
                actual: output_adjoint.len(),
            });
        }
        tape.consumed = true;

        let mut grads = self.zero_gradients();
        let mut upstream = output_adjoint.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let x = &tape.inputs[l];
            let z = &tape.preacts[l];
            let lg = &mut grads.layers[l];
            let mut downstream = vec![0.0; layer.in_dim];
            for o in 0..layer.out_dim {
                let gz = upstream[o] * layer.activation.derivative(z[o]);
                lg.bias[o] += gz;
                let row = &layer.weight[o * layer.in_dim..(o + 1) * layer.in_dim];
                let grow = &mut lg.weight[o * layer.in_dim..(o + 1) * layer.in_dim];
                for i in 0..layer.in_dim {
                    grow[i] += gz * x[i];
                    downstream[i] += gz * row[i];
                }
            }
            upstream = downstream;
        }
        grads.input = upstream;
        Ok(grads)
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            layers: self
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weight: vec![0.0; l.weight.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
            input: vec![0.0; self.input_dim()],
        }
    }

    /// Errors if any parameter is NaN or infinite.
    pub fn check_finite(&self) -> Result<()> {
        for (l, layer) in self.layers.iter().enumerate() {
            if layer
                .weight
                .iter()
                .chain(&layer.bias)
                .any(|v| !v.is_finite())
            {
                return Err(Error::NonFiniteParam {
                    layer: l,
                    episode: 0,
                    step: 0,
                });
            }
        }
        Ok(())
    }

    /// Flat read-only view of all parameters, layer by layer, weights
    /// before biases. Used by finite-difference checks.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weight);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    /// Writes a flat parameter vector back (inverse of [`DenseNet::flat_params`]).
    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Dimension {
                context: "set_flat_params",
                expected: self.param_count(),
                actual: params.len(),
            });
        }
        let mut idx = 0;
        for l in &mut self.layers {
            let wlen = l.weight.len();
            l.weight.copy_from_slice(&params[idx..idx + wlen]);
            idx += wlen;
            let blen = l.bias.len();
            l.bias.copy_from_slice(&params[idx..idx + blen]);
            idx += blen;
        }
        Ok(())
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::Dimension {
                context: "forward input",
                expected: self.input_dim(),
                actual: input.len(),
            });
        }
        Ok(())
    }
}

fn layer_forward(layer: &Layer, input: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut preact = layer.bias.clone();
    for o in 0..layer.out_dim {
        let row = &layer.weight[o * layer.in_dim..(o + 1) * layer.in_dim];
        let mut acc = 0.0;
        for i in 0..layer.in_dim {
            acc += row[i] * input[i];
        }
        preact[o] += acc;
    }
    let out = preact.iter().map(|&z| layer.activation.apply(z)).collect();
    (out, preact)
}

/// Primal record of one traced forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    inputs: Vec<Vec<f64>>,
    preacts: Vec<Vec<f64>>,
    consumed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Parameter gradients plus the input adjoint of one (or an accumulated
/// batch of) backward pass(es).
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
    pub input: Vec<f64>,
}

impl Gradients {
    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weight.iter_mut().zip(&b.weight) {
                *x += y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
        for (x, y) in self.input.iter_mut().zip(&other.input) {
            *x += y;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            for x in &mut l.weight {
                *x *= factor;
            }
            for x in &mut l.bias {
                *x *= factor;
            }
        }
        for x in &mut self.input {
            *x *= factor;
        }
    }

    /// Flat view matching [`DenseNet::flat_params`] ordering.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(&l.weight);
            out.extend_from_slice(&l.bias);
        }
        out
    }
}

/// Adaptive-moment optimizer state for one net.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<LayerGrad>,
    v: Vec<LayerGrad>,
    pub step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(net: &DenseNet, learning_rate: f64) -> Self {
        let zeros = || {
            net.layers()
                .iter()
                .map(|l| LayerGrad {
                    weight: vec![0.0; l.weight.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect::<Vec<_>>()
        };
        AdamState {
            m: zeros(),
            v: zeros(),
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected adaptive-moment update. Rejects non-finite gradients,
/// naming the offending layer.
pub fn adam_step(net: &mut DenseNet, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    if grads.layers.len() != net.layers.len() {
        return Err(Error::Dimension {
            context: "adam gradients",
            expected: net.layers.len(),
            actual: grads.layers.len(),
        });
    }
    for (l, lg) in grads.layers.iter().enumerate() {
        if lg.weight.iter().chain(&lg.bias).any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { layer: l });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for (l, layer) in net.layers.iter_mut().enumerate() {
        let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for i in 0..p.len() {
                m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
                v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
            }
        };
        update(
            &mut layer.weight,
            &grads.layers[l].weight,
            &mut state.m[l].weight,
            &mut state.v[l].weight,
        );
        update(
            &mut layer.bias,
            &grads.layers[l].bias,
            &mut state.m[l].bias,
            &mut state.v[l].bias,
        );
    }
    Ok(())
}

/// Soft parameter blend `target ← rate·source + (1−rate)·target`.
pub fn blend_params(source: &DenseNet, target: &mut DenseNet, rate: f64) -> Result<()> {
    if source.layers.len() != target.layers.len() {
        return Err(Error::Dimension {
            context: "blend_params",
            expected: source.layers.len(),
            actual: target.layers.len(),
        });
    }
    for (s, t) in source.layers.iter().zip(&mut target.layers) {
        for (sp, tp) in s.weight.iter().zip(&mut t.weight) {
            *tp = rate * sp + (1.0 - rate) * *tp;
        }
        for (sp, tp) in s.bias.iter().zip(&mut t.bias) {
            *tp = rate * sp + (1.0 - rate) * *tp;
        }
    }
    Ok(())
}

/// Sinusoidal positional embedding of a step index: interleaved
/// `sin(k·ω_i), cos(k·ω_i)` at geometric frequencies
/// `ω_i = 10000^(−2i/dim)`.
pub fn sinusoidal_embed(k: usize, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "embedding dim must be even and nonzero, got {dim}"
        )));
    }
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-((2 * i) as f64 / dim as f64) * 10_000f64.ln()).exp();
        let angle = k as f64 * freq;
        out[2 * i] = angle.sin();
        out[2 * i + 1] = angle.cos();
    }
    Ok(out)
}

// --- checkpoints -----------------------------------------------------------

const CHECKPOINT_MAGIC: &str = "totsched-checkpoint v1";

/// Layer being parsed: (out_dim, in_dim, activation, weights, bias).
type PendingLayer = (usize, usize, Activation, Vec<f64>, Option<Vec<f64>>);

/// A named collection of nets plus string metadata, written as flat text.
/// Parameters are stored as hexadecimal `f64` bit patterns, so a round
/// trip is bit-exact.
#[derive(Debug, Clone, Default)]
pub struct Checkpoint {
    pub meta: Vec<(String, String)>,
    pub nets: Vec<(String, DenseNet)>,
}

impl Checkpoint {
    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn net(&self, name: &str) -> Option<&DenseNet> {
        self.nets.iter().find(|(n, _)| n == name).map(|(_, n)| n)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        writeln!(w, "{CHECKPOINT_MAGIC}")?;
        for (k, v) in &self.meta {
            writeln!(w, "meta {k} {v}")?;
        }
        for (name, net) in &self.nets {
            writeln!(w, "net {name} {}", net.layers.len())?;
            for layer in &net.layers {
                writeln!(
                    w,
                    "layer {} {} {}",
                    layer.out_dim, layer.in_dim, layer.activation
                )?;
                for o in 0..layer.out_dim {
                    let row = &layer.weight[o * layer.in_dim..(o + 1) * layer.in_dim];
                    let hex: Vec<String> = row
                        .iter()
                        .map(|v| format!("{:016x}", v.to_bits()))
                        .collect();
                    writeln!(w, "w {}", hex.join(" "))?;
                }
                let hex: Vec<String> = layer
                    .bias
                    .iter()
                    .map(|v| format!("{:016x}", v.to_bits()))
                    .collect();
                writeln!(w, "b {}", hex.join(" "))?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let file = std::fs::File::open(path)?;
        let mut lines = BufReader::new(file).lines();
        let header = lines
            .next()
            .transpose()?
            .ok_or_else(|| Error::Checkpoint("empty file".into()))?;
        if header.trim() != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint(format!(
                "unexpected header `{}`",
                header.trim()
            )));
        }
        let mut ckpt = Checkpoint::default();
        let mut pending: Option<(String, usize, Vec<Layer>)> = None;
        let mut current_layer: Option<PendingLayer> = None;

        fn finish_layer(layers: &mut Vec<Layer>, layer: PendingLayer) -> Result<()> {
            let (out_dim, in_dim, activation, weight, bias) = layer;
            if weight.len() != out_dim * in_dim {
                return Err(Error::Checkpoint(format!(
                    "layer expects {} weights, found {}",
                    out_dim * in_dim,
                    weight.len()
                )));
            }
            let bias = bias.ok_or_else(|| Error::Checkpoint("layer missing bias line".into()))?;
            if bias.len() != out_dim {
                return Err(Error::Checkpoint("bias length mismatch".into()));
            }
            layers.push(Layer {
                weight,
                bias,
                in_dim,
                out_dim,
                activation,
            });
            Ok(())
        }

        fn finish_net(ckpt: &mut Checkpoint, pending: (String, usize, Vec<Layer>)) -> Result<()> {
            let (name, count, layers) = pending;
            if layers.len() != count {
                return Err(Error::Checkpoint(format!(
                    "net `{name}` expected {count} layers, found {}",
                    layers.len()
                )));
            }
            ckpt.nets.push((name, DenseNet { layers }));
            Ok(())
        }

        for line in lines {
            let line = line?;
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("meta") => {
                    let key = parts
                        .next()
                        .ok_or_else(|| Error::Checkpoint("meta line missing key".into()))?;
                    let value = line[5 + key.len()..].trim_start().to_string();
                    ckpt.meta.push((key.to_string(), value));
                }
                Some("net") => {
                    if let Some((_, _, layers)) = pending.as_mut() {
                        if let Some(layer) = current_layer.take() {
                            finish_layer(layers, layer)?;
                        }
                    }
                    if let Some(p) = pending.take() {
                        finish_net(&mut ckpt, p)?;
                    }
                    let name = parts
                        .next()
                        .ok_or_else(|| Error::Checkpoint("net line missing name".into()))?;
                    let count: usize = parts
                        .next()
                        .and_then(|c| c.parse().ok())
                        .ok_or_else(|| Error::Checkpoint("net line missing layer count".into()))?;
                    pending = Some((name.to_string(), count, Vec::new()));
                }
                Some("layer") => {
                    let layers = pending
                        .as_mut()
                        .map(|(_, _, l)| l)
                        .ok_or_else(|| Error::Checkpoint("layer outside net".into()))?;
                    if let Some(layer) = current_layer.take() {
                        finish_layer(layers, layer)?;
                    }
                    let out_dim: usize = parts
                        .next()
                        .and_then(|c| c.parse().ok())
                        .ok_or_else(|| Error::Checkpoint("bad layer dims".into()))?;
                    let in_dim: usize = parts
                        .next()
                        .and_then(|c| c.parse().ok())
                        .ok_or_else(|| Error::Checkpoint("bad layer dims".into()))?;
                    let act: Activation = parts
                        .next()
                        .ok_or_else(|| Error::Checkpoint("layer missing activation".into()))?
                        .parse()?;
                    current_layer = Some((out_dim, in_dim, act, Vec::new(), None));
                }
                Some("w") => {
                    let layer = current_layer
                        .as_mut()
                        .ok_or_else(|| Error::Checkpoint("weights outside layer".into()))?;
                    for tok in parts {
                        let bits = u64::from_str_radix(tok, 16)
                            .map_err(|e| Error::Checkpoint(format!("bad weight hex: {e}")))?;
                        layer.3.push(f64::from_bits(bits));
                    }
                }
                Some("b") => {
                    let layer = current_layer
                        .as_mut()
                        .ok_or_else(|| Error::Checkpoint("bias outside layer".into()))?;
                    let mut bias = Vec::new();
                    for tok in parts {
                        let bits = u64::from_str_radix(tok, 16)
                            .map_err(|e| Error::Checkpoint(format!("bad bias hex: {e}")))?;
                        bias.push(f64::from_bits(bits));
                    }
                    layer.4 = Some(bias);
                }
                Some(other) => {
                    return Err(Error::Checkpoint(format!("unknown record `{other}`")));
                }
                None => {}
            }
        }
        if let Some((_, _, layers)) = pending.as_mut() {
            if let Some(layer) = current_layer.take() {
                finish_layer(layers, layer)?;
            }
        }
        if let Some(p) = pending.take() {
            finish_net(&mut ckpt, p)?;
        }
        Ok(ckpt)
    }
}
