//! Network architecture: the layer grammar, shapes, parameters, and the
//! per-bin linear maps between layers together with their adjoints.
//!
//! Architecture strings separate layers with `-`. The first token is the
//! input, either a neuron count (`250`) or a spatial shape `WxH` / `WxHxC`.
//! Later tokens are `N` (dense), `No` (dense output, last token only),
//! `NcK` (N filters of KxK, valid padding, stride 1) and `Na` (NxN sum
//! aggregation).

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::forward::NeuronConfig;
use crate::kernel::KernelConfig;
use crate::signal::{SampledSignal, SimConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Flat(usize),
    Spatial {
        width: usize,
        height: usize,
        channels: usize,
    },
}

impl Shape {
    pub fn neurons(&self) -> usize {
        match *self {
            Shape::Flat(n) => n,
            Shape::Spatial {
                width,
                height,
                channels,
            } => width * height * channels,
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Shape::Flat(n) => write!(f, "{n}"),
            Shape::Spatial {
                width,
                height,
                channels: 1,
            } => write!(f, "{width}x{height}"),
            Shape::Spatial {
                width,
                height,
                channels,
            } => write!(f, "{width}x{height}x{channels}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Input(Shape),
    Dense(usize),
    Conv { filters: usize, size: usize },
    Aggregate(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    /// Output shape of this layer.
    pub shape: Shape,
}

impl LayerSpec {
    pub fn learnable(&self) -> bool {
        matches!(self.kind, LayerKind::Dense(_) | LayerKind::Conv { .. })
    }
}

/// The linear map from layer `l` to layer `l + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transition {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Conv {
        width: usize,
        height: usize,
        in_channels: usize,
        filters: usize,
        size: usize,
    },
    Aggregate {
        width: usize,
        height: usize,
        channels: usize,
        block: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    layers: Vec<LayerSpec>,
    transitions: Vec<Transition>,
}

impl NetworkSpec {
    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    /// Number of non-input layers.
    pub fn depth(&self) -> usize {
        self.transitions.len()
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.shape.neurons()).collect()
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].shape.neurons()
    }

    pub fn output_size(&self) -> usize {
        self.layers.last().unwrap().shape.neurons()
    }
}

impl fmt::Display for NetworkSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_architecture(self))
    }
}

fn token_error(index: usize, token: &str, message: impl Into<String>) -> Error {
    Error::parse(format!("token {} {token:?}", index + 1), message)
}

fn parse_count(index: usize, token: &str, digits: &str) -> Result<usize> {
    match digits.parse::<usize>() {
        Ok(n) if n > 0 => Ok(n),
        _ => Err(token_error(index, token, format!("expected a positive integer, got {digits:?}"))),
    }
}

fn parse_input(token: &str) -> Result<Shape> {
    if !token.contains('x') {
        return Ok(Shape::Flat(parse_count(0, token, token)?));
    }
    let dims = token
        .split('x')
        .map(|d| parse_count(0, token, d))
        .collect::<Result<Vec<_>>>()?;
    match dims[..] {
        [width, height] => Ok(Shape::Spatial {
            width,
            height,
            channels: 1,
        }),
        [width, height, channels] => Ok(Shape::Spatial {
            width,
            height,
            channels,
        }),
        _ => Err(token_error(0, token, "input shape must be WxH or WxHxC")),
    }
}

/// Parses the `-`/`x` architecture notation into a checked spec.
pub fn parse_architecture(text: &str) -> Result<NetworkSpec> {
    let tokens: Vec<&str> = text.trim().split('-').map(str::trim).collect();
    if tokens.len() < 2 || tokens.iter().any(|t| t.is_empty()) {
        return Err(Error::parse(
            "architecture",
            format!("need an input and at least one layer, got {text:?}"),
        ));
    }
    let input = parse_input(tokens[0])?;
    let mut layers = vec![LayerSpec {
        kind: LayerKind::Input(input),
        shape: input,
    }];
    let mut transitions = Vec::new();
    let last = tokens.len() - 1;

    for (index, &token) in tokens.iter().enumerate().skip(1) {
        let prev = layers.last().unwrap().shape;
        let (kind, shape, transition) = if let Some(body) = token.strip_suffix('a') {
            let block = parse_count(index, token, body)?;
            let Shape::Spatial {
                width,
                height,
                channels,
            } = prev
            else {
                return Err(token_error(index, token, "aggregation needs a spatial input"));
            };
            if width % block != 0 || height % block != 0 {
                return Err(token_error(
                    index,
                    token,
                    format!("{width}x{height} input is not divisible into {block}x{block} blocks"),
                ));
            }
            (
                LayerKind::Aggregate(block),
                Shape::Spatial {
                    width: width / block,
                    height: height / block,
                    channels,
                },
                Transition::Aggregate {
                    width,
                    height,
                    channels,
                    block,
                },
            )
        } else if let Some((f, k)) = token.split_once('c') {
            let filters = parse_count(index, token, f)?;
            let size = parse_count(index, token, k)?;
            let Shape::Spatial {
                width,
                height,
                channels,
            } = prev
            else {
                return Err(token_error(index, token, "convolution needs a spatial input"));
            };
            if size > width || size > height {
                return Err(token_error(
                    index,
                    token,
                    format!("{size}x{size} filter exceeds {width}x{height} input"),
                ));
            }
            (
                LayerKind::Conv { filters, size },
                Shape::Spatial {
                    width: width - size + 1,
                    height: height - size + 1,
                    channels: filters,
                },
                Transition::Conv {
                    width,
                    height,
                    in_channels: channels,
                    filters,
                    size,
                },
            )
        } else {
            let digits = match token.strip_suffix('o') {
                Some(d) if index == last => d,
                Some(_) => {
                    return Err(token_error(index, token, "the 'o' suffix is only allowed on the last layer"))
                }
                None => token,
            };
            let outputs = parse_count(index, token, digits)?;
            (
                LayerKind::Dense(outputs),
                Shape::Flat(outputs),
                Transition::Dense {
                    inputs: prev.neurons(),
                    outputs,
                },
            )
        };
        layers.push(LayerSpec { kind, shape });
        transitions.push(transition);
    }
    Ok(NetworkSpec { layers, transitions })
}

pub fn render_architecture(spec: &NetworkSpec) -> String {
    spec.layers
        .iter()
        .map(|l| match l.kind {
            LayerKind::Input(shape) => shape.to_string(),
            LayerKind::Dense(n) => n.to_string(),
            LayerKind::Conv { filters, size } => format!("{filters}c{size}"),
            LayerKind::Aggregate(block) => format!("{block}a"),
        })
        .collect::<Vec<_>>()
        .join("-")
}

impl Transition {
    pub fn inputs(&self) -> usize {
        match *self {
            Transition::Dense { inputs, .. } => inputs,
            Transition::Conv {
                width,
                height,
                in_channels,
                ..
            } => width * height * in_channels,
            Transition::Aggregate {
                width,
                height,
                channels,
                ..
            } => width * height * channels,
        }
    }

    pub fn outputs(&self) -> usize {
        match *self {
            Transition::Dense { outputs, .. } => outputs,
            Transition::Conv {
                width,
                height,
                filters,
                size,
                ..
            } => (width - size + 1) * (height - size + 1) * filters,
            Transition::Aggregate {
                width,
                height,
                channels,
                block,
            } => (width / block) * (height / block) * channels,
        }
    }

    pub fn learnable(&self) -> bool {
        !matches!(self, Transition::Aggregate { .. })
    }

    /// Weight tensor dimensions; empty for the frozen aggregation.
    pub fn weight_dims(&self) -> Vec<usize> {
        match *self {
            Transition::Dense { inputs, outputs } => vec![outputs, inputs],
            Transition::Conv {
                in_channels,
                filters,
                size,
                ..
            } => vec![filters, in_channels, size, size],
            Transition::Aggregate { .. } => Vec::new(),
        }
    }

    pub fn weight_count(&self) -> usize {
        if self.learnable() {
            self.weight_dims().iter().product()
        } else {
            0
        }
    }

    pub fn fan_in(&self) -> usize {
        match *self {
            Transition::Dense { inputs, .. } => inputs,
            Transition::Conv {
                in_channels, size, ..
            } => in_channels * size * size,
            Transition::Aggregate { block, .. } => block * block,
        }
    }

    fn check(&self, weights: &[f64], x: &SampledSignal, channels: usize, what: &str) -> Result<()> {
        if x.channels() != channels {
            return Err(Error::Shape(format!(
                "{what}: expected {channels} channels, got {}",
                x.channels()
            )));
        }
        if weights.len() != self.weight_count() {
            return Err(Error::Shape(format!(
                "{what}: expected {} weights, got {}",
                self.weight_count(),
                weights.len()
            )));
        }
        Ok(())
    }

    /// The feedforward potential `W a` evaluated independently at every bin.
    pub fn apply(&self, weights: &[f64], a: &SampledSignal) -> Result<SampledSignal> {
        self.check(weights, a, self.inputs(), "apply_linear")?;
        let ns = a.ns();
        let mut out = SampledSignal::zeros(self.outputs(), ns, a.ts());
        match *self {
            Transition::Dense { inputs, outputs } => {
                for i in 0..outputs {
                    let row = &weights[i * inputs..(i + 1) * inputs];
                    let dst = out.channel_mut(i);
                    for (j, &w) in row.iter().enumerate() {
                        if w == 0.0 {
                            continue;
                        }
                        axpy(w, a.channel(j), dst);
                    }
                }
            }
            Transition::Conv {
                width,
                height,
                in_channels,
                filters,
                size,
            } => {
                let (ow, oh) = (width - size + 1, height - size + 1);
                for f in 0..filters {
                    for c in 0..in_channels {
                        for ky in 0..size {
                            for kx in 0..size {
                                let w = weights[((f * in_channels + c) * size + ky) * size + kx];
                                if w == 0.0 {
                                    continue;
                                }
                                for y in 0..oh {
                                    for x in 0..ow {
                                        let src = (c * height + y + ky) * width + x + kx;
                                        let dst = (f * oh + y) * ow + x;
                                        axpy(w, a.channel(src), out.channel_mut(dst));
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Transition::Aggregate {
                width,
                height,
                channels,
                block,
            } => {
                let (ow, oh) = (width / block, height / block);
                for c in 0..channels {
                    for y in 0..height {
                        for x in 0..width {
                            let src = (c * height + y) * width + x;
                            let dst = (c * oh + y / block) * ow + x / block;
                            axpy(1.0, a.channel(src), out.channel_mut(dst));
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Transpose of [`Transition::apply`] at every bin.
    pub fn adjoint(&self, weights: &[f64], delta: &SampledSignal) -> Result<SampledSignal> {
        self.check(weights, delta, self.outputs(), "adjoint_linear")?;
        let mut out = SampledSignal::zeros(self.inputs(), delta.ns(), delta.ts());
        match *self {
            Transition::Dense { inputs, outputs } => {
                for i in 0..outputs {
                    let row = &weights[i * inputs..(i + 1) * inputs];
                    let src = delta.channel(i);
                    for (j, &w) in row.iter().enumerate() {
                        if w == 0.0 {
                            continue;
                        }
                        axpy(w, src, out.channel_mut(j));
                    }
                }
            }
            Transition::Conv {
                width,
                height,
                in_channels,
                filters,
                size,
            } => {
                let (ow, oh) = (width - size + 1, height - size + 1);
                for f in 0..filters {
                    for c in 0..in_channels {
                        for ky in 0..size {
                            for kx in 0..size {
                                let w = weights[((f * in_channels + c) * size + ky) * size + kx];
                                if w == 0.0 {
                                    continue;
                                }
                                for y in 0..oh {
                                    for x in 0..ow {
                                        let dst = (c * height + y + ky) * width + x + kx;
                                        let src = (f * oh + y) * ow + x;
                                        axpy(w, delta.channel(src), out.channel_mut(dst));
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Transition::Aggregate {
                width,
                height,
                channels,
                block,
            } => {
                let (ow, oh) = (width / block, height / block);
                for c in 0..channels {
                    for y in 0..height {
                        for x in 0..width {
                            let dst = (c * height + y) * width + x;
                            let src = (c * oh + y / block) * ow + x / block;
                            out.channel_mut(dst).copy_from_slice(delta.channel(src));
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// `Ts * sum_n delta[n] a[n]^T`, folded onto the shared weights for convolution.
    /// Aggregation has no weights and returns an empty vector.
    pub fn weight_gradient(&self, delta: &SampledSignal, a: &SampledSignal) -> Result<Vec<f64>> {
        if delta.channels() != self.outputs() || a.channels() != self.inputs() || delta.ns() != a.ns() {
            return Err(Error::Shape(format!(
                "weight gradient: delta {}x{}, a {}x{} for a {}->{} map",
                delta.channels(),
                delta.ns(),
                a.channels(),
                a.ns(),
                self.inputs(),
                self.outputs()
            )));
        }
        let ts = a.ts();
        let mut grad = vec![0.0; self.weight_count()];
        match *self {
            Transition::Dense { inputs, outputs } => {
                for i in 0..outputs {
                    let d = delta.channel(i);
                    if d.iter().all(|&v| v == 0.0) {
                        continue;
                    }
                    for j in 0..inputs {
                        grad[i * inputs + j] = ts * dot(d, a.channel(j));
                    }
                }
            }
            Transition::Conv {
                width,
                height,
                in_channels,
                filters,
                size,
            } => {
                let (ow, oh) = (width - size + 1, height - size + 1);
                for f in 0..filters {
                    for c in 0..in_channels {
                        for ky in 0..size {
                            for kx in 0..size {
                                let mut acc = 0.0;
                                for y in 0..oh {
                                    for x in 0..ow {
                                        let src = (c * height + y + ky) * width + x + kx;
                                        let dst = (f * oh + y) * ow + x;
                                        acc += dot(delta.channel(dst), a.channel(src));
                                    }
                                }
                                grad[((f * in_channels + c) * size + ky) * size + kx] = ts * acc;
                            }
                        }
                    }
                }
            }
            Transition::Aggregate { .. } => {}
        }
        Ok(grad)
    }
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Weights of the map into layer `l + 1` and axonal delays of layer `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weights: Vec<f64>,
    pub delays: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitConfig {
    /// Weights are drawn from `U(-gain / sqrt(fan_in), gain / sqrt(fan_in))`.
    pub gain: f64,
}

impl InitConfig {
    /// `3 * theta` per millisecond of `tau_s`: a few coincident spikes through
    /// typical weights reach threshold.
    pub fn for_neuron(neuron: &NeuronConfig) -> Self {
        Self {
            gain: 3.0 * neuron.theta / neuron.tau_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    pub params: Vec<LayerParams>,
    pub neuron: NeuronConfig,
    pub sim: SimConfig,
}

impl Network {
    /// A network with all weights and delays zero (aggregation weights are implicit).
    pub fn zeros(spec: NetworkSpec, neuron: NeuronConfig, sim: SimConfig) -> Result<Self> {
        neuron.validate()?;
        let sizes = spec.layer_sizes();
        let params = spec
            .transitions()
            .iter()
            .zip(&sizes)
            .map(|(t, &n)| LayerParams {
                weights: vec![0.0; t.weight_count()],
                delays: vec![0.0; n],
            })
            .collect();
        Ok(Self {
            spec,
            params,
            neuron,
            sim,
        })
    }

    pub fn from_params(
        spec: NetworkSpec,
        params: Vec<LayerParams>,
        neuron: NeuronConfig,
        sim: SimConfig,
    ) -> Result<Self> {
        let net = Self {
            spec,
            params,
            neuron,
            sim,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        self.neuron.validate()?;
        if self.params.len() != self.spec.depth() {
            return Err(Error::Shape(format!(
                "{} parameter blocks for {} layer transitions",
                self.params.len(),
                self.spec.depth()
            )));
        }
        for (l, (t, p)) in self.spec.transitions().iter().zip(&self.params).enumerate() {
            if p.weights.len() != t.weight_count() || p.delays.len() != t.inputs() {
                return Err(Error::Shape(format!(
                    "layer {l}: {} weights / {} delays, expected {} / {}",
                    p.weights.len(),
                    p.delays.len(),
                    t.weight_count(),
                    t.inputs()
                )));
            }
            if p.delays.iter().any(|&d| d.is_nan() || d < 0.0) {
                return Err(Error::Range(format!("layer {l} has a negative or NaN delay")));
            }
        }
        Ok(())
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn transition(&self, l: usize) -> &Transition {
        &self.spec.transitions()[l]
    }

    pub fn kernel_config(&self) -> Result<KernelConfig> {
        KernelConfig::new(self.neuron.tau_s, self.neuron.tau_r, self.neuron.theta, self.sim.ts())
    }

    /// Apply the linear map into layer `l + 1`.
    pub fn apply_linear(&self, l: usize, a: &SampledSignal) -> Result<SampledSignal> {
        self.transition(l).apply(&self.params[l].weights, a)
    }

    pub fn adjoint_linear(&self, l: usize, delta: &SampledSignal) -> Result<SampledSignal> {
        self.transition(l).adjoint(&self.params[l].weights, delta)
    }

    /// Delays are learnable only on transitions whose weights are learnable.
    pub fn learnable(&self, l: usize) -> bool {
        self.transition(l).learnable()
    }

    pub fn learnable_parameter_count(&self) -> usize {
        (0..self.spec.depth())
            .filter(|&l| self.learnable(l))
            .map(|l| self.params[l].weights.len() + self.params[l].delays.len())
            .sum()
    }

    pub fn clamp_delays(&mut self) {
        for p in &mut self.params {
            for d in &mut p.delays {
                if *d < 0.0 {
                    *d = 0.0;
                }
            }
        }
    }
}

/// Random uniform weights, zero delays, deterministic per seed.
pub fn init_network(
    spec: NetworkSpec,
    init: InitConfig,
    neuron: NeuronConfig,
    sim: SimConfig,
    seed: u64,
) -> Result<Network> {
    if !(init.gain.is_finite() && init.gain >= 0.0) {
        return Err(Error::Param(format!("init gain must be non-negative, got {}", init.gain)));
    }
    let mut net = Network::zeros(spec, neuron, sim)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (t, p) in net.spec.transitions.iter().zip(net.params.iter_mut()) {
        if !t.learnable() {
            continue;
        }
        let bound = init.gain / (t.fan_in() as f64).sqrt();
        for w in &mut p.weights {
            *w = bound * (2.0 * rng.gen::<f64>() - 1.0);
        }
    }
    Ok(net)
}

#[cfg(test)]
pub(crate) fn random_signal(rng: &mut impl Rng, channels: usize, ns: usize, ts: f64) -> SampledSignal {
    let values = (0..channels * ns).map(|_| rng.gen_range(-1.0..1.0)).collect();
    SampledSignal::from_values(channels, ns, ts, values).unwrap()
}
