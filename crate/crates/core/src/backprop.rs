//! Error backpropagation through layers and through time.
//!
//! Starting from the output error `e(n_l)`, each layer computes
//! `delta(l) = rho(u(l)) * (eps_d ⊙ e(l))`, where `⊙` is correlation in time
//! with the layer's own delayed kernel, then `e(l-1) = W(l-1)^T delta(l)`.
//! Weight gradients pair `delta(l+1)` with `a(l)`; delay gradients pair
//! `e(l)` with `eps_dot_d * s(l)`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::forward::{Kernels, SignalCache};
use crate::kernel::{convolve_per_channel, correlate_per_channel, Kernel};
use crate::loss::{output_error, LossSpec};
use crate::signal::SampledSignal;
use crate::topology::Network;

/// Surrogate spike derivative `rho(u) = exp(-beta |u - theta|) / alpha`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateConfig {
    pub alpha: f64,
    pub beta: f64,
}

impl SurrogateConfig {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let cfg = Self { alpha, beta };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `alpha = 10`, `beta = 5 / theta`.
    pub fn for_theta(theta: f64) -> Self {
        Self {
            alpha: 10.0,
            beta: 5.0 / theta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0 && self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::Config(format!(
                "surrogate alpha and beta must be positive, got {} and {}",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }

    pub fn rho_scalar(&self, u: f64, theta: f64) -> f64 {
        (-self.beta * (u - theta).abs()).exp() / self.alpha
    }
}

pub fn rho(u: &SampledSignal, theta: f64, cfg: &SurrogateConfig) -> SampledSignal {
    let values = u.values().iter().map(|&v| cfg.rho_scalar(v, theta)).collect();
    SampledSignal::from_values(u.channels(), u.ns(), u.ts(), values).unwrap()
}

/// Gradient of one layer transition: weights into layer `l + 1`, delays of layer `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weights: Vec<f64>,
    pub delays: Vec<f64>,
}

/// One entry per layer transition; frozen (aggregation) entries stay zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGradient>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            layers: net
                .params
                .iter()
                .map(|p| LayerGradient {
                    weights: vec![0.0; p.weights.len()],
                    delays: vec![0.0; p.delays.len()],
                })
                .collect(),
        }
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.delays.iter_mut()))
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.delays.iter()).copied())
    }

    pub fn add_assign(&mut self, other: &Gradients) -> Result<()> {
        if self.layers.len() != other.layers.len()
            || self
                .layers
                .iter()
                .zip(&other.layers)
                .any(|(a, b)| a.weights.len() != b.weights.len() || a.delays.len() != b.delays.len())
        {
            return Err(Error::Shape("gradient shapes differ".into()));
        }
        for (a, b) in self.values_mut().zip(other.values()) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.values_mut() {
            *v *= factor;
        }
    }

    pub fn is_zero(&self) -> bool {
        self.values().all(|v| v == 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(f64::is_finite)
    }
}

/// Per-layer error and delta signals, for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct BackpropTrace {
    /// `e(l)` for `l = 0..=n_l`.
    pub e: Vec<SampledSignal>,
    /// `delta(l)` for `l = 1..=n_l`, stored at index `l - 1`.
    pub delta: Vec<SampledSignal>,
}

impl BackpropTrace {
    /// Writes `e_l.csv`, `delta_l.csv`, `u_l.csv` and `s_l.csv` matrices (one row per
    /// neuron, one column per bin).
    pub fn write_csv(&self, cache: &SignalCache, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        for (l, e) in self.e.iter().enumerate() {
            write_matrix(dir.join(format!("e_{l}.csv")), e)?;
            write_matrix(dir.join(format!("s_{l}.csv")), &cache.s[l])?;
        }
        for (i, d) in self.delta.iter().enumerate() {
            write_matrix(dir.join(format!("delta_{}.csv", i + 1)), d)?;
            write_matrix(dir.join(format!("u_{}.csv", i + 1)), &cache.u[i])?;
        }
        Ok(())
    }
}

/// One row per channel, one column per bin.
pub fn write_matrix(path: impl AsRef<Path>, signal: &SampledSignal) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for c in 0..signal.channels() {
        let row: Vec<String> = signal.channel(c).iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// `rho(u) * correlate(e, eps, d_c)` channel by channel.
pub fn delta_layer(
    e: &SampledSignal,
    u: &SampledSignal,
    epsilon: &Kernel,
    delays: &[f64],
    theta: f64,
    cfg: &SurrogateConfig,
) -> Result<SampledSignal> {
    e.check_same_shape(u, "delta")?;
    if delays.len() != e.channels() {
        return Err(Error::Shape(format!(
            "{} delays for {} channels",
            delays.len(),
            e.channels()
        )));
    }
    let mut delta = correlate_per_channel(e, epsilon, |c| delays[c])?;
    for (d, &uv) in delta.values_mut().iter_mut().zip(u.values()) {
        *d *= cfg.rho_scalar(uv, theta);
    }
    Ok(delta)
}

/// `e(l) = W(l)^T delta(l+1)` at every bin.
pub fn backprop_error(net: &Network, l: usize, delta_next: &SampledSignal) -> Result<SampledSignal> {
    net.adjoint_linear(l, delta_next)
}

/// `Ts * sum_n delta(l+1)[n] a(l)[n]^T` in the layout of the weight tensor of transition `l`.
pub fn weight_gradient(net: &Network, l: usize, delta_next: &SampledSignal, a: &SampledSignal) -> Result<Vec<f64>> {
    net.transition(l).weight_gradient(delta_next, a)
}

/// `-Ts * sum_n (eps_dot_d * s)[n] e[n]` per neuron.
pub fn delay_gradient(e: &SampledSignal, s: &SampledSignal, epsilon_dot: &Kernel, delays: &[f64]) -> Result<Vec<f64>> {
    e.check_same_shape(s, "delay gradient")?;
    if delays.len() != s.channels() {
        return Err(Error::Shape(format!(
            "{} delays for {} channels",
            delays.len(),
            s.channels()
        )));
    }
    let a_dot = convolve_per_channel(s, epsilon_dot, |c| delays[c])?;
    Ok((0..s.channels())
        .map(|c| {
            let dot: f64 = a_dot.channel(c).iter().zip(e.channel(c)).map(|(x, y)| x * y).sum();
            -s.ts() * dot
        })
        .collect())
}

/// Full gradient of the loss for a cached forward pass.
pub fn backward(net: &Network, cache: &SignalCache, loss: &LossSpec, surrogate: &SurrogateConfig) -> Result<Gradients> {
    let kernels = Kernels::for_network(net)?;
    let e_out = output_error(cache.output(), loss, &kernels.epsilon, &net.sim)?;
    Ok(backward_from_error(net, cache, &e_out, surrogate, &kernels)?.0)
}

/// Runs the pipeline from an explicit output error signal.
pub fn backward_from_error(
    net: &Network,
    cache: &SignalCache,
    e_out: &SampledSignal,
    surrogate: &SurrogateConfig,
    kernels: &Kernels,
) -> Result<(Gradients, BackpropTrace)> {
    let depth = net.spec().depth();
    if cache.depth() != depth || cache.s.len() != depth + 1 || cache.a.len() != depth + 1 {
        return Err(Error::Shape(format!(
            "cache has {} layers, network has {}",
            cache.depth(),
            depth
        )));
    }
    e_out.check_same_shape(cache.output(), "output error")?;
    surrogate.validate()?;

    let theta = net.neuron.theta;
    let mut grads = Gradients::zeros_like(net);
    let mut errors = vec![e_out.clone()];
    let mut deltas = Vec::with_capacity(depth);
    let output_delays = vec![0.0; e_out.channels()];

    for l in (1..=depth).rev() {
        let e = errors.last().unwrap();
        let delays = if l == depth { &output_delays } else { &net.params[l].delays };
        let delta = delta_layer(e, &cache.crossing_u(l), &kernels.epsilon, delays, theta, surrogate)?;
        let t = l - 1;
        let e_prev = backprop_error(net, t, &delta)?;
        if net.learnable(t) {
            grads.layers[t].weights = weight_gradient(net, t, &delta, &cache.a[t])?;
            grads.layers[t].delays = delay_gradient(&e_prev, &cache.s[t], &kernels.epsilon_dot, &net.params[t].delays)?;
        }
        deltas.push(delta);
        errors.push(e_prev);
    }
    errors.reverse();
    deltas.reverse();
    Ok((grads, BackpropTrace { e: errors, delta: deltas }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{forward, NeuronConfig};
    use crate::kernel::{make_epsilon, make_epsilon_dot, KernelConfig};
    use crate::loss::{error_precise, loss_value};
    use crate::signal::{poisson_spike_train, spikes_to_signal, SimConfig};
    use crate::topology::{init_network, parse_architecture, InitConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rho_landmarks() {
        let cfg = SurrogateConfig::new(4.0, 2.0).unwrap();
        let theta = 1.5;
        assert_eq!(cfg.rho_scalar(theta, theta), 0.25);
        let e1 = (-1.0f64).exp() / 4.0;
        assert!((cfg.rho_scalar(theta + 0.5, theta) - e1).abs() < 1e-15);
        assert!((cfg.rho_scalar(theta - 0.5, theta) - e1).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let x: f64 = rng.gen_range(-10.0..10.0);
            let (a, b) = (cfg.rho_scalar(theta + x, theta), cfg.rho_scalar(theta - x, theta));
            assert!((a - b).abs() <= 1e-12 * a);
            assert!(cfg.rho_scalar(theta + x, theta) > 0.0);
        }
        assert!(SurrogateConfig::new(0.0, 1.0).is_err());
    }

    fn kcfg() -> KernelConfig {
        KernelConfig::new(1.5, 1.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn zero_error_zero_delta() {
        let eps = make_epsilon(&kcfg()).unwrap();
        let e = SampledSignal::zeros(2, 20, 1.0);
        let u = SampledSignal::from_values(2, 20, 1.0, vec![0.9; 40]).unwrap();
        let cfg = SurrogateConfig::for_theta(1.0);
        assert!(delta_layer(&e, &u, &eps, &[0.0, 1.0], 1.0, &cfg).unwrap().is_all_zero());
    }

    #[test]
    fn impulse_error_reaches_earlier_bins() {
        let eps = make_epsilon(&kcfg()).unwrap();
        let ns = 20;
        let mut e = SampledSignal::zeros(1, ns, 1.0);
        e.set(0, ns - 1, 1.0);
        let u = SampledSignal::from_values(1, ns, 1.0, vec![0.7; ns]).unwrap();
        let cfg = SurrogateConfig::for_theta(1.0);
        let delta = delta_layer(&e, &u, &eps, &[0.0], 1.0, &cfg).unwrap();
        let r = cfg.rho_scalar(0.7, 1.0);
        for n in 0..ns {
            let expected = r * eps.eval((ns - 1 - n) as f64);
            assert!((delta.get(0, n) - expected).abs() < 1e-15);
        }
        assert!(delta.get(0, ns - 3) > 0.0);
    }

    #[test]
    fn far_from_threshold_delta_is_bounded() {
        let eps = make_epsilon(&kcfg()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let e = crate::topology::random_signal(&mut rng, 1, 30, 1.0);
        let u = SampledSignal::from_values(1, 30, 1.0, (0..30).map(|n| -5.0 - n as f64).collect()).unwrap();
        let cfg = SurrogateConfig::new(2.0, 3.0).unwrap();
        let delta = delta_layer(&e, &u, &eps, &[0.0], 1.0, &cfg).unwrap();
        let corr = crate::kernel::correlate(&e, &eps, 0.0).unwrap();
        let bound = (-3.0f64 * 6.0).exp() / 2.0;
        let norm = |s: &SampledSignal| s.values().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm(&delta) <= bound * norm(&corr) * (1.0 + 1e-12));
    }

    #[test]
    fn dense_weight_gradient_matches_naive_loops() {
        let spec = parse_architecture("5-4").unwrap();
        let neuron = NeuronConfig::new(1.0, 1.0, 1.0).unwrap();
        let net = crate::topology::Network::zeros(spec, neuron, SimConfig::new(12.0, 0.5).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let delta = crate::topology::random_signal(&mut rng, 4, 24, 0.5);
        let a = crate::topology::random_signal(&mut rng, 5, 24, 0.5);
        let g = weight_gradient(&net, 0, &delta, &a).unwrap();
        for i in 0..4 {
            for j in 0..5 {
                let mut acc = 0.0;
                for n in 0..24 {
                    acc += delta.get(i, n) * a.get(j, n);
                }
                assert!((g[i * 5 + j] - 0.5 * acc).abs() < 1e-12);
            }
        }
        let mut single_d = SampledSignal::zeros(4, 24, 0.5);
        let mut single_a = SampledSignal::zeros(5, 24, 0.5);
        single_d.set(2, 7, 3.0);
        single_a.set(1, 7, -2.0);
        let g = weight_gradient(&net, 0, &single_d, &single_a).unwrap();
        assert_eq!(g[2 * 5 + 1], 0.5 * 3.0 * -2.0);
        assert_eq!(g.iter().filter(|&&v| v != 0.0).count(), 1);
        let zero = weight_gradient(&net, 0, &SampledSignal::zeros(4, 24, 0.5), &a).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn delay_gradient_zero_cases() {
        let eps_dot = make_epsilon_dot(&kcfg()).unwrap();
        let mut s = SampledSignal::zeros(2, 20, 1.0);
        s.set(0, 3, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = crate::topology::random_signal(&mut rng, 2, 20, 1.0);
        let g = delay_gradient(&e, &s, &eps_dot, &[0.4, 0.4]).unwrap();
        assert!(g[0] != 0.0);
        assert_eq!(g[1], 0.0);
        let g = delay_gradient(&SampledSignal::zeros(2, 20, 1.0), &s, &eps_dot, &[0.4, 0.4]).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    fn poisson_setup() -> (crate::topology::Network, SignalCache, SampledSignal) {
        let spec = parse_architecture("250-25-1").unwrap();
        let neuron = NeuronConfig::new(10.0, 1.0, 1.0).unwrap();
        let sim = SimConfig::new(50.0, 1.0).unwrap();
        let net = init_network(spec, InitConfig::for_neuron(&neuron), neuron, sim, 3).unwrap();
        let input = poisson_spike_train(250, 40.0, &sim, 1).unwrap();
        let target = spikes_to_signal(&poisson_spike_train(1, 100.0, &sim, 2).unwrap(), &sim).unwrap();
        let cache = forward(&net, &input).unwrap();
        (net, cache, target)
    }

    #[test]
    fn poisson_task_gradient_shapes() {
        let (net, cache, target) = poisson_setup();
        let cfg = SurrogateConfig::for_theta(10.0);
        let g = backward(&net, &cache, &LossSpec::Precise { target }, &cfg).unwrap();
        assert_eq!(g.layers[0].weights.len(), 25 * 250);
        assert_eq!(g.layers[0].delays.len(), 250);
        assert_eq!(g.layers[1].weights.len(), 25);
        assert_eq!(g.layers[1].delays.len(), 25);
        assert!(g.is_finite());
    }

    #[test]
    fn zero_output_error_zero_gradients() {
        let (net, cache, _) = poisson_setup();
        let cfg = SurrogateConfig::for_theta(10.0);
        let target = cache.output().clone();
        let g = backward(&net, &cache, &LossSpec::Precise { target }, &cfg).unwrap();
        assert!(g.is_zero());
    }

    #[test]
    fn backward_is_linear_in_output_error() {
        let (net, cache, target) = poisson_setup();
        let cfg = SurrogateConfig::for_theta(10.0);
        let kernels = Kernels::for_network(&net).unwrap();
        let e = error_precise(cache.output(), &target, &kernels.epsilon).unwrap();
        assert!(loss_value(&e) > 0.0);
        let (g1, _) = backward_from_error(&net, &cache, &e, &cfg, &kernels).unwrap();
        let (g3, _) = backward_from_error(&net, &cache, &e.scaled(-3.0), &cfg, &kernels).unwrap();
        for (a, b) in g1.values().zip(g3.values()) {
            assert!((b + 3.0 * a).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    /// Hand-unrolled pipeline for a 2-3-1 network, written with explicit loops.
    #[test]
    fn matches_hand_unrolled_pipeline() {
        let spec = parse_architecture("2-3-1").unwrap();
        let neuron = NeuronConfig::new(1.0, 1.0, 1.0).unwrap();
        let sim = SimConfig::new(15.0, 1.0).unwrap();
        let mut net = init_network(spec, InitConfig { gain: 3.0 }, neuron, sim, 11).unwrap();
        net.params[0].delays = vec![0.3, 1.7];
        net.params[1].delays = vec![0.0, 0.6, 2.2];
        let input = poisson_spike_train(2, 300.0, &sim, 5).unwrap();
        let cache = forward(&net, &input).unwrap();
        let mut target = SampledSignal::zeros(1, 15, 1.0);
        target.set(0, 6, 1.0);
        let cfg = SurrogateConfig::new(2.0, 3.0).unwrap();
        let grads = backward(&net, &cache, &LossSpec::Precise { target: target.clone() }, &cfg).unwrap();

        let ns = 15;
        let eps = |t: f64| if (0.0..=10.0).contains(&t) { t * (1.0 - t).exp() } else { 0.0 };
        let eps_dot = |t: f64| if (0.0..=10.0).contains(&t) { (1.0 - t) * (1.0 - t).exp() } else { 0.0 };
        let rho = |u: f64| (-3.0 * (u - 1.0f64).abs()).exp() / 2.0;
        // threshold crossing value: undo nu(0) = -2e at the neuron's own spike bins
        let u_cross = |l: usize, j: usize, n: usize| {
            let spiked = cache.s[l].get(j, n) != 0.0;
            cache.u(l).get(j, n) + if spiked { 2.0 * std::f64::consts::E } else { 0.0 }
        };
        // output error
        let mut e2 = [0.0; 15];
        for n in 0..ns {
            for m in 0..=n {
                e2[n] += eps(m as f64) * (cache.s[2].get(0, n - m) - target.get(0, n - m));
            }
        }
        // delta at output
        let mut d2 = [0.0; 15];
        for n in 0..ns {
            let mut corr = 0.0;
            for m in 0..ns - n {
                corr += eps(m as f64) * e2[n + m];
            }
            d2[n] = rho(u_cross(2, 0, n)) * corr;
        }
        let w1 = &net.params[1].weights;
        let w0 = &net.params[0].weights;
        for j in 0..3 {
            let wg: f64 = (0..ns).map(|n| d2[n] * cache.a[1].get(j, n)).sum();
            assert!((grads.layers[1].weights[j] - wg).abs() < 1e-12);
            let e1: Vec<f64> = (0..ns).map(|n| w1[j] * d2[n]).collect();
            let d = net.params[1].delays[j];
            let mut dg = 0.0;
            for n in 0..ns {
                let mut a_dot = 0.0;
                for m in 0..=n {
                    a_dot += eps_dot(m as f64 - d) * cache.s[1].get(j, n - m);
                }
                dg -= a_dot * e1[n];
            }
            assert!((grads.layers[1].delays[j] - dg).abs() < 1e-12);
            let d1: Vec<f64> = (0..ns)
                .map(|n| {
                    let corr: f64 = (0..ns - n).map(|m| eps(m as f64 - d) * e1[n + m]).sum();
                    rho(u_cross(1, j, n)) * corr
                })
                .collect();
            for i in 0..2 {
                let wg: f64 = (0..ns).map(|n| d1[n] * cache.a[0].get(i, n)).sum();
                assert!((grads.layers[0].weights[j * 2 + i] - wg).abs() < 1e-12);
            }
        }
        // input delays
        for i in 0..2 {
            let d = net.params[0].delays[i];
            let mut dg = 0.0;
            for n in 0..ns {
                let e0: f64 = (0..3)
                    .map(|j| {
                        let dj = net.params[1].delays[j];
                        let e1: Vec<f64> = (0..ns).map(|k| w1[j] * d2[k]).collect();
                        let corr: f64 = (0..ns - n).map(|m| eps(m as f64 - dj) * e1[n + m]).sum();
                        w0[j * 2 + i] * rho(u_cross(1, j, n)) * corr
                    })
                    .sum();
                let mut a_dot = 0.0;
                for m in 0..=n {
                    a_dot += eps_dot(m as f64 - d) * cache.s[0].get(i, n - m);
                }
                dg -= a_dot * e0;
            }
            assert!((grads.layers[0].delays[i] - dg).abs() < 1e-12);
        }
    }
}
