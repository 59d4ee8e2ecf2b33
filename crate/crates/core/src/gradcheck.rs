//! Central finite differences over every learnable weight and delay of a
//! soft-mode network, and comparison against the backprop gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backprop::{backward_from_error, Gradients, SurrogateConfig};
use crate::error::Result;
use crate::forward::Kernels;
use crate::loss::{loss_value, output_error, LossSpec};
use crate::signal::SampledSignal;
use crate::soft::soft_forward_with;
use crate::topology::Network;

/// Denominator floor of the relative error.
pub const RELATIVE_FLOOR: f64 = 1e-8;

/// Deliberate corruption of the analytic gradient, used to show the check can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mutation {
    #[default]
    None,
    FlipDelaySign,
}

fn soft_loss(net: &Network, s0: &SampledSignal, loss: &LossSpec, cfg: &SurrogateConfig, kernels: &Kernels) -> Result<f64> {
    let cache = soft_forward_with(net, s0.clone(), cfg, kernels)?;
    let e = output_error(cache.output(), loss, &kernels.epsilon, &net.sim)?;
    Ok(loss_value(&e))
}

/// Backprop gradients on the soft-mode cache.
pub fn soft_gradients(net: &Network, s0: &SampledSignal, loss: &LossSpec, cfg: &SurrogateConfig) -> Result<Gradients> {
    let kernels = Kernels::for_network(net)?;
    let cache = soft_forward_with(net, s0.clone(), cfg, &kernels)?;
    let e = output_error(cache.output(), loss, &kernels.epsilon, &net.sim)?;
    Ok(backward_from_error(net, &cache, &e, cfg, &kernels)?.0)
}

/// `(E(p + h) - E(p - h)) / 2h` for every learnable weight and delay, with `E`
/// evaluated through the soft forward pass. Delays are perturbed without clamping.
pub fn finite_diff_gradients(
    net: &Network,
    s0: &SampledSignal,
    loss: &LossSpec,
    cfg: &SurrogateConfig,
    h: f64,
) -> Result<Gradients> {
    let kernels = Kernels::for_network(net)?;
    let mut grads = Gradients::zeros_like(net);
    let mut probe = net.clone();
    for l in 0..net.spec().depth() {
        if !net.learnable(l) {
            continue;
        }
        for i in 0..net.params[l].weights.len() {
            let orig = net.params[l].weights[i];
            probe.params[l].weights[i] = orig + h;
            let plus = soft_loss(&probe, s0, loss, cfg, &kernels)?;
            probe.params[l].weights[i] = orig - h;
            let minus = soft_loss(&probe, s0, loss, cfg, &kernels)?;
            probe.params[l].weights[i] = orig;
            grads.layers[l].weights[i] = (plus - minus) / (2.0 * h);
        }
        for i in 0..net.params[l].delays.len() {
            let orig = net.params[l].delays[i];
            probe.params[l].delays[i] = orig + h;
            let plus = soft_loss(&probe, s0, loss, cfg, &kernels)?;
            probe.params[l].delays[i] = orig - h;
            let minus = soft_loss(&probe, s0, loss, cfg, &kernels)?;
            probe.params[l].delays[i] = orig;
            grads.layers[l].delays[i] = (plus - minus) / (2.0 * h);
        }
    }
    Ok(grads)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupReport {
    pub name: String,
    pub count: usize,
    pub max_relative_error: f64,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub groups: Vec<GroupReport>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.max_relative_error <= self.tolerance)
    }

    pub fn max_relative_error(&self) -> f64 {
        self.groups.iter().map(|g| g.max_relative_error).fold(0.0, f64::max)
    }

    pub fn max_abs_error(&self) -> f64 {
        self.groups.iter().map(|g| g.max_abs_error).fold(0.0, f64::max)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(RELATIVE_FLOOR)
}

fn group(name: String, analytic: &[f64], numeric: &[f64]) -> GroupReport {
    let mut report = GroupReport {
        name,
        count: analytic.len(),
        max_relative_error: 0.0,
        max_abs_error: 0.0,
    };
    for (&a, &n) in analytic.iter().zip(numeric) {
        report.max_relative_error = report.max_relative_error.max(relative_error(a, n));
        report.max_abs_error = report.max_abs_error.max((a - n).abs());
    }
    report
}

pub fn compare(net: &Network, analytic: &Gradients, numeric: &Gradients, tolerance: f64) -> GradCheckReport {
    let mut groups = Vec::new();
    for l in 0..net.spec().depth() {
        if !net.learnable(l) {
            continue;
        }
        let (a, n) = (&analytic.layers[l], &numeric.layers[l]);
        groups.push(group(format!("layer{l}.weights"), &a.weights, &n.weights));
        groups.push(group(format!("layer{l}.delays"), &a.delays, &n.delays));
    }
    GradCheckReport { groups, tolerance }
}

/// Sets every learnable delay to `k + U(0.2, 0.8)` bins with `k < max_bins`,
/// away from grid points where sampled kernels are not differentiable in the delay.
pub fn place_delays_off_grid(net: &mut Network, max_bins: usize, seed: u64) {
    let ts = net.sim.ts();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in &mut net.params {
        for d in &mut p.delays {
            *d = ts * (rng.gen_range(0..max_bins.max(1)) as f64 + rng.gen_range(0.2..0.8));
        }
    }
}

/// Soft-mode backprop against finite differences.
pub fn gradient_check(
    net: &Network,
    s0: &SampledSignal,
    loss: &LossSpec,
    cfg: &SurrogateConfig,
    h: f64,
    tolerance: f64,
    mutation: Mutation,
) -> Result<GradCheckReport> {
    let mut analytic = soft_gradients(net, s0, loss, cfg)?;
    if mutation == Mutation::FlipDelaySign {
        for layer in &mut analytic.layers {
            for d in &mut layer.delays {
                *d = -*d;
            }
        }
    }
    let numeric = finite_diff_gradients(net, s0, loss, cfg, h)?;
    Ok(compare(net, &analytic, &numeric, tolerance))
}
