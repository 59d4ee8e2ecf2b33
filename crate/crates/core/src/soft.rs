//! Differentiable verification mode.
//!
//! Refractory feedback is switched off and the threshold is replaced by a
//! smooth map `g` with `g' = rho`. The resulting network is a composition of
//! convolutions, per-bin linear maps and a pointwise nonlinearity, so the
//! backprop pipeline computes its exact gradient and finite differences can
//! check it.

use crate::backprop::SurrogateConfig;
use crate::error::Result;
use crate::forward::{forward_with, Kernels, SignalCache};
use crate::signal::SampledSignal;
use crate::topology::Network;

/// Antiderivative of `rho`, continuous at `theta` with value `1 / (alpha beta)`.
pub fn soft_spike(u: f64, theta: f64, cfg: &SurrogateConfig) -> f64 {
    let scale = 1.0 / (cfg.alpha * cfg.beta);
    let x = u - theta;
    if x < 0.0 {
        scale * (cfg.beta * x).exp()
    } else {
        scale * (2.0 - (-cfg.beta * x).exp())
    }
}

pub fn soft_forward(net: &Network, s0: SampledSignal, cfg: &SurrogateConfig) -> Result<SignalCache> {
    cfg.validate()?;
    let kernels = Kernels::for_network(net)?;
    soft_forward_with(net, s0, cfg, &kernels)
}

pub(crate) fn soft_forward_with(
    net: &Network,
    s0: SampledSignal,
    cfg: &SurrogateConfig,
    kernels: &Kernels,
) -> Result<SignalCache> {
    let theta = net.neuron.theta;
    forward_with(net, s0, kernels, 0.0, |u_ff, _| {
        let values = u_ff.values().iter().map(|&u| soft_spike(u, theta, cfg)).collect();
        let s = SampledSignal::from_values(u_ff.channels(), u_ff.ns(), u_ff.ts(), values)?;
        Ok((s, u_ff.clone()))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn value_at_threshold() {
        let cfg = SurrogateConfig::new(4.0, 0.5).unwrap();
        assert_eq!(soft_spike(2.0, 2.0, &cfg), 0.5);
        let below = soft_spike(2.0 - 1e-12, 2.0, &cfg);
        assert!((below - 0.5).abs() < 1e-12);
    }

    #[test]
    fn monotone() {
        let cfg = SurrogateConfig::for_theta(1.0);
        let mut prev = f64::NEG_INFINITY;
        for i in 0..400 {
            let u = -2.0 + i as f64 * 0.01;
            let g = soft_spike(u, 1.0, &cfg);
            assert!(g > prev);
            prev = g;
        }
    }

    #[test]
    fn derivative_is_rho() {
        let cfg = SurrogateConfig::new(3.0, 2.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = 1e-4;
        for _ in 0..200 {
            let u: f64 = rng.gen_range(-1.0..3.0);
            if (u - 1.0).abs() < 2.0 * h {
                continue;
            }
            let fd = (soft_spike(u + h, 1.0, &cfg) - soft_spike(u - h, 1.0, &cfg)) / (2.0 * h);
            let rho = cfg.rho_scalar(u, 1.0);
            // Central difference error is h^2 * g'''/6, and |g'''| = beta^2 rho.
            assert!((fd - rho).abs() <= cfg.beta * cfg.beta * rho * h * h, "u={u}");
        }
    }
}
