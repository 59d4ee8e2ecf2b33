//! Clocked SRM forward simulation.
//!
//! For every layer `l`: `a(l) = eps_d * s(l)`, `u(l+1) = W(l) a(l) + nu * s(l+1)`,
//! `s(l+1) = threshold(u(l+1))`. The refractory term depends on the layer's
//! own output, so each neuron is stepped forward in time.

use crate::error::{Error, Result};
use crate::kernel::{convolve, convolve_per_channel, make_epsilon, make_epsilon_dot, make_nu, Kernel};
use crate::signal::{spikes_to_signal, SampledSignal, SpikeTrain};
use crate::topology::Network;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeuronConfig {
    pub theta: f64,
    pub tau_s: f64,
    pub tau_r: f64,
}

impl NeuronConfig {
    pub fn new(theta: f64, tau_s: f64, tau_r: f64) -> Result<Self> {
        let cfg = Self { theta, tau_s, tau_r };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("theta", self.theta), ("tau_s", self.tau_s), ("tau_r", self.tau_r)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// The three kernels a network needs, sampled at its `Ts`.
#[derive(Debug, Clone)]
pub struct Kernels {
    pub epsilon: Kernel,
    pub nu: Kernel,
    pub epsilon_dot: Kernel,
}

impl Kernels {
    pub fn for_network(net: &Network) -> Result<Self> {
        let cfg = net.kernel_config()?;
        Ok(Self {
            epsilon: make_epsilon(&cfg)?,
            nu: make_nu(&cfg)?,
            epsilon_dot: make_epsilon_dot(&cfg)?,
        })
    }
}

/// Signals recorded by a forward pass, indexed by layer (0 = input).
#[derive(Debug, Clone, PartialEq)]
pub struct SignalCache {
    /// Spike signals `s(l)` for `l = 0..=n_l`.
    pub s: Vec<SampledSignal>,
    /// Spike responses `a(l)`; the output layer's uses zero delay.
    pub a: Vec<SampledSignal>,
    /// Membrane potentials `u(l)` for `l = 1..=n_l`, stored at index `l - 1`.
    pub u: Vec<SampledSignal>,
    /// Own-spike feedback included in `u` at a spike bin, `nu(0)`; zero in soft mode.
    pub spike_feedback: f64,
}

impl SignalCache {
    pub fn depth(&self) -> usize {
        self.u.len()
    }

    /// Membrane potential of layer `l >= 1`.
    pub fn u(&self, l: usize) -> &SampledSignal {
        &self.u[l - 1]
    }

    pub fn output(&self) -> &SampledSignal {
        self.s.last().unwrap()
    }

    /// `u(l)` with each neuron's own spike feedback removed at its spike bins,
    /// i.e. the value that crossed the threshold. Surrogate gradients read this.
    pub fn crossing_u(&self, l: usize) -> SampledSignal {
        let u = self.u(l);
        if self.spike_feedback == 0.0 {
            return u.clone();
        }
        let mut out = u.clone();
        let ts = u.ts();
        for (v, &s) in out.values_mut().iter_mut().zip(self.s[l].values()) {
            if s != 0.0 {
                *v -= self.spike_feedback * s * ts;
            }
        }
        out
    }
}

/// Per-channel convolution with the channel's own axonal delay.
pub fn spike_response(s: &SampledSignal, delays: &[f64], epsilon: &Kernel) -> Result<SampledSignal> {
    if delays.len() != s.channels() {
        return Err(Error::Shape(format!(
            "{} delays for {} channels",
            delays.len(),
            s.channels()
        )));
    }
    convolve_per_channel(s, epsilon, |c| delays[c])
}

/// Steps every neuron forward in time: threshold at `u >= theta`, then add the
/// refractory response from the spike bin onward. The recorded `u` includes the
/// feedback of the neuron's own spike at that bin.
pub fn simulate_layer(
    u_ff: &SampledSignal,
    nu: &Kernel,
    theta: f64,
    layer: usize,
) -> Result<(SampledSignal, SampledSignal)> {
    let ns = u_ff.ns();
    let amplitude = 1.0 / u_ff.ts();
    let mut s = SampledSignal::zeros(u_ff.channels(), ns, u_ff.ts());
    let mut u = u_ff.clone();
    let nu = nu.samples();
    for c in 0..u_ff.channels() {
        let uc = u.channel_mut(c);
        let mut spikes = Vec::new();
        for n in 0..ns {
            if !uc[n].is_finite() {
                return Err(Error::Numeric {
                    layer,
                    neuron: c,
                    bin: n,
                });
            }
            if uc[n] >= theta {
                spikes.push(n);
                for (m, &v) in nu.iter().enumerate().take(ns - n) {
                    uc[n + m] += v;
                }
            }
        }
        let sc = s.channel_mut(c);
        for n in spikes {
            sc[n] = amplitude;
        }
    }
    Ok((s, u))
}

pub fn forward(net: &Network, input: &SpikeTrain) -> Result<SignalCache> {
    if input.neuron_count() != net.spec().input_size() {
        return Err(Error::Shape(format!(
            "input has {} channels, network expects {}",
            input.neuron_count(),
            net.spec().input_size()
        )));
    }
    let s0 = spikes_to_signal(input, &net.sim)?;
    forward_signal(net, s0)
}

/// Forward pass from an already sampled input spike signal.
pub fn forward_signal(net: &Network, s0: SampledSignal) -> Result<SignalCache> {
    let kernels = Kernels::for_network(net)?;
    let feedback = kernels.nu.samples()[0];
    forward_with(net, s0, &kernels, feedback, |u_ff, l| {
        simulate_layer(u_ff, &kernels.nu, net.neuron.theta, l)
    })
}

pub(crate) fn forward_with<F>(
    net: &Network,
    s0: SampledSignal,
    kernels: &Kernels,
    spike_feedback: f64,
    mut spike: F,
) -> Result<SignalCache>
where
    F: FnMut(&SampledSignal, usize) -> Result<(SampledSignal, SampledSignal)>,
{
    let spec = net.spec();
    if s0.channels() != spec.input_size() || s0.ns() != net.sim.ns() || s0.ts() != net.sim.ts() {
        return Err(Error::Shape(format!(
            "input signal {}x{} does not match network input {}x{}",
            s0.channels(),
            s0.ns(),
            spec.input_size(),
            net.sim.ns()
        )));
    }
    let depth = spec.depth();
    let mut cache = SignalCache {
        s: Vec::with_capacity(depth + 1),
        a: Vec::with_capacity(depth + 1),
        u: Vec::with_capacity(depth),
        spike_feedback,
    };
    cache.s.push(s0);
    for l in 0..depth {
        let a = spike_response(&cache.s[l], &net.params[l].delays, &kernels.epsilon)?;
        let u_ff = net.apply_linear(l, &a)?;
        let (s, u) = spike(&u_ff, l + 1)?;
        cache.a.push(a);
        cache.u.push(u);
        cache.s.push(s);
    }
    cache.a.push(convolve(&cache.s[depth], &kernels.epsilon, 0.0)?);
    Ok(cache)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{SimConfig, SpikeEvent};
    use crate::topology::{parse_architecture, Network};

    fn signal(values: Vec<f64>) -> SampledSignal {
        let ns = values.len();
        SampledSignal::from_values(1, ns, 1.0, values).unwrap()
    }

    fn nu_kernel(theta: f64, tau_r: f64) -> Kernel {
        make_nu(&crate::kernel::KernelConfig::new(1.0, tau_r, theta, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn no_drive_no_spikes() {
        let (s, u) = simulate_layer(&signal(vec![0.0; 20]), &nu_kernel(1.0, 1.0), 1.0, 1).unwrap();
        assert!(s.is_all_zero());
        assert!(u.is_all_zero());
    }

    #[test]
    fn single_pulse_single_spike() {
        let theta = 1.3;
        let mut v = vec![0.0; 20];
        v[5] = 2.0 * theta;
        let nu = nu_kernel(theta, 1.0);
        let (s, u) = simulate_layer(&signal(v), &nu, theta, 1).unwrap();
        let spikes: Vec<usize> = (0..20).filter(|&n| s.get(0, n) != 0.0).collect();
        assert_eq!(spikes, vec![5]);
        assert!((u.get(0, 5) - (2.0 * theta + nu.samples()[0])).abs() < 1e-12);
        assert_eq!(s.get(0, 5), 1.0);
    }

    /// Scalar oracle: potential recomputed from scratch with the closed-form
    /// refractory kernel over all past spikes.
    fn scalar_oracle(drive: &[f64], theta: f64, tau_r: f64) -> Vec<usize> {
        let nu = |t: f64| -2.0 * theta * (1.0 - t / tau_r).exp();
        let mut spikes: Vec<usize> = Vec::new();
        for n in 0..drive.len() {
            let u = drive[n] + spikes.iter().map(|&f| nu((n - f) as f64)).sum::<f64>();
            if u >= theta {
                spikes.push(n);
            }
        }
        spikes
    }

    #[test]
    fn constant_drive_inter_spike_interval() {
        let theta = 1.0;
        let drive = vec![1.01 * theta; 60];
        let oracle = scalar_oracle(&drive, theta, 1.0);
        let (s, _) = simulate_layer(&signal(drive), &nu_kernel(theta, 1.0), theta, 1).unwrap();
        let spikes: Vec<usize> = (0..60).filter(|&n| s.get(0, n) != 0.0).collect();
        assert_eq!(spikes, oracle);
        let gaps: Vec<usize> = spikes.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(gaps.len() > 5);
        // After the first gap the interval settles to a single value.
        assert!(gaps[1..].iter().all(|&g| g == gaps[1]), "{gaps:?}");
    }

    #[test]
    fn non_finite_potential_is_reported() {
        let mut v = vec![0.0; 10];
        v[4] = f64::NAN;
        let err = simulate_layer(&signal(v), &nu_kernel(1.0, 1.0), 1.0, 3).unwrap_err();
        assert!(matches!(err, Error::Numeric { layer: 3, neuron: 0, bin: 4 }));
    }

    fn tiny_net(weight: f64) -> Network {
        let spec = parse_architecture("1-1").unwrap();
        let neuron = NeuronConfig::new(1.0, 2.0, 1.0).unwrap();
        let mut net = Network::zeros(spec, neuron, SimConfig::new(30.0, 1.0).unwrap()).unwrap();
        net.params[0].weights[0] = weight;
        net
    }

    #[test]
    fn one_input_spike_one_output_spike() {
        let weight = 1.5;
        let net = tiny_net(weight);
        let input = SpikeTrain::new(1, vec![SpikeEvent { neuron: 0, time_ms: 3.5 }]).unwrap();
        let cache = forward(&net, &input).unwrap();
        // Oracle: drive is w * eps(t - 3) sampled at bins, refractory recomputed from scratch.
        let drive: Vec<f64> = (0..30)
            .map(|n| {
                let t = n as f64 - 3.0;
                if t < 0.0 {
                    0.0
                } else {
                    weight * (t / 2.0) * (1.0 - t / 2.0).exp()
                }
            })
            .collect();
        let expected = scalar_oracle(&drive, 1.0, 1.0);
        assert_eq!(expected.len(), 1);
        let got: Vec<usize> = (0..30).filter(|&n| cache.output().get(0, n) != 0.0).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn zero_weights_stay_silent() {
        let spec = parse_architecture("6-4-2").unwrap();
        let neuron = NeuronConfig::new(1.0, 1.0, 1.0).unwrap();
        let sim = SimConfig::new(20.0, 1.0).unwrap();
        let net = Network::zeros(spec, neuron, sim).unwrap();
        let input = crate::signal::poisson_spike_train(6, 300.0, &sim, 1).unwrap();
        let cache = forward(&net, &input).unwrap();
        assert!(cache.s[1..].iter().all(SampledSignal::is_all_zero));
    }

    #[test]
    fn delay_shifts_only_its_channel() {
        let cfg = crate::kernel::KernelConfig::new(1.0, 1.0, 1.0, 0.5).unwrap();
        let eps = make_epsilon(&cfg).unwrap();
        let mut s = SampledSignal::zeros(2, 30, 0.5);
        s.set(0, 2, 2.0);
        s.set(1, 2, 2.0);
        let a = spike_response(&s, &[0.0, 1.5], &eps).unwrap();
        for n in 0..30 {
            let t = n as f64 * 0.5 - 1.0;
            assert!((a.get(0, n) - eps.eval(t)).abs() < 1e-12);
            assert!((a.get(1, n) - eps.eval(t - 1.5)).abs() < 1e-12);
        }
        assert!(spike_response(&s, &[0.0], &eps).is_err());
        let silent = SampledSignal::zeros(2, 30, 0.5);
        assert!(spike_response(&silent, &[0.3, 0.2], &eps).unwrap().is_all_zero());
    }
}
