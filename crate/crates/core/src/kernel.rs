//! Spike-response, refractory and derivative kernels, plus the sampled
//! convolution / correlation pair used by the forward and backward passes.


use crate::error::{Error, Result};
use crate::signal::SampledSignal;

pub const DEFAULT_CUTOFF: f64 = 1e-6;

/// Kernel support never exceeds this many multiples of `max(tau_s, tau_r)`.
const SUPPORT_CEILING_TAUS: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelConfig {
    pub tau_s: f64,
    pub tau_r: f64,
    pub theta: f64,
    pub ts: f64,
    pub cutoff: f64,
}

impl KernelConfig {
    pub fn new(tau_s: f64, tau_r: f64, theta: f64, ts: f64) -> Result<Self> {
        let cfg = Self {
            tau_s,
            tau_r,
            theta,
            ts,
            cutoff: DEFAULT_CUTOFF,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_cutoff(mut self, cutoff: f64) -> Result<Self> {
        self.cutoff = cutoff;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("tau_s", self.tau_s),
            ("tau_r", self.tau_r),
            ("theta", self.theta),
            ("Ts", self.ts),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.cutoff > 0.0 && self.cutoff < 1.0) {
            return Err(Error::Config(format!("cutoff must lie in (0, 1), got {}", self.cutoff)));
        }
        Ok(())
    }

    fn support_ceiling(&self) -> f64 {
        SUPPORT_CEILING_TAUS * self.tau_s.max(self.tau_r)
    }
}

/// Closed-form kernel families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelShape {
    /// `(t/tau_s) exp(1 - t/tau_s)`, peak 1 at `t = tau_s`.
    Epsilon { tau_s: f64 },
    /// `-2 theta exp(1 - t/tau_r)`.
    Nu { theta: f64, tau_r: f64 },
    /// Time derivative of `Epsilon`.
    EpsilonDot { tau_s: f64 },
}

impl KernelShape {
    /// Value at `t`; zero for `t < 0`.
    pub fn value(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        match *self {
            KernelShape::Epsilon { tau_s } => {
                let x = t / tau_s;
                x * (1.0 - x).exp()
            }
            KernelShape::Nu { theta, tau_r } => -2.0 * theta * (1.0 - t / tau_r).exp(),
            KernelShape::EpsilonDot { tau_s } => {
                let x = t / tau_s;
                (1.0 - x) * (1.0 - x).exp() / tau_s
            }
        }
    }
}

/// A causal kernel sampled at `t = n * Ts`, truncated where its tail becomes negligible.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    shape: KernelShape,
    ts: f64,
    samples: Vec<f64>,
}

impl Kernel {
    fn build(shape: KernelShape, cfg: &KernelConfig) -> Result<Self> {
        cfg.validate()?;
        let last = (cfg.support_ceiling() / cfg.ts).floor() as usize;
        let mut samples: Vec<f64> = (0..=last).map(|n| shape.value(n as f64 * cfg.ts)).collect();
        let peak = samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let keep = samples
            .iter()
            .rposition(|v| v.abs() >= cfg.cutoff * peak)
            .map_or(1, |i| i + 1);
        samples.truncate(keep);
        Ok(Self {
            shape,
            ts: cfg.ts,
            samples,
        })
    }

    pub fn shape(&self) -> KernelShape {
        self.shape
    }

    pub fn ts(&self) -> f64 {
        self.ts
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Last time (ms) at which the truncated kernel is nonzero.
    pub fn support_ms(&self) -> f64 {
        (self.samples.len() - 1) as f64 * self.ts
    }

    /// Analytic value on the truncated support `[0, support_ms]`.
    pub fn eval(&self, t: f64) -> f64 {
        if t < 0.0 || t > self.support_ms() {
            0.0
        } else {
            self.shape.value(t)
        }
    }

    /// Samples of the kernel shifted by `delay`: `k(m Ts - delay)` for `m < max_len`.
    pub fn delayed_samples(&self, delay: f64, max_len: usize) -> Vec<f64> {
        if delay == 0.0 {
            return self.samples.iter().copied().take(max_len).collect();
        }
        let len = (((delay + self.support_ms()) / self.ts).floor() as usize + 1).min(max_len);
        (0..len).map(|m| self.eval(m as f64 * self.ts - delay)).collect()
    }
}

pub fn make_epsilon(cfg: &KernelConfig) -> Result<Kernel> {
    Kernel::build(KernelShape::Epsilon { tau_s: cfg.tau_s }, cfg)
}

pub fn make_nu(cfg: &KernelConfig) -> Result<Kernel> {
    Kernel::build(
        KernelShape::Nu {
            theta: cfg.theta,
            tau_r: cfg.tau_r,
        },
        cfg,
    )
}

pub fn make_epsilon_dot(cfg: &KernelConfig) -> Result<Kernel> {
    Kernel::build(KernelShape::EpsilonDot { tau_s: cfg.tau_s }, cfg)
}

fn check_args(x: &SampledSignal, k: &Kernel, delay: f64) -> Result<()> {
    if x.ts() != k.ts() {
        return Err(Error::Config(format!(
            "signal Ts {} does not match kernel Ts {}",
            x.ts(),
            k.ts()
        )));
    }
    if !(delay.is_finite() && delay >= 0.0) {
        return Err(Error::Param(format!("delay must be non-negative, got {delay}")));
    }
    Ok(())
}

/// `out[n] = Ts * sum_m kd[m] * x[n - m]`
pub(crate) fn convolve_slice(x: &[f64], kd: &[f64], ts: f64, out: &mut [f64]) {
    for (n, o) in out.iter_mut().enumerate() {
        let top = kd.len().min(n + 1);
        let mut acc = 0.0;
        for (m, &k) in kd[..top].iter().enumerate() {
            acc += k * x[n - m];
        }
        *o = ts * acc;
    }
}

/// `out[n] = Ts * sum_m kd[m] * x[n + m]`, zero beyond the window.
pub(crate) fn correlate_slice(x: &[f64], kd: &[f64], ts: f64, out: &mut [f64]) {
    let ns = x.len();
    for (n, o) in out.iter_mut().enumerate() {
        let top = kd.len().min(ns - n);
        let mut acc = 0.0;
        for (m, &k) in kd[..top].iter().enumerate() {
            acc += k * x[n + m];
        }
        *o = ts * acc;
    }
}

/// Causal convolution of every channel with the kernel delayed by `delay` ms.
pub fn convolve(x: &SampledSignal, k: &Kernel, delay: f64) -> Result<SampledSignal> {
    convolve_per_channel(x, k, |_| delay)
}

/// Adjoint of [`convolve`] under the `Ts`-weighted inner product.
pub fn correlate(x: &SampledSignal, k: &Kernel, delay: f64) -> Result<SampledSignal> {
    correlate_per_channel(x, k, |_| delay)
}

pub(crate) fn convolve_per_channel(
    x: &SampledSignal,
    k: &Kernel,
    delay_of: impl Fn(usize) -> f64,
) -> Result<SampledSignal> {
    let mut out = SampledSignal::zeros(x.channels(), x.ns(), x.ts());
    for c in 0..x.channels() {
        let delay = delay_of(c);
        check_args(x, k, delay)?;
        let kd = k.delayed_samples(delay, x.ns());
        convolve_slice(x.channel(c), &kd, x.ts(), out.channel_mut(c));
    }
    Ok(out)
}

pub(crate) fn correlate_per_channel(
    x: &SampledSignal,
    k: &Kernel,
    delay_of: impl Fn(usize) -> f64,
) -> Result<SampledSignal> {
    let mut out = SampledSignal::zeros(x.channels(), x.ns(), x.ts());
    for c in 0..x.channels() {
        let delay = delay_of(c);
        check_args(x, k, delay)?;
        let kd = k.delayed_samples(delay, x.ns());
        correlate_slice(x.channel(c), &kd, x.ts(), out.channel_mut(c));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::E;

    fn cfg(ts: f64) -> KernelConfig {
        KernelConfig::new(2.0, 3.0, 1.5, ts).unwrap()
    }

    fn impulse(ns: usize, ts: f64, at: usize) -> SampledSignal {
        let mut s = SampledSignal::zeros(1, ns, ts);
        s.set(0, at, 1.0 / ts);
        s
    }

    #[test]
    fn epsilon_landmarks() {
        let k = make_epsilon(&cfg(0.5)).unwrap();
        assert_eq!(k.samples()[0], 0.0);
        assert!((k.samples()[4] - 1.0).abs() < 1e-15);
        assert!((k.samples()[8] - 2.0 * (-1.0f64).exp()).abs() < 1e-12);
        assert!((2.0 * (-1.0f64).exp() - 0.735759).abs() < 1e-6);
    }

    #[test]
    fn nu_landmarks() {
        let c = cfg(0.5);
        let k = make_nu(&c).unwrap();
        assert!((k.samples()[0] + 2.0 * c.theta * E).abs() < 1e-12);
        assert!((k.samples()[6] + 2.0 * c.theta).abs() < 1e-12);
        assert!(k.samples().windows(2).all(|w| w[1] > w[0]));
        assert!(k.samples().iter().all(|&v| v < 0.0));
    }

    #[test]
    fn epsilon_dot_landmarks() {
        let c = cfg(0.5);
        let k = make_epsilon_dot(&c).unwrap();
        assert!((k.samples()[0] - E / c.tau_s).abs() < 1e-12);
        assert!(k.samples()[4].abs() < 1e-15);
    }

    #[test]
    fn truncation_respects_ceiling_and_cutoff() {
        let c = KernelConfig::new(1.0, 1.0, 1.0, 0.1).unwrap();
        let k = make_epsilon(&c).unwrap();
        assert!(k.support_ms() <= 10.0 + 1e-12);
        let c = KernelConfig::new(1.0, 5.0, 1.0, 0.1).unwrap().with_cutoff(1e-3).unwrap();
        let k = make_epsilon(&c).unwrap();
        let peak = 1.0;
        assert!(k.samples().last().unwrap().abs() >= 1e-3 * peak);
        assert!(k.eval(k.support_ms() + 0.1) == 0.0);
        assert!(KernelShape::Epsilon { tau_s: 1.0 }.value(k.support_ms() + 0.1) < 1e-3);
    }

    #[test]
    fn impulse_response_is_the_kernel() {
        let ts = 0.5;
        let k = make_epsilon(&cfg(ts)).unwrap();
        let out = convolve(&impulse(40, ts, 0), &k, 0.0).unwrap();
        for n in 0..40 {
            assert!((out.get(0, n) - k.eval(n as f64 * ts)).abs() < 1e-12);
        }
        let d = 1.3;
        let out = convolve(&impulse(40, ts, 0), &k, d).unwrap();
        for n in 0..40 {
            assert!((out.get(0, n) - k.eval(n as f64 * ts - d)).abs() < 1e-12);
        }
    }

    #[test]
    fn correlate_impulse_at_end() {
        let ts = 0.5;
        let ns = 30;
        let k = make_epsilon(&cfg(ts)).unwrap();
        let out = correlate(&impulse(ns, ts, ns - 1), &k, 0.0).unwrap();
        for n in 0..ns {
            let expected = k.eval((ns - 1 - n) as f64 * ts);
            assert!((out.get(0, n) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_in_zero_out() {
        let k = make_epsilon(&cfg(1.0)).unwrap();
        let z = SampledSignal::zeros(3, 20, 1.0);
        assert!(convolve(&z, &k, 0.7).unwrap().is_all_zero());
        assert!(correlate(&z, &k, 0.7).unwrap().is_all_zero());
    }

    #[test]
    fn argument_errors() {
        let k = make_epsilon(&cfg(1.0)).unwrap();
        let z = SampledSignal::zeros(1, 20, 0.5);
        assert!(matches!(convolve(&z, &k, 0.0), Err(Error::Config(_))));
        let z = SampledSignal::zeros(1, 20, 1.0);
        assert!(matches!(convolve(&z, &k, -0.1), Err(Error::Param(_))));
        assert!(matches!(correlate(&z, &k, -0.1), Err(Error::Param(_))));
        assert!(KernelConfig::new(0.0, 1.0, 1.0, 1.0).is_err());
        assert!(cfg(1.0).with_cutoff(1.0).is_err());
    }
}
