//! Output error signals and the scalar loss `E = 1/2 * integral of e^2`.

use crate::error::{Error, Result};
use crate::kernel::{convolve, Kernel};
use crate::signal::{SampledSignal, SimConfig};

/// Spike-count interval `[start_ms, end_ms]` inside the simulation window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub start_ms: f64,
    pub end_ms: f64,
}

impl Interval {
    pub fn whole(sim: &SimConfig) -> Self {
        Self {
            start_ms: 0.0,
            end_ms: sim.window_ms(),
        }
    }

    /// Half-open bin range covered by the interval.
    pub fn bins(&self, sim: &SimConfig) -> Result<std::ops::Range<usize>> {
        if !(self.start_ms >= 0.0 && self.start_ms < self.end_ms && self.end_ms <= sim.window_ms()) {
            return Err(Error::Range(format!(
                "interval [{}, {}] not inside window [0, {}]",
                self.start_ms,
                self.end_ms,
                sim.window_ms()
            )));
        }
        let first = (self.start_ms / sim.ts()).floor() as usize;
        let last = ((self.end_ms / sim.ts()).ceil() as usize).min(sim.ns());
        Ok(first..last)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LossSpec {
    /// Match a target spike signal (van Rossum-style filtered difference).
    Precise { target: SampledSignal },
    /// Match a desired spike count per output neuron over an interval.
    Count { desired: Vec<f64>, interval: Interval },
}

impl LossSpec {
    /// Count targets for a class label: `true_count` for the label, `false_count` elsewhere.
    pub fn for_class(label: usize, classes: usize, true_count: f64, false_count: f64, interval: Interval) -> Self {
        let desired = (0..classes)
            .map(|c| if c == label { true_count } else { false_count })
            .collect();
        LossSpec::Count { desired, interval }
    }
}

/// `e = eps * (s_out - s_target) = a_out - a_target`.
pub fn error_precise(s_out: &SampledSignal, target: &SampledSignal, epsilon: &Kernel) -> Result<SampledSignal> {
    convolve(&s_out.sub(target)?, epsilon, 0.0)
}

/// Constant `(actual - desired)` count error on the interval, zero elsewhere.
pub fn error_count(s_out: &SampledSignal, desired: &[f64], interval: &Interval, sim: &SimConfig) -> Result<SampledSignal> {
    if desired.len() != s_out.channels() {
        return Err(Error::Shape(format!(
            "{} desired counts for {} output neurons",
            desired.len(),
            s_out.channels()
        )));
    }
    if s_out.ns() != sim.ns() {
        return Err(Error::Shape(format!(
            "output has {} bins, window has {}",
            s_out.ns(),
            sim.ns()
        )));
    }
    let bins = interval.bins(sim)?;
    let counts = interval_counts(s_out, bins.clone());
    let mut e = SampledSignal::zeros(s_out.channels(), s_out.ns(), s_out.ts());
    for (c, (&count, &want)) in counts.iter().zip(desired).enumerate() {
        e.channel_mut(c)[bins.clone()].fill(count - want);
    }
    Ok(e)
}

/// `Ts * sum` of each channel over a bin range.
pub fn interval_counts(s: &SampledSignal, bins: std::ops::Range<usize>) -> Vec<f64> {
    (0..s.channels())
        .map(|c| s.ts() * s.channel(c)[bins.clone()].iter().sum::<f64>())
        .collect()
}

/// `E = 1/2 * Ts * sum e^2`.
pub fn loss_value(e: &SampledSignal) -> f64 {
    0.5 * e.ts() * e.values().iter().map(|v| v * v).sum::<f64>()
}

/// Dispatches on the loss mode.
pub fn output_error(s_out: &SampledSignal, loss: &LossSpec, epsilon: &Kernel, sim: &SimConfig) -> Result<SampledSignal> {
    match loss {
        LossSpec::Precise { target } => error_precise(s_out, target, epsilon),
        LossSpec::Count { desired, interval } => error_count(s_out, desired, interval, sim),
    }
}
