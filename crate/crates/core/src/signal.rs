//! Spike trains, uniformly sampled signals, and conversion between the two.
//!
//! Time is in milliseconds throughout. A discretized spike has amplitude
//! `1 / Ts` so that `Ts * sum(samples)` equals the spike count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const INTEGER_TOLERANCE: f64 = 1e-9;

/// Simulation window and sampling period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    window_ms: f64,
    ts_ms: f64,
    ns: usize,
}

impl SimConfig {
    pub fn new(window_ms: f64, ts_ms: f64) -> Result<Self> {
        if !(window_ms.is_finite() && window_ms > 0.0) {
            return Err(Error::Config(format!("window must be positive, got {window_ms}")));
        }
        if !(ts_ms.is_finite() && ts_ms > 0.0) {
            return Err(Error::Config(format!("sampling period must be positive, got {ts_ms}")));
        }
        let ratio = window_ms / ts_ms;
        let ns = ratio.round();
        if (ratio - ns).abs() > INTEGER_TOLERANCE || ns < 1.0 {
            return Err(Error::Config(format!(
                "window {window_ms} ms is not an integer multiple of Ts = {ts_ms} ms"
            )));
        }
        Ok(Self {
            window_ms,
            ts_ms,
            ns: ns as usize,
        })
    }

    pub fn window_ms(&self) -> f64 {
        self.window_ms
    }

    pub fn ts(&self) -> f64 {
        self.ts_ms
    }

    pub fn ns(&self) -> usize {
        self.ns
    }

    /// Bin index of a time, `floor(t / Ts)` clamped to `[0, Ns - 1]`.
    pub fn bin_of(&self, time_ms: f64) -> usize {
        let bin = (time_ms / self.ts_ms).floor();
        if bin <= 0.0 {
            0
        } else {
            (bin as usize).min(self.ns - 1)
        }
    }

    pub fn bin_center(&self, bin: usize) -> f64 {
        (bin as f64 + 0.5) * self.ts_ms
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpikeEvent {
    pub neuron: usize,
    pub time_ms: f64,
}

/// A set of spike events over `neuron_count` neurons, sorted by `(time, neuron)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeTrain {
    neuron_count: usize,
    events: Vec<SpikeEvent>,
}

impl SpikeTrain {
    pub fn new(neuron_count: usize, mut events: Vec<SpikeEvent>) -> Result<Self> {
        if neuron_count == 0 {
            return Err(Error::Param("spike train needs at least one neuron".into()));
        }
        for ev in &events {
            if ev.neuron >= neuron_count {
                return Err(Error::Range(format!(
                    "neuron index {} >= neuron count {neuron_count}",
                    ev.neuron
                )));
            }
            if !ev.time_ms.is_finite() || ev.time_ms < 0.0 {
                return Err(Error::Range(format!("invalid spike time {}", ev.time_ms)));
            }
        }
        events.sort_by(|a, b| a.time_ms.total_cmp(&b.time_ms).then(a.neuron.cmp(&b.neuron)));
        Ok(Self {
            neuron_count,
            events,
        })
    }

    pub fn empty(neuron_count: usize) -> Result<Self> {
        Self::new(neuron_count, Vec::new())
    }

    pub fn neuron_count(&self) -> usize {
        self.neuron_count
    }

    pub fn events(&self) -> &[SpikeEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Spike times of one neuron in ascending order.
    pub fn times_of(&self, neuron: usize) -> Vec<f64> {
        self.events
            .iter()
            .filter(|e| e.neuron == neuron)
            .map(|e| e.time_ms)
            .collect()
    }
}

/// Multi-channel signal sampled every `Ts` ms, stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSignal {
    channels: usize,
    ns: usize,
    ts: f64,
    values: Vec<f64>,
}

impl SampledSignal {
    pub fn zeros(channels: usize, ns: usize, ts: f64) -> Self {
        Self {
            channels,
            ns,
            ts,
            values: vec![0.0; channels * ns],
        }
    }

    pub fn from_values(channels: usize, ns: usize, ts: f64, values: Vec<f64>) -> Result<Self> {
        if values.len() != channels * ns {
            return Err(Error::Shape(format!(
                "{} values for {channels} channels x {ns} samples",
                values.len()
            )));
        }
        Ok(Self {
            channels,
            ns,
            ts,
            values,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn ns(&self) -> usize {
        self.ns
    }

    pub fn ts(&self) -> f64 {
        self.ts
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.values[c * self.ns..(c + 1) * self.ns]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.values[c * self.ns..(c + 1) * self.ns]
    }

    pub fn get(&self, c: usize, n: usize) -> f64 {
        self.values[c * self.ns + n]
    }

    pub fn set(&mut self, c: usize, n: usize, v: f64) {
        self.values[c * self.ns + n] = v;
    }

    pub fn same_shape(&self, other: &SampledSignal) -> bool {
        self.channels == other.channels && self.ns == other.ns && self.ts == other.ts
    }

    pub(crate) fn check_same_shape(&self, other: &SampledSignal, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{what}: {}x{} (Ts {}) vs {}x{} (Ts {})",
                self.channels, self.ns, self.ts, other.channels, other.ns, other.ts
            )))
        }
    }

    /// Pointwise `self - other`.
    pub fn sub(&self, other: &SampledSignal) -> Result<SampledSignal> {
        self.check_same_shape(other, "subtract")?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        Ok(SampledSignal { values, ..*self })
    }

    pub fn scaled(&self, factor: f64) -> SampledSignal {
        SampledSignal {
            values: self.values.iter().map(|v| v * factor).collect(),
            ..*self
        }
    }

    /// Continuous-time inner product approximation `Ts * sum(x * y)`.
    pub fn inner(&self, other: &SampledSignal) -> Result<f64> {
        self.check_same_shape(other, "inner product")?;
        Ok(self.ts * self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum::<f64>())
    }

    pub fn is_all_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// `Ts * sum` per channel; for a spike signal this is the spike count.
    pub fn channel_integrals(&self) -> Vec<f64> {
        (0..self.channels)
            .map(|c| self.ts * self.channel(c).iter().sum::<f64>())
            .collect()
    }
}

/// Independent Bernoulli spiking per channel and bin, one event at the bin center.
pub fn poisson_spike_train(channels: usize, rate_hz: f64, config: &SimConfig, seed: u64) -> Result<SpikeTrain> {
    if channels == 0 {
        return Err(Error::Param("channel count must be at least 1".into()));
    }
    if !(rate_hz.is_finite() && rate_hz >= 0.0) {
        return Err(Error::Param(format!("rate must be non-negative, got {rate_hz}")));
    }
    let p = rate_hz * config.ts() * 1e-3;
    if p > 1.0 {
        return Err(Error::Param(format!(
            "rate {rate_hz} Hz gives spike probability {p} > 1 per bin"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut events = Vec::new();
    for bin in 0..config.ns() {
        let time_ms = config.bin_center(bin);
        for neuron in 0..channels {
            if rng.gen::<f64>() < p {
                events.push(SpikeEvent { neuron, time_ms });
            }
        }
    }
    SpikeTrain::new(channels, events)
}

/// Bins events into a sampled signal with amplitude `1 / Ts` per spike.
pub fn spikes_to_signal(train: &SpikeTrain, config: &SimConfig) -> Result<SampledSignal> {
    let ts = config.ts();
    let mut signal = SampledSignal::zeros(train.neuron_count(), config.ns(), ts);
    for ev in train.events() {
        if ev.time_ms < 0.0 || ev.time_ms > config.window_ms() {
            return Err(Error::Range(format!(
                "spike of neuron {} at {} ms outside window [0, {}]",
                ev.neuron,
                ev.time_ms,
                config.window_ms()
            )));
        }
        let bin = config.bin_of(ev.time_ms);
        let idx = ev.neuron * config.ns() + bin;
        signal.values[idx] += 1.0 / ts;
    }
    Ok(signal)
}

/// Inverse of [`spikes_to_signal`] for signals holding at most one spike per bin.
pub fn signal_to_spikes(signal: &SampledSignal, config: &SimConfig) -> Result<SpikeTrain> {
    let amplitude = 1.0 / config.ts();
    if signal.ns() != config.ns() {
        return Err(Error::Shape(format!(
            "signal has {} samples, config expects {}",
            signal.ns(),
            config.ns()
        )));
    }
    let mut events = Vec::new();
    for c in 0..signal.channels() {
        for (n, &v) in signal.channel(c).iter().enumerate() {
            if v.abs() <= INTEGER_TOLERANCE {
                continue;
            }
            if (v - amplitude).abs() > INTEGER_TOLERANCE {
                return Err(Error::Format(format!(
                    "sample {v} at channel {c}, bin {n} is neither 0 nor 1/Ts = {amplitude}"
                )));
            }
            events.push(SpikeEvent {
                neuron: c,
                time_ms: config.bin_center(n),
            });
        }
    }
    SpikeTrain::new(signal.channels(), events)
}
