//! Dataset iteration, the epoch loop, evaluation and metrics.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::backprop::{backward_from_error, Gradients, SurrogateConfig};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::forward::{forward_signal, Kernels, SignalCache};
use crate::loss::{interval_counts, loss_value, output_error, Interval, LossSpec};
use crate::optim::{OptimizerConfig, OptimizerState};
use crate::signal::{spikes_to_signal, SampledSignal, SimConfig, SpikeTrain};
use crate::topology::Network;

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Class(usize),
    Train(SpikeTrain),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: SpikeTrain,
    pub target: Target,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    class_count: usize,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, class_count: usize) -> Result<Self> {
        if let Some(first) = samples.first() {
            let channels = first.input.neuron_count();
            for (i, s) in samples.iter().enumerate() {
                if s.input.neuron_count() != channels {
                    return Err(Error::Shape(format!(
                        "sample {i} has {} input channels, expected {channels}",
                        s.input.neuron_count()
                    )));
                }
                if let Target::Class(label) = s.target {
                    if label >= class_count {
                        return Err(Error::Range(format!(
                            "sample {i} label {label} >= class count {class_count}"
                        )));
                    }
                }
            }
        }
        Ok(Self { samples, class_count })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossMode {
    /// Spike-count targets over an interval (whole window when `None`).
    Count {
        true_count: f64,
        false_count: f64,
        interval: Option<Interval>,
    },
    /// Each sample carries an explicit target spike train.
    Precise,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub surrogate: SurrogateConfig,
    pub loss: LossMode,
    pub seed: u64,
    /// Write a checkpoint every this many epochs (0 disables).
    pub checkpoint_every: usize,
    /// Evaluate the test split every this many epochs (0 disables).
    pub eval_every: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        self.optimizer.validate()?;
        self.surrogate.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    pub accuracy: f64,
}

pub const METRICS_HEADER: &str = "epoch,split,loss,accuracy";

pub fn write_metrics_row<W: Write>(w: &mut W, m: &Metrics) -> Result<()> {
    writeln!(w, "{},{},{},{}", m.epoch, m.split.as_str(), m.loss, m.accuracy)?;
    Ok(())
}

/// Argmax of spike counts over the bin range; ties go to the lowest index.
pub fn classify(output: &SampledSignal, bins: std::ops::Range<usize>) -> usize {
    let counts = interval_counts(output, bins);
    let mut best = 0;
    for (c, &v) in counts.iter().enumerate() {
        if v > counts[best] {
            best = c;
        }
    }
    best
}

/// Classification over the whole simulation window.
pub fn classify_cache(cache: &SignalCache) -> usize {
    let out = cache.output();
    classify(out, 0..out.ns())
}

/// Same spike count per neuron and every spike within one bin of its target.
pub fn spikes_match(output: &SampledSignal, target: &SampledSignal, tolerance_bins: usize) -> bool {
    if !output.same_shape(target) {
        return false;
    }
    (0..output.channels()).all(|c| {
        let bins = |s: &SampledSignal| -> Vec<usize> {
            s.channel(c)
                .iter()
                .enumerate()
                .filter(|(_, &v)| v != 0.0)
                .map(|(n, _)| n)
                .collect()
        };
        let (a, b) = (bins(output), bins(target));
        a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.abs_diff(*y) <= tolerance_bins)
    })
}

struct SampleResult {
    grads: Option<Gradients>,
    loss: f64,
    correct: bool,
}

struct Prepared {
    input: SampledSignal,
    loss: LossSpec,
    target: Target,
}

fn prepare(sample: &Sample, mode: &LossMode, sim: &SimConfig, classes: usize) -> Result<Prepared> {
    let input = spikes_to_signal(&sample.input, sim)?;
    let loss = match (mode, &sample.target) {
        (
            LossMode::Count {
                true_count,
                false_count,
                interval,
            },
            Target::Class(label),
        ) => LossSpec::for_class(
            *label,
            classes,
            *true_count,
            *false_count,
            interval.unwrap_or_else(|| Interval::whole(sim)),
        ),
        (LossMode::Precise, Target::Train(train)) => LossSpec::Precise {
            target: spikes_to_signal(train, sim)?,
        },
        _ => {
            return Err(Error::Config(
                "loss mode does not match the dataset targets (count needs labels, precise needs target trains)".into(),
            ))
        }
    };
    Ok(Prepared {
        input,
        loss,
        target: sample.target.clone(),
    })
}

fn run_sample(
    net: &Network,
    sample: &Sample,
    cfg: &TrainConfig,
    kernels: &Kernels,
    classes: usize,
    with_grads: bool,
) -> Result<SampleResult> {
    let p = prepare(sample, &cfg.loss, &net.sim, classes)?;
    let cache = forward_signal(net, p.input)?;
    let e = output_error(cache.output(), &p.loss, &kernels.epsilon, &net.sim)?;
    let loss = loss_value(&e);
    let correct = match (&p.target, &p.loss) {
        (Target::Class(label), LossSpec::Count { interval, .. }) => {
            let bins = interval.bins(&net.sim)?;
            classify(cache.output(), bins) == *label
        }
        (_, LossSpec::Precise { target }) => spikes_match(cache.output(), target, 1),
        _ => false,
    };
    let grads = if with_grads {
        Some(backward_from_error(net, &cache, &e, &cfg.surrogate, kernels)?.0)
    } else {
        None
    };
    Ok(SampleResult { grads, loss, correct })
}

fn summarize(results: &[SampleResult], epoch: usize, split: Split) -> Metrics {
    let n = results.len() as f64;
    Metrics {
        epoch,
        split,
        loss: results.iter().map(|r| r.loss).sum::<f64>() / n,
        accuracy: results.iter().filter(|r| r.correct).count() as f64 / n,
    }
}

/// Epoch-specific shuffle stream derived from the run seed.
pub fn epoch_order(len: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng);
    order
}

/// One pass over the shuffled dataset with averaged mini-batch updates.
/// Metrics are accumulated from the forward passes made during the epoch.
pub fn train_epoch(
    net: &mut Network,
    dataset: &Dataset,
    cfg: &TrainConfig,
    state: &mut OptimizerState,
    epoch: usize,
) -> Result<Metrics> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Param("cannot train on an empty dataset".into()));
    }
    let kernels = Kernels::for_network(net)?;
    let order = epoch_order(dataset.len(), cfg.seed, epoch);
    let mut all = Vec::with_capacity(dataset.len());
    for batch in order.chunks(cfg.batch_size) {
        let snapshot: &Network = net;
        // Ordered collect keeps the reduction order fixed regardless of threads.
        let results = batch
            .par_iter()
            .map(|&i| run_sample(snapshot, &dataset.samples[i], cfg, &kernels, dataset.class_count, true))
            .collect::<Result<Vec<_>>>()?;
        let mut total = Gradients::zeros_like(net);
        for r in &results {
            total.add_assign(r.grads.as_ref().unwrap())?;
        }
        total.scale(1.0 / results.len() as f64);
        state.step(net, &total)?;
        all.extend(results.into_iter().map(|r| SampleResult { grads: None, ..r }));
    }
    Ok(summarize(&all, epoch, Split::Train))
}

/// Loss and accuracy without touching the parameters.
pub fn evaluate(net: &Network, dataset: &Dataset, cfg: &TrainConfig, epoch: usize, split: Split) -> Result<Metrics> {
    if dataset.is_empty() {
        return Err(Error::Param("cannot evaluate an empty dataset".into()));
    }
    let kernels = Kernels::for_network(net)?;
    let results = dataset
        .samples
        .par_iter()
        .map(|s| run_sample(net, s, cfg, &kernels, dataset.class_count, false))
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(&results, epoch, split))
}

/// Stateful training run that can be checkpointed and resumed.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub net: Network,
    pub state: OptimizerState,
    pub config: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
}

impl Trainer {
    pub fn new(net: Network, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let state = OptimizerState::new(config.optimizer, &net)?;
        Ok(Self {
            net,
            state,
            config,
            epoch: 0,
        })
    }

    pub fn from_checkpoint(ck: Checkpoint, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let state = match ck.optimizer {
            Some(s) => s,
            None => OptimizerState::new(config.optimizer, &ck.network)?,
        };
        Ok(Self {
            net: ck.network,
            state,
            config,
            epoch: ck.epoch as usize,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            network: self.net.clone(),
            optimizer: Some(self.state.clone()),
            epoch: self.epoch as u64,
        }
    }

    /// Trains until `config.epochs` epochs are complete. A fresh run first
    /// records an epoch-0 evaluation. Every metrics row is passed to `on_metrics`;
    /// `on_checkpoint` fires at the configured cadence.
    pub fn run(
        &mut self,
        train: &Dataset,
        test: Option<&Dataset>,
        mut on_metrics: impl FnMut(&Metrics) -> Result<()>,
        mut on_checkpoint: impl FnMut(&Trainer) -> Result<()>,
    ) -> Result<Vec<Metrics>> {
        let mut rows = Vec::new();
        let mut emit = |m: Metrics, rows: &mut Vec<Metrics>| -> Result<()> {
            on_metrics(&m)?;
            rows.push(m);
            Ok(())
        };
        if self.epoch == 0 {
            emit(evaluate(&self.net, train, &self.config, 0, Split::Train)?, &mut rows)?;
            if let Some(test) = test {
                emit(evaluate(&self.net, test, &self.config, 0, Split::Test)?, &mut rows)?;
            }
        }
        while self.epoch < self.config.epochs {
            let epoch = self.epoch + 1;
            let m = train_epoch(&mut self.net, train, &self.config, &mut self.state, epoch)?;
            self.epoch = epoch;
            emit(m, &mut rows)?;
            if let Some(test) = test {
                if self.config.eval_every > 0 && epoch.is_multiple_of(self.config.eval_every) {
                    emit(evaluate(&self.net, test, &self.config, epoch, Split::Test)?, &mut rows)?;
                }
            }
            if self.config.checkpoint_every > 0 && epoch.is_multiple_of(self.config.checkpoint_every) {
                on_checkpoint(self)?;
            }
        }
        Ok(rows)
    }
}
