#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slayer::backprop::SurrogateConfig;
use slayer::optim::{Method, OptimizerConfig};
use slayer::signal::{poisson_spike_train, SampledSignal, SimConfig, SpikeEvent, SpikeTrain};
use slayer::topology::{init_network, parse_architecture, InitConfig, Network};
use slayer::trainer::{Dataset, LossMode, Sample, Target, TrainConfig};
use slayer::NeuronConfig;

pub fn random_signal(rng: &mut impl Rng, channels: usize, ns: usize, ts: f64) -> SampledSignal {
    let values = (0..channels * ns).map(|_| rng.gen_range(-1.0..1.0)).collect();
    SampledSignal::from_values(channels, ns, ts, values).unwrap()
}

/// Poisson target for a single output neuron, restricted to times the network
/// can reach and the loss can see, with a minimum gap between spikes.
pub fn poisson_target(rate_hz: f64, sim: &SimConfig, seed: u64) -> SpikeTrain {
    let (earliest, latest, gap) = (5.0, sim.window_ms() - 3.0, 3.0);
    for attempt in 0.. {
        let raw = poisson_spike_train(1, rate_hz, sim, seed.wrapping_mul(1000) + attempt).unwrap();
        let mut kept: Vec<SpikeEvent> = Vec::new();
        for e in raw.events() {
            if e.time_ms < earliest || e.time_ms > latest {
                continue;
            }
            if kept.last().is_none_or(|k| e.time_ms - k.time_ms >= gap) {
                kept.push(*e);
            }
        }
        if !kept.is_empty() {
            return SpikeTrain::new(1, kept).unwrap();
        }
    }
    unreachable!()
}

pub struct PoissonTask {
    pub net: Network,
    pub data: Dataset,
    pub config: TrainConfig,
}

/// 250 Poisson inputs over 50 ms, one output neuron taught a Poisson target.
pub fn poisson_task(seed: u64, epochs: usize) -> PoissonTask {
    let sim = SimConfig::new(50.0, 1.0).unwrap();
    let neuron = NeuronConfig::new(10.0, 1.0, 1.0).unwrap();
    let spec = parse_architecture("250-25-1").unwrap();
    let net = init_network(spec, InitConfig::for_neuron(&neuron), neuron, sim, seed).unwrap();
    let input = poisson_spike_train(250, 80.0, &sim, 1000 + seed).unwrap();
    let target = poisson_target(60.0, &sim, 2000 + seed);
    let data = Dataset::new(
        vec![Sample {
            input,
            target: Target::Train(target),
        }],
        1,
    )
    .unwrap();
    let config = TrainConfig {
        epochs,
        batch_size: 1,
        optimizer: OptimizerConfig::new(Method::Adam).with_learning_rate(0.01),
        surrogate: SurrogateConfig::for_theta(neuron.theta),
        loss: LossMode::Precise,
        seed,
        checkpoint_every: 0,
        eval_every: 0,
    };
    PoissonTask { net, data, config }
}

pub struct CountTask {
    pub net: Network,
    pub train: Dataset,
    pub test: Dataset,
    pub config: TrainConfig,
}

/// Five classes, each a fixed 50-channel Poisson template; samples jitter every
/// spike uniformly by up to `jitter_ms`.
pub fn count_task(seed: u64, train_size: usize, test_size: usize, epochs: usize) -> CountTask {
    let (classes, channels, jitter_ms) = (5, 50, 5.0);
    let sim = SimConfig::new(100.0, 1.0).unwrap();
    let neuron = NeuronConfig::new(10.0, 1.0, 1.0).unwrap();
    let spec = parse_architecture("50-40-5").unwrap();
    let net = init_network(spec, InitConfig::for_neuron(&neuron), neuron, sim, seed).unwrap();
    let templates: Vec<SpikeTrain> = (0..classes)
        .map(|c| poisson_spike_train(channels, 40.0, &sim, 10_000 * seed + c as u64).unwrap())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(77 + seed);
    let mut make = |n: usize| {
        let samples = (0..n)
            .map(|i| {
                let c = i % classes;
                let events = templates[c]
                    .events()
                    .iter()
                    .map(|e| SpikeEvent {
                        neuron: e.neuron,
                        time_ms: (e.time_ms + rng.gen_range(-jitter_ms..=jitter_ms)).clamp(0.0, sim.window_ms() - 1e-6),
                    })
                    .collect();
                Sample {
                    input: SpikeTrain::new(channels, events).unwrap(),
                    target: Target::Class(c),
                }
            })
            .collect();
        Dataset::new(samples, classes).unwrap()
    };
    let train = make(train_size);
    let test = make(test_size);
    let config = TrainConfig {
        epochs,
        batch_size: 10,
        optimizer: OptimizerConfig::new(Method::Adam).with_learning_rate(0.01),
        surrogate: SurrogateConfig::for_theta(neuron.theta),
        loss: LossMode::Count {
            true_count: 20.0,
            false_count: 5.0,
            interval: None,
        },
        seed,
        checkpoint_every: 0,
        eval_every: 1,
    };
    CountTask {
        net,
        train,
        test,
        config,
    }
}
