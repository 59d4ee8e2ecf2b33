//! Run configuration: TOML sections mapped onto engine types.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use slayer::backprop::SurrogateConfig;
use slayer::event_io::read_events;
use slayer::loss::Interval;
use slayer::optim::{Method, OptimizerConfig};
use slayer::topology::{init_network, parse_architecture, InitConfig};
use slayer::trainer::{Dataset, LossMode, Sample, Target, TrainConfig};
use slayer::{Network, NetworkSpec, NeuronConfig, SimConfig};

use crate::CliError;

pub const CONFIG_HELP: &str = "\
CONFIG FILE (TOML; every key optional unless noted)

[network]
  architecture = \"250-25-1\"     required for train/simulate
  init_gain    = 3*theta/tau_s  weights ~ U(+-gain/sqrt(fan_in))

[neuron]
  theta = 10.0    tau_s = 1.0    tau_r = 1.0

[sim]
  window_ms = 50.0    ts_ms = 1.0

[surrogate]
  alpha = 10.0    beta = 5/theta

[optimizer]
  method = \"adam\"    (sgd | rmsprop | adam | nadam)
  learning_rate = 0.01 for sgd, 0.001 otherwise
  beta1 = 0.9   beta2 = 0.999   gamma = 0.9   epsilon = 1e-8
  delay_lr_scale = 0.1

[loss]
  mode = \"count\"    (count | precise)
  true_count = 20.0   false_count = 5.0
  interval_start_ms / interval_end_ms = whole window

[data]
  train = \"train.csv\"   manifest, required for train/eval
  test  = \"test.csv\"    optional
  Paths are relative to the config file. Manifest columns (with header):
  path,label | path,target | path,label,target; entries are relative to
  the manifest. Event files are CSV (neuron,time_ms,label) or .bin.

[train]
  epochs = 100   batch_size = 1   seed = 0
  checkpoint_every = 0 (off)   eval_every = 1   out = \"out\"

[gradcheck]
  architecture = \"4-6-3\"   theta = 1.0   tau_s = 2.0   tau_r = 2.0
  window_ms = 30.0   ts_ms = 1.0   init_gain = 5.0   max_delay_bins = 3
  alpha = 10.0   beta = 1.0   input_rate_hz = 150.0   target_rate_hz = 100.0
  h = 1e-5   tolerance = 1e-4
";

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub network: NetworkSection,
    pub neuron: NeuronSection,
    pub sim: SimSection,
    pub surrogate: SurrogateSection,
    pub optimizer: OptimizerSection,
    pub loss: LossSection,
    pub data: DataSection,
    pub train: TrainSection,
    pub gradcheck: GradcheckSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    pub architecture: Option<String>,
    pub init_gain: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NeuronSection {
    pub theta: f64,
    pub tau_s: f64,
    pub tau_r: f64,
}

impl Default for NeuronSection {
    fn default() -> Self {
        Self {
            theta: 10.0,
            tau_s: 1.0,
            tau_r: 1.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub window_ms: f64,
    pub ts_ms: f64,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            window_ms: 50.0,
            ts_ms: 1.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurrogateSection {
    pub alpha: f64,
    pub beta: Option<f64>,
}

impl Default for SurrogateSection {
    fn default() -> Self {
        Self { alpha: 10.0, beta: None }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub method: String,
    pub learning_rate: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub delay_lr_scale: f64,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let d = OptimizerConfig::new(Method::Adam);
        Self {
            method: "adam".into(),
            learning_rate: None,
            beta1: d.beta1,
            beta2: d.beta2,
            gamma: d.gamma,
            epsilon: d.epsilon,
            delay_lr_scale: d.delay_lr_scale,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSection {
    pub mode: String,
    pub true_count: f64,
    pub false_count: f64,
    pub interval_start_ms: Option<f64>,
    pub interval_end_ms: Option<f64>,
}

impl Default for LossSection {
    fn default() -> Self {
        Self {
            mode: "count".into(),
            true_count: 20.0,
            false_count: 5.0,
            interval_start_ms: None,
            interval_end_ms: None,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub checkpoint_every: usize,
    pub eval_every: usize,
    pub out: PathBuf,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 1,
            seed: 0,
            checkpoint_every: 0,
            eval_every: 1,
            out: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckSection {
    pub architecture: String,
    pub theta: f64,
    pub tau_s: f64,
    pub tau_r: f64,
    pub window_ms: f64,
    pub ts_ms: f64,
    pub init_gain: f64,
    pub max_delay_bins: usize,
    pub alpha: f64,
    pub beta: f64,
    pub input_rate_hz: f64,
    pub target_rate_hz: f64,
    pub h: f64,
    pub tolerance: f64,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        Self {
            architecture: "4-6-3".into(),
            theta: 1.0,
            tau_s: 2.0,
            tau_r: 2.0,
            window_ms: 30.0,
            ts_ms: 1.0,
            init_gain: 5.0,
            max_delay_bins: 3,
            alpha: 10.0,
            beta: 1.0,
            input_rate_hz: 150.0,
            target_rate_hz: 100.0,
            h: 1e-5,
            tolerance: 1e-4,
        }
    }
}

/// A parsed config file plus the directory its relative paths resolve against.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub file: FileConfig,
    pub base: PathBuf,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("cannot read config {}: {e}", path.display())))?;
        let file: FileConfig = toml::from_str(&text)
            .map_err(|e| CliError::config(format!("{}: {}", path.display(), e.message())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { file, base })
    }

    pub fn defaults() -> Self {
        Self {
            file: FileConfig::default(),
            base: PathBuf::new(),
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base.join(p)
    }

    pub fn spec(&self) -> Result<NetworkSpec, CliError> {
        let arch = self
            .file
            .network
            .architecture
            .as_deref()
            .ok_or_else(|| CliError::config("missing key network.architecture"))?;
        Ok(parse_architecture(arch)?)
    }

    pub fn neuron(&self) -> Result<NeuronConfig, CliError> {
        let n = &self.file.neuron;
        Ok(NeuronConfig::new(n.theta, n.tau_s, n.tau_r)?)
    }

    pub fn sim(&self) -> Result<SimConfig, CliError> {
        Ok(SimConfig::new(self.file.sim.window_ms, self.file.sim.ts_ms)?)
    }

    pub fn surrogate(&self) -> Result<SurrogateConfig, CliError> {
        let theta = self.file.neuron.theta;
        let s = &self.file.surrogate;
        let beta = s.beta.unwrap_or(SurrogateConfig::for_theta(theta).beta);
        Ok(SurrogateConfig::new(s.alpha, beta)?)
    }

    pub fn optimizer(&self) -> Result<OptimizerConfig, CliError> {
        let o = &self.file.optimizer;
        let method: Method = o
            .method
            .parse()
            .map_err(|_| CliError::config(format!("unknown optimizer.method {:?}", o.method)))?;
        let mut cfg = OptimizerConfig::new(method);
        if let Some(lr) = o.learning_rate {
            cfg.learning_rate = lr;
        }
        cfg.beta1 = o.beta1;
        cfg.beta2 = o.beta2;
        cfg.gamma = o.gamma;
        cfg.epsilon = o.epsilon;
        cfg.delay_lr_scale = o.delay_lr_scale;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn loss_mode(&self) -> Result<LossMode, CliError> {
        let l = &self.file.loss;
        match l.mode.as_str() {
            "precise" => Ok(LossMode::Precise),
            "count" => {
                let interval = match (l.interval_start_ms, l.interval_end_ms) {
                    (None, None) => None,
                    (start, end) => Some(Interval {
                        start_ms: start.unwrap_or(0.0),
                        end_ms: end.unwrap_or(self.file.sim.window_ms),
                    }),
                };
                Ok(LossMode::Count {
                    true_count: l.true_count,
                    false_count: l.false_count,
                    interval,
                })
            }
            other => Err(CliError::config(format!("unknown loss.mode {other:?}"))),
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig, CliError> {
        let t = &self.file.train;
        let cfg = TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            optimizer: self.optimizer()?,
            surrogate: self.surrogate()?,
            loss: self.loss_mode()?,
            seed: t.seed,
            checkpoint_every: t.checkpoint_every,
            eval_every: t.eval_every,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Freshly initialised network, deterministic per seed.
    pub fn network(&self, seed: u64) -> Result<Network, CliError> {
        let neuron = self.neuron()?;
        let init = match self.file.network.init_gain {
            Some(gain) => InitConfig { gain },
            None => InitConfig::for_neuron(&neuron),
        };
        Ok(init_network(self.spec()?, init, neuron, self.sim()?, seed)?)
    }

    pub fn train_manifest(&self) -> Result<PathBuf, CliError> {
        self.file
            .data
            .train
            .as_ref()
            .map(|p| self.resolve(p))
            .ok_or_else(|| CliError::config("missing key data.train"))
    }

    pub fn test_manifest(&self) -> Option<PathBuf> {
        self.file.data.test.as_ref().map(|p| self.resolve(p))
    }
}

fn read_train(path: &Path, neurons: usize) -> Result<slayer::SpikeTrain, CliError> {
    if !path.exists() {
        return Err(CliError::io(format!("missing file {}", path.display())));
    }
    let set = read_events(path).map_err(|e| CliError::from(e).context(path))?;
    set.to_train(neurons).map_err(|e| CliError::from(e).context(path))
}

/// Loads a manifest of `path[,label][,target]` rows into a dataset for `net`.
pub fn load_dataset(manifest: &Path, net: &Network, mode: &LossMode) -> Result<Dataset, CliError> {
    if !manifest.exists() {
        return Err(CliError::io(format!("missing file {}", manifest.display())));
    }
    let text = fs::read_to_string(manifest)
        .map_err(|e| CliError::io(format!("cannot read {}: {e}", manifest.display())))?;
    let dir = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| CliError::data(format!("{}: empty manifest", manifest.display())))?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    let col = |name: &str| columns.iter().position(|c| *c == name);
    let path_col = col("path").ok_or_else(|| {
        CliError::data(format!("{}: header must name a path column", manifest.display()))
    })?;
    let (label_col, target_col) = (col("label"), col("target"));
    let inputs = net.spec().input_size();
    let outputs = net.spec().output_size();

    let mut samples = Vec::new();
    for (i, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let at = |c: Option<usize>| c.and_then(|c| fields.get(c)).copied().filter(|f| !f.is_empty());
        let bad = |msg: &str| CliError::data(format!("{} line {}: {msg}", manifest.display(), i + 1));
        let input_path = at(Some(path_col)).ok_or_else(|| bad("missing path"))?;
        let input = read_train(&dir.join(input_path), inputs)?;
        let target = match mode {
            LossMode::Count { .. } => {
                let label = at(label_col).ok_or_else(|| bad("missing label"))?;
                Target::Class(label.parse().map_err(|_| bad(&format!("bad label {label:?}")))?)
            }
            LossMode::Precise => {
                let target = at(target_col).ok_or_else(|| bad("missing target"))?;
                Target::Train(read_train(&dir.join(target), outputs)?)
            }
        };
        samples.push(Sample { input, target });
    }
    Ok(Dataset::new(samples, outputs)?)
}
