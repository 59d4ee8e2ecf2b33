mod config;

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use slayer::backprop::{backward_from_error, write_matrix};
use slayer::checkpoint::{load_checkpoint, save_checkpoint};
use slayer::event_io::{read_events, write_events, SpikeTrainSet};
use slayer::forward::{forward, Kernels};
use slayer::gradcheck::{gradient_check, place_delays_off_grid, Mutation};
use slayer::loss::{output_error, LossSpec};
use slayer::signal::{poisson_spike_train, signal_to_spikes, spikes_to_signal};
use slayer::topology::{init_network, parse_architecture, InitConfig};
use slayer::trainer::{evaluate, write_metrics_row, Metrics, Split, Trainer, METRICS_HEADER};
use slayer::{NeuronConfig, SimConfig};

use config::{load_dataset, RunConfig, CONFIG_HELP};

/// A failure reported as `ERROR <code>: <message>`.
#[derive(Debug)]
pub struct CliError {
    code: &'static str,
    message: String,
}

impl CliError {
    fn new(code: &'static str, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self::new("io", message)
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new("config", message)
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self::new("data", message)
    }

    pub fn context(mut self, path: &Path) -> Self {
        self.message = format!("{}: {}", path.display(), self.message);
        self
    }

    /// 2 for bad input (config, files, data), 1 for failures during a run.
    fn exit_code(&self) -> u8 {
        match self.code {
            "io" | "config" | "data" | "parse" | "format" | "param" | "range" | "shape" | "usage" => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let one_line = self.message.replace('\n', " ");
        write!(f, "ERROR {}: {}", self.code, one_line)
    }
}

impl From<slayer::Error> for CliError {
    fn from(e: slayer::Error) -> Self {
        use slayer::Error as E;
        let code = match &e {
            E::Param(_) => "param",
            E::Config(_) => "config",
            E::Range(_) => "range",
            E::Format(_) => "format",
            E::Parse { .. } => "parse",
            E::Shape(_) => "shape",
            E::Numeric { .. } => "numeric",
            E::NonFinite(_) => "nonfinite",
            E::Io(_) => "io",
        };
        Self::new(code, e.to_string())
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        Self::io(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "slayer", version, about = "Spiking network simulation and SLAYER training")]
#[command(after_long_help = CONFIG_HELP)]
struct Cli {
    /// Worker threads for per-sample parallelism [default: available parallelism]
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration (see `slayer help <command>` for keys)
    #[arg(long)]
    config: Option<PathBuf>,

    /// Seed override (train.seed for train, network init for simulate/gradcheck)
    #[arg(long)]
    seed: Option<u64>,

    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a network; writes metrics.csv, checkpoints and report.txt
    #[command(after_long_help = CONFIG_HELP)]
    Train {
        #[command(flatten)]
        common: Common,
        /// Epoch count override; 0 records the initial evaluation only
        #[arg(long)]
        epochs: Option<usize>,
        /// Continue from a checkpoint
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the configured datasets
    #[command(after_long_help = CONFIG_HELP)]
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Forward pass on one input; writes per-layer rasters and optional traces
    #[command(after_long_help = CONFIG_HELP)]
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Input event file (CSV or .bin)
        #[arg(long)]
        input: PathBuf,
        /// Use weights from a checkpoint instead of a fresh initialisation
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Also write membrane potential matrices u_<l>.csv
        #[arg(long)]
        trace: bool,
        /// Target train; writes error and delta matrices under backprop/
        #[arg(long)]
        target: Option<PathBuf>,
    },
    /// Compare soft-mode backprop gradients with central finite differences
    #[command(after_long_help = CONFIG_HELP)]
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Finite-difference step [default: gradcheck.h]
        #[arg(long)]
        h: Option<f64>,
        #[arg(long, hide = true)]
        mutate_delay_sign: bool,
    },
    /// Write Poisson spike-train files and a manifest
    GenPoisson {
        #[arg(long)]
        channels: usize,
        /// Rate per channel in Hz
        #[arg(long)]
        rate: f64,
        /// Window length T in ms
        #[arg(long = "window", default_value_t = 50.0)]
        window_ms: f64,
        /// Sampling step Ts in ms
        #[arg(long = "ts", default_value_t = 1.0)]
        ts_ms: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of files
        #[arg(long, default_value_t = 1)]
        count: usize,
        /// Label written to the events and manifest
        #[arg(long, default_value_t = 0)]
        label: i32,
        /// Write .bin files instead of CSV
        #[arg(long)]
        binary: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let body = text.split("\n\nUsage").next().unwrap_or_default();
            let line = body.trim_start_matches("error: ").split_whitespace().collect::<Vec<_>>().join(" ");
            eprintln!("{}", CliError::new("usage", line));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> CliResult<ExitCode> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::new("usage", format!("cannot start {n} threads: {e}")))?;
    }
    match cli.command {
        Command::Train { common, epochs, resume } => cmd_train(&common, epochs, resume.as_deref()),
        Command::Eval { common, checkpoint } => cmd_eval(&common, &checkpoint),
        Command::Simulate {
            common,
            input,
            checkpoint,
            trace,
            target,
        } => cmd_simulate(&common, &input, checkpoint.as_deref(), trace, target.as_deref()),
        Command::Gradcheck {
            common,
            h,
            mutate_delay_sign,
        } => cmd_gradcheck(&common, h, mutate_delay_sign),
        Command::GenPoisson {
            channels,
            rate,
            window_ms,
            ts_ms,
            seed,
            count,
            label,
            binary,
            out,
        } => cmd_gen_poisson(channels, rate, window_ms, ts_ms, seed, count, label, binary, &out),
    }?;
    Ok(ExitCode::SUCCESS)
}

fn load_config(common: &Common) -> CliResult<RunConfig> {
    match &common.config {
        Some(path) => RunConfig::load(path),
        None => Err(CliError::config("--config is required")),
    }
}

fn create_dir(dir: &Path) -> CliResult {
    fs::create_dir_all(dir).map_err(|e| CliError::io(format!("cannot create {}: {e}", dir.display())))
}

fn create_file(path: &Path) -> CliResult<io::BufWriter<fs::File>> {
    let f = fs::File::create(path).map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))?;
    Ok(io::BufWriter::new(f))
}

fn existing(path: &Path) -> CliResult<&Path> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::io(format!("missing file {}", path.display())))
    }
}

fn cmd_train(common: &Common, epochs: Option<usize>, resume: Option<&Path>) -> CliResult {
    let mut rc = load_config(common)?;
    if let Some(seed) = common.seed {
        rc.file.train.seed = seed;
    }
    if let Some(epochs) = epochs {
        rc.file.train.epochs = epochs;
    }
    let out = common.out.clone().unwrap_or_else(|| rc.resolve(&rc.file.train.out));
    let cfg = rc.train_config()?;

    let mut trainer = match resume {
        Some(path) => {
            let ck = load_checkpoint(existing(path)?).map_err(|e| CliError::from(e).context(path))?;
            Trainer::from_checkpoint(ck, cfg)?
        }
        None => Trainer::new(rc.network(cfg.seed)?, cfg)?,
    };
    let train = load_dataset(&rc.train_manifest()?, &trainer.net, &trainer.config.loss)?;
    let test = match rc.test_manifest() {
        Some(p) => Some(load_dataset(&p, &trainer.net, &trainer.config.loss)?),
        None => None,
    };

    create_dir(&out)?;
    let metrics_path = out.join("metrics.csv");
    let mut metrics = if resume.is_some() && metrics_path.exists() {
        let f = fs::OpenOptions::new().append(true).open(&metrics_path)?;
        io::BufWriter::new(f)
    } else {
        let mut w = create_file(&metrics_path)?;
        writeln!(w, "{METRICS_HEADER}")?;
        w
    };
    let start_epoch = trainer.epoch;
    let rows = trainer.run(
        &train,
        test.as_ref(),
        |m| {
            write_metrics_row(&mut metrics, m)?;
            metrics.flush()?;
            Ok(())
        },
        |t| save_checkpoint(out.join(format!("checkpoint_{:05}.slck", t.epoch)), &t.checkpoint()),
    )?;
    if trainer.epoch > start_epoch {
        save_checkpoint(out.join("final.slck"), &trainer.checkpoint())?;
    }

    let report = report_text(&trainer, &rows);
    fs::write(out.join("report.txt"), &report)?;
    print!("{report}");
    Ok(())
}

fn report_text(trainer: &Trainer, rows: &[Metrics]) -> String {
    let mut r = format!(
        "architecture = {}\nepochs = {}\nparameters = {}\n",
        trainer.net.spec(),
        trainer.epoch,
        trainer.net.learnable_parameter_count()
    );
    for split in [Split::Train, Split::Test] {
        let mut of_split = rows.iter().filter(|m| m.split == split);
        if let Some(first) = of_split.next() {
            let last = of_split.next_back().unwrap_or(first);
            r.push_str(&format!(
                "{0}_loss = {1} -> {2}\n{0}_accuracy = {3} -> {4}\n",
                split.as_str(),
                first.loss,
                last.loss,
                first.accuracy,
                last.accuracy
            ));
        }
    }
    r
}

fn cmd_eval(common: &Common, checkpoint: &Path) -> CliResult {
    let rc = load_config(common)?;
    let cfg = rc.train_config()?;
    let ck = load_checkpoint(existing(checkpoint)?).map_err(|e| CliError::from(e).context(checkpoint))?;
    let net = ck.network;
    let epoch = ck.epoch as usize;

    let mut rows = vec![evaluate(&net, &load_dataset(&rc.train_manifest()?, &net, &cfg.loss)?, &cfg, epoch, Split::Train)?];
    if let Some(p) = rc.test_manifest() {
        rows.push(evaluate(&net, &load_dataset(&p, &net, &cfg.loss)?, &cfg, epoch, Split::Test)?);
    }

    let mut text = Vec::new();
    writeln!(text, "{METRICS_HEADER}")?;
    for m in &rows {
        write_metrics_row(&mut text, m)?;
    }
    if let Some(out) = &common.out {
        create_dir(out)?;
        fs::write(out.join("eval.csv"), &text)?;
    }
    io::stdout().write_all(&text)?;
    Ok(())
}

fn cmd_simulate(
    common: &Common,
    input: &Path,
    checkpoint: Option<&Path>,
    trace: bool,
    target: Option<&Path>,
) -> CliResult {
    let rc = load_config(common)?;
    let out = common.out.clone().ok_or_else(|| CliError::config("--out is required"))?;
    let net = match checkpoint {
        Some(path) => {
            load_checkpoint(existing(path)?)
                .map_err(|e| CliError::from(e).context(path))?
                .network
        }
        None => rc.network(common.seed.unwrap_or(rc.file.train.seed))?,
    };
    let read = |path: &Path, neurons: usize| -> CliResult<slayer::SpikeTrain> {
        let set = read_events(existing(path)?).map_err(|e| CliError::from(e).context(path))?;
        set.to_train(neurons).map_err(|e| CliError::from(e).context(path))
    };
    let train = read(input, net.spec().input_size())?;
    let cache = forward(&net, &train)?;

    create_dir(&out)?;
    for (l, s) in cache.s.iter().enumerate() {
        let spikes = signal_to_spikes(s, &net.sim)?;
        write_events(out.join(format!("raster_{l}.csv")), &SpikeTrainSet::from_train(&spikes, l as i32))?;
    }
    if trace {
        for (i, u) in cache.u.iter().enumerate() {
            write_matrix(out.join(format!("u_{}.csv", i + 1)), u)?;
        }
    }
    if let Some(path) = target {
        let target = spikes_to_signal(&read(path, net.spec().output_size())?, &net.sim)?;
        let kernels = Kernels::for_network(&net)?;
        let e_out = output_error(cache.output(), &LossSpec::Precise { target }, &kernels.epsilon, &net.sim)?;
        let (_, bt) = backward_from_error(&net, &cache, &e_out, &rc.surrogate()?, &kernels)?;
        bt.write_csv(&cache, out.join("backprop"))?;
    }
    let counts: Vec<String> = cache
        .s
        .iter()
        .map(|s| signal_to_spikes(s, &net.sim).map(|t| t.len().to_string()))
        .collect::<Result<_, _>>()?;
    println!("spikes per layer: {}", counts.join(" "));
    Ok(())
}

fn cmd_gradcheck(common: &Common, h: Option<f64>, mutate: bool) -> CliResult {
    let rc = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::defaults(),
    };
    let g = &rc.file.gradcheck;
    let seed = common.seed.unwrap_or(0);
    let h = h.unwrap_or(g.h);
    if !(h.is_finite() && h > 0.0) {
        return Err(CliError::config(format!("h must be positive, got {h}")));
    }

    let neuron = NeuronConfig::new(g.theta, g.tau_s, g.tau_r)?;
    let sim = SimConfig::new(g.window_ms, g.ts_ms)?;
    let spec = parse_architecture(&g.architecture)?;
    let (inputs, outputs) = (spec.input_size(), spec.output_size());
    let mut net = init_network(spec, InitConfig { gain: g.init_gain }, neuron, sim, seed)?;
    place_delays_off_grid(&mut net, g.max_delay_bins, seed.wrapping_add(100));
    let s0 = spikes_to_signal(&poisson_spike_train(inputs, g.input_rate_hz, &sim, seed)?, &sim)?;
    let target = spikes_to_signal(&poisson_spike_train(outputs, g.target_rate_hz, &sim, seed.wrapping_add(7))?, &sim)?;
    let surrogate = slayer::backprop::SurrogateConfig::new(g.alpha, g.beta)?;
    let mutation = if mutate { Mutation::FlipDelaySign } else { Mutation::None };

    let report = gradient_check(&net, &s0, &LossSpec::Precise { target }, &surrogate, h, g.tolerance, mutation)?;
    println!("group,count,max_relative_error,max_abs_error");
    for gr in &report.groups {
        println!("{},{},{:e},{:e}", gr.name, gr.count, gr.max_relative_error, gr.max_abs_error);
    }
    let worst = report.max_relative_error();
    if report.passed() {
        println!("PASS max relative error {worst:e} <= {:e} (h = {h:e})", g.tolerance);
        Ok(())
    } else {
        println!("FAIL max relative error {worst:e} > {:e} (h = {h:e})", g.tolerance);
        Err(CliError::new(
            "gradcheck",
            format!("max relative error {worst:e} exceeds {:e}", g.tolerance),
        ))
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_gen_poisson(
    channels: usize,
    rate: f64,
    window_ms: f64,
    ts_ms: f64,
    seed: u64,
    count: usize,
    label: i32,
    binary: bool,
    out: &Path,
) -> CliResult {
    let sim = SimConfig::new(window_ms, ts_ms)?;
    create_dir(out)?;
    let ext = if binary { "bin" } else { "csv" };
    let mut manifest = create_file(&out.join("manifest.csv"))?;
    writeln!(manifest, "path,label")?;
    for i in 0..count {
        let sample_seed = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64);
        let train = poisson_spike_train(channels, rate, &sim, sample_seed)?;
        let name = format!("sample_{i:05}.{ext}");
        write_events(out.join(&name), &SpikeTrainSet::from_train(&train, label))?;
        writeln!(manifest, "{name},{label}")?;
    }
    manifest.flush()?;
    println!("wrote {count} files to {}", out.display());
    Ok(())
}
