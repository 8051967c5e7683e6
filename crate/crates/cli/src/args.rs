//! Flag definitions, config-file merging and the canonical argument list
//! recorded in manifests.

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use spikegrad::snn::LifParams;

use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "spikegrad", version, about = "Spiking-network BPTT experiments with and without the reset-dependency gradient term")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Compare analytic soft-model gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Train the single-neuron toy problem.
    Toy(ToyArgs),
    /// Paired learning-rate sweep of the toy problem.
    Sweep(SweepArgs),
    /// Train the dense rate-coded MNIST classifier.
    Mnist(MnistArgs),
    /// Re-run a command from its manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Output directory.
    #[arg(long, env = "SPIKEGRAD_OUT", default_value = "out")]
    pub out: PathBuf,
    /// TOML file of flag values (keys are flag names); command-line flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct Neuron {
    /// Membrane time constant.
    #[arg(long, default_value_t = 6.0)]
    pub tau_m: f64,
    /// Synaptic time constant.
    #[arg(long, default_value_t = 2.0)]
    pub tau_s: f64,
    /// Firing threshold.
    #[arg(long, default_value_t = 1.0)]
    pub theta: f64,
    /// Surrogate sigmoid temperature.
    #[arg(long, default_value_t = 0.3)]
    pub temp: f64,
}

impl Neuron {
    pub fn params(&self) -> Result<LifParams, CliError> {
        LifParams::new(self.tau_m, self.tau_s, self.theta, self.temp).map_err(|e| CliError::Usage(e.to_string()))
    }

    fn push(&self, out: &mut Resolved) {
        out.value("tau-m", num(self.tau_m));
        out.value("tau-s", num(self.tau_s));
        out.value("theta", num(self.theta));
        out.value("temp", num(self.temp));
    }
}

#[derive(Debug, Clone, Args)]
#[command(args_override_self = true)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub common: Common,
    /// Number of random instances.
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    pub instances: u64,
    /// Pass threshold on the suite's max relative error.
    #[arg(long, default_value_t = 1e-5, value_parser = positive)]
    pub tol: f64,
    /// Seed of the first instance; instance k uses seed + k.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Surrogate temperature of the soft model.
    #[arg(long, default_value_t = 0.3, value_parser = positive)]
    pub temp: f64,
}

#[derive(Debug, Clone, Args)]
#[command(args_override_self = true)]
pub struct ToyArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub neuron: Neuron,
    #[arg(long, default_value_t = 0.005, value_parser = non_negative)]
    pub lr: f64,
    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
    pub iterations: u64,
    /// Single seed (shorthand for --seeds S,).
    #[arg(long, conflicts_with = "seeds")]
    pub seed: Option<u64>,
    /// Seed count N (seeds 0..N), a range A..B, or a list A,B,C.
    #[arg(long, value_parser = parse_seeds)]
    pub seeds: Option<SeedList>,
    /// Run only the variant without the reset-dependency term.
    #[arg(long)]
    pub no_reset_term: bool,
    /// Dump the output layer's backward phases of the final iteration.
    #[arg(long)]
    pub phases: bool,
    /// Also write SVG plots.
    #[arg(long)]
    pub svg: bool,
    /// Write final weights of every trial as checkpoints.
    #[arg(long)]
    pub checkpoints: bool,
}

#[derive(Debug, Clone, Args)]
#[command(args_override_self = true)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub neuron: Neuron,
    /// Comma-separated learning rates.
    #[arg(long, default_value = "0.001,0.005,0.01,0.02", value_parser = parse_lrs)]
    pub lrs: LrList,
    /// Seed count N (seeds 0..N), a range A..B, or a list A,B,C.
    #[arg(long, default_value = "20", value_parser = parse_seeds)]
    pub seeds: SeedList,
    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
    pub iterations: u64,
    #[arg(long)]
    pub svg: bool,
}

#[derive(Debug, Clone, Args)]
#[command(args_override_self = true)]
pub struct MnistArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub neuron: Neuron,
    #[arg(long, default_value_t = 0.01, value_parser = non_negative)]
    pub lr: f64,
    #[arg(long, conflicts_with = "seeds")]
    pub seed: Option<u64>,
    /// Seed count N (seeds 0..N), a range A..B, or a list A,B,C.
    #[arg(long, value_parser = parse_seeds)]
    pub seeds: Option<SeedList>,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    /// Mini-batch size; gradients are averaged over the batch.
    #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u64).range(1..))]
    pub batch: u64,
    /// Train on the first N images, test on the next N.
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    pub subset: u64,
    /// Comma-separated hidden layer widths.
    #[arg(long, default_value = "100", value_parser = parse_widths)]
    pub hidden: Widths,
    #[arg(long, default_value = "data/mnist/images.idx3-ubyte")]
    pub mnist_images: PathBuf,
    #[arg(long, default_value = "data/mnist/labels.idx1-ubyte")]
    pub mnist_labels: PathBuf,
    /// Run only the variant without the reset-dependency term.
    #[arg(long)]
    pub no_reset_term: bool,
    #[arg(long)]
    pub svg: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    /// Manifest written by an earlier run.
    pub manifest: PathBuf,
    /// Output directory (default: the one recorded in the manifest).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedList(pub Vec<u64>);

#[derive(Debug, Clone, PartialEq)]
pub struct LrList(pub Vec<f64>);

#[derive(Debug, Clone, PartialEq)]
pub struct Widths(pub Vec<usize>);

pub fn parse_seeds(s: &str) -> Result<SeedList, String> {
    let s = s.trim();
    let seeds: Vec<u64> = if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| format!("bad seed range {s:?}"))?;
        let b: u64 = b.trim().parse().map_err(|_| format!("bad seed range {s:?}"))?;
        (a..b).collect()
    } else if s.contains(',') {
        s.split(',')
            .filter(|t| !t.trim().is_empty())
            .map(|t| t.trim().parse().map_err(|_| format!("bad seed {t:?}")))
            .collect::<Result<_, _>>()?
    } else {
        let n: u64 = s.parse().map_err(|_| format!("bad seed count {s:?}"))?;
        (0..n).collect()
    };
    if seeds.is_empty() {
        return Err("seed list is empty".into());
    }
    Ok(SeedList(seeds))
}

pub fn parse_lrs(s: &str) -> Result<LrList, String> {
    let lrs = s
        .split(',')
        .map(|t| non_negative(t.trim()))
        .collect::<Result<Vec<_>, _>>()?;
    if lrs.is_empty() {
        return Err("no learning rates".into());
    }
    Ok(LrList(lrs))
}

pub fn parse_widths(s: &str) -> Result<Widths, String> {
    let w = s
        .split(',')
        .map(|t| match t.trim().parse::<usize>() {
            Ok(0) | Err(_) => Err(format!("bad layer width {t:?}")),
            Ok(n) => Ok(n),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Widths(w))
}

fn non_negative(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(x) if x >= 0.0 && x.is_finite() => Ok(x),
        _ => Err(format!("expected a finite number >= 0, got {s:?}")),
    }
}

fn positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(x) if x > 0.0 && x.is_finite() => Ok(x),
        _ => Err(format!("expected a finite number > 0, got {s:?}")),
    }
}

pub fn num(x: f64) -> String {
    format!("{x:?}")
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// Every setting of a run, in flag order. Booleans are flags.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct Resolved(pub Vec<(String, Setting)>);

#[derive(Debug, Clone, PartialEq)]
pub enum Setting {
    Value(String),
    Flag(bool),
}

impl Resolved {
    fn value(&mut self, key: &str, v: String) {
        self.0.push((key.to_string(), Setting::Value(v)));
    }

    fn flag(&mut self, key: &str, on: bool) {
        self.0.push((key.to_string(), Setting::Flag(on)));
    }

    /// Arguments that reproduce the run when passed after the subcommand.
    pub fn to_args(&self) -> Vec<String> {
        let mut args = Vec::new();
        for (k, v) in &self.0 {
            match v {
                Setting::Value(s) => {
                    args.push(format!("--{k}"));
                    args.push(s.clone());
                }
                Setting::Flag(true) => args.push(format!("--{k}")),
                Setting::Flag(false) => {}
            }
        }
        args
    }
}

fn seeds_or(seed: Option<u64>, seeds: &Option<SeedList>, default: u64) -> Vec<u64> {
    match (seed, seeds) {
        (Some(s), _) => vec![s],
        (None, Some(l)) => l.0.clone(),
        (None, None) => (0..default).collect(),
    }
}

impl ToyArgs {
    pub fn seed_list(&self) -> Vec<u64> {
        seeds_or(self.seed, &self.seeds, 1)
    }

    pub fn resolved(&self) -> Resolved {
        let mut r = Resolved::default();
        self.neuron.push(&mut r);
        r.value("lr", num(self.lr));
        r.value("iterations", self.iterations.to_string());
        r.value("seeds", join(&self.seed_list()));
        r.flag("no-reset-term", self.no_reset_term);
        r.flag("phases", self.phases);
        r.flag("svg", self.svg);
        r.flag("checkpoints", self.checkpoints);
        r
    }
}

impl GradcheckArgs {
    pub fn resolved(&self) -> Resolved {
        let mut r = Resolved::default();
        r.value("instances", self.instances.to_string());
        r.value("tol", num(self.tol));
        r.value("seed", self.seed.to_string());
        r.value("temp", num(self.temp));
        r
    }
}

impl SweepArgs {
    pub fn resolved(&self) -> Resolved {
        let mut r = Resolved::default();
        self.neuron.push(&mut r);
        r.value("lrs", self.lrs.0.iter().map(|&x| num(x)).collect::<Vec<_>>().join(","));
        r.value("seeds", join(&self.seeds.0));
        r.value("iterations", self.iterations.to_string());
        r.flag("svg", self.svg);
        r
    }
}

impl MnistArgs {
    pub fn seed_list(&self) -> Vec<u64> {
        seeds_or(self.seed, &self.seeds, 3)
    }

    pub fn resolved(&self) -> Resolved {
        let mut r = Resolved::default();
        self.neuron.push(&mut r);
        r.value("lr", num(self.lr));
        r.value("seeds", join(&self.seed_list()));
        r.value("epochs", self.epochs.to_string());
        r.value("batch", self.batch.to_string());
        r.value("subset", self.subset.to_string());
        r.value("hidden", join(&self.hidden.0));
        r.value("mnist-images", self.mnist_images.display().to_string());
        r.value("mnist-labels", self.mnist_labels.display().to_string());
        r.flag("no-reset-term", self.no_reset_term);
        r.flag("svg", self.svg);
        r
    }
}

/// Inserts the flags of a `--config` TOML file right after the subcommand,
/// so flags given on the command line override them.
pub fn expand_config(argv: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let mut path = None;
    for (i, a) in argv.iter().enumerate().skip(2) {
        let a = a.to_string_lossy();
        if a == "--config" {
            path = argv.get(i + 1).map(PathBuf::from);
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(PathBuf::from(p));
        }
    }
    let Some(path) = path else { return Ok(argv) };
    let text = fs::read_to_string(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let table: toml::Table = toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;

    let mut extra: Vec<OsString> = Vec::new();
    for (key, value) in &table {
        let flag = format!("--{}", key.replace('_', "-"));
        let scalar = |v: &toml::Value| -> Result<String, CliError> {
            match v {
                toml::Value::String(s) => Ok(s.clone()),
                toml::Value::Integer(i) => Ok(i.to_string()),
                toml::Value::Float(f) => Ok(num(*f)),
                _ => Err(CliError::Usage(format!("config key {key:?}: unsupported value {v}"))),
            }
        };
        match value {
            toml::Value::Boolean(true) => extra.push(flag.into()),
            toml::Value::Boolean(false) => {}
            toml::Value::Array(items) => {
                let parts = items.iter().map(scalar).collect::<Result<Vec<_>, _>>()?;
                extra.push(flag.into());
                extra.push(parts.join(",").into());
            }
            v => {
                extra.push(flag.into());
                extra.push(scalar(v)?.into());
            }
        }
    }
    let mut out = argv;
    let at = 2.min(out.len());
    out.splice(at..at, extra);
    Ok(out)
}
