//! Command-line front end.
//!
//! Every parameter resolves as flag > config file section > preset/default,
//! and the resolved values are printed before the run starts.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde_json::json;

use crate::classifier::{
    calibrated_init_c, evaluate, train_classifier_with, ClassifierConfig, MnistDataset, Split,
};
use crate::eigen::{eigenfunction_l2_error, solve, EigenTrainConfig};
use crate::error::PltmError;
use crate::gradcheck::{cross_entropy_gradient_deviation, rayleigh_gradient_deviation, CheckShape};
use crate::idx::mnist_paths;
use crate::legendre::{assemble_forms, BasisFamily, BasisSpec, Interval, SymMatrix};
use crate::rayleigh::ProblemKind;

pub const MNIST_DIR_ENV: &str = "PLTM_MNIST_DIR";

const RAYLEIGH_TOL: f64 = 1e-6;
const CROSS_ENTROPY_TOL: f64 = 1e-5;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] PltmError),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) | CliError::Failed(_) => 1,
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// One row of a subcommand's key table: key, default, origin of the default.
type KeyRow = (&'static str, &'static str, &'static str);

const OUTPUT_KEYS: [KeyRow; 5] = [
    ("config", "none", "artifact"),
    ("out", "none (stdout only)", "artifact"),
    ("json", "none", "artifact"),
    ("trace", "none", "artifact"),
    ("model-out", "none", "artifact"),
];

const ADAM_KEYS: [KeyRow; 3] = [
    ("beta1", "0.9", "artifact"),
    ("beta2", "0.999", "artifact"),
    ("eps", "1e-8", "artifact"),
];

const LAPLACIAN_KEYS: &[KeyRow] = &[
    ("preset", "paper-lap-d10", "paper"),
    ("dim", "10 (512 with paper-lap-d512)", "paper"),
    ("rank", "10", "paper"),
    ("bases", "10", "paper"),
    ("init-c", "1", "paper"),
    ("lr", "0.001", "paper"),
    ("iters", "500", "paper"),
    ("interval", "0 1", "paper"),
    ("seed", "0", "artifact"),
];

const OSCILLATOR_KEYS: &[KeyRow] = &[
    ("preset", "paper-osc-d10", "paper"),
    ("dim", "10 (512 with paper-osc-d512)", "paper"),
    ("rank", "10", "paper"),
    ("bases", "22", "paper"),
    ("init-c", "1 below d = 512, 0.3 from d = 512", "paper"),
    ("lr", "0.001", "paper"),
    ("iters", "1000", "paper"),
    ("interval", "-5 5", "paper"),
    ("seed", "0", "artifact"),
];

const MNIST_KEYS: &[KeyRow] = &[
    ("preset", "paper-mnist", "paper"),
    ("data-dir", "$PLTM_MNIST_DIR", "artifact"),
    ("train-size", "all (80% for a single images/labels pair)", "artifact"),
    ("test-size", "all (the rest for a single pair)", "artifact"),
    ("family", "legendre-from-zero", "artifact"),
    ("rank", "64", "artifact"),
    ("bases", "3", "artifact"),
    ("init-c", "auto (geometric-mean calibration)", "artifact"),
    ("w-low", "-0.5", "artifact"),
    ("w-high", "0.5", "artifact"),
    ("lr", "0.0003", "artifact"),
    ("epochs", "20", "artifact"),
    ("batch-size", "128", "artifact"),
    ("seed", "0", "artifact"),
];

const CHECK_KEYS: &[KeyRow] = &[
    ("seed", "0", "artifact"),
    ("seeds", "5", "artifact"),
    ("dim", "3", "artifact"),
    ("rank", "3", "artifact"),
    ("bases", "4", "artifact"),
];

const FORMS_KEYS: &[KeyRow] = &[
    ("bases", "10", "artifact"),
    ("interval", "-1 1", "paper"),
    ("family", "boundary-adapted", "paper"),
];

fn key_table(rows: &[KeyRow], extra: &[KeyRow]) -> String {
    let mut out = String::from("Config keys (flag > config file > preset default):\n");
    for (key, default, origin) in rows.iter().chain(extra) {
        let _ = writeln!(out, "  {key:<12} default {default}  [{origin}]");
    }
    out
}

fn eigen_help(rows: &[KeyRow]) -> String {
    let shared: Vec<KeyRow> = ADAM_KEYS.iter().chain(&OUTPUT_KEYS).copied().collect();
    key_table(rows, &shared)
}

#[derive(Debug, Parser)]
#[command(
    name = "pltm",
    version,
    about = "Polynomial low-rank tensor models: exact-integral eigensolvers and an MNIST classifier"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Smallest eigenvalue of -Δ on a box with zero boundary values.
    #[command(after_help = eigen_help(LAPLACIAN_KEYS))]
    SolveLaplacian(EigenArgs),
    /// Smallest eigenvalue of -Δ + |x|² on a box with zero boundary values.
    #[command(after_help = eigen_help(OSCILLATOR_KEYS))]
    SolveOscillator(EigenArgs),
    /// Train the softmax classifier on MNIST IDX files and report test accuracy.
    #[command(after_help = key_table(MNIST_KEYS, &[&ADAM_KEYS[..], &OUTPUT_KEYS[..]].concat()))]
    ClassifyMnist(MnistArgs),
    /// Compare analytic gradients with central finite differences.
    #[command(after_help = key_table(CHECK_KEYS, &OUTPUT_KEYS[..3]))]
    CheckGradients(CheckArgs),
    /// Print the mass, stiffness and y²-weighted Gram matrices of a basis.
    #[command(after_help = key_table(FORMS_KEYS, &OUTPUT_KEYS[..3]))]
    Forms(FormsArgs),
}

#[derive(Debug, Args, Default)]
struct OutputArgs {
    /// TOML file with a section per subcommand.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write the text report here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write a JSON report here.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AdamArgs {
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
}

#[derive(Debug, Args)]
struct EigenArgs {
    #[command(flatten)]
    output: OutputArgs,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    bases: Option<usize>,
    #[arg(long)]
    init_c: Option<f64>,
    #[command(flatten)]
    adam: AdamArgs,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Box side `[s, t]`.
    #[arg(long, num_args = 2, value_names = ["S", "T"], allow_negative_numbers = true)]
    interval: Option<Vec<f64>>,
    /// CSV of the loss after every update.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Save the trained model.
    #[arg(long)]
    model_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct MnistArgs {
    #[command(flatten)]
    output: OutputArgs,
    #[arg(long)]
    preset: Option<String>,
    /// Directory with train-/t10k- IDX files, or a single images/labels pair.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    train_size: Option<usize>,
    #[arg(long)]
    test_size: Option<usize>,
    #[arg(long)]
    family: Option<String>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    bases: Option<usize>,
    /// A number, or `auto`.
    #[arg(long)]
    init_c: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    w_low: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    w_high: Option<f64>,
    #[command(flatten)]
    adam: AdamArgs,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// CSV of the mean training loss per epoch.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    model_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CheckArgs {
    #[command(flatten)]
    output: OutputArgs,
    /// First seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of consecutive seeds.
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    bases: Option<usize>,
}

#[derive(Debug, Args)]
struct FormsArgs {
    #[command(flatten)]
    output: OutputArgs,
    #[arg(long, visible_alias = "b")]
    bases: Option<usize>,
    #[arg(long, num_args = 2, value_names = ["S", "T"], allow_negative_numbers = true)]
    interval: Option<Vec<f64>>,
    #[arg(long)]
    family: Option<String>,
}

/// Where a resolved value came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Origin {
    Flag,
    Config,
    Paper,
    Artifact,
}

impl Origin {
    fn label(self) -> &'static str {
        match self {
            Origin::Flag => "flag",
            Origin::Config => "config",
            Origin::Paper => "default, paper",
            Origin::Artifact => "default, artifact",
        }
    }
}

/// Resolves keys for one subcommand and records what was chosen.
struct Resolver {
    section: String,
    table: toml::Table,
    entries: Vec<(String, String, Origin)>,
}

impl Resolver {
    fn new(section: &str, config: Option<&Path>, known: &[&str]) -> Result<Self, CliError> {
        let mut table = toml::Table::new();
        if let Some(path) = config {
            let text = fs::read_to_string(path)
                .map_err(|e| usage(format!("config: cannot read {}: {e}", path.display())))?;
            let mut root: toml::Table = text
                .parse()
                .map_err(|e| usage(format!("config: {}: {e}", path.display())))?;
            if let Some(section_value) = root.remove(section) {
                table = match section_value {
                    toml::Value::Table(t) => t,
                    _ => return Err(usage(format!("config: [{section}] must be a table"))),
                };
            }
        }
        if let Some(unknown) = table.keys().find(|k| !known.contains(&k.as_str())) {
            return Err(usage(format!("config: unknown key `{unknown}` in [{section}]")));
        }
        Ok(Self {
            section: section.to_string(),
            table,
            entries: Vec::new(),
        })
    }

    fn config_value<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>, CliError> {
        let Some(value) = self.table.get(key) else {
            return Ok(None);
        };
        let parsed = value.clone().try_into::<T>().or_else(|e| match value {
            toml::Value::Integer(i) => toml::Value::Float(*i as f64).try_into::<T>(),
            _ => Err(e),
        });
        parsed
            .map(Some)
            .map_err(|e| usage(format!("config: [{}] {key}: {e}", self.section)))
    }

    /// `flag`, else the config entry, else `default`.
    fn pick<T>(&mut self, key: &str, flag: Option<T>, default: T, origin: Origin) -> Result<T, CliError>
    where
        T: DeserializeOwned + std::fmt::Debug,
    {
        let (value, origin) = match (flag, self.config_value::<T>(key)?) {
            (Some(v), _) => (v, Origin::Flag),
            (None, Some(v)) => (v, Origin::Config),
            (None, None) => (default, origin),
        };
        self.record(key, format_value(&value), origin);
        Ok(value)
    }

    /// As [`Resolver::pick`] for keys that may stay unset.
    fn pick_opt<T>(&mut self, key: &str, flag: Option<T>, default: Option<T>, origin: Origin) -> Result<Option<T>, CliError>
    where
        T: DeserializeOwned + std::fmt::Debug,
    {
        let (value, origin) = match (flag, self.config_value::<T>(key)?) {
            (Some(v), _) => (Some(v), Origin::Flag),
            (None, Some(v)) => (Some(v), Origin::Config),
            (None, None) => (default, origin),
        };
        let shown = value.as_ref().map_or("none".to_string(), format_value);
        self.record(key, shown, origin);
        Ok(value)
    }

    fn record(&mut self, key: &str, value: String, origin: Origin) {
        self.entries.push((key.to_string(), value, origin));
    }

    fn render(&self) -> String {
        let mut out = format!("[{}]\n", self.section);
        for (key, value, origin) in &self.entries {
            let _ = writeln!(out, "{key} = {value}  # {}", origin.label());
        }
        out
    }

    fn as_json(&self) -> serde_json::Value {
        self.entries
            .iter()
            .map(|(k, v, o)| (k.clone(), json!({ "value": v, "source": o.label() })))
            .collect::<serde_json::Map<_, _>>()
            .into()
    }
}

fn format_value<T: std::fmt::Debug>(v: &T) -> String {
    let s = format!("{v:?}");
    s.strip_prefix("Some(")
        .and_then(|s| s.strip_suffix(')'))
        .map_or(s.clone(), str::to_string)
}

fn interval_from(values: Option<Vec<f64>>) -> Option<[f64; 2]> {
    values.map(|v| [v[0], v[1]])
}

fn parse_family(name: &str) -> Result<BasisFamily, CliError> {
    match name {
        "boundary-adapted" => Ok(BasisFamily::BoundaryAdapted),
        "plain-legendre" => Ok(BasisFamily::PlainLegendre),
        "legendre-from-zero" => Ok(BasisFamily::LegendreFromZero),
        other => Err(usage(format!(
            "family: unknown basis family `{other}` (boundary-adapted, plain-legendre, legendre-from-zero)"
        ))),
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| {
        CliError::Runtime(PltmError::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        )))
    })
}

/// Prints the results (the config was printed before the run) and writes
/// the optional text/JSON copies, which carry the config as well.
fn emit(output: &OutputArgs, res: &Resolver, results: &str, json: serde_json::Value) -> Result<(), CliError> {
    print!("{results}");
    if let Some(path) = &output.out {
        let text = format!("{}\n{results}", res.render());
        write_file(path, text.as_bytes())?;
    }
    if let Some(path) = &output.json {
        let mut body = serde_json::to_string_pretty(&json).map_err(|e| CliError::Failed(e.to_string()))?;
        body.push('\n');
        write_file(path, body.as_bytes())?;
    }
    Ok(())
}

const ADAM_KEY_NAMES: [&str; 4] = ["lr", "beta1", "beta2", "eps"];

fn resolve_adam(
    res: &mut Resolver,
    args: &AdamArgs,
    defaults: crate::optim::AdamConfig,
    lr_origin: Origin,
) -> Result<crate::optim::AdamConfig, CliError> {
    Ok(crate::optim::AdamConfig {
        lr: res.pick("lr", args.lr, defaults.lr, lr_origin)?,
        beta1: res.pick("beta1", args.beta1, defaults.beta1, Origin::Artifact)?,
        beta2: res.pick("beta2", args.beta2, defaults.beta2, Origin::Artifact)?,
        eps: res.pick("eps", args.eps, defaults.eps, Origin::Artifact)?,
    })
}

fn run_eigen(kind: ProblemKind, args: EigenArgs) -> Result<(), CliError> {
    let (section, default_preset, prefix) = match kind {
        ProblemKind::Laplacian => ("solve-laplacian", "paper-lap-d10", "paper-lap-"),
        ProblemKind::HarmonicOscillator => ("solve-oscillator", "paper-osc-d10", "paper-osc-"),
    };
    let known = [
        "preset", "dim", "rank", "bases", "init-c", "iters", "seed", "interval", "trace", "model-out",
    ];
    let known: Vec<&str> = known.iter().chain(&ADAM_KEY_NAMES).copied().collect();
    let mut res = Resolver::new(section, args.output.config.as_deref(), &known)?;

    let preset: String = res.pick("preset", args.preset, default_preset.to_string(), Origin::Paper)?;
    let preset_cfg = EigenTrainConfig::preset(&preset)
        .filter(|_| preset.starts_with(prefix))
        .ok_or_else(|| {
            usage(format!(
                "preset: `{preset}` is not a {section} preset ({prefix}d10, {prefix}d512)"
            ))
        })?;
    let dim = res.pick("dim", args.dim, preset_cfg.problem.dim, Origin::Paper)?;
    let base = match kind {
        ProblemKind::Laplacian => EigenTrainConfig::laplacian(dim),
        ProblemKind::HarmonicOscillator => EigenTrainConfig::oscillator(dim),
    };
    let mut cfg = base;
    cfg.rank = res.pick("rank", args.rank, base.rank, Origin::Paper)?;
    cfg.bases = res.pick("bases", args.bases, base.bases, Origin::Paper)?;
    cfg.init.c = res.pick("init-c", args.init_c, base.init.c, Origin::Paper)?;
    cfg.adam = resolve_adam(&mut res, &args.adam, base.adam, Origin::Paper)?;
    cfg.iterations = res.pick("iters", args.iters, base.iterations, Origin::Paper)?;
    cfg.init.seed = res.pick("seed", args.seed, base.init.seed, Origin::Artifact)?;
    let default_interval = [base.problem.interval.s, base.problem.interval.t];
    let [s, t] = res.pick("interval", interval_from(args.interval), default_interval, Origin::Paper)?;
    cfg.problem.interval = Interval::new(s, t).map_err(|e| usage(format!("interval: {e}")))?;
    let trace: Option<PathBuf> = res.pick_opt("trace", args.trace, None, Origin::Artifact)?;
    let model_out: Option<PathBuf> = res.pick_opt("model-out", args.model_out, None, Origin::Artifact)?;
    println!("{}", res.render());

    let report = solve(&cfg)?;
    let eigenfunction_error = eigenfunction_l2_error(&report.final_model, &cfg.problem).ok();

    let mut text = String::new();
    let mut body = Vec::new();
    report.write_text(&mut body).map_err(PltmError::Io)?;
    text.push_str(&String::from_utf8_lossy(&body));
    if let Some(e) = eigenfunction_error {
        let _ = writeln!(text, "eigenfunction_l2_error = {e:.3e}");
    }
    if let Some(path) = &trace {
        let mut csv = Vec::new();
        report.write_trace_csv(&mut csv).map_err(PltmError::Io)?;
        write_file(path, &csv)?;
    }
    if let Some(path) = &model_out {
        let mut bytes = Vec::new();
        report.final_model.write_to(&mut bytes)?;
        write_file(path, &bytes)?;
    }
    let json = json!({
        "command": section,
        "config": res.as_json(),
        "learned_eigenvalue": report.learned_eigenvalue,
        "true_eigenvalue": report.true_eigenvalue,
        "relative_error": report.relative_error,
        "initial_loss": report.initial_loss,
        "iterations": report.loss_trace.len(),
        "eigenfunction_l2_error": eigenfunction_error,
        "wall_time_s": report.wall_time,
    });
    emit(&args.output, &res, &text, json)
}

/// Train and test sets from `dir`: the standard four files, or a single
/// `images-idx3-ubyte`/`labels-idx1-ubyte` pair split in order.
fn load_mnist(
    dir: &Path,
    train_size: Option<usize>,
    test_size: Option<usize>,
) -> Result<(MnistDataset, MnistDataset), CliError> {
    let take = |data: MnistDataset, n: Option<usize>, split| match n {
        Some(n) if n < data.len() => data.slice(0..n, split),
        _ => data,
    };
    if mnist_paths(dir, "train").0.exists() {
        let train = MnistDataset::load_dir(dir, Split::Train)?;
        let test = MnistDataset::load_dir(dir, Split::Test)?;
        return Ok((take(train, train_size, Split::Train), take(test, test_size, Split::Test)));
    }
    let images = dir.join("images-idx3-ubyte");
    let labels = dir.join("labels-idx1-ubyte");
    if !images.exists() {
        return Err(usage(format!(
            "data-dir: {} holds neither train-images-idx3-ubyte nor images-idx3-ubyte",
            dir.display()
        )));
    }
    let all = MnistDataset::load(&images, &labels, Split::Train)?;
    let n = all.len();
    let n_train = train_size.unwrap_or(n * 4 / 5).min(n);
    let n_test = test_size.unwrap_or(n - n_train).min(n - n_train);
    if n_train == 0 || n_test == 0 {
        return Err(usage(format!("train-size/test-size: {n} samples cannot give {n_train} + {n_test}")));
    }
    Ok((
        all.slice(0..n_train, Split::Train),
        all.slice(n_train..n_train + n_test, Split::Test),
    ))
}

fn run_mnist(args: MnistArgs) -> Result<(), CliError> {
    let known = [
        "preset", "data-dir", "train-size", "test-size", "family", "rank", "bases", "init-c", "w-low",
        "w-high", "epochs", "batch-size", "seed", "trace", "model-out",
    ];
    let known: Vec<&str> = known.iter().chain(&ADAM_KEY_NAMES).copied().collect();
    let mut res = Resolver::new("classify-mnist", args.output.config.as_deref(), &known)?;
    let preset: String = res.pick("preset", args.preset, "paper-mnist".into(), Origin::Paper)?;
    if preset != "paper-mnist" {
        return Err(usage(format!("preset: `{preset}` is not a classify-mnist preset (paper-mnist)")));
    }
    let env_dir = std::env::var_os(MNIST_DIR_ENV).map(PathBuf::from);
    let data_dir: Option<PathBuf> = res.pick_opt("data-dir", args.data_dir, env_dir, Origin::Artifact)?;
    let data_dir = data_dir.ok_or_else(|| usage(format!("data-dir: pass --data-dir or set {MNIST_DIR_ENV}")))?;
    let train_size: Option<usize> = res.pick_opt("train-size", args.train_size, None, Origin::Artifact)?;
    let test_size: Option<usize> = res.pick_opt("test-size", args.test_size, None, Origin::Artifact)?;

    let base = ClassifierConfig::default();
    let mut cfg = base;
    let family: String = res.pick("family", args.family, "legendre-from-zero".into(), Origin::Artifact)?;
    cfg.family = parse_family(&family)?;
    cfg.rank = res.pick("rank", args.rank, base.rank, Origin::Artifact)?;
    cfg.bases = res.pick("bases", args.bases, base.bases, Origin::Artifact)?;
    let init_c: String = res.pick("init-c", args.init_c, "auto".into(), Origin::Artifact)?;
    let w_low = res.pick("w-low", args.w_low, base.init.w_range.0, Origin::Artifact)?;
    let w_high = res.pick("w-high", args.w_high, base.init.w_range.1, Origin::Artifact)?;
    cfg.init.w_range = (w_low, w_high);
    cfg.adam = resolve_adam(&mut res, &args.adam, base.adam, Origin::Artifact)?;
    cfg.epochs = res.pick("epochs", args.epochs, base.epochs, Origin::Artifact)?;
    cfg.batch_size = res.pick("batch-size", args.batch_size, base.batch_size, Origin::Artifact)?;
    let seed = res.pick("seed", args.seed, base.shuffle_seed, Origin::Artifact)?;
    cfg.init.seed = seed;
    cfg.shuffle_seed = seed;
    let trace: Option<PathBuf> = res.pick_opt("trace", args.trace, None, Origin::Artifact)?;
    let model_out: Option<PathBuf> = res.pick_opt("model-out", args.model_out, None, Origin::Artifact)?;

    let (train, test) = load_mnist(&data_dir, train_size, test_size)?;
    cfg.init.c = match init_c.as_str() {
        "auto" => calibrated_init_c(&cfg.basis()?, &train),
        v => v
            .parse()
            .map_err(|_| usage(format!("init-c: expected a number or `auto`, got `{v}`")))?,
    };
    res.record("resolved-init-c", format!("{:?}", cfg.init.c), Origin::Artifact);
    res.record("train-samples", train.len().to_string(), Origin::Artifact);
    res.record("test-samples", test.len().to_string(), Origin::Artifact);
    println!("{}", res.render());

    let outcome = train_classifier_with(&cfg, &train, |e| {
        eprintln!(
            "epoch {:>3}  loss {:.6}  log10|term| in [{:.2}, {:.2}]  {:.1}s",
            e.epoch, e.mean_loss, e.log10_term_range.0, e.log10_term_range.1, e.elapsed_secs
        );
    })?;
    let test_accuracy = evaluate(&outcome.model, &test)?;
    let wall = outcome.epochs.last().map_or(0.0, |e| e.elapsed_secs);

    let mut text = String::new();
    for e in &outcome.epochs {
        let _ = writeln!(
            text,
            "epoch {} mean_loss = {:.17e} log10_term_range = [{:.3}, {:.3}]",
            e.epoch, e.mean_loss, e.log10_term_range.0, e.log10_term_range.1
        );
    }
    let _ = writeln!(text, "test_accuracy = {test_accuracy:.4}");
    let _ = writeln!(text, "wall_time_s = {wall:.3}");
    if let Some(path) = &trace {
        let mut csv = String::from("epoch,mean_loss,log10_term_min,log10_term_max\n");
        for e in &outcome.epochs {
            let _ = writeln!(
                csv,
                "{},{:.17e},{:.6},{:.6}",
                e.epoch, e.mean_loss, e.log10_term_range.0, e.log10_term_range.1
            );
        }
        write_file(path, csv.as_bytes())?;
    }
    if let Some(path) = &model_out {
        let mut bytes = Vec::new();
        outcome.model.write_to(&mut bytes)?;
        write_file(path, &bytes)?;
    }
    let json = json!({
        "command": "classify-mnist",
        "config": res.as_json(),
        "epochs": outcome.epochs,
        "test_accuracy": test_accuracy,
        "wall_time_s": wall,
    });
    emit(&args.output, &res, &text, json)
}

fn run_check(args: CheckArgs) -> Result<(), CliError> {
    let known = ["seed", "seeds", "dim", "rank", "bases"];
    let mut res = Resolver::new("check-gradients", args.output.config.as_deref(), &known)?;
    let seed = res.pick("seed", args.seed, 0u64, Origin::Artifact)?;
    let seeds = res.pick("seeds", args.seeds, 5usize, Origin::Artifact)?;
    let shape = CheckShape {
        dim: res.pick("dim", args.dim, 3, Origin::Artifact)?,
        rank: res.pick("rank", args.rank, 3, Origin::Artifact)?,
        bases: res.pick("bases", args.bases, 4, Origin::Artifact)?,
    };
    if seeds == 0 || shape.dim == 0 || shape.rank == 0 || shape.bases == 0 {
        return Err(usage("seeds/dim/rank/bases: must be at least 1"));
    }
    println!("{}", res.render());

    let mut text = String::new();
    let mut worst_rayleigh = 0.0f64;
    let mut worst_ce = 0.0f64;
    let mut rows = Vec::new();
    for s in seed..seed + seeds as u64 {
        let lap = rayleigh_gradient_deviation(ProblemKind::Laplacian, shape, s)?;
        let osc = rayleigh_gradient_deviation(ProblemKind::HarmonicOscillator, shape, s)?;
        let ce = cross_entropy_gradient_deviation(shape, s)?;
        let _ = writeln!(
            text,
            "seed {s}: laplacian {lap:.3e}  oscillator {osc:.3e}  cross-entropy {ce:.3e}"
        );
        worst_rayleigh = worst_rayleigh.max(lap).max(osc);
        worst_ce = worst_ce.max(ce);
        rows.push(json!({ "seed": s, "laplacian": lap, "oscillator": osc, "cross_entropy": ce }));
    }
    let pass = worst_rayleigh <= RAYLEIGH_TOL && worst_ce <= CROSS_ENTROPY_TOL;
    let _ = writeln!(text, "max_relative_deviation_rayleigh = {worst_rayleigh:.3e} (tolerance {RAYLEIGH_TOL:e})");
    let _ = writeln!(text, "max_relative_deviation_cross_entropy = {worst_ce:.3e} (tolerance {CROSS_ENTROPY_TOL:e})");
    let _ = writeln!(text, "result = {}", if pass { "pass" } else { "fail" });
    let json = json!({
        "command": "check-gradients",
        "config": res.as_json(),
        "seeds": rows,
        "max_relative_deviation_rayleigh": worst_rayleigh,
        "max_relative_deviation_cross_entropy": worst_ce,
        "pass": pass,
    });
    emit(&args.output, &res, &text, json)?;
    if pass {
        Ok(())
    } else {
        Err(CliError::Failed("gradient check exceeded tolerance".into()))
    }
}

fn matrix_text(name: &str, m: &SymMatrix) -> String {
    let mut out = format!("{name} ({n}x{n})\n", n = m.n);
    for row in 0..m.n {
        let cells: Vec<String> = m.row(row).iter().map(|v| format!("{v:>24.16e}")).collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    out
}

fn run_forms(args: FormsArgs) -> Result<(), CliError> {
    let known = ["bases", "interval", "family"];
    let mut res = Resolver::new("forms", args.output.config.as_deref(), &known)?;
    let bases = res.pick("bases", args.bases, 10usize, Origin::Artifact)?;
    let [s, t] = res.pick("interval", interval_from(args.interval), [-1.0, 1.0], Origin::Paper)?;
    let family: String = res.pick("family", args.family, "boundary-adapted".into(), Origin::Paper)?;
    let interval = Interval::new(s, t).map_err(|e| usage(format!("interval: {e}")))?;
    let spec = BasisSpec::new(interval, parse_family(&family)?, bases)
        .map_err(|e| usage(format!("bases: {e}")))?;
    println!("{}", res.render());

    let forms = assemble_forms(&spec);
    let mut text = String::new();
    text.push_str(&matrix_text("mass", &forms.mass));
    text.push('\n');
    text.push_str(&matrix_text("stiffness", &forms.stiffness));
    text.push('\n');
    text.push_str(&matrix_text("weighted", &forms.weighted));
    let rows = |m: &SymMatrix| (0..m.n).map(|r| m.row(r).to_vec()).collect::<Vec<_>>();
    let json = json!({
        "command": "forms",
        "config": res.as_json(),
        "mass": rows(&forms.mass),
        "stiffness": rows(&forms.stiffness),
        "weighted": rows(&forms.weighted),
    });
    emit(&args.output, &res, &text, json)
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::SolveLaplacian(a) => run_eigen(ProblemKind::Laplacian, a),
        Command::SolveOscillator(a) => run_eigen(ProblemKind::HarmonicOscillator, a),
        Command::ClassifyMnist(a) => run_mnist(a),
        Command::CheckGradients(a) => run_check(a),
        Command::Forms(a) => run_forms(a),
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code: 0 success, 1 runtime failure, 2 usage error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
