mod values;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::error::ErrorKind;
use clap::{ArgGroup, Args, CommandFactory, Parser, Subcommand, ValueEnum};

use dan::classifier::HeadConfig;
use dan::experiment::{
    self, comparison_table, evaluate, evaluate_with_head, load_mnist, select_split, sweep_csv, sweep_regularizer,
    sweep_sigma, table_csv, train_pair, ExperimentPreset, Network, Split, SweepParam, TYPICAL_THRESHOLD,
};
use dan::io::{self, SavedModel};
use dan::quantizer::{self, dense_memory_report, memory_report, QuantMode};
use dan::stack::{train_stack_with_progress, EpochProgress};
use dan::{RegularizerConfig, TrainConfig};

#[derive(Parser)]
#[command(name = "dan", version, about = "Train, quantize and evaluate deep adaptive networks on MNIST")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a stack of RBMs and write it as a model file.
    Train(TrainArgs),
    /// Threshold and optionally binarize a trained model.
    Quantize(QuantizeArgs),
    /// Train (or load) a classifier head and print test accuracy.
    Eval(EvalArgs),
    /// Vary one hyperparameter and emit one CSV row per value and variant.
    Sweep(SweepArgs),
    /// Run the full method comparison table.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum RegKind {
    Mixed,
    L1,
    L2,
    None,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    /// Sparse real-valued weights.
    #[value(name = "s")]
    Sparse,
    /// Sparse +1/-1 weights.
    #[value(name = "b")]
    Binary,
    /// Sparse +1/-1 weights and binary features.
    #[value(name = "B")]
    BinaryFeatures,
}

impl From<ModeArg> for QuantMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Sparse => QuantMode::SparseReal,
            ModeArg::Binary => QuantMode::SparseBinary,
            ModeArg::BinaryFeatures => QuantMode::SparseBinaryBinaryFeatures,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ParamArg {
    Lambda,
    Gamma,
    Sigma,
}

fn parse_layers(s: &str) -> Result<Vec<usize>, String> {
    let sizes = s
        .split(',')
        .map(|x| x.trim().parse::<usize>().map_err(|_| format!("`{x}` is not a layer size")))
        .collect::<Result<Vec<_>, _>>()?;
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err("need an input size and at least one hidden layer, all positive".into());
    }
    Ok(sizes)
}

fn non_negative(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("`{s}` is not a finite non-negative number")),
    }
}

fn unit_interval(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if (0.0..=1.0).contains(&v) => Ok(v),
        _ => Err(format!("`{s}` is not in [0, 1]")),
    }
}

fn ratio(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v <= 1.0 => Ok(v),
        _ => Err(format!("`{s}` is not in (0, 1]")),
    }
}

fn thresholds(s: &str) -> Result<Vec<f64>, String> {
    s.split(',').map(|x| non_negative(x.trim())).collect()
}

fn positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(format!("`{s}` is not a positive integer")),
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, env = "DAN_DATA_DIR")]
    data_dir: PathBuf,
    #[arg(long, value_parser = parse_layers, default_value = "784,800,800")]
    layers: ::std::vec::Vec<usize>,
    #[arg(long, value_parser = non_negative, default_value_t = 1e-4)]
    lambda: f64,
    #[arg(long, value_parser = unit_interval, default_value_t = 0.5)]
    gamma: f64,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, value_parser = positive, default_value_t = 100)]
    batch: usize,
    #[arg(long, value_parser = non_negative, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, value_parser = positive, default_value_t = 1)]
    cd_steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "mixed")]
    reg: RegKind,
    /// Number of training images sampled from the training split.
    #[arg(long, default_value_t = 10_000)]
    train_images: usize,
    #[arg(long)]
    out: PathBuf,
    /// Progress CSV; defaults to `<out>.log.csv`.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
#[command(group(ArgGroup::new("cut").required(true).args(["threshold", "sigma"])))]
struct QuantizeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum)]
    mode: ModeArg,
    /// Threshold u, one shared value or one per layer (comma separated).
    #[arg(long, value_parser = thresholds)]
    threshold: Option<::std::vec::Vec<f64>>,
    /// Target reserved ratio per layer.
    #[arg(long, value_parser = ratio)]
    sigma: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    /// Report CSV; printed to stdout when omitted.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, env = "DAN_DATA_DIR")]
    data_dir: PathBuf,
    /// `retrain`, or `load PATH` to reuse the head stored in a model file.
    #[arg(long, num_args = 1..=2, value_names = ["MODE", "PATH"], default_values = ["retrain"])]
    head: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10_000)]
    train_images: usize,
    #[arg(long, default_value_t = 10_000)]
    test_images: usize,
    #[arg(long, default_value_t = 100)]
    head_epochs: usize,
    /// Write the model together with its trained head.
    #[arg(long)]
    save: Option<PathBuf>,
}

#[derive(Args)]
struct PresetArgs {
    #[arg(long, default_value = "table2", value_parser = ["table2", "small"])]
    preset: String,
    /// Shorthand for `--preset small`.
    #[arg(long)]
    small: bool,
    #[arg(long, env = "DAN_DATA_DIR")]
    data_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_parser = parse_layers)]
    layers: Option<::std::vec::Vec<usize>>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    train_images: Option<usize>,
    #[arg(long)]
    test_images: Option<usize>,
    /// Reuse trained stacks across runs.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    quiet: bool,
}

impl PresetArgs {
    fn preset(&self) -> ExperimentPreset {
        let name = if self.small { "small" } else { &self.preset };
        let mut p = ExperimentPreset::by_name(name).unwrap().with_seed(self.seed);
        if let Some(l) = &self.layers {
            p.layer_sizes = l.clone();
        }
        if let Some(e) = self.epochs {
            p.train.epochs = e;
        }
        if let Some(n) = self.train_images {
            p.train_images = n;
        }
        if let Some(n) = self.test_images {
            p.test_images = n;
        }
        p
    }

    fn split(&self, preset: &ExperimentPreset) -> anyhow::Result<Split> {
        let mnist = load_mnist(&self.data_dir)
            .with_context(|| format!("loading MNIST from {}", self.data_dir.display()))?;
        Ok(select_split(&mnist, preset.train_images, preset.test_images, self.seed)?)
    }

    fn emit(&self, csv: &str) -> anyhow::Result<()> {
        match &self.out {
            Some(p) => fs::write(p, csv).with_context(|| format!("writing {}", p.display()))?,
            None => std::io::stdout().write_all(csv.as_bytes())?,
        }
        Ok(())
    }

    fn progress(&self, label: &str, p: &EpochProgress<'_>) {
        if !self.quiet {
            eprintln!(
                "{label} layer {} epoch {} reconstruction error {:.6}",
                p.layer + 1,
                p.epoch + 1,
                p.reconstruction_error
            );
        }
    }
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_enum)]
    param: ParamArg,
    /// List (`a,b,c`), stepped range (`0..1:0.1`) or decades (`1e-1..1e-8`).
    #[arg(long)]
    values: String,
    #[arg(long, value_enum, default_value = "mixed")]
    reg: RegKind,
    #[arg(long, value_parser = non_negative)]
    lambda: Option<f64>,
    #[arg(long, value_parser = unit_interval)]
    gamma: Option<f64>,
    /// Quantization modes of a sigma sweep.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "s,b")]
    modes: Vec<ModeArg>,
    #[command(flatten)]
    common: PresetArgs,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    common: PresetArgs,
}

fn reg_config(kind: RegKind, lambda: f64, gamma: f64) -> RegularizerConfig {
    match kind {
        RegKind::Mixed => RegularizerConfig::mixed(lambda, gamma),
        RegKind::L1 => RegularizerConfig::l1(lambda),
        RegKind::L2 => RegularizerConfig::l2(lambda),
        RegKind::None => RegularizerConfig::none(),
    }
}

fn usage_error(kind: ErrorKind, msg: impl std::fmt::Display) -> ! {
    Cli::command().error(kind, msg).exit()
}

fn cmd_train(a: TrainArgs) -> anyhow::Result<()> {
    let mnist = load_mnist(&a.data_dir).with_context(|| format!("loading MNIST from {}", a.data_dir.display()))?;
    if a.layers[0] != mnist.train.pixel_count() {
        bail!(
            "first layer size {} does not match the {} pixels of the data",
            a.layers[0],
            mnist.train.pixel_count()
        );
    }
    let split = select_split(&mnist, a.train_images, mnist.test.len(), a.seed)?;
    let train = TrainConfig {
        learning_rate: a.lr,
        epochs: a.epochs,
        batch_size: a.batch,
        cd_steps: a.cd_steps,
        seed: a.seed,
    };
    let reg = reg_config(a.reg, a.lambda, a.gamma);
    let log_path = a.log.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".log.csv");
        PathBuf::from(p)
    });
    let mut log = String::from("layer,epoch,reconstruction_error,sigma_u0.1\n");
    let mut model = train_stack_with_progress(&split.train.images, &a.layers, &train, &reg, |p| {
        let s = quantizer::sigma(&p.params.weights, TYPICAL_THRESHOLD);
        log.push_str(&format!("{},{},{:.8},{:.6}\n", p.layer, p.epoch, p.reconstruction_error, s));
        eprintln!(
            "layer {} epoch {} reconstruction error {:.6} sigma(u=0.1) {:.4}",
            p.layer + 1,
            p.epoch + 1,
            p.reconstruction_error,
            s
        );
    })?;
    model
        .provenance
        .insert("mnist_train_crc32".into(), format!("{:08x}", split.train.source_hash));
    model.provenance.insert("train_images".into(), a.train_images.to_string());
    fs::write(&log_path, log).with_context(|| format!("writing {}", log_path.display()))?;
    io::save_dense(&model, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    Ok(())
}

fn load_dense(path: &Path) -> anyhow::Result<dan::DanModel> {
    match io::load_model(path).with_context(|| format!("reading {}", path.display()))? {
        SavedModel::Dense(m) => Ok(m),
        SavedModel::Quantized(q) => bail!(
            "{} is already quantized ({}); quantize a trained model",
            path.display(),
            q.mode().variant_name()
        ),
    }
}

fn cmd_quantize(a: QuantizeArgs) -> anyhow::Result<()> {
    let model = load_dense(&a.model)?;
    let mode = QuantMode::from(a.mode);
    let q = match (&a.threshold, a.sigma) {
        (Some(u), None) => quantizer::quantize_with_thresholds(&model, mode, u)?,
        (None, Some(s)) => quantizer::quantize_to_sigma(&model, mode, s)?,
        _ => unreachable!("clap enforces exactly one of --threshold and --sigma"),
    };
    let report = memory_report(&q);
    io::save_quantized(&q, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    match &a.report {
        Some(p) => fs::write(p, report.to_csv()).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{}", report.to_csv()),
    }
    eprintln!(
        "{}: average sigma {:.4}, weight memory {} KiB ({} KiB packed)",
        report.variant,
        report.average_sigma(),
        report.weight_memory_kib(),
        report.with_index_kib()
    );
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> anyhow::Result<()> {
    let load_from = match a.head.as_slice() {
        [m] if m == "retrain" => None,
        [m, path] if m == "load" => Some(PathBuf::from(path)),
        _ => usage_error(
            ErrorKind::InvalidValue,
            format!("--head expects `retrain` or `load PATH`, got `{}`", a.head.join(" ")),
        ),
    };
    let saved = io::load_model(&a.model).with_context(|| format!("reading {}", a.model.display()))?;
    let (net, variant, sigma) = match &saved {
        SavedModel::Dense(m) => {
            let variant = m.reg_config.as_ref().map_or("DBN", experiment::stack_variant_name);
            (Network::Dense(m), variant, dense_memory_report(m, variant).average_sigma())
        }
        SavedModel::Quantized(q) => (Network::Quantized(q), q.mode().variant_name(), memory_report(q).average_sigma()),
    };
    let mnist = load_mnist(&a.data_dir).with_context(|| format!("loading MNIST from {}", a.data_dir.display()))?;
    let split = select_split(&mnist, a.train_images, a.test_images, a.seed)?;

    let (accuracy, head) = match load_from {
        Some(path) => {
            let head = match io::load_model(&path).with_context(|| format!("reading {}", path.display()))? {
                SavedModel::Dense(m) => m.head,
                SavedModel::Quantized(q) => q.head,
            };
            let head = head.with_context(|| format!("{} holds no classifier head", path.display()))?;
            (evaluate_with_head(net, &split.test, &head)?, head)
        }
        None => {
            let cfg = HeadConfig {
                epochs: a.head_epochs,
                seed: a.seed,
                ..HeadConfig::default()
            };
            evaluate(net, &split, &cfg)?
        }
    };
    if let Some(out) = &a.save {
        let with_head = match saved.clone() {
            SavedModel::Dense(mut m) => {
                m.head = Some(head);
                SavedModel::Dense(m)
            }
            SavedModel::Quantized(mut q) => {
                q.head = Some(head);
                SavedModel::Quantized(q)
            }
        };
        io::save_model(&with_head, out).with_context(|| format!("writing {}", out.display()))?;
    }
    println!("variant,sigma,accuracy");
    println!("{variant},{sigma:.4},{accuracy:.4}");
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> anyhow::Result<()> {
    let values = match values::parse_values(&a.values) {
        Ok(v) => v,
        Err(e) => usage_error(ErrorKind::InvalidValue, format!("--values: {e}")),
    };
    let c = &a.common;
    let mut preset = c.preset();
    let base = reg_config(
        a.reg,
        a.lambda.unwrap_or(preset.reg.lambda),
        a.gamma.unwrap_or(preset.reg.gamma),
    );
    preset.reg = base.clone();
    let split = c.split(&preset)?;
    let cache = c.cache_dir.as_deref();
    let rows = match a.param {
        ParamArg::Lambda | ParamArg::Gamma => {
            let param = if matches!(a.param, ParamArg::Lambda) {
                SweepParam::Lambda
            } else {
                if values.iter().any(|g| !(0.0..=1.0).contains(g)) {
                    usage_error(ErrorKind::InvalidValue, "gamma values must lie in [0, 1]");
                }
                SweepParam::Gamma
            };
            if param == SweepParam::Lambda && values.iter().any(|&l| l < 0.0) {
                usage_error(ErrorKind::InvalidValue, "lambda values must be non-negative");
            }
            sweep_regularizer(param, &values, &preset, &base, &split, cache, |v, p| {
                c.progress(&format!("{}={v}", param.name()), p)
            })?
        }
        ParamArg::Sigma => {
            if values.iter().any(|&s| !(s > 0.0 && s <= 1.0)) {
                usage_error(ErrorKind::InvalidValue, "sigma values must lie in (0, 1]");
            }
            let pair = train_pair(&preset, &split, cache, |l, p| c.progress(l, p))?;
            let modes: Vec<QuantMode> = a.modes.iter().map(|&m| m.into()).collect();
            sweep_sigma(
                &values,
                &modes,
                &[("DBN", &pair.dbn), ("DAN", &pair.dan)],
                &split,
                &preset.head,
            )?
        }
    };
    c.emit(&sweep_csv(&rows))
}

fn cmd_report(a: ReportArgs) -> anyhow::Result<()> {
    let c = &a.common;
    let preset = c.preset();
    let split = c.split(&preset)?;
    let pair = train_pair(&preset, &split, c.cache_dir.as_deref(), |l, p| c.progress(l, p))?;
    c.emit(&table_csv(&comparison_table(&preset, &split, &pair)?))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Quantize(a) => cmd_quantize(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
