//! Command-line surface: feature extraction, gradient checks, toy training
//! and evaluation, histogram-divergence reports and benchmarks.
//!
//! Exit codes form a stable contract: see [`exit_code`].

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::field::Field;
use crate::filters::LowPassSpec;
use crate::gradcheck::{self, random_image, GradCheckConfig};
use crate::histogram::{compare_sets, DEFAULT_BINS};
use crate::io::{read_pgm, write_atomic, write_features, write_pgm8, FeatureFile, FeatureHeader};
use crate::kv::{format_f64, KvDoc};
use crate::monogenic::{ChannelMode, Mono2d, DEFAULT_EPSILON};
use crate::params::{init_bank, FilterBank};
use crate::trainer::{
    ablation_csv, dice_table, evaluate_ssdg, metrics_csv, run_ablation, run_experiment,
    ExperimentSpec, FeatureExtractor, HeadModel, SegmentationModel, ABLATION_ARMS,
};

pub mod exit_code {
    pub const SUCCESS: i32 = 0;
    /// A check ran and failed (gradient check, bench contract, frozen bank moved).
    pub const VERIFICATION_FAILED: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const DIVERGENCE: i32 = 3;
    pub const IO: i32 = 4;
    pub const UNSUPPORTED_FORMAT: i32 = 5;
    pub const CORRUPT_CHECKPOINT: i32 = 6;
}

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "MONO2D_THREADS";

pub fn error_exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidShape(_)
        | Error::InvalidInput(_)
        | Error::OracleSize { .. }
        | Error::InvalidConfig(_) => exit_code::USAGE,
        Error::Divergence { .. } => exit_code::DIVERGENCE,
        Error::Io(_) => exit_code::IO,
        Error::UnsupportedFormat(_) => exit_code::UNSUPPORTED_FORMAT,
        Error::CorruptCheckpoint(_) => exit_code::CORRUPT_CHECKPOINT,
    }
}

/// Every tunable of a run. Parsed from `key = value` text; each key also has
/// a command-line flag that overrides the file.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub n_scales: usize,
    pub lpf_cutoff: f64,
    pub lpf_order: u32,
    pub mode: ChannelMode,
    pub epsilon: f64,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub min_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub val_fraction: f64,
    pub train_count: usize,
    pub test_count: usize,
    pub use_mono2d: bool,
    pub freeze_layer: bool,
    pub include_input: bool,
}

pub const CONFIG_KEYS: [&str; 20] = [
    "n_scales",
    "lpf_cutoff",
    "lpf_order",
    "mode",
    "epsilon",
    "height",
    "width",
    "seed",
    "learning_rate",
    "min_lr",
    "beta1",
    "beta2",
    "epochs",
    "batch_size",
    "val_fraction",
    "train_count",
    "test_count",
    "use_mono2d",
    "freeze_layer",
    "include_input",
];

impl Default for RunConfig {
    fn default() -> Self {
        let toy = ExperimentSpec::toy(0);
        let t = &toy.train;
        Self {
            n_scales: t.n_scales,
            lpf_cutoff: t.lowpass.cutoff(),
            lpf_order: t.lowpass.order(),
            mode: t.mode,
            epsilon: DEFAULT_EPSILON,
            height: toy.shape.0,
            width: toy.shape.1,
            seed: t.seed,
            learning_rate: t.learning_rate,
            min_lr: t.min_lr,
            beta1: t.beta1,
            beta2: t.beta2,
            epochs: t.epochs,
            batch_size: t.batch_size,
            val_fraction: t.val_fraction,
            train_count: toy.train_count,
            test_count: toy.test_count,
            use_mono2d: t.use_mono2d,
            freeze_layer: t.freeze_layer,
            include_input: t.include_input,
        }
    }
}

macro_rules! read_keys {
    ($doc:expr, $cfg:expr, $($key:ident),* $(,)?) => {
        $( if let Some(v) = $doc.parse_value(stringify!($key))? { $cfg.$key = v; } )*
    };
}

impl RunConfig {
    /// Parses and validates; keys not listed are taken from the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let doc = KvDoc::parse(text)?;
        if let Some(k) = doc.keys().find(|k| !CONFIG_KEYS.contains(k)) {
            return Err(Error::InvalidConfig(format!(
                "unknown configuration key `{k}`"
            )));
        }
        let mut cfg = Self::default();
        read_keys!(
            doc,
            cfg,
            n_scales,
            lpf_cutoff,
            lpf_order,
            mode,
            epsilon,
            height,
            width,
            seed,
            learning_rate,
            min_lr,
            beta1,
            beta2,
            epochs,
            batch_size,
            val_fraction,
            train_count,
            test_count,
            use_mono2d,
            freeze_layer,
            include_input,
        );
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// Serialises every key; `parse(to_text())` reproduces `self` exactly.
    pub fn to_text(&self) -> String {
        let mut doc = KvDoc::new();
        doc.insert("n_scales", self.n_scales);
        doc.insert_f64("lpf_cutoff", self.lpf_cutoff);
        doc.insert("lpf_order", self.lpf_order);
        doc.insert("mode", self.mode);
        doc.insert_f64("epsilon", self.epsilon);
        doc.insert("height", self.height);
        doc.insert("width", self.width);
        doc.insert("seed", self.seed);
        doc.insert_f64("learning_rate", self.learning_rate);
        doc.insert_f64("min_lr", self.min_lr);
        doc.insert_f64("beta1", self.beta1);
        doc.insert_f64("beta2", self.beta2);
        doc.insert("epochs", self.epochs);
        doc.insert("batch_size", self.batch_size);
        doc.insert_f64("val_fraction", self.val_fraction);
        doc.insert("train_count", self.train_count);
        doc.insert("test_count", self.test_count);
        doc.insert("use_mono2d", self.use_mono2d);
        doc.insert("freeze_layer", self.freeze_layer);
        doc.insert("include_input", self.include_input);
        doc.render("mono2d run configuration")
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_scales == 0 {
            return Err(Error::InvalidConfig("n_scales must be >= 1".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.height < 16 || self.width < 16 {
            return Err(Error::InvalidConfig(format!(
                "image shape must be at least 16x16, got {}x{}",
                self.height, self.width
            )));
        }
        if self.train_count == 0 || self.test_count == 0 {
            return Err(Error::InvalidConfig(
                "train_count and test_count must be >= 1".into(),
            ));
        }
        self.lowpass()?;
        self.experiment()?.train.validate()
    }

    pub fn lowpass(&self) -> Result<LowPassSpec> {
        LowPassSpec::new(self.lpf_cutoff, self.lpf_order)
    }

    pub fn layer(&self, bank: FilterBank) -> Result<Mono2d> {
        Ok(Mono2d::new(bank, self.lowpass()?, self.mode)
            .with_epsilon(self.epsilon)
            .with_input_channel(self.include_input))
    }

    pub fn experiment(&self) -> Result<ExperimentSpec> {
        let mut spec = ExperimentSpec::toy(self.seed);
        spec.shape = (self.height, self.width);
        spec.train_count = self.train_count;
        spec.test_count = self.test_count;
        let t = &mut spec.train;
        t.learning_rate = self.learning_rate;
        t.min_lr = self.min_lr;
        t.beta1 = self.beta1;
        t.beta2 = self.beta2;
        t.epochs = self.epochs;
        t.batch_size = self.batch_size;
        t.n_scales = self.n_scales;
        t.lowpass = self.lowpass()?;
        t.mode = self.mode;
        t.use_mono2d = self.use_mono2d;
        t.freeze_layer = self.freeze_layer;
        t.include_input = self.include_input;
        t.val_fraction = self.val_fraction;
        Ok(spec)
    }
}

/// Configuration file plus per-key overrides.
#[derive(Args, Clone, Debug, Default)]
pub struct ConfigArgs {
    /// `key = value` configuration file (`#` starts a comment)
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n_scales: Option<usize>,
    #[arg(long)]
    pub lpf_cutoff: Option<f64>,
    #[arg(long)]
    pub lpf_order: Option<u32>,
    /// Output channels: phase, asym or both
    #[arg(long)]
    pub mode: Option<ChannelMode>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub min_lr: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
    #[arg(long)]
    pub train_count: Option<usize>,
    #[arg(long)]
    pub test_count: Option<usize>,
    /// Feed raw intensities to the head (lower-bound baseline)
    #[arg(long, conflicts_with = "mono2d")]
    pub raw: bool,
    /// Feed Mono2D features to the head
    #[arg(long)]
    pub mono2d: bool,
    /// Keep the filter bank at its initialisation
    #[arg(long, conflicts_with = "trainable")]
    pub freeze: bool,
    /// Train the filter bank jointly with the head
    #[arg(long)]
    pub trainable: bool,
    /// Append the input image as an extra feature channel
    #[arg(long, value_name = "BOOL")]
    pub include_input: Option<bool>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($key:ident),*) => { $( if let Some(v) = self.$key { cfg.$key = v; } )* };
        }
        set!(
            n_scales,
            lpf_cutoff,
            lpf_order,
            mode,
            epsilon,
            height,
            width,
            seed,
            learning_rate,
            min_lr,
            beta1,
            beta2,
            epochs,
            batch_size,
            val_fraction,
            train_count,
            test_count,
            include_input
        );
        if self.raw {
            cfg.use_mono2d = false;
        }
        if self.mono2d {
            cfg.use_mono2d = true;
        }
        if self.freeze {
            cfg.freeze_layer = true;
        }
        if self.trainable {
            cfg.freeze_layer = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Parser, Debug)]
#[command(name = "mono2d", version, about = "Trainable monogenic feature layer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write local phase / asymmetry features of PGM images
    Extract(ExtractArgs),
    /// Compare analytic parameter gradients with finite differences
    Gradcheck(GradcheckArgs),
    /// Train on the synthetic source domain and evaluate on shifted domains
    Train(TrainArgs),
    /// Evaluate saved checkpoints on the shifted-domain suite
    Eval(EvalArgs),
    /// Wasserstein distance between two image sets, raw vs local phase
    Histcompare(HistcompareArgs),
    /// Time the forward pass and the forward pass with tangents
    Bench(BenchArgs),
}

/// Where the filter bank comes from.
#[derive(Args, Clone, Debug, Default)]
pub struct BankArgs {
    /// Filter-bank checkpoint
    #[arg(long, value_name = "PATH", conflicts_with = "init")]
    pub checkpoint: Option<PathBuf>,
    /// Initialise a fresh bank with this seed (default: the config seed)
    #[arg(long, value_name = "SEED")]
    pub init: Option<u64>,
}

#[derive(Args, Debug)]
pub struct ExtractArgs {
    /// Input images (binary PGM, 8- or 16-bit)
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, short, value_name = "DIR")]
    pub out_dir: PathBuf,
    /// Also write 8-bit PGM previews of every channel
    #[arg(long)]
    pub preview: bool,
    #[command(flatten)]
    pub bank: BankArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 32)]
    pub height: usize,
    #[arg(long, default_value_t = 32)]
    pub width: usize,
    #[arg(long, default_value_t = 8)]
    pub n_scales: usize,
    /// Scale the analytic gradients by (1 + X) to exercise the failure path
    #[arg(long, default_value_t = 0.0, value_name = "X")]
    pub perturb_analytic: f64,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long, short, value_name = "DIR")]
    pub out_dir: PathBuf,
    /// Run the four ablation arms instead of a single configuration
    #[arg(long)]
    pub ablation: bool,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Head checkpoint written by `train`
    #[arg(long, value_name = "PATH")]
    pub head: PathBuf,
    /// Filter-bank checkpoint; omit to evaluate a raw-input head
    #[arg(long, value_name = "PATH")]
    pub bank: Option<PathBuf>,
    /// Write the per-domain table as CSV
    #[arg(long, value_name = "PATH")]
    pub csv: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Args, Debug)]
pub struct HistcompareArgs {
    /// First image set
    #[arg(long = "a", value_name = "PGM", num_args = 1.., required = true)]
    pub set_a: Vec<PathBuf>,
    /// Second image set
    #[arg(long = "b", value_name = "PGM", num_args = 1.., required = true)]
    pub set_b: Vec<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    pub bins: usize,
    #[command(flatten)]
    pub bank: BankArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 256)]
    pub height: usize,
    #[arg(long, default_value_t = 256)]
    pub width: usize,
    #[arg(long, default_value_t = 8)]
    pub n_scales: usize,
    #[arg(long, default_value_t = 10)]
    pub repetitions: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return error_exit_code(&e);
    }
    match dispatch(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            error_exit_code(&e)
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| {
            Error::InvalidConfig(format!(
                "{THREADS_ENV} must be a positive integer, got `{value}`"
            ))
        })?;
    #[cfg(feature = "parallel")]
    {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
    Ok(())
}

fn dispatch(command: &Command) -> Result<i32> {
    match command {
        Command::Extract(a) => cmd_extract(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Histcompare(a) => cmd_histcompare(a),
        Command::Bench(a) => cmd_bench(a),
    }
}

fn read_checkpoint_text(path: &Path) -> Result<String> {
    String::from_utf8(fs::read(path)?)
        .map_err(|_| Error::CorruptCheckpoint(format!("{} is not UTF-8 text", path.display())))
}

pub fn load_bank(path: &Path) -> Result<FilterBank> {
    FilterBank::from_checkpoint(&read_checkpoint_text(path)?)
}

/// Resolved bank source: a checkpoint, or a seed for shape-specific init.
enum BankSource {
    Checkpoint(FilterBank),
    Init(u64),
}

impl BankSource {
    fn resolve(args: &BankArgs, cfg: &RunConfig) -> Result<Self> {
        Ok(match &args.checkpoint {
            Some(path) => BankSource::Checkpoint(load_bank(path)?),
            None => BankSource::Init(args.init.unwrap_or(cfg.seed)),
        })
    }

    fn bank_for(&self, cfg: &RunConfig, height: usize, width: usize) -> Result<FilterBank> {
        match self {
            BankSource::Checkpoint(bank) => Ok(bank.clone()),
            BankSource::Init(seed) => init_bank(cfg.n_scales, height, width, *seed),
        }
    }

    fn flags(&self) -> Vec<(String, String)> {
        match self {
            BankSource::Checkpoint(_) => vec![("bank".into(), "checkpoint".into())],
            BankSource::Init(seed) => vec![
                ("bank".into(), "init".into()),
                ("seed".into(), seed.to_string()),
            ],
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into())
}

pub fn cmd_extract(args: &ExtractArgs) -> Result<i32> {
    let cfg = args.config.resolve()?;
    let source = BankSource::resolve(&args.bank, &cfg)?;
    let images = args
        .inputs
        .iter()
        .map(|p| read_pgm(p))
        .collect::<Result<Vec<_>>>()?;
    create_dir(&args.out_dir)?;
    let outputs = crate::par_map(&images, |image| -> Result<FeatureFile> {
        let (h, w) = image.shape();
        let layer = cfg.layer(source.bank_for(&cfg, h, w)?)?;
        let features = layer.forward(image)?;
        let mut flags = source.flags();
        flags.push(("mode".into(), cfg.mode.to_string()));
        flags.push(("lpf_cutoff".into(), format_f64(cfg.lpf_cutoff)));
        flags.push(("lpf_order".into(), cfg.lpf_order.to_string()));
        flags.push(("epsilon".into(), format_f64(cfg.epsilon)));
        Ok(FeatureFile {
            header: FeatureHeader {
                height: h,
                width: w,
                names: features
                    .channel_names()
                    .iter()
                    .map(|n| n.to_string())
                    .collect(),
                scales: layer.bank().n_scales(),
                flags,
            },
            channels: features.into_channels(),
        })
    });
    for (input, out) in args.inputs.iter().zip(outputs) {
        let out = out?;
        let stem = file_stem(input);
        let path = args.out_dir.join(format!("{stem}.mono2d"));
        write_features(&path, &out)?;
        println!("{} -> {}", input.display(), path.display());
        if args.preview {
            for (name, channel) in out.header.names.iter().zip(&out.channels) {
                write_pgm8(&args.out_dir.join(format!("{stem}.{name}.pgm")), channel)?;
            }
        }
    }
    Ok(exit_code::SUCCESS)
}

pub fn cmd_gradcheck(args: &GradcheckArgs) -> Result<i32> {
    let mut config = GradCheckConfig::new(args.seed, args.height, args.width, args.n_scales);
    config.perturb_analytic = args.perturb_analytic;
    let report = gradcheck::run(&config)?;
    println!(
        "gradcheck seed={} shape={}x{} n_scales={} params={}",
        args.seed,
        args.height,
        args.width,
        args.n_scales,
        report.checks.len()
    );
    for class in ["f0_star", "sigma_r_star"] {
        println!("max_rel_error {class} {:.3e}", report.max_rel_error(class));
    }
    let failures: Vec<_> = report.failures().collect();
    for f in &failures {
        println!(
            "FAIL {} analytic={:.9e} numeric={:.9e} {}_error={:.3e}",
            f.name,
            f.analytic,
            f.numeric,
            if f.relative { "rel" } else { "abs" },
            f.error
        );
    }
    if failures.is_empty() {
        println!(
            "PASS all {} parameters within tolerance",
            report.checks.len()
        );
        Ok(exit_code::SUCCESS)
    } else {
        Ok(exit_code::VERIFICATION_FAILED)
    }
}

pub fn cmd_train(args: &TrainArgs) -> Result<i32> {
    let cfg = args.config.resolve()?;
    let spec = cfg.experiment()?;
    create_dir(&args.out_dir)?;
    write_atomic(&args.out_dir.join("run.conf"), cfg.to_text().as_bytes())?;

    if args.ablation {
        let rows = run_ablation(&spec, &ABLATION_ARMS)?;
        let csv = ablation_csv(&rows, cfg.seed);
        write_atomic(&args.out_dir.join("ablation.csv"), csv.as_bytes())?;
        print!("{csv}");
        let frozen_moved = rows.iter().any(|r| !r.trainable && !r.bank_unchanged());
        if frozen_moved {
            eprintln!("frozen arm changed its filter bank");
            return Ok(exit_code::VERIFICATION_FAILED);
        }
        return Ok(exit_code::SUCCESS);
    }

    let result = run_experiment(&spec)?;
    let outcome = &result.outcome;
    write_atomic(
        &args.out_dir.join("metrics.csv"),
        metrics_csv(&result, cfg.seed).as_bytes(),
    )?;
    write_atomic(
        &args.out_dir.join("head.ckpt"),
        outcome.model.head.to_checkpoint().as_bytes(),
    )?;
    if let (Some(bank), Some(initial)) = (outcome.model.bank(), &outcome.initial_bank) {
        write_atomic(
            &args.out_dir.join("bank.ckpt"),
            bank.to_checkpoint().as_bytes(),
        )?;
        write_atomic(
            &args.out_dir.join("bank_init.ckpt"),
            initial.to_checkpoint().as_bytes(),
        )?;
    }
    println!(
        "seed={} input={} mode={} trainable={} best_epoch={} best_val_dice={:.4}",
        cfg.seed,
        if cfg.use_mono2d { "mono2d" } else { "raw" },
        cfg.mode,
        cfg.use_mono2d && !cfg.freeze_layer,
        outcome.best_epoch.map_or("-".into(), |e| e.to_string()),
        outcome.best_val_dice
    );
    print!("{}", dice_table(&result.report));
    Ok(exit_code::SUCCESS)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<i32> {
    let cfg = args.config.resolve()?;
    let spec = cfg.experiment()?;
    let head = HeadModel::from_checkpoint(&read_checkpoint_text(&args.head)?)?;
    let extractor = match &args.bank {
        Some(path) => FeatureExtractor::Mono2d(cfg.layer(load_bank(path)?)?),
        None => FeatureExtractor::Raw,
    };
    if head.channels() != extractor.channel_count() {
        return Err(Error::InvalidConfig(format!(
            "head expects {} channels but the feature source provides {}",
            head.channels(),
            extractor.channel_count()
        )));
    }
    let model = SegmentationModel { extractor, head };
    let report = evaluate_ssdg(&model, &spec.source_test_set()?, &spec.shifted_test_sets()?)?;
    println!("seed={} test_count={}", cfg.seed, cfg.test_count);
    print!("{}", dice_table(&report));
    if let Some(path) = &args.csv {
        let mut csv = String::from("seed,domain,dice\n");
        csv.push_str(&format!("{},source,{:.6}\n", cfg.seed, report.source_dice));
        for d in &report.domains {
            csv.push_str(&format!("{},{},{:.6}\n", cfg.seed, d.name, d.dice));
        }
        csv.push_str(&format!(
            "{},mean_shifted,{:.6}\n",
            cfg.seed,
            report.mean_shifted()
        ));
        write_atomic(path, csv.as_bytes())?;
    }
    Ok(exit_code::SUCCESS)
}

pub fn cmd_histcompare(args: &HistcompareArgs) -> Result<i32> {
    let mut cfg = args.config.resolve()?;
    cfg.mode = ChannelMode::Phase;
    cfg.include_input = false;
    let source = BankSource::resolve(&args.bank, &cfg)?;
    let read = |paths: &[PathBuf]| {
        paths
            .iter()
            .map(|p| read_pgm(p))
            .collect::<Result<Vec<_>>>()
    };
    let (a, b) = (read(&args.set_a)?, read(&args.set_b)?);
    let divergence = compare_sets(&a, &b, args.bins, |image: &Field| {
        let (h, w) = image.shape();
        let features = cfg.layer(source.bank_for(&cfg, h, w)?)?.forward(image)?;
        Ok(features.into_channels().swap_remove(0))
    })?;
    println!("images a={} b={} bins={}", a.len(), b.len(), args.bins);
    println!("raw_wasserstein {:.9e}", divergence.raw);
    println!("phase_wasserstein {:.9e}", divergence.phase);
    Ok(exit_code::SUCCESS)
}

/// Mean and sample standard deviation.
fn mean_std(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = if samples.len() > 1 {
        samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Allowed tangent/forward time ratio for `n` scales.
pub fn tangent_cost_bound(n_scales: usize) -> f64 {
    (1 + 2 * n_scales) as f64 * 1.25
}

pub fn cmd_bench(args: &BenchArgs) -> Result<i32> {
    if args.repetitions == 0 {
        return Err(Error::InvalidConfig("repetitions must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let image = random_image(args.height, args.width, &mut rng);
    let bank = init_bank(args.n_scales, args.height, args.width, args.seed)?;
    let layer = Mono2d::new(bank, LowPassSpec::default(), ChannelMode::Both);
    // warm the plan and kernel caches
    layer.forward_with_tangents(&image)?;
    let time = |f: &dyn Fn() -> Result<()>| -> Result<Vec<f64>> {
        (0..args.repetitions)
            .map(|_| {
                let start = Instant::now();
                f()?;
                Ok(start.elapsed().as_secs_f64() * 1e3)
            })
            .collect()
    };
    let forward = time(&|| layer.forward(&image).map(drop))?;
    let tangents = time(&|| layer.forward_with_tangents(&image).map(drop))?;
    let (fm, fs) = mean_std(&forward);
    let (tm, ts) = mean_std(&tangents);
    let ratio = tm / fm;
    let bound = tangent_cost_bound(args.n_scales);
    println!(
        "bench shape={}x{} n_scales={} repetitions={} seed={}",
        args.height, args.width, args.n_scales, args.repetitions, args.seed
    );
    println!("forward_ms {fm:.3} +- {fs:.3}");
    println!("forward_with_tangents_ms {tm:.3} +- {ts:.3}");
    println!("ratio {ratio:.2} bound {bound:.2}");
    if ratio <= bound {
        Ok(exit_code::SUCCESS)
    } else {
        eprintln!("tangent cost ratio {ratio:.2} exceeds {bound:.2}");
        Ok(exit_code::VERIFICATION_FAILED)
    }
}
