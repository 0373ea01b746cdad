//! `fishrec` command-line front end.
//!
//! Every flag can also come from a plain `key=value` file passed with
//! `--config`; keys are the long flag names (`max-epochs` or `max_epochs`).
//! A flag given on the command line wins over the same key in the file.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use fishrec::pipeline::{
    evaluate, extract_rows, features_csv, load_bundle, read_manifest, run_pipeline, save_bundle,
    train_bundle, write_atomic, TrainParams,
};
use fishrec::synthgen::{default_families, generate_corpus, SynthConfig};
use fishrec::Split;

#[derive(Parser, Debug)]
#[command(
    name = "fishrec",
    version,
    about = "Fish image recognition: synthesize, extract, train, evaluate, classify"
)]
struct Cli {
    /// Plain key=value file supplying defaults for any flag.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic labelled corpus (PPM images plus manifest.csv).
    GenSynth(GenSynthArgs),
    /// Extract the 47 features for every manifest row into a CSV file.
    Extract(ExtractArgs),
    /// Train a perceptron + decision tree model on the manifest's train rows.
    Train(TrainArgs),
    /// Score a model on the manifest's test rows.
    Evaluate(EvaluateArgs),
    /// Classify a single image.
    Classify(ClassifyArgs),
}

#[derive(Args, Debug)]
struct GenSynthArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Training images per class (overrides the default per-class counts).
    #[arg(long)]
    per_family_train: Option<usize>,
    /// Test images per class (overrides the default per-class counts).
    #[arg(long)]
    per_family_test: Option<usize>,
}

#[derive(Args, Debug)]
struct ExtractArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Hidden-layer width.
    #[arg(long)]
    hidden: Option<usize>,
    /// Learning rate.
    #[arg(long)]
    eta: Option<f64>,
    /// Momentum.
    #[arg(long)]
    alpha: Option<f64>,
    /// Stop when consecutive epoch errors differ by less than this.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Also write the report text to this file.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ClassifyArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    image: Option<PathBuf>,
}

/// Values read from a `--config` file.
#[derive(Debug, Default)]
struct ConfigFile {
    path: PathBuf,
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(path, &text)
    }

    /// `key=value` per line; blank lines and `#` comments are skipped.
    fn parse(path: &Path, text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                bail!("{}:{}: expected key=value", path.display(), n + 1);
            };
            values.insert(k.trim().replace('_', "-"), v.trim().to_string());
        }
        Ok(ConfigFile {
            path: path.to_path_buf(),
            values,
        })
    }

    /// Command-line value if given, else the file's value for `key`.
    fn pick<T>(&self, cli: Option<T>, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        if cli.is_some() {
            return Ok(cli);
        }
        self.values
            .get(key)
            .map(|raw| {
                raw.parse::<T>().map_err(|e| {
                    anyhow::anyhow!(
                        "{}: bad value for {key}: {raw:?} ({e})",
                        self.path.display()
                    )
                })
            })
            .transpose()
    }

    fn require<T>(&self, cli: Option<T>, key: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.pick(cli, key)?
            .with_context(|| format!("missing --{key} (not on the command line or in --config)"))
    }

    /// Warns about keys the current subcommand does not read.
    fn warn_unused(&self, known: &[&str]) {
        for key in self.values.keys().filter(|k| !known.contains(&k.as_str())) {
            warn!("{}: ignoring unknown key {key:?}", self.path.display());
        }
    }
}

/// Directory that relative manifest paths are resolved against.
fn manifest_base(manifest: &Path) -> PathBuf {
    manifest.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn gen_synth(a: GenSynthArgs, cfg: &ConfigFile) -> Result<()> {
    cfg.warn_unused(&["out", "seed", "per-family-train", "per-family-test"]);
    let out: PathBuf = cfg.require(a.out, "out")?;
    let families = default_families();
    let mut synth = SynthConfig::default();
    if let Some(seed) = cfg.pick(a.seed, "seed")? {
        synth.seed = seed;
    }
    if let Some(n) = cfg.pick(a.per_family_train, "per-family-train")? {
        synth.train_counts = vec![n; families.len()];
    }
    if let Some(n) = cfg.pick(a.per_family_test, "per-family-test")? {
        synth.test_counts = vec![n; families.len()];
    }
    let rows = generate_corpus(&synth, &families, &out)
        .with_context(|| format!("generating corpus in {}", out.display()))?;
    let train = rows.iter().filter(|r| r.split == Split::Train).count();
    println!(
        "wrote {} images ({train} train, {} test) to {}",
        rows.len(),
        rows.len() - train,
        out.display()
    );
    Ok(())
}

fn extract(a: ExtractArgs, cfg: &ConfigFile) -> Result<()> {
    cfg.warn_unused(&["manifest", "out"]);
    let manifest: PathBuf = cfg.require(a.manifest, "manifest")?;
    let out: PathBuf = cfg.require(a.out, "out")?;
    let rows = read_manifest(&manifest)?;
    let refs: Vec<_> = rows.iter().collect();
    let params = TrainParams::default();
    let feats = extract_rows(
        &refs,
        &manifest_base(&manifest),
        &params.preprocess,
        &params.segment,
    )?;
    let table: Vec<_> = rows.iter().zip(feats).collect();
    write_atomic(&out, features_csv(&table).as_bytes())?;
    println!("wrote {} feature rows to {}", table.len(), out.display());
    Ok(())
}

fn train(a: TrainArgs, cfg: &ConfigFile) -> Result<()> {
    cfg.warn_unused(&[
        "manifest",
        "out",
        "hidden",
        "eta",
        "alpha",
        "epsilon",
        "max-epochs",
        "seed",
    ]);
    let manifest: PathBuf = cfg.require(a.manifest, "manifest")?;
    let out: PathBuf = cfg.require(a.out, "out")?;
    let mut params = TrainParams::default();
    if let Some(h) = cfg.pick(a.hidden, "hidden")? {
        params.hidden = h;
    }
    if let Some(v) = cfg.pick(a.eta, "eta")? {
        params.mlp.learning_rate = v;
    }
    if let Some(v) = cfg.pick(a.alpha, "alpha")? {
        params.mlp.momentum = v;
    }
    if let Some(v) = cfg.pick(a.epsilon, "epsilon")? {
        params.mlp.epsilon = v;
    }
    if let Some(v) = cfg.pick(a.max_epochs, "max-epochs")? {
        params.mlp.max_epochs = v;
    }
    if let Some(v) = cfg.pick(a.seed, "seed")? {
        params.mlp.seed = v;
    }
    info!("training with {params:?}");
    let rows = read_manifest(&manifest)?;
    let (bundle, summary) = train_bundle(&rows, &manifest_base(&manifest), &params)?;
    save_bundle(&bundle, &out)?;
    println!(
        "trained on {} rows: {} epochs, final error {:.6}, training accuracy {:.4}",
        summary.train_rows,
        summary.report.epochs,
        summary.report.final_error,
        summary.train_accuracy
    );
    println!("model written to {}", out.display());
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs, cfg: &ConfigFile) -> Result<()> {
    cfg.warn_unused(&["model", "manifest", "report"]);
    let model: PathBuf = cfg.require(a.model, "model")?;
    let manifest: PathBuf = cfg.require(a.manifest, "manifest")?;
    let report_path: Option<PathBuf> = cfg.pick(a.report, "report")?;
    let bundle = load_bundle(&model)?;
    let rows = read_manifest(&manifest)?;
    let report = evaluate(&bundle, &rows, &manifest_base(&manifest))?;
    let text = report.to_string();
    print!("{text}");
    if let Some(p) = report_path {
        write_atomic(&p, text.as_bytes())?;
    }
    Ok(())
}

fn classify(a: ClassifyArgs, cfg: &ConfigFile) -> Result<()> {
    cfg.warn_unused(&["model", "image"]);
    let model: PathBuf = cfg.require(a.model, "model")?;
    let image: PathBuf = cfg.require(a.image, "image")?;
    let bundle = load_bundle(&model)?;
    let c = run_pipeline(&image, &bundle)?;
    let family = if c.label.family.is_empty() {
        "-"
    } else {
        &c.label.family
    };
    println!("family: {family}");
    println!("poison: {}", c.label.poison);
    println!("cluster: {}", c.label.cluster);
    println!("scores:");
    for (info, s) in bundle.registry().classes().iter().zip(&c.scores) {
        println!("  {:<16} {s:.6}", info.name);
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::FAILURE
        }
    }
}

/// The error chain joined by ": ", skipping causes whose text the message
/// above already contains.
fn describe(e: &anyhow::Error) -> String {
    let mut out = e.to_string();
    for cause in e.chain().skip(1) {
        let text = cause.to_string();
        if !out.contains(&text) {
            out.push_str(": ");
            out.push_str(&text);
        }
    }
    out
}

fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    match cli.command {
        Command::GenSynth(a) => gen_synth(a, &cfg),
        Command::Extract(a) => extract(a, &cfg),
        Command::Train(a) => train(a, &cfg),
        Command::Evaluate(a) => evaluate_cmd(a, &cfg),
        Command::Classify(a) => classify(a, &cfg),
    }
}
