//! Command-line front end: `fit`, `sample`, `eval` and `attack`.
//!
//! Exit codes: 0 on success, 1 on runtime failures, 2 on configuration or
//! validation failures (including command-line parse errors).

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attack::{attack_distances, whitebox_attack, AttackConfig};
use crate::error::{Error, Result};
use crate::gan::{CasTgan, TrainConfig};
use crate::gbdt::PerturbationConfig;
use crate::metrics::evaluate;
use crate::schema::{load_csv, split_holdout, ColumnData, DataTable, DatasetSchema};

/// Environment variable holding the default worker-thread count.
pub const THREADS_ENV: &str = "CASTGAN_THREADS";
pub const MODEL_FILE: &str = "model.ctgm";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOSSES_FILE: &str = "losses.csv";
const MANIFEST_FORMAT: u32 = 1;
const DISTRIBUTION_QUANTILES: usize = 20;

#[derive(Debug, Parser)]
#[command(name = "castgan", version, about = "Cascaded tabular GAN toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model from a run config (or re-run a manifest).
    Fit(FitArgs),
    /// Sample synthetic rows from a trained model.
    Sample(SampleArgs),
    /// Score a synthetic table against real data.
    Eval(EvalArgs),
    /// Run the white-box attack against a model's auxiliary learners.
    Attack(AttackArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Run config (TOML).
    #[arg(long, required_unless_present = "manifest", conflicts_with = "manifest")]
    pub config: Option<PathBuf>,
    /// Manifest written by an earlier `fit`; reproduces that run.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Output directory for the model, loss history and manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads for learner training (default: $CASTGAN_THREADS or all cores).
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Number of rows.
    #[arg(short = 'n', long = "rows")]
    pub rows: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Synthetic CSV to score.
    #[arg(long, required_unless_present = "model", conflicts_with = "model")]
    pub synth: Option<PathBuf>,
    /// Model to sample the synthetic table from.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Real (held-out) CSV.
    #[arg(long)]
    pub real: PathBuf,
    /// Schema (TOML); optional with `--model`, which carries its own.
    #[arg(long, required_unless_present = "model")]
    pub schema: Option<PathBuf>,
    /// Training CSV used as the UPCC and pair-rule reference (default: the real CSV).
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Rows to sample with `--model` (default: as many as the real CSV).
    #[arg(short = 'n', long = "rows")]
    pub rows: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for the report and CSV sidecars.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Manifest of the run that produced the model (default: next to the model).
    #[arg(long, alias = "eps-manifest")]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub fraction: Option<f64>,
    /// Give the attacker the model's fitted category dictionaries.
    #[arg(long)]
    pub access_preprocessors: bool,
    /// Seed for sampling the synthetic table and choosing attacked rows.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Synthetic rows to sample (default: the training-split size).
    #[arg(short = 'n', long = "rows")]
    pub rows: Option<usize>,
    /// Output directory for the report and per-row distances.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train_fraction: f64,
    /// Defaults to the run seed.
    pub seed: Option<u64>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train_fraction: 0.5,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbationSection {
    pub epsilon: f64,
    /// Defaults to the run seed.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    /// Synthetic rows sampled for evaluation (default: holdout size).
    pub rows: Option<usize>,
    pub seed: u64,
}

/// Run configuration read from TOML. Relative paths resolve against the
/// config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: PathBuf,
    pub data: PathBuf,
    /// Run seed; overrides `train.seed` when set.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub perturbation: PerturbationSection,
    #[serde(default)]
    pub attack: AttackConfig,
    #[serde(default)]
    pub eval: EvalOptions,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.schema = base.join(&config.schema);
        config.data = base.join(&config.data);
        Ok(config)
    }

    /// Fills every optional seed so the config is fully explicit.
    pub fn resolved(mut self) -> Self {
        let seed = self.seed.unwrap_or(self.train.seed);
        self.seed = Some(seed);
        self.train.seed = seed;
        self.split.seed = Some(self.split.seed.unwrap_or(seed));
        self.perturbation.seed = Some(self.perturbation.seed.unwrap_or(seed));
        self
    }

    pub fn perturbation(&self) -> PerturbationConfig {
        PerturbationConfig {
            epsilon: self.perturbation.epsilon,
            seed: self.perturbation.seed.or(self.seed).unwrap_or(0),
        }
    }

    /// Checks every field, naming the offending one.
    pub fn validate(&self) -> Result<()> {
        for (field, path) in [("schema", &self.schema), ("data", &self.data)] {
            if !path.is_file() {
                return Err(Error::Config(format!("{field}: file {} does not exist", path.display())));
            }
        }
        let f = self.split.train_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::Config(format!("split.train_fraction must lie in (0, 1), got {f}")));
        }
        self.train.validate().map_err(|e| prefixed("train", e))?;
        self.perturbation().validate().map_err(|e| prefixed("perturbation", e))?;
        self.attack.validate().map_err(|e| prefixed("attack", e))?;
        if self.eval.rows == Some(0) {
            return Err(Error::Config("eval.rows must be positive".into()));
        }
        Ok(())
    }
}

fn prefixed(section: &str, e: Error) -> Error {
    match e {
        Error::Config(m) => Error::Config(format!("{section}: {m}")),
        other => other,
    }
}

/// Everything needed to reproduce a `fit` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub tool_version: String,
    pub config: RunConfig,
    pub data_sha256: String,
    pub schema_sha256: String,
    pub rows_total: usize,
    pub rows_train: usize,
    pub rows_holdout: usize,
    pub epsilon: f64,
    pub model_file: String,
    pub model_sha256: String,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("manifest {}: {e}", path.display())))?;
        if m.format != MANIFEST_FORMAT {
            return Err(Error::Config(format!("manifest format {} is not supported", m.format)));
        }
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Thread count from `explicit`, then `$CASTGAN_THREADS`, then the core count.
pub fn thread_count(explicit: Option<usize>) -> Result<usize> {
    if let Some(t) = explicit {
        return if t == 0 {
            Err(Error::Config("--threads must be positive".into()))
        } else {
            Ok(t)
        };
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(t) if t > 0 => Ok(t),
            _ => Err(Error::Config(format!("{THREADS_ENV} must be a positive integer, got \"{v}\""))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads the data named by a resolved config and returns the training and
/// holdout splits.
pub fn load_split(config: &RunConfig) -> Result<(DataTable, DataTable)> {
    let schema = DatasetSchema::load(&config.schema)?;
    let table = load_csv(&config.data, &schema)?;
    split_holdout(&table, config.split.train_fraction, config.split.seed.unwrap_or(0))
}

/// Trains and writes `model.ctgm`, `losses.csv` and `manifest.json` into `out`.
pub fn cmd_fit(config: RunConfig, out: &Path, threads: usize) -> Result<Manifest> {
    let config = config.resolved();
    config.validate()?;
    let (train, holdout) = load_split(&config)?;
    train.validate_task()?;
    let (model, history) = CasTgan::fit(&train, config.train.clone(), config.perturbation(), threads)?;
    create_dir(out)?;
    let model_path = out.join(MODEL_FILE);
    model.save(&model_path)?;
    write_text(&out.join(LOSSES_FILE), &history.to_csv(model.learners.len()))?;
    let manifest = Manifest {
        format: MANIFEST_FORMAT,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        data_sha256: sha256_file(&config.data)?,
        schema_sha256: sha256_file(&config.schema)?,
        rows_total: train.row_count() + holdout.row_count(),
        rows_train: train.row_count(),
        rows_holdout: holdout.row_count(),
        epsilon: config.perturbation.epsilon,
        model_file: MODEL_FILE.to_string(),
        model_sha256: sha256_file(&model_path)?,
        config,
    };
    write_text(&out.join(MANIFEST_FILE), &(manifest.to_json() + "\n"))?;
    Ok(manifest)
}

/// Re-runs the fit recorded in a manifest after checking the input hashes.
pub fn cmd_refit(manifest: &Manifest, out: &Path, threads: usize) -> Result<Manifest> {
    verify_inputs(manifest)?;
    cmd_fit(manifest.config.clone(), out, threads)
}

fn verify_inputs(manifest: &Manifest) -> Result<()> {
    for (field, path, want) in [
        ("data", &manifest.config.data, &manifest.data_sha256),
        ("schema", &manifest.config.schema, &manifest.schema_sha256),
    ] {
        if !path.is_file() {
            return Err(Error::Config(format!("{field}: file {} does not exist", path.display())));
        }
        if &sha256_file(path)? != want {
            return Err(Error::Config(format!(
                "{field}: {} changed since the manifest was written",
                path.display()
            )));
        }
    }
    Ok(())
}

pub fn cmd_sample(model_path: &Path, rows: usize, seed: u64, out: &Path) -> Result<()> {
    if rows == 0 {
        return Err(Error::InvalidArgument("-n must be positive".into()));
    }
    let model = CasTgan::load(model_path)?;
    model.sample(rows, seed)?.write_csv(out)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<crate::metrics::EvalReport> {
    let model = args.model.as_deref().map(CasTgan::load).transpose()?;
    let schema = match (&args.schema, &model) {
        (Some(p), _) => DatasetSchema::load(p)?,
        (None, Some(m)) => m.schema.clone(),
        (None, None) => return Err(Error::InvalidArgument("--schema is required with --synth".into())),
    };
    if let Some(m) = &model {
        if m.schema.columns != schema.columns {
            return Err(Error::Schema("model columns differ from the given schema".into()));
        }
    }
    let real = load_csv(&args.real, &schema)?;
    let train = args.train.as_deref().map(|p| load_csv(p, &schema)).transpose()?;
    let synth = match (&args.synth, &model) {
        (Some(p), _) => load_csv(p, &schema)?,
        (None, Some(m)) => {
            let rows = args.rows.unwrap_or(real.row_count());
            if rows == 0 {
                return Err(Error::InvalidArgument("-n must be positive".into()));
            }
            // The model keeps its own schema; rebind to carry the caller's rules.
            let sampled = m.sample(rows, args.seed)?;
            DataTable::new(schema.clone(), sampled.columns().to_vec())?
        }
        (None, None) => return Err(Error::InvalidArgument("either --synth or --model is required".into())),
    };
    let report = evaluate(&synth, &real, train.as_ref(), args.seed)?;
    let names: Vec<String> = schema.columns.iter().map(|c| c.name.clone()).collect();
    report.write(&args.out, &names)?;
    write_distributions(&args.out.join("distributions.csv"), &real, &synth)?;
    Ok(report)
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Per-feature distribution data: category frequencies for categoricals and
/// evenly spaced quantiles for numerics, real next to synthetic.
pub fn write_distributions(path: &Path, real: &DataTable, synth: &DataTable) -> Result<()> {
    let synth = synth.align_to(real)?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["column", "kind", "bin", "real", "synth"])?;
    for (i, spec) in real.schema().columns.iter().enumerate() {
        match (real.column(i), synth.column(i)) {
            (ColumnData::Numeric(r), ColumnData::Numeric(s)) => {
                let mut r = r.clone();
                let mut s = s.clone();
                r.sort_by(f64::total_cmp);
                s.sort_by(f64::total_cmp);
                for k in 0..=DISTRIBUTION_QUANTILES {
                    let q = k as f64 / DISTRIBUTION_QUANTILES as f64;
                    w.write_record([
                        spec.name.clone(),
                        "quantile".into(),
                        q.to_string(),
                        quantile(&r, q).to_string(),
                        quantile(&s, q).to_string(),
                    ])?;
                }
            }
            (ColumnData::Categorical(r), ColumnData::Categorical(s)) => {
                let freq = |codes: &[u32], k: usize| {
                    if codes.is_empty() {
                        0.0
                    } else {
                        codes.iter().filter(|&&c| c as usize == k).count() as f64 / codes.len() as f64
                    }
                };
                for (k, label) in r.dictionary.iter().enumerate() {
                    w.write_record([
                        spec.name.clone(),
                        "frequency".into(),
                        label.clone(),
                        freq(&r.codes, k).to_string(),
                        freq(&s.codes, k).to_string(),
                    ])?;
                }
                let unseen = s.codes.iter().filter(|&&c| c as usize >= r.dictionary.len()).count();
                if unseen > 0 {
                    w.write_record([
                        spec.name.clone(),
                        "frequency".into(),
                        "<unseen>".into(),
                        "0".into(),
                        (unseen as f64 / s.codes.len() as f64).to_string(),
                    ])?;
                }
            }
            _ => return Err(Error::Schema(format!("column \"{}\" changed kind", spec.name))),
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn cmd_attack(args: &AttackArgs) -> Result<crate::attack::AttackReport> {
    let model = CasTgan::load(&args.model)?;
    let manifest_path = match &args.manifest {
        Some(p) => p.clone(),
        None => args.model.parent().unwrap_or(Path::new("")).join(MANIFEST_FILE),
    };
    let manifest = Manifest::load(&manifest_path)?;
    verify_inputs(&manifest)?;
    if manifest.epsilon != model.perturbation.epsilon {
        return Err(Error::Config(format!(
            "manifest epsilon {} does not match the model's {}",
            manifest.epsilon, model.perturbation.epsilon
        )));
    }
    let mut config = manifest.config.attack;
    if let Some(v) = args.iterations {
        config.iterations = v;
    }
    if let Some(v) = args.fraction {
        config.fraction = v;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    config.access_preprocessors |= args.access_preprocessors;
    config.validate()?;
    let (train, _) = load_split(&manifest.config)?;
    let rows = args.rows.unwrap_or(manifest.rows_train);
    if rows == 0 {
        return Err(Error::InvalidArgument("-n must be positive".into()));
    }
    eprintln!(
        "attack: {}",
        if config.access_preprocessors {
            "attacker uses the model's fitted category dictionaries"
        } else {
            "attacker refits category dictionaries from the synthetic table"
        }
    );
    let synth = model.sample(rows, config.seed)?;
    let outcome = whitebox_attack(&synth, &model.learners, &model.encoder, &config)?;
    let report = attack_distances(&outcome, &synth, &train, &config, manifest.epsilon)?;
    create_dir(&args.out)?;
    write_text(&args.out.join("attack_report.json"), &(report.to_json() + "\n"))?;
    write_text(&args.out.join("attack_rows.csv"), &report.per_row_csv())?;
    Ok(report)
}

/// Runs one parsed command.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit(a) => {
            let threads = thread_count(a.threads)?;
            let manifest = match (&a.config, &a.manifest) {
                (Some(c), _) => cmd_fit(RunConfig::load(c)?, &a.out, threads)?,
                (None, Some(m)) => cmd_refit(&Manifest::load(m)?, &a.out, threads)?,
                (None, None) => return Err(Error::InvalidArgument("--config or --manifest is required".into())),
            };
            eprintln!(
                "fit: {} training rows, model {} (sha256 {})",
                manifest.rows_train,
                a.out.join(MODEL_FILE).display(),
                manifest.model_sha256
            );
        }
        Command::Sample(a) => cmd_sample(&a.model, a.rows, a.seed, &a.out)?,
        Command::Eval(a) => {
            let report = cmd_eval(&a)?;
            println!("{}", report.to_json());
        }
        Command::Attack(a) => {
            let report = cmd_attack(&a)?;
            println!("{}", report.to_json());
        }
    }
    Ok(())
}

/// Maps an error to the process exit code.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_validation() {
        2
    } else {
        1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let c = RunConfig::from_toml_str("schema = \"s.toml\"\ndata = \"d.csv\"\n").unwrap();
        assert_eq!(c.split.train_fraction, 0.5);
        assert_eq!(c.train, TrainConfig::default());
        assert_eq!(c.attack, AttackConfig::default());
        assert_eq!(c.perturbation.epsilon, 0.0);
    }

    #[test]
    fn resolution_fills_every_seed() {
        let c = RunConfig::from_toml_str("schema = \"s\"\ndata = \"d\"\nseed = 9\n[split]\nseed = 2\n")
            .unwrap()
            .resolved();
        assert_eq!(c.seed, Some(9));
        assert_eq!(c.train.seed, 9);
        assert_eq!(c.split.seed, Some(2));
        assert_eq!(c.perturbation.seed, Some(9));
        assert_eq!(c.clone().resolved(), c);
    }

    #[test]
    fn paths_resolve_against_the_config_directory() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        fs::write(&p, "schema = \"sub/s.toml\"\ndata = \"/abs/d.csv\"\n").unwrap();
        let c = RunConfig::load(&p).unwrap();
        assert_eq!(c.schema, dir.path().join("sub/s.toml"));
        assert_eq!(c.data, PathBuf::from("/abs/d.csv"));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let err = RunConfig::from_toml_str("schema = \"s\"\ndata = \"d\"\n[train]\nepoch = 3\n").unwrap_err();
        assert!(err.to_string().contains("epoch"), "{err}");
        assert!(err.is_validation());
    }

    #[test]
    fn validation_names_the_field() {
        let dir = tempfile::tempdir().unwrap();
        let s = dir.path().join("s.toml");
        let d = dir.path().join("d.csv");
        fs::write(&s, "").unwrap();
        fs::write(&d, "").unwrap();
        let mut c = RunConfig::from_toml_str("schema = \"x\"\ndata = \"y\"\n").unwrap();
        c.schema = s;
        c.data = d;
        c.validate().unwrap();
        c.split.train_fraction = 1.0;
        assert!(c.validate().unwrap_err().to_string().contains("split.train_fraction"));
        c.split.train_fraction = 0.5;
        c.train.tau = 0.0;
        assert!(c.validate().unwrap_err().to_string().contains("train: tau"));
        c.train.tau = 0.8;
        c.perturbation.epsilon = 2.0;
        assert!(c.validate().unwrap_err().to_string().contains("perturbation: epsilon"));
    }

    #[test]
    fn explicit_thread_count_wins() {
        assert_eq!(thread_count(Some(3)).unwrap(), 3);
        assert!(thread_count(Some(0)).is_err());
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 5.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 5.0);
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert!(quantile(&[], 0.5).is_nan());
    }
}
