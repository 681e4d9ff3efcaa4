use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use hybrid_core::fesolve::{run_demo, DemoParts};
use hybrid_core::hybrid::{evaluate_with, Trainer};
use hybrid_core::materials::{update, InternalState};
use hybrid_core::paths::{build_datasets, load_dataset, PathDataset};
use hybrid_core::{
    DatasetConfig, DemoConfig, EvalMask, HybridSurrogate, LoadCase, PathKind, ReferenceMaterial, Regime, StrainPath,
    StressState, TrainConfig, TrainingCheckpoint,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<hybrid_core::Error> for CliError {
    fn from(e: hybrid_core::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Config(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser)]
#[command(name = "hybrid", about = "Data generation, training, evaluation and FE runs for hybrid surrogates")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print a default configuration file.
    Config { kind: ConfigKind },
    /// Generate strain-path datasets.
    Gen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a surrogate on a generated dataset.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Error table of a surrogate on the test paths.
    Eval {
        /// Trained surrogate (surrogate.json or checkpoint.json).
        #[arg(long, required_unless_present = "oracle", conflicts_with = "oracle")]
        model: Option<PathBuf>,
        /// Evaluate the reference material itself.
        #[arg(long)]
        oracle: bool,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "plane_strain")]
        regime: Regime,
        #[arg(long)]
        out: PathBuf,
    },
    /// Strip-in-tension runs with the reference material and a surrogate.
    Fe {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Dataset supplying the retraining paths for stabilization.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        case: CaseArg,
        /// Add one surrogate run per increment factor.
        #[arg(long)]
        dt_sweep: bool,
        /// Add the stabilization-epoch sweep.
        #[arg(long)]
        sweeps: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ConfigKind {
    Gen,
    Train,
    Fe,
}

#[derive(Clone, Copy, ValueEnum)]
enum CaseArg {
    Monotonic,
    UnloadReload,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
struct TrainFile {
    regime: Regime,
    /// Epochs between checkpoints; 0 writes only the final one.
    checkpoint_every: usize,
    train: TrainConfig,
}

impl Default for TrainFile {
    fn default() -> Self {
        Self { regime: Regime::PlaneStrain, checkpoint_every: 100, train: TrainConfig::default() }
    }
}

fn read_config<T: DeserializeOwned + Serialize>(file: &Path) -> Result<(T, String)> {
    let text = fs::read_to_string(file).map_err(|e| CliError::Config(format!("{}: {e}", file.display())))?;
    let value: T = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", file.display())))?;
    let header = hash_header(&value)?;
    Ok((value, header))
}

/// `# config-hash: <sha256>` of the canonical TOML form.
fn hash_header<T: Serialize>(value: &T) -> Result<String> {
    let canonical = toml::to_string(value).map_err(|e| CliError::Config(e.to_string()))?;
    Ok(format!("# config-hash: {}", hex::encode(Sha256::digest(canonical.as_bytes()))))
}

fn to_toml<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string(value).map_err(|e| CliError::Config(e.to_string()))
}

fn select<'a>(ds: &'a PathDataset, ids: &[usize]) -> Vec<&'a StrainPath> {
    ids.iter().map(|&i| &ds.paths[i]).collect()
}

fn cmd_gen(config: &Path, out: &Path) -> Result<()> {
    let (cfg, header): (DatasetConfig, _) = read_config(config)?;
    let m = build_datasets(&cfg, out, Some(&header))?;
    println!(
        "{} paths per regime ({} train, {} validation, {} test) in {}",
        cfg.paths_per_regime(),
        m.train.len(),
        m.validation.len(),
        m.test.len(),
        out.display()
    );
    for (regime, file) in &m.files {
        println!("  {regime}: {file}");
    }
    Ok(())
}

fn cmd_train(config: &Path, data: &Path, out: &Path, resume: Option<&Path>) -> Result<()> {
    let (cfg, header): (TrainFile, _) = read_config(config)?;
    let (_, ds) = load_dataset(data, cfg.regime)?;
    let train = select(&ds, &ds.train);
    let val = select(&ds, &ds.validation);
    let mut trainer = match resume {
        Some(file) => {
            let mut ckpt = TrainingCheckpoint::load(file)?;
            // only the epoch budget may change
            if ckpt.config != (TrainConfig { epochs: ckpt.config.epochs, ..cfg.train.clone() }) {
                return Err(CliError::Config("checkpoint was written with a different training config".into()));
            }
            ckpt.config.epochs = cfg.train.epochs;
            Trainer::resume(ckpt, &train, &val)?
        }
        None => Trainer::new(&train, &val, &cfg.train)?,
    };
    fs::create_dir_all(out)?;
    let ckpt_file = out.join("checkpoint.json");
    while trainer.epoch() < cfg.train.epochs {
        let r = trainer.step_epoch()?;
        if cfg.checkpoint_every > 0 && r.epoch % cfg.checkpoint_every == 0 {
            trainer.checkpoint().save(&ckpt_file)?;
            println!("epoch {:>6}  train {:.4e}  val {:.4e}", r.epoch, r.train_loss, r.val_loss);
        }
    }
    trainer.checkpoint().save(&ckpt_file)?;
    let (surrogate, report) = trainer.finish();
    surrogate.save(&out.join("surrogate.json"))?;
    report.write_csv(&out.join("report.csv"), Some(&header))?;
    println!(
        "best epoch {} (validation loss {:.4e}); {} path evaluations skipped",
        report.best_epoch, report.best_val_loss, report.skipped
    );
    Ok(())
}

fn load_model(file: &Path) -> Result<(HybridSurrogate, Option<TrainConfig>)> {
    if let Ok(ckpt) = TrainingCheckpoint::load(file) {
        let mut s = ckpt.surrogate;
        s.network = ckpt.best_network;
        return Ok((s, Some(ckpt.config)));
    }
    Ok((HybridSurrogate::load(file)?, None))
}

/// Stresses of the reference material along a path.
fn oracle_path(material: &ReferenceMaterial, path: &StrainPath) -> hybrid_core::Result<Vec<StressState>> {
    let mut state = InternalState::default();
    path.strains()
        .iter()
        .map(|s| {
            let r = update(material, s, &state)?;
            state = r.state;
            Ok(r.stress)
        })
        .collect()
}

#[derive(Serialize)]
struct EvalSetup {
    model: String,
    regime: Regime,
    dataset: DatasetConfig,
}

fn cmd_eval(model: Option<&Path>, data: &Path, regime: Regime, out: &Path) -> Result<()> {
    let (manifest, ds) = load_dataset(data, regime)?;
    let test = select(&ds, &ds.test);
    let material = manifest.config.material.clone();
    let (surrogate, label) = match model {
        Some(file) => {
            let (s, cfg) = load_model(file)?;
            let label = match cfg {
                Some(c) => to_toml(&c)?,
                None => to_toml(&s)?,
            };
            (Some(s), label)
        }
        None => (None, "oracle".to_string()),
    };
    let header = hash_header(&EvalSetup { model: label, regime, dataset: manifest.config })?;
    let predict = |p: &StrainPath| match &surrogate {
        Some(s) => s.predict_path(p),
        None => oracle_path(&material, p),
    };
    let mut rows = vec![format!("{header}"), "kind,mask,paths,error".to_string()];
    let groups: Vec<(&str, Vec<&StrainPath>)> = PathKind::ALL
        .iter()
        .map(|k| (k.as_str(), test.iter().copied().filter(|p| p.kind == *k).collect()))
        .chain(std::iter::once(("all", test.clone())))
        .collect();
    for mask in [EvalMask::AllSteps, EvalMask::NonMonotonicStepsOnly] {
        let mask_name = match mask {
            EvalMask::AllSteps => "all_steps",
            EvalMask::NonMonotonicStepsOnly => "non_monotonic_steps_only",
        };
        for (name, paths) in &groups {
            let error = match evaluate_with(predict, paths, mask) {
                Ok(e) => format!("{e:.6e}"),
                Err(hybrid_core::Error::EmptySelection) => String::new(),
                Err(e) => return Err(e.into()),
            };
            println!("{name:>14} {mask_name:>26} {:>5} {error}", paths.len());
            rows.push(format!("{name},{mask_name},{},{error}", paths.len()));
        }
    }
    if let Some(dir) = out.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(out, rows.join("\n") + "\n")?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_fe(
    config: &Path,
    model: &Path,
    data: &Path,
    out: &Path,
    case: CaseArg,
    dt_sweep: bool,
    sweeps: bool,
) -> Result<()> {
    let (cfg, header): (DemoConfig, _) = read_config(config)?;
    cfg.validate()?;
    let (surrogate, _) = load_model(model)?;
    let (_, ds) = load_dataset(data, cfg.regime)?;
    let retrain = surrogate.prepare_paths(&select(&ds, &ds.train))?;
    let validation = surrogate.prepare_paths(&select(&ds, &ds.validation))?;
    let cases = match case {
        CaseArg::Monotonic => vec![LoadCase::Monotonic],
        CaseArg::UnloadReload => vec![LoadCase::UnloadReload],
        CaseArg::Both => vec![LoadCase::Monotonic, LoadCase::UnloadReload],
    };
    let mut failures = Vec::new();
    for c in cases {
        let curves =
            run_demo(&cfg, c, &surrogate, &retrain, Some(&validation), DemoParts { sweeps, dt_sweep })?;
        curves.write(out, Some(&header))?;
        let error = curves.surrogate_error().map_or("n/a".to_string(), |e| format!("{:.2}%", 100.0 * e));
        println!(
            "{}: reference {} steps, surrogate {} steps, {} stabilization updates, curve error {error}",
            c.as_str(),
            curves.reference.records.len() - 1,
            curves.surrogate.records.len() - 1,
            curves.log.len()
        );
        for (name, run) in [("reference", &curves.reference), ("surrogate", &curves.surrogate)] {
            if let Some(f) = &run.failure {
                failures.push(format!("{} {name}: {f}", c.as_str()));
            }
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Numerical(failures.join("; ")))
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    match cli.command {
        Command::Config { kind } => {
            let text = match kind {
                ConfigKind::Gen => to_toml(&DatasetConfig::default())?,
                ConfigKind::Train => to_toml(&TrainFile::default())?,
                ConfigKind::Fe => to_toml(&DemoConfig::default())?,
            };
            print!("{text}");
            Ok(())
        }
        Command::Gen { config, out } => cmd_gen(&config, &out),
        Command::Train { config, data, out, resume } => cmd_train(&config, &data, &out, resume.as_deref()),
        Command::Eval { model, oracle: _, data, regime, out } => cmd_eval(model.as_deref(), &data, regime, &out),
        Command::Fe { config, model, data, out, case, dt_sweep, sweeps } => {
            cmd_fe(&config, &model, &data, &out, case, dt_sweep, sweeps)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
