use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adgan::data::{decode_image, synth_export, DataError, Oracle};
use adgan::eval::{age_sweep, config_hash, preservation_rate};
use adgan::gradcheck::run_suite;
use adgan::grid::grid_emit;
use adgan::train::{Checkpoint, MetricsLog, Precision, TrainConfig, Trainer};
use adgan::{AttributeLabel, Error};
use adgan_tensor::{Real, Tensor};
use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GRID_GAP: usize = 2;
const GRADCHECK_TOLERANCE: f64 = 1e-5;

#[derive(Parser)]
#[command(name = "adgan", version, about = "Attribute-controllable face aging GAN")]
struct Cli {
    /// Overrides the seed from the config or checkpoint.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON training config; the built-in desk config when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output location (directory for train and synth export, file otherwise).
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Trains both stages and writes checkpoints, metrics.tsv and config.json.
    Train {
        /// Validates config and dataset, then stops before the first iteration.
        #[arg(long)]
        dry_run: bool,
        /// Continues from a checkpoint instead of a fresh initialization.
        #[arg(long, value_name = "CHECKPOINT")]
        resume: Option<PathBuf>,
    },
    /// Writes a grid: the input followed by one synthesis per age group.
    Synthesize {
        /// Trained model (`.adgn`).
        #[arg(long)]
        checkpoint: PathBuf,
        /// Face image; decoded and resized to the model resolution.
        #[arg(long)]
        input: PathBuf,
        /// Held attributes as `axis=name` (axes: age, gender, race).
        #[arg(long, num_args = 1.., value_name = "AXIS=VALUE")]
        attributes: Vec<String>,
    },
    /// Attribute preservation rates of a checkpoint on its held-out data.
    Evaluate {
        /// Trained model (`.adgn`).
        #[arg(long)]
        checkpoint: PathBuf,
        /// Inputs drawn from the held-out split.
        #[arg(long, default_value_t = 2000)]
        samples: usize,
    },
    /// Synthetic dataset utilities.
    Synth {
        #[command(subcommand)]
        command: SynthCommand,
    },
    /// Finite-difference check of every primitive and loss term.
    Gradcheck {
        /// Random toy shapes tried per check.
        #[arg(long, default_value_t = 20)]
        seeds: u64,
    },
}

#[derive(Subcommand)]
enum SynthCommand {
    /// Writes the configured synthetic dataset as PNGs plus manifest.csv.
    Export,
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<NumericFailure>().is_some() {
        return 4;
    }
    match e.downcast_ref::<Error>() {
        Some(Error::Config(_) | Error::AttributeRange { .. } | Error::NegativeAge(_)) => 2,
        Some(Error::Data(_) | Error::Checkpoint(_) | Error::Io { .. } | Error::Grid(_)) => 3,
        Some(Error::NonFinite { .. } | Error::FrozenViolation(_) | Error::Tensor(_) | Error::Network { .. }) => 4,
        None => 3,
    }
}

#[derive(Debug)]
struct NumericFailure(String);

impl std::fmt::Display for NumericFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NumericFailure {}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Train { dry_run, resume } => cmd_train(&cli, *dry_run, resume.as_deref()),
        Command::Synthesize {
            checkpoint,
            input,
            attributes,
        } => cmd_synthesize(&cli, checkpoint, input, attributes),
        Command::Evaluate { checkpoint, samples } => cmd_evaluate(&cli, checkpoint, *samples),
        Command::Synth {
            command: SynthCommand::Export,
        } => cmd_synth_export(&cli),
        Command::Gradcheck { seeds } => cmd_gradcheck(*seeds),
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<TrainConfig> {
    let mut config = match &cli.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::desk(),
    };
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    Ok(config)
}

fn config_dir(cli: &Cli) -> Option<&Path> {
    cli.config.as_deref().and_then(Path::parent)
}

fn write_file(path: &Path, text: &str) -> anyhow::Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn cmd_train(cli: &Cli, dry_run: bool, resume: Option<&Path>) -> anyhow::Result<()> {
    let config = match resume {
        Some(p) => {
            if cli.config.is_some() {
                log::warn!("--config is ignored when resuming; the checkpoint carries its config");
            }
            Checkpoint::<f64>::load(p)?.config
        }
        None => load_config(cli)?,
    };
    match config.precision {
        Precision::F32 => train_with::<f32>(cli, config, dry_run, resume),
        Precision::F64 => train_with::<f64>(cli, config, dry_run, resume),
    }
}

fn train_with<T: Real>(
    cli: &Cli,
    config: TrainConfig,
    dry_run: bool,
    resume: Option<&Path>,
) -> anyhow::Result<()> {
    let out = cli.output.clone().unwrap_or_else(|| PathBuf::from("run"));
    let dataset = config.dataset(config_dir(cli))?;
    dataset.require_all_classes()?;
    let (train_set, test_set) = config.split(&dataset);
    log::info!(
        "{} images ({} train, {} held out), {} classes",
        dataset.len(),
        train_set.len(),
        test_set.len(),
        config.attributes.len()
    );
    let mut trainer = match resume {
        Some(p) => Trainer::from_checkpoint(Checkpoint::<T>::load(p)?),
        None => Trainer::<T>::new(config.clone())?,
    };
    if dry_run {
        println!("{}", trainer.model.audit());
        println!(
            "config valid; would run {} + {} iterations from iteration {}",
            config.stage1_iters,
            config.stage2_iters,
            trainer.state.iteration()
        );
        return Ok(());
    }
    std::fs::create_dir_all(&out).map_err(|e| Error::Io {
        path: out.clone(),
        source: e,
    })?;
    write_file(&out.join("config.json"), &config.to_json())?;
    let mut log = MetricsLog::to_file(&out.join("metrics.tsv"))?;
    trainer.run(&train_set, &mut log, |t| {
        let path = out.join(format!("checkpoint-{:06}.adgn", t.state.iteration()));
        t.checkpoint().save(&path)?;
        log::info!("iteration {}: saved {}", t.state.iteration(), path.display());
        Ok(())
    })?;
    let final_path = out.join("final.adgn");
    trainer.checkpoint().save(&final_path)?;
    println!("trained {} iterations; checkpoint {}", trainer.state.iteration(), final_path.display());
    Ok(())
}

/// Loads a checkpoint in the precision it was trained with.
fn with_checkpoint<F32, F64, R>(path: &Path, f32_fn: F32, f64_fn: F64) -> anyhow::Result<R>
where
    F32: FnOnce(Checkpoint<f32>) -> anyhow::Result<R>,
    F64: FnOnce(Checkpoint<f64>) -> anyhow::Result<R>,
{
    let ck = Checkpoint::<f32>::load(path)?;
    match ck.config.precision {
        Precision::F32 => f32_fn(ck),
        Precision::F64 => f64_fn(Checkpoint::<f64>::load(path)?),
    }
}

fn cmd_synthesize(cli: &Cli, checkpoint: &Path, input: &Path, attributes: &[String]) -> anyhow::Result<()> {
    with_checkpoint(
        checkpoint,
        |ck| synthesize_with(cli, ck, input, attributes),
        |ck| synthesize_with(cli, ck, input, attributes),
    )
}

fn parse_attributes(config: &TrainConfig, attributes: &[String]) -> anyhow::Result<[Option<usize>; 3]> {
    let space = config.attributes;
    let mut held = [None; 3];
    for a in attributes {
        let (axis, value) = a
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("attribute `{a}` is not of the form axis=value")))?;
        let (slot, size) = match axis.trim() {
            "age" => (0, space.n_age),
            "gender" => (1, space.n_gender),
            "race" => (2, space.n_race),
            other => {
                return Err(Error::Config(format!(
                    "unknown attribute axis `{other}`; expected age, gender or race"
                ))
                .into())
            }
        };
        held[slot] = Some(config.labels.resolve(axis.trim(), value.trim(), size)?);
    }
    Ok(held)
}

fn synthesize_with<T: Real>(
    cli: &Cli,
    ck: Checkpoint<T>,
    input: &Path,
    attributes: &[String],
) -> anyhow::Result<()> {
    let config = &ck.config;
    let res = config.resolution;
    let held = parse_attributes(config, attributes)?;
    let image = decode_image(input, res).map_err(|e| Error::Data(DataError::Decode {
        path: input.to_path_buf(),
        detail: e.to_string(),
    }))?;
    let decoded = if config.synthetic().is_some() {
        Oracle::new(config.attributes, res).classify(&image)
    } else {
        None
    };
    let pick = |slot: usize, axis: &str, from: Option<usize>| -> anyhow::Result<usize> {
        held[slot].or(from).ok_or_else(|| {
            Error::Config(format!(
                "cannot determine the input's {axis}; pass --attributes {axis}=<name>"
            ))
            .into()
        })
    };
    let hold = AttributeLabel::new(
        0,
        pick(1, "gender", decoded.map(|l| l.gender))?,
        pick(2, "race", decoded.map(|l| l.race))?,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cli.seed.unwrap_or(config.seed));
    let x: Tensor<T> = image.cast();
    let mut row = age_sweep(&ck.model, &x, hold, &mut rng)?;
    if let Some(age) = held[0] {
        row = vec![row[0].clone(), row[1 + age].clone()];
    }
    let out = cli.output.clone().unwrap_or_else(|| PathBuf::from("synthesis.png"));
    let refs: Vec<&Tensor<T>> = row.iter().collect();
    let (w, h) = grid_emit(&refs, refs.len(), GRID_GAP, &out)?;
    println!(
        "{}: {w}x{h} grid, input then {} (gender {}, race {})",
        out.display(),
        if held[0].is_some() { "one target group" } else { "every age group" },
        config.labels.name("gender", hold.gender),
        config.labels.name("race", hold.race)
    );
    Ok(())
}

fn cmd_evaluate(cli: &Cli, checkpoint: &Path, samples: usize) -> anyhow::Result<()> {
    with_checkpoint(
        checkpoint,
        |ck| evaluate_with(cli, ck, samples),
        |ck| evaluate_with(cli, ck, samples),
    )
}

fn evaluate_with<T: Real>(cli: &Cli, ck: Checkpoint<T>, samples: usize) -> anyhow::Result<()> {
    let config = &ck.config;
    if config.synthetic().is_none() {
        return Err(Error::Config(
            "evaluating a manifest dataset requires an attribute classifier for real images; \
             only synthetic datasets have a built-in oracle"
                .into(),
        )
        .into());
    }
    if samples == 0 {
        return Err(Error::Config("--samples must be at least 1".into()).into());
    }
    let dataset = config.dataset(None)?;
    let (_, test_set) = config.split(&dataset);
    let pool = if test_set.len() > 0 { test_set } else { dataset };
    let oracle = Oracle::new(config.attributes, config.resolution);
    let targets: Vec<usize> = (0..config.attributes.n_age).collect();
    let names: Vec<String> = targets.iter().map(|&a| config.labels.name("age", a)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cli.seed.unwrap_or(config.seed));
    let report = preservation_rate(
        &ck.model,
        &pool,
        &oracle,
        samples,
        &targets,
        &names,
        config_hash(&config.to_json()),
        &mut rng,
    )?;
    print!("{}", report.to_table());
    let out = cli.output.clone().unwrap_or_else(|| PathBuf::from("report.json"));
    write_file(&out, &report.to_json())?;
    println!("report written to {}", out.display());
    Ok(())
}

fn cmd_synth_export(cli: &Cli) -> anyhow::Result<()> {
    let config = load_config(cli)?;
    let mut spec = config
        .synthetic()
        .ok_or_else(|| Error::Config("synth export needs a config with a synthetic dataset".into()))?;
    if let Some(s) = cli.seed {
        spec.seed = s;
    }
    let out = cli.output.clone().unwrap_or_else(|| PathBuf::from("synthetic"));
    let n = synth_export(&spec, &out)?;
    println!("wrote {n} images and manifest.csv to {}", out.display());
    Ok(())
}

fn cmd_gradcheck(seeds: u64) -> anyhow::Result<()> {
    if seeds == 0 {
        bail!(Error::Config("--seeds must be at least 1".into()));
    }
    let results = run_suite(seeds).context("gradient check")?;
    let mut failed = Vec::new();
    for r in &results {
        let ok = r.max_rel_error < GRADCHECK_TOLERANCE;
        println!(
            "{:<28} seeds {:>3}  max rel error {:.3e}  {}",
            r.name,
            r.seeds,
            r.max_rel_error,
            if ok { "ok" } else { "FAIL" }
        );
        if !ok {
            failed.push(r.name);
        }
    }
    if failed.is_empty() {
        println!("all {} checks below {GRADCHECK_TOLERANCE:e}", results.len());
        Ok(())
    } else {
        Err(anyhow!(NumericFailure(format!(
            "gradient check failed for {}",
            failed.join(", ")
        ))))
    }
}
