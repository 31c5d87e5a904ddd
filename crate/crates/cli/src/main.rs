//! `scribe`: command-line driver for the writer-attribution pipeline.
//!
//! Exit codes: 0 success, 1 invalid input, 2 partial failure (some runs of
//! an experiment failed), 3 failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use scribe::dataset::{DatasetType, TileStorage};
use scribe::experiment::{
    build_dataset_dir, run_experiment, BackendKind, ExclusionPolicy, ExperimentConfig, ExperimentLedger,
    ExternalSetConfig, Outcome, LEDGER_FILE,
};
use scribe::geometry::ClassScheme;
use scribe::harness::{RunManifest, TrainingConfig, BASELINE_MODEL_ID, RUN_MANIFEST_FILE};
use scribe::jsonio::{read_json, write_json};
use scribe::report::render_report;
use scribe::similarity::RelationThresholds;
use scribe::steps;
use scribe::synthetic::{write_fixture, SyntheticConfig};
use scribe::vote::TallyMode;

#[derive(Parser, Debug)]
#[command(name = "scribe", version, about = "Writer attribution from annotated document images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Tally {
    PerRun,
    PerTile,
}

impl From<Tally> for TallyMode {
    fn from(t: Tally) -> Self {
        match t {
            Tally::PerRun => TallyMode::PerRun,
            Tally::PerTile => TallyMode::PerTile,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build one tile dataset and its external sets.
    BuildDataset {
        #[arg(long)]
        annotations: PathBuf,
        /// Dataset type, e.g. v01 or v001.
        #[arg(long = "type")]
        dataset_type: String,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.8)]
        split_ratio: f64,
        /// Store tiles inline in the manifest instead of as PNG files.
        #[arg(long)]
        inline: bool,
        /// Brightness factors, replacing the default set.
        #[arg(long, value_delimiter = ',')]
        shine: Option<Vec<f64>>,
        /// External set as SET=REGION[,REGION...]; its regions are withheld
        /// from training.
        #[arg(long = "external")]
        external: Vec<String>,
    },
    /// Train and evaluate one run.
    Run {
        /// `baseline` or `exec:<program>`.
        #[arg(long)]
        backend: String,
        /// Dataset directory or manifest.
        #[arg(long)]
        dataset: PathBuf,
        /// Run manifest; derived from the dataset when absent.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Model id for a derived manifest of an exec backend.
        #[arg(long)]
        model_id: Option<String>,
        #[arg(long)]
        out: PathBuf,
        /// External set manifests to predict.
        #[arg(long = "external")]
        external: Vec<PathBuf>,
        /// Keep unconverged runs in later analysis.
        #[arg(long)]
        include_unconverged: bool,
    },
    /// Sum confusion matrices per model and scheme and check relations.
    Analyze {
        /// Run directories or glob patterns.
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        /// JSON file with relation thresholds.
        #[arg(long)]
        thresholds: Option<PathBuf>,
    },
    /// Score one external set with a set of runs and vote.
    Attribute {
        /// External set manifest.
        #[arg(long)]
        tiles: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<String>,
        /// 4-class or 8-class; runs with another class count are skipped.
        #[arg(long)]
        scheme: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Tally::PerRun)]
        tally: Tally,
    },
    /// Re-tally verdict files of one external set.
    Vote {
        #[arg(long, num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = Tally::PerRun)]
        tally: Tally,
        /// Where to write the merged verdict file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a full experiment grid from a config file.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        /// Skip rendering `<output_root>/report`.
        #[arg(long)]
        no_report: bool,
    },
    /// Render the report bundle of a finished experiment.
    Report {
        #[arg(long)]
        ledger: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the synthetic two-hand fixture and a matching experiment config.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        pieces_per_class: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

fn parse_external(spec: &str) -> Result<ExternalSetConfig> {
    let Some((set_id, regions)) = spec.split_once('=') else {
        bail!(scribe::Error::Validation(format!("--external {spec:?} is not SET=REGION[,REGION...]")));
    };
    let regions: Vec<String> = regions.split(',').filter(|r| !r.is_empty()).map(str::to_string).collect();
    if regions.is_empty() {
        bail!(scribe::Error::Validation(format!("external set {set_id} lists no regions")));
    }
    Ok(ExternalSetConfig {
        set_id: set_id.to_string(),
        regions,
    })
}

/// Expands patterns into run directories. A match may be the directory or
/// its run manifest.
fn expand_runs(patterns: &[String]) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for pattern in patterns {
        let mut matched = false;
        for entry in glob::glob(pattern).with_context(|| format!("bad pattern {pattern:?}"))? {
            let path = entry?;
            let dir = if path.file_name().is_some_and(|n| n == RUN_MANIFEST_FILE) {
                path.parent().map(Path::to_path_buf).unwrap_or_default()
            } else {
                path
            };
            if dir.join(RUN_MANIFEST_FILE).is_file() {
                dirs.push(dir);
                matched = true;
            }
        }
        if !matched {
            bail!(scribe::Error::Validation(format!("{pattern:?} matches no run directory")));
        }
    }
    dirs.sort();
    dirs.dedup();
    Ok(dirs)
}

fn build(
    annotations: PathBuf,
    dataset_type: &str,
    seed: u64,
    out: &Path,
    split_ratio: f64,
    inline: bool,
    shine: Option<Vec<f64>>,
    external: &[String],
) -> Result<()> {
    let kind: DatasetType = dataset_type.parse()?;
    let mut config = ExperimentConfig::new(annotations, out);
    config.dataset_types = vec![kind.name().to_string()];
    config.seeds = vec![seed];
    config.split_ratio = split_ratio;
    if inline {
        config.tile_storage = TileStorage::Inline;
    }
    if let Some(s) = shine {
        config.augmentation.shine_factors = s;
    }
    config.external_sets = external.iter().map(|e| parse_external(e)).collect::<Result<_>>()?;
    config.validate()?;
    let built = build_dataset_dir(&config, kind, seed, out)?;
    let d = &built.dataset;
    println!(
        "{} seed {seed}: {} train / {} test tiles of {}px -> {}",
        kind.name(),
        d.train.len(),
        d.test.len(),
        d.tile_size,
        built.manifest.display()
    );
    for (set_id, path) in &built.external {
        println!("external {set_id} -> {}", path.display());
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run(
    backend: &str,
    dataset: &Path,
    manifest: Option<PathBuf>,
    model_id: Option<String>,
    out: &Path,
    external: &[PathBuf],
    include_unconverged: bool,
) -> Result<()> {
    let backend: BackendKind = backend.parse()?;
    let manifest = match manifest {
        Some(m) => m,
        None => {
            let (spec, _) = scribe::dataset::read_sample_rows(dataset)?;
            let (model_id, training) = match (&backend, model_id) {
                (BackendKind::Baseline, _) => (BASELINE_MODEL_ID.to_string(), TrainingConfig::baseline()),
                (BackendKind::Exec(_), Some(id)) => {
                    let t = TrainingConfig::fine_tune_preset(&id);
                    (id, t)
                }
                (BackendKind::Exec(_), None) => {
                    bail!(scribe::Error::Validation("an exec backend needs --manifest or --model-id".into()))
                }
            };
            let path = out.join(RUN_MANIFEST_FILE);
            write_json(&path, &RunManifest::new(model_id, spec.dataset_type, spec.seed, training))?;
            path
        }
    };
    let policy = if include_unconverged {
        ExclusionPolicy::Include
    } else {
        ExclusionPolicy::Exclude
    };
    let m = steps::run_one(&backend, dataset, &manifest, out, external, policy)?;
    match &m.exclusion_reason {
        Some(reason) => println!("{}: {} ({reason})", m.run_id(), m.status),
        None => println!("{}: {}", m.run_id(), m.status),
    }
    Ok(())
}

fn print_ledger_summary(ledger: &ExperimentLedger) {
    for r in &ledger.runs {
        let acc = r.accuracy.map(|a| format!("{a:.4}")).unwrap_or_else(|| "-".into());
        println!("run {}: {} accuracy {acc}", r.run_id, r.status);
    }
    for v in &ledger.votes {
        println!("vote {}: {}", v.set_id, v.tally.final_verdict);
    }
}

fn outcome_code(outcome: Outcome) -> u8 {
    match outcome {
        Outcome::Success => 0,
        Outcome::PartialFailure => 2,
        Outcome::TotalFailure => 3,
    }
}

fn execute(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::BuildDataset {
            annotations,
            dataset_type,
            seed,
            out,
            split_ratio,
            inline,
            shine,
            external,
        } => build(annotations, &dataset_type, seed, &out, split_ratio, inline, shine, &external)?,
        Command::Run {
            backend,
            dataset,
            manifest,
            model_id,
            out,
            external,
            include_unconverged,
        } => run(&backend, &dataset, manifest, model_id, &out, &external, include_unconverged)?,
        Command::Analyze { runs, out, thresholds } => {
            let thresholds: RelationThresholds = match thresholds {
                Some(p) => read_json(&p)?,
                None => RelationThresholds::default(),
            };
            let reports = steps::analyze(&expand_runs(&runs)?, &thresholds, &out)?;
            for r in reports {
                let held = r.relations.iter().filter(|c| c.holds).count();
                println!(
                    "{} {}-class: off mass {}, {held}/{} relations hold",
                    r.model_id,
                    r.scheme,
                    r.off_mass,
                    r.relations.len()
                );
            }
        }
        Command::Attribute {
            tiles,
            runs,
            scheme,
            out,
            tally,
        } => {
            let scheme = ClassScheme::builtin(&scheme)?;
            let dirs: Vec<PathBuf> = expand_runs(&runs)?
                .into_iter()
                .filter(|d| {
                    read_json::<RunManifest>(&d.join(RUN_MANIFEST_FILE))
                        .ok()
                        .and_then(|m| m.dataset_type.parse::<DatasetType>().ok())
                        .is_some_and(|t| t.n_classes() == scheme.n_classes)
                })
                .collect();
            let file = steps::attribute(&tiles, &dirs, &scheme, tally.into(), &out)?;
            for r in &file.runs {
                println!("{}_{}_{}: {}", r.model_id, r.dataset_type, r.seed, r.verdict);
            }
            println!("{}: {}", file.set_id, file.final_verdict);
        }
        Command::Vote { inputs, tally, out } => {
            let file = steps::vote(&inputs, tally.into())?;
            for (model, t) in &file.step1 {
                println!("{model}: {} / {} ({} ties) -> {}", t.author1, t.author2, t.ties, t.winner);
            }
            println!("{}: {}", file.set_id, file.final_verdict);
            if let Some(out) = out {
                write_json(&out, &file)?;
            }
        }
        Command::Experiment { config, no_report } => {
            let config = ExperimentConfig::load(&config)?;
            let ledger = run_experiment(&config)?;
            print_ledger_summary(&ledger);
            if !no_report {
                let dir = config.output_root.join("report");
                render_report(&ledger, &config.output_root, &dir)?;
                println!("report -> {}", dir.display());
            }
            return Ok(outcome_code(ledger.outcome()));
        }
        Command::Report { ledger, out } => {
            let root = ledger.parent().map(Path::to_path_buf).unwrap_or_default();
            let l = ExperimentLedger::read(&ledger)?;
            let bundle = render_report(&l, &root, &out)?;
            println!("{} files -> {}", bundle.files.len(), out.display());
        }
        Command::Synth {
            out,
            pieces_per_class,
            seed,
        } => {
            let fixture = write_fixture(
                &out,
                &SyntheticConfig {
                    pieces_per_class,
                    seed,
                    ..SyntheticConfig::default()
                },
            )?;
            let kinds = [DatasetType::V01, DatasetType::V001];
            let mut config = fixture.experiment_config("results", &kinds, &scribe::dataset::DEFAULT_SEEDS);
            config.annotations = PathBuf::from(scribe::synthetic::ANNOTATION_FILE);
            let path = out.join("experiment.json");
            write_json(&path, &config)?;
            println!("fixture -> {}, config -> {}", fixture.dir.display(), path.display());
            println!("ledger will be written to results/{LEDGER_FILE}");
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            // library errors already render their source, so skip repeats
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    msg = format!("{msg}: {c}");
                }
            }
            eprintln!("error: {msg}");
            let invalid = e.downcast_ref::<scribe::Error>().is_some_and(scribe::Error::is_validation);
            ExitCode::from(if invalid { 1 } else { 3 })
        }
    }
}
