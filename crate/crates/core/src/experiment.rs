//! The full grid: every (backend, dataset type, seed) run, convergence
//! exclusion, per-model summed matrices and similarity, and the author vote
//! over each external set. Everything lands under one output root and is
//! indexed by `ledger.json`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dataset::{
    build_dataset, write_dataset, AugmentationParams, ClassCounts, DatasetSpec, DatasetType,
    TileDataset, TileStorage, DEFAULT_SEEDS,
};
use crate::error::{Error, Result};
use crate::geometry::{extract_piece, load_annotations, AnnotationSet, ClassScheme, PieceImage};
use crate::harness::{
    accuracy, assess_convergence, invoke_external_backend, read_predictions, run_baseline,
    write_predictions, CentroidModel, Convergence, ExternalSetRef, LossCurve, PredictionRecord,
    RunManifest, RunStatus, TrainingConfig, BASELINE_MODEL_ID, LOSS_CURVE_FILE, PREDICTIONS_FILE,
    RUN_MANIFEST_FILE,
};
use crate::imaging::sha256_hex;
use crate::jsonio::{read_json, write_json};
use crate::similarity::{
    confusion_matrix, default_relations, sum_matrices, ConfusionMatrix, RelationThresholds,
    SimilarityReport,
};
use crate::vote::{
    run_verdict, score_external, scores_csv, ExternalTileSet, RunVerdict, TallyMode, VerdictFile,
    VoteTally,
};

pub const LEDGER_FILE: &str = "ledger.json";
pub const EVENTS_FILE: &str = "events.jsonl";

/// Where a backend's predictions come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendKind {
    /// The built-in centroid classifier.
    Baseline,
    /// A conforming executable, launched as `<path> train --job <file>`.
    Exec(PathBuf),
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendKind::Baseline => f.write_str("baseline"),
            BackendKind::Exec(p) => write!(f, "exec:{}", p.display()),
        }
    }
}

impl FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(BackendKind::Baseline),
            _ => match s.strip_prefix("exec:") {
                Some(p) if !p.is_empty() => Ok(BackendKind::Exec(PathBuf::from(p))),
                _ => Err(Error::Validation(format!(
                    "backend {s:?} is neither `baseline` nor `exec:<path>`"
                ))),
            },
        }
    }
}

impl Serialize for BackendKind {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BackendKind {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub model_id: String,
    pub backend: BackendKind,
    /// Defaults to the baseline config or the fine-tuning preset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training_config: Option<TrainingConfig>,
}

impl BackendConfig {
    pub fn baseline() -> Self {
        BackendConfig {
            model_id: BASELINE_MODEL_ID.into(),
            backend: BackendKind::Baseline,
            training_config: None,
        }
    }

    pub fn exec(model_id: impl Into<String>, program: impl Into<PathBuf>) -> Self {
        BackendConfig {
            model_id: model_id.into(),
            backend: BackendKind::Exec(program.into()),
            training_config: None,
        }
    }

    pub fn training_config(&self) -> TrainingConfig {
        self.training_config.clone().unwrap_or_else(|| match self.backend {
            BackendKind::Baseline => TrainingConfig::baseline(),
            BackendKind::Exec(_) => TrainingConfig::fine_tune_preset(&self.model_id),
        })
    }
}

/// What happens to a run whose loss curve fails the convergence check.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExclusionPolicy {
    #[default]
    Exclude,
    Include,
}

/// Regions scored for authorship instead of being used for training.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalSetConfig {
    pub set_id: String,
    /// Piece ids from the annotation file; their class labels are ignored.
    pub regions: Vec<String>,
}

fn default_seeds() -> Vec<u64> {
    DEFAULT_SEEDS.to_vec()
}

fn default_split_ratio() -> f64 {
    0.8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub annotations: PathBuf,
    pub dataset_types: Vec<String>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub backends: Vec<BackendConfig>,
    #[serde(default)]
    pub thresholds: RelationThresholds,
    #[serde(default)]
    pub exclusion_policy: ExclusionPolicy,
    #[serde(default)]
    pub tally_mode: TallyMode,
    #[serde(default = "default_split_ratio")]
    pub split_ratio: f64,
    #[serde(default)]
    pub augmentation: AugmentationParams,
    #[serde(default)]
    pub tile_storage: TileStorage,
    /// Worker threads; all cores when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parallelism: Option<usize>,
    #[serde(default)]
    pub external_sets: Vec<ExternalSetConfig>,
    pub output_root: PathBuf,
}

fn is_safe_name(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        && s != "."
        && s != ".."
}

impl ExperimentConfig {
    pub fn new(annotations: impl Into<PathBuf>, output_root: impl Into<PathBuf>) -> Self {
        ExperimentConfig {
            annotations: annotations.into(),
            dataset_types: DatasetType::ALL.iter().map(|t| t.name().to_string()).collect(),
            seeds: default_seeds(),
            backends: vec![BackendConfig::baseline()],
            thresholds: RelationThresholds::default(),
            exclusion_policy: ExclusionPolicy::default(),
            tally_mode: TallyMode::default(),
            split_ratio: default_split_ratio(),
            augmentation: AugmentationParams::default(),
            tile_storage: TileStorage::default(),
            parallelism: None,
            external_sets: Vec::new(),
            output_root: output_root.into(),
        }
    }

    /// Reads a JSON config; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut config: ExperimentConfig = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut config.annotations);
        resolve(&mut config.output_root);
        for b in &mut config.backends {
            if let BackendKind::Exec(p) = &mut b.backend {
                // bare program names are looked up on PATH
                if p.components().count() > 1 {
                    resolve(p);
                }
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn dataset_kinds(&self) -> Result<Vec<DatasetType>> {
        self.dataset_types.iter().map(|t| t.parse()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.backends.is_empty() {
            return Err(Error::Validation("experiment needs at least one backend".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Validation("experiment needs at least one seed".into()));
        }
        if self.seeds.iter().collect::<HashSet<_>>().len() != self.seeds.len() {
            return Err(Error::Validation("seeds must be distinct".into()));
        }
        let kinds = self.dataset_kinds()?;
        if kinds.is_empty() {
            return Err(Error::Validation("experiment needs at least one dataset type".into()));
        }
        if kinds.iter().collect::<HashSet<_>>().len() != kinds.len() {
            return Err(Error::Validation("dataset types must be distinct".into()));
        }
        let mut models = HashSet::new();
        for b in &self.backends {
            if !is_safe_name(&b.model_id) {
                return Err(Error::Validation(format!("model id {:?} is not a plain name", b.model_id)));
            }
            if !models.insert(b.model_id.as_str()) {
                return Err(Error::Validation(format!("duplicate model id {}", b.model_id)));
            }
            if b.backend == BackendKind::Baseline && b.model_id != BASELINE_MODEL_ID {
                return Err(Error::Validation(format!(
                    "the baseline backend runs as {BASELINE_MODEL_ID}, not {}",
                    b.model_id
                )));
            }
            b.training_config().validate()?;
        }
        let mut sets = HashSet::new();
        for s in &self.external_sets {
            if !is_safe_name(&s.set_id) {
                return Err(Error::Validation(format!("set id {:?} is not a plain name", s.set_id)));
            }
            if !sets.insert(s.set_id.as_str()) {
                return Err(Error::Validation(format!("duplicate external set {}", s.set_id)));
            }
            if s.regions.is_empty() {
                return Err(Error::Validation(format!("external set {} lists no regions", s.set_id)));
            }
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::Validation(format!(
                "split ratio {} must lie in (0, 1)",
                self.split_ratio
            )));
        }
        if self.parallelism == Some(0) {
            return Err(Error::Validation("parallelism must be at least 1".into()));
        }
        let t = &self.thresholds;
        if !(t.near_zero_fraction >= 0.0
            && t.much_greater_factor > 0.0
            && t.comparable_low > 0.0
            && t.comparable_low <= t.comparable_high)
        {
            return Err(Error::Validation("relation thresholds are inconsistent".into()));
        }
        self.augmentation.validate()
    }
}

/// A file under the output root and the sha256 of its bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRef {
    /// Relative to the output root, `/`-separated.
    pub path: String,
    pub sha256: String,
}

impl ArtifactRef {
    fn record(root: &Path, path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let rel = path.strip_prefix(root).unwrap_or(path);
        let rel = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        Ok(ArtifactRef {
            path: rel,
            sha256: sha256_hex(&bytes),
        })
    }

    pub fn resolve(&self, root: &Path) -> PathBuf {
        root.join(&self.path)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvergenceNote {
    Converged,
    NotConverged,
    /// Fewer epochs than the check needs; the run is kept.
    Unassessed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub dataset_type: String,
    pub seed: u64,
    pub scheme_id: String,
    pub built: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tile_size: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts: Option<ClassCounts>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<ArtifactRef>,
    #[serde(default)]
    pub external: BTreeMap<String, ArtifactRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub run_id: String,
    pub model_id: String,
    pub dataset_type: String,
    pub seed: u64,
    pub n_classes: u32,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convergence: Option<ConvergenceNote>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    /// `run_manifest`, `predictions`, `loss_curve`, `confusion_csv`,
    /// `confusion_json`, `external/<set>` and `scores/<set>`.
    pub artifacts: BTreeMap<String, ArtifactRef>,
    #[serde(default)]
    pub verdicts: BTreeMap<String, RunVerdict>,
}

impl RunEntry {
    /// Contributes to summed matrices and votes.
    pub fn counts(&self) -> bool {
        self.status == RunStatus::Completed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisEntry {
    pub model_id: String,
    pub scheme: u32,
    pub runs: Vec<String>,
    pub matrix_csv: ArtifactRef,
    pub matrix_json: ArtifactRef,
    pub similarity_json: ArtifactRef,
    pub report: SimilarityReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteEntry {
    pub set_id: String,
    pub verdict_file: ArtifactRef,
    pub tally: VoteTally,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// Some runs failed.
    PartialFailure,
    /// Every run failed.
    TotalFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentLedger {
    pub config: ExperimentConfig,
    pub datasets: Vec<DatasetEntry>,
    pub runs: Vec<RunEntry>,
    pub analyses: Vec<AnalysisEntry>,
    pub votes: Vec<VoteEntry>,
}

impl ExperimentLedger {
    pub fn read(path: &Path) -> Result<Self> {
        let path = if path.is_dir() { path.join(LEDGER_FILE) } else { path.to_path_buf() };
        read_json(&path)
    }

    pub fn outcome(&self) -> Outcome {
        let failed = self.runs.iter().filter(|r| r.status == RunStatus::Failed).count();
        match failed {
            0 => Outcome::Success,
            n if n == self.runs.len() => Outcome::TotalFailure,
            _ => Outcome::PartialFailure,
        }
    }

    pub fn run(&self, run_id: &str) -> Option<&RunEntry> {
        self.runs.iter().find(|r| r.run_id == run_id)
    }

    pub fn artifacts(&self) -> impl Iterator<Item = &ArtifactRef> {
        let datasets = self
            .datasets
            .iter()
            .flat_map(|d| d.manifest.iter().chain(d.external.values()));
        let runs = self.runs.iter().flat_map(|r| r.artifacts.values());
        let analyses = self
            .analyses
            .iter()
            .flat_map(|a| [&a.matrix_csv, &a.matrix_json, &a.similarity_json]);
        let votes = self.votes.iter().map(|v| &v.verdict_file);
        datasets.chain(runs).chain(analyses).chain(votes)
    }

    /// Every referenced artifact exists under `root` with its recorded digest.
    pub fn verify_artifacts(&self, root: &Path) -> Result<()> {
        for a in self.artifacts() {
            let path = a.resolve(root);
            let bytes = fs::read(&path).map_err(|_| Error::MissingArtifact(path.clone()))?;
            if sha256_hex(&bytes) != a.sha256 {
                return Err(Error::Validation(format!("{} changed since the ledger was written", a.path)));
            }
        }
        Ok(())
    }
}

/// Appends one JSON object per event; the only writer of `events.jsonl`.
struct EventLog {
    file: fs::File,
    path: PathBuf,
    seq: u64,
}

impl EventLog {
    fn create(path: PathBuf) -> Result<Self> {
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(EventLog { file, path, seq: 0 })
    }

    fn append(&mut self, kind: &str, subject: &str, status: &str, detail: Option<&str>) -> Result<()> {
        let event = serde_json::json!({
            "seq": self.seq,
            "kind": kind,
            "subject": subject,
            "status": status,
            "detail": detail,
        });
        self.seq += 1;
        writeln!(self.file, "{event}").map_err(|e| Error::io(&self.path, e))
    }
}

/// Runs the whole grid described by `config`.
///
/// Config, annotation and external-region problems are returned as errors
/// before anything runs. Failures of individual dataset builds or runs are
/// recorded in the ledger and the remaining runs continue.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentLedger> {
    config.validate()?;
    let annotations = load_annotations(&config.annotations)?;
    let kinds = config.dataset_kinds()?;
    for k in &kinds {
        annotations.scheme_with_classes(k.n_classes())?;
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = config.parallelism {
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::Validation(format!("cannot start worker pool: {e}")))?;
    pool.install(|| run_grid(config, &annotations, &kinds))
}

struct Inputs {
    schemes: BTreeMap<u32, ClassScheme>,
    pieces: BTreeMap<u32, Vec<PieceImage>>,
    external: Vec<(String, Vec<PieceImage>)>,
}

fn collect_inputs(
    config: &ExperimentConfig,
    annotations: &AnnotationSet,
    kinds: &[DatasetType],
) -> Result<Inputs> {
    let by_id: HashMap<&str, _> = annotations
        .regions()
        .iter()
        .map(|r| (r.piece_id.as_str(), r))
        .collect();
    let mut held_out = HashSet::new();
    for set in &config.external_sets {
        for id in &set.regions {
            if !by_id.contains_key(id.as_str()) {
                return Err(Error::Validation(format!(
                    "external set {} names unknown region {id}",
                    set.set_id
                )));
            }
            held_out.insert(id.clone());
        }
    }
    let sources = annotations.load_sources()?;
    let external = config
        .external_sets
        .iter()
        .map(|set| {
            let pieces = set
                .regions
                .par_iter()
                .map(|id| {
                    let r = by_id[id.as_str()];
                    extract_piece(&sources[&r.source_id], r)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((set.set_id.clone(), pieces))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut schemes = BTreeMap::new();
    let mut pieces = BTreeMap::new();
    for k in kinds {
        let n = k.n_classes();
        if schemes.contains_key(&n) {
            continue;
        }
        let scheme = annotations.scheme_with_classes(n)?.clone();
        let extracted = annotations
            .extract_pieces(&sources, |r| r.scheme_id == scheme.id && !held_out.contains(&r.piece_id))?;
        schemes.insert(n, scheme);
        pieces.insert(n, extracted);
    }
    Ok(Inputs {
        schemes,
        pieces,
        external,
    })
}

struct RunOutcome {
    entry: RunEntry,
    matrix: Option<ConfusionMatrix>,
}

struct DatasetOutcome {
    entry: DatasetEntry,
    runs: Vec<RunOutcome>,
}

fn run_grid(
    config: &ExperimentConfig,
    annotations: &AnnotationSet,
    kinds: &[DatasetType],
) -> Result<ExperimentLedger> {
    let root = &config.output_root;
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let inputs = collect_inputs(config, annotations, kinds)?;
    let mut events = EventLog::create(root.join(EVENTS_FILE))?;

    let cells: Vec<(DatasetType, u64)> = kinds
        .iter()
        .flat_map(|&k| config.seeds.iter().map(move |&s| (k, s)))
        .collect();
    let outcomes: Vec<DatasetOutcome> = cells
        .par_iter()
        .map(|&(kind, seed)| process_dataset(config, &inputs, kind, seed))
        .collect();

    let mut datasets = Vec::new();
    let mut runs = Vec::new();
    for o in outcomes {
        let name = format!("{}_{}", o.entry.dataset_type, o.entry.seed);
        events.append(
            "dataset",
            &name,
            if o.entry.built { "built" } else { "failed" },
            o.entry.error.as_deref(),
        )?;
        for r in &o.runs {
            events.append("run", &r.entry.run_id, &r.entry.status.to_string(), r.entry.reason.as_deref())?;
        }
        datasets.push(o.entry);
        runs.extend(o.runs);
    }

    let analyses = analyze_runs(config, root, &runs)?;
    for a in &analyses {
        let holds = a.report.relations.iter().filter(|c| c.holds).count();
        let detail = format!("{holds}/{} relations hold", a.report.relations.len());
        events.append("analysis", &format!("{}_{}class", a.model_id, a.scheme), "done", Some(&detail))?;
    }

    let run_entries: Vec<RunEntry> = runs.into_iter().map(|r| r.entry).collect();
    let mut votes = Vec::new();
    for set in &config.external_sets {
        let verdicts: Vec<RunVerdict> = run_entries
            .iter()
            .filter(|r| r.counts())
            .filter_map(|r| r.verdicts.get(&set.set_id).cloned())
            .collect();
        let file = VerdictFile::new(&set.set_id, verdicts, config.tally_mode);
        let path = root.join("votes").join(format!("{}.json", set.set_id));
        write_json(&path, &file)?;
        events.append("vote", &set.set_id, "done", Some(&file.final_verdict.to_string()))?;
        votes.push(VoteEntry {
            set_id: set.set_id.clone(),
            verdict_file: ArtifactRef::record(root, &path)?,
            tally: VoteTally {
                mode: file.tally_mode,
                step1: file.step1,
                final_verdict: file.final_verdict,
            },
        });
    }

    let ledger = ExperimentLedger {
        config: config.clone(),
        datasets,
        runs: run_entries,
        analyses,
        votes,
    };
    write_json(&root.join(LEDGER_FILE), &ledger)?;
    events.append("ledger", LEDGER_FILE, "written", None)?;
    Ok(ledger)
}

fn process_dataset(
    config: &ExperimentConfig,
    inputs: &Inputs,
    kind: DatasetType,
    seed: u64,
) -> DatasetOutcome {
    let n = kind.n_classes();
    let scheme = &inputs.schemes[&n];
    let root = &config.output_root;
    let dir = root.join("datasets").join(format!("{}_{seed}", kind.name()));
    let mut entry = DatasetEntry {
        dataset_type: kind.name().to_string(),
        seed,
        scheme_id: scheme.id.clone(),
        built: false,
        error: None,
        tile_size: None,
        counts: None,
        manifest: None,
        external: BTreeMap::new(),
    };
    let (dataset, manifest, external) = match build_into(config, inputs, kind, seed, &dir) {
        Ok(b) => b,
        Err(e) => {
            log::warn!("dataset {} seed {seed} failed: {e}", kind.name());
            let reason = format!("dataset build failed: {e}");
            entry.error = Some(e.to_string());
            let runs = config
                .backends
                .iter()
                .map(|b| failed_before_start(root, b, kind, seed, &reason))
                .collect();
            return DatasetOutcome { entry, runs };
        }
    };
    let recorded = (|| -> Result<()> {
        entry.manifest = Some(ArtifactRef::record(root, &manifest)?);
        for (set, path) in &external {
            entry.external.insert(set.set_id.clone(), ArtifactRef::record(root, path)?);
        }
        Ok(())
    })();
    if let Err(e) = recorded {
        entry.error = Some(e.to_string());
        let reason = format!("dataset build failed: {e}");
        let runs = config
            .backends
            .iter()
            .map(|b| failed_before_start(root, b, kind, seed, &reason))
            .collect();
        return DatasetOutcome { entry, runs };
    }
    entry.built = true;
    entry.tile_size = Some(dataset.tile_size);
    entry.counts = Some(dataset.counts.clone());
    log::info!(
        "built {} seed {seed}: {} train / {} test tiles of {}px",
        kind.name(),
        dataset.train.len(),
        dataset.test.len(),
        dataset.tile_size
    );
    let ctx = RunContext {
        config,
        scheme,
        dataset: &dataset,
        dataset_manifest: &manifest,
        external: &external,
    };
    let runs = config.backends.par_iter().map(|b| ctx.execute(b)).collect();
    DatasetOutcome { entry, runs }
}

type Built = (TileDataset, PathBuf, Vec<(ExternalTileSet, PathBuf)>);

fn build_into(config: &ExperimentConfig, inputs: &Inputs, kind: DatasetType, seed: u64, dir: &Path) -> Result<Built> {
    let scheme = &inputs.schemes[&kind.n_classes()];
    let mut spec = DatasetSpec::for_type(kind, &scheme.id, seed).with_augmentation(config.augmentation.clone());
    spec.split_ratio = config.split_ratio;
    let dataset = build_dataset(inputs.pieces[&kind.n_classes()].clone(), &spec)?;
    let manifest = write_dataset(&dataset, dir, config.tile_storage)?;
    let mut external = Vec::new();
    for (set_id, pieces) in &inputs.external {
        let set = ExternalTileSet::build(set_id, pieces, dataset.tile_size, spec.stride_px)?;
        let path = set.write(&dir.join("external").join(set_id), config.tile_storage)?;
        external.push((set, path));
    }
    Ok((dataset, manifest, external))
}

/// A dataset written by [`build_dataset_dir`].
#[derive(Debug, Clone)]
pub struct BuiltDataset {
    pub dataset: TileDataset,
    pub manifest: PathBuf,
    /// External set id and manifest path, in config order.
    pub external: Vec<(String, PathBuf)>,
}

/// Builds one dataset of `kind` and `seed` from the annotations, split,
/// augmentation, storage and external sets of `config`, writing it to `dir`
/// with external sets under `dir/external/<set_id>`.
pub fn build_dataset_dir(config: &ExperimentConfig, kind: DatasetType, seed: u64, dir: &Path) -> Result<BuiltDataset> {
    let annotations = load_annotations(&config.annotations)?;
    let inputs = collect_inputs(config, &annotations, &[kind])?;
    let (dataset, manifest, external) = build_into(config, &inputs, kind, seed, dir)?;
    Ok(BuiltDataset {
        dataset,
        manifest,
        external: external.into_iter().map(|(s, p)| (s.set_id, p)).collect(),
    })
}

fn failed_before_start(
    root: &Path,
    backend: &BackendConfig,
    kind: DatasetType,
    seed: u64,
    reason: &str,
) -> RunOutcome {
    let mut manifest = RunManifest::new(&backend.model_id, kind.name(), seed, backend.training_config());
    manifest.fail(reason);
    let path = root.join("runs").join(manifest.run_id()).join(RUN_MANIFEST_FILE);
    let mut artifacts = BTreeMap::new();
    if write_json(&path, &manifest).is_ok() {
        if let Ok(a) = ArtifactRef::record(root, &path) {
            artifacts.insert("run_manifest".to_string(), a);
        }
    }
    RunOutcome {
        entry: RunEntry {
            run_id: manifest.run_id(),
            model_id: manifest.model_id.clone(),
            dataset_type: manifest.dataset_type.clone(),
            seed,
            n_classes: kind.n_classes(),
            status: RunStatus::Failed,
            reason: Some(reason.to_string()),
            convergence: None,
            accuracy: None,
            artifacts,
            verdicts: BTreeMap::new(),
        },
        matrix: None,
    }
}

struct RunContext<'a> {
    config: &'a ExperimentConfig,
    scheme: &'a ClassScheme,
    dataset: &'a TileDataset,
    dataset_manifest: &'a Path,
    external: &'a [(ExternalTileSet, PathBuf)],
}

struct RunOutputs {
    records: Vec<PredictionRecord>,
    curve: LossCurve,
    external: Vec<Vec<PredictionRecord>>,
}

impl RunContext<'_> {
    fn execute(&self, backend: &BackendConfig) -> RunOutcome {
        let root = &self.config.output_root;
        let spec = &self.dataset.spec;
        let mut manifest = RunManifest::new(
            &backend.model_id,
            &spec.dataset_type,
            spec.seed,
            backend.training_config(),
        );
        let run_dir = root.join("runs").join(manifest.run_id());
        let mut entry = RunEntry {
            run_id: manifest.run_id(),
            model_id: manifest.model_id.clone(),
            dataset_type: manifest.dataset_type.clone(),
            seed: manifest.seed,
            n_classes: spec.n_classes,
            status: RunStatus::Pending,
            reason: None,
            convergence: None,
            accuracy: None,
            artifacts: BTreeMap::new(),
            verdicts: BTreeMap::new(),
        };
        let mut matrix = None;
        let result = self
            .produce(backend, &mut manifest, &run_dir)
            .and_then(|out| self.digest_run(out, &mut manifest, &run_dir, &mut entry, &mut matrix));
        if let Err(e) = result {
            log::warn!("run {} failed: {e}", entry.run_id);
            manifest.fail(e.to_string());
            matrix = None;
            entry.verdicts.clear();
            entry.accuracy = None;
        }
        entry.status = manifest.status;
        entry.reason = manifest.exclusion_reason.clone();
        let manifest_path = run_dir.join(RUN_MANIFEST_FILE);
        let recorded = write_json(&manifest_path, &manifest)
            .and_then(|_| ArtifactRef::record(root, &manifest_path));
        match recorded {
            Ok(a) => {
                entry.artifacts.insert("run_manifest".into(), a);
            }
            Err(e) => {
                entry.status = RunStatus::Failed;
                entry.reason = Some(e.to_string());
                matrix = None;
            }
        }
        RunOutcome { entry, matrix }
    }

    /// Produces predictions, loss curve and external predictions on disk.
    fn produce(&self, backend: &BackendConfig, manifest: &mut RunManifest, run_dir: &Path) -> Result<RunOutputs> {
        let manifest_path = run_dir.join(RUN_MANIFEST_FILE);
        write_json(&manifest_path, manifest)?;
        match &backend.backend {
            BackendKind::Baseline => {
                let (records, curve) = run_baseline(self.dataset, manifest)?;
                let model = CentroidModel::fit(self.dataset)?;
                let external = self
                    .external
                    .iter()
                    .map(|(set, _)| {
                        set.tiles
                            .par_iter()
                            .map(|t| model.predict(&t.sample_id, None, &t.pixels))
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<Vec<_>>>()?;
                write_predictions(&run_dir.join(PREDICTIONS_FILE), &records)?;
                write_json(&run_dir.join(LOSS_CURVE_FILE), &curve)?;
                for ((set, _), recs) in self.external.iter().zip(&external) {
                    write_predictions(&external_predictions_path(run_dir, &set.set_id), recs)?;
                }
                Ok(RunOutputs {
                    records,
                    curve,
                    external,
                })
            }
            BackendKind::Exec(program) => {
                let refs: Vec<ExternalSetRef> = self
                    .external
                    .iter()
                    .map(|(set, path)| ExternalSetRef {
                        set_id: set.set_id.clone(),
                        manifest: absolute(path),
                    })
                    .collect();
                *manifest = invoke_external_backend(
                    program,
                    &absolute(self.dataset_manifest),
                    &absolute(&manifest_path),
                    &absolute(run_dir),
                    &refs,
                )?;
                let records = read_predictions(&run_dir.join(PREDICTIONS_FILE))?;
                let curve = read_json(&run_dir.join(LOSS_CURVE_FILE))?;
                let external = self
                    .external
                    .iter()
                    .map(|(set, _)| read_predictions(&external_predictions_path(run_dir, &set.set_id)))
                    .collect::<Result<Vec<_>>>()?;
                Ok(RunOutputs {
                    records,
                    curve,
                    external,
                })
            }
        }
    }

    /// Convergence, confusion matrix and external verdicts of one run.
    fn digest_run(
        &self,
        out: RunOutputs,
        manifest: &mut RunManifest,
        run_dir: &Path,
        entry: &mut RunEntry,
        matrix: &mut Option<ConfusionMatrix>,
    ) -> Result<()> {
        let root = &self.config.output_root;
        let n = self.dataset.spec.n_classes;
        entry.convergence = Some(settle_run(manifest, &out.curve, self.config.exclusion_policy)?);

        let m = confusion_matrix(&out.records, n)?.with_provenance(manifest.run_id());
        let csv_path = run_dir.join("confusion.csv");
        let json_path = run_dir.join("confusion.json");
        write_text(&csv_path, &m.to_csv())?;
        write_json(&json_path, &m)?;
        entry.accuracy = Some(accuracy(&out.records));

        for (name, file) in [
            ("predictions", PREDICTIONS_FILE),
            ("loss_curve", LOSS_CURVE_FILE),
            ("confusion_csv", "confusion.csv"),
            ("confusion_json", "confusion.json"),
        ] {
            entry.artifacts.insert(name.into(), ArtifactRef::record(root, &run_dir.join(file))?);
        }

        for ((set, _), records) in self.external.iter().zip(&out.external) {
            let scores = score_external(set, records, self.scheme)?;
            let scores_path = run_dir.join("external").join(format!("{}_scores.csv", set.set_id));
            write_text(&scores_path, &scores_csv(&scores, n))?;
            let authors: Vec<_> = scores.iter().map(|s| s.author).collect();
            entry.verdicts.insert(set.set_id.clone(), run_verdict(manifest, &authors)?);
            entry.artifacts.insert(
                format!("external/{}", set.set_id),
                ArtifactRef::record(root, &external_predictions_path(run_dir, &set.set_id))?,
            );
            entry
                .artifacts
                .insert(format!("scores/{}", set.set_id), ArtifactRef::record(root, &scores_path)?);
        }
        if manifest.status == RunStatus::Completed {
            *matrix = Some(m);
        }
        Ok(())
    }
}

/// Marks a run whose outputs validated as completed, or as excluded when
/// its loss curve fails the convergence check under `policy`.
pub fn settle_run(manifest: &mut RunManifest, curve: &LossCurve, policy: ExclusionPolicy) -> Result<ConvergenceNote> {
    let note = match assess_convergence(curve) {
        Ok(Convergence::Converged) => ConvergenceNote::Converged,
        Ok(Convergence::NotConverged) => ConvergenceNote::NotConverged,
        Err(Error::CurveTooShort(_)) => ConvergenceNote::Unassessed,
        Err(e) => return Err(e),
    };
    manifest.status = RunStatus::Completed;
    manifest.exclusion_reason = None;
    if note == ConvergenceNote::NotConverged && policy == ExclusionPolicy::Exclude {
        manifest.exclude(format!("loss curve did not converge over {} epochs", curve.epochs()));
    }
    Ok(note)
}

/// `<run_dir>/external/<set_id>.jsonl`
pub fn external_predictions_path(run_dir: &Path, set_id: &str) -> PathBuf {
    run_dir.join("external").join(format!("{set_id}.jsonl"))
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

/// Writes `text`, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Sums the matrices of completed runs per (model, scheme) and checks the
/// default relations on each sum.
fn analyze_runs(config: &ExperimentConfig, root: &Path, runs: &[RunOutcome]) -> Result<Vec<AnalysisEntry>> {
    let mut groups: BTreeMap<(usize, u32), Vec<&RunOutcome>> = BTreeMap::new();
    let order: HashMap<&str, usize> = config
        .backends
        .iter()
        .enumerate()
        .map(|(i, b)| (b.model_id.as_str(), i))
        .collect();
    for r in runs {
        if r.matrix.is_some() {
            groups
                .entry((order[r.entry.model_id.as_str()], r.entry.n_classes))
                .or_default()
                .push(r);
        }
    }
    groups
        .into_iter()
        .map(|((model_idx, scheme), members)| {
            let model_id = &config.backends[model_idx].model_id;
            let matrices: Vec<ConfusionMatrix> =
                members.iter().filter_map(|r| r.matrix.clone()).collect();
            let summed = sum_matrices(&matrices)?;
            let report = SimilarityReport::build(
                model_id.clone(),
                &summed,
                &default_relations(scheme),
                &config.thresholds,
            )?;
            let dir = root.join("analysis").join(format!("{model_id}_{scheme}class"));
            let csv = dir.join("summed.csv");
            let json = dir.join("summed.json");
            let sim = dir.join("similarity.json");
            write_text(&csv, &summed.to_csv())?;
            write_json(&json, &summed)?;
            write_json(&sim, &report)?;
            Ok(AnalysisEntry {
                model_id: model_id.clone(),
                scheme,
                runs: members.iter().map(|r| r.entry.run_id.clone()).collect(),
                matrix_csv: ArtifactRef::record(root, &csv)?,
                matrix_json: ArtifactRef::record(root, &json)?,
                similarity_json: ArtifactRef::record(root, &sim)?,
                report,
            })
        })
        .collect()
}
