//! Runs a conforming external backend as a subprocess and validates what it
//! writes back.
//!
//! The harness writes `job.json` into the output directory and launches
//! `<program> train --job <output>/job.json`. The backend must leave behind:
//!
//! - `predictions.jsonl`: one record per test tile of the dataset
//! - `loss_curve.json`: a JSON array with one loss per epoch
//! - `external/<set_id>.jsonl`: one unlabelled record per tile of each
//!   external set listed in the job

use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};

use crate::dataset::{read_sample_rows, Partition};
use crate::error::{Error, Result};
use crate::jsonio::{read_json, write_json};
use crate::vote::ExternalTileSet;

use super::{read_predictions, validate_predictions, LossCurve, RunManifest, RunStatus};

pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const LOSS_CURVE_FILE: &str = "loss_curve.json";
pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";
const JOB_FILE: &str = "job.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalSetRef {
    pub set_id: String,
    pub manifest: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendJob {
    pub dataset_manifest: PathBuf,
    pub run_manifest: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub external_sets: Vec<ExternalSetRef>,
}

/// Launches `program`, waits for it, validates its outputs and records the
/// outcome in `<output_dir>/run_manifest.json`: `completed` on success,
/// `failed` with the reason otherwise.
pub fn invoke_external_backend(
    program: &Path,
    dataset_manifest: &Path,
    run_manifest: &Path,
    output_dir: &Path,
    external_sets: &[ExternalSetRef],
) -> Result<RunManifest> {
    let mut manifest: RunManifest = read_json(run_manifest)?;
    manifest.validate()?;
    let job = BackendJob {
        dataset_manifest: dataset_manifest.to_path_buf(),
        run_manifest: run_manifest.to_path_buf(),
        output_dir: output_dir.to_path_buf(),
        external_sets: external_sets.to_vec(),
    };
    let outcome = launch(program, &job).and_then(|_| check_outputs(&job, &manifest));
    let out_manifest = output_dir.join(RUN_MANIFEST_FILE);
    match outcome {
        Ok(()) => {
            manifest.status = RunStatus::Completed;
            manifest.exclusion_reason = None;
            write_json(&out_manifest, &manifest)?;
            Ok(manifest)
        }
        Err(e) => {
            manifest.fail(e.to_string());
            write_json(&out_manifest, &manifest)?;
            Err(e)
        }
    }
}

fn launch(program: &Path, job: &BackendJob) -> Result<()> {
    let job_path = job.output_dir.join(JOB_FILE);
    write_json(&job_path, job)?;
    log::info!("launching backend {} for {}", program.display(), job_path.display());
    let output = Command::new(program)
        .arg("train")
        .arg("--job")
        .arg(&job_path)
        .output()
        .map_err(|e| Error::Backend(format!("cannot launch {}: {e}", program.display())))?;
    if !output.status.success() {
        let stderr = String::from_utf8_lossy(&output.stderr);
        return Err(Error::Backend(format!(
            "{} exited with {}: {}",
            program.display(),
            output.status,
            stderr.trim()
        )));
    }
    Ok(())
}

fn check_outputs(job: &BackendJob, manifest: &RunManifest) -> Result<()> {
    let (spec, rows) = read_sample_rows(&job.dataset_manifest)?;
    if spec.dataset_type != manifest.dataset_type || spec.seed != manifest.seed {
        return Err(Error::Validation(format!(
            "run {} does not match dataset {} seed {}",
            manifest.run_id(),
            spec.dataset_type,
            spec.seed
        )));
    }
    let expected: Vec<_> = rows
        .iter()
        .filter(|r| r.partition == Partition::Test)
        .map(|r| (r.sample_id.clone(), Some(r.true_class)))
        .collect();
    let predictions = read_output_predictions(&job.output_dir.join(PREDICTIONS_FILE))?;
    validate_predictions(&predictions, &expected, spec.n_classes)?;

    let curve_path = job.output_dir.join(LOSS_CURVE_FILE);
    if !curve_path.exists() {
        return Err(Error::Schema(format!("backend did not write {}", curve_path.display())));
    }
    let curve: LossCurve = read_json(&curve_path).map_err(as_schema)?;
    if curve.epochs() != manifest.training_config.epochs as usize {
        return Err(Error::Schema(format!(
            "loss curve has {} epochs, run manifest says {}",
            curve.epochs(),
            manifest.training_config.epochs
        )));
    }

    for set in &job.external_sets {
        let ids = ExternalTileSet::read_sample_ids(&set.manifest)?;
        let expected: Vec<_> = ids.into_iter().map(|id| (id, None)).collect();
        let path = job.output_dir.join("external").join(format!("{}.jsonl", set.set_id));
        let records = read_output_predictions(&path)?;
        validate_predictions(&records, &expected, spec.n_classes)?;
    }
    Ok(())
}

fn read_output_predictions(path: &Path) -> Result<Vec<crate::harness::PredictionRecord>> {
    if !path.exists() {
        return Err(Error::Schema(format!("backend did not write {}", path.display())));
    }
    read_predictions(path)
}

fn as_schema(e: Error) -> Error {
    match e {
        Error::Parse { path, message } => {
            Error::Schema(format!("{}: {message}", path.display()))
        }
        other => other,
    }
}
