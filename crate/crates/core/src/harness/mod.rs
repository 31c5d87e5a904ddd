//! The backend protocol: run manifests, prediction files and loss curves,
//! plus the built-in centroid baseline and the subprocess runner.

mod backend;
mod baseline;
mod convergence;
mod scoring;

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ClassId;
use crate::jsonio::write_jsonl;

pub use backend::{invoke_external_backend, BackendJob, ExternalSetRef, LOSS_CURVE_FILE, PREDICTIONS_FILE, RUN_MANIFEST_FILE};
pub use baseline::{run_baseline, CentroidModel, BASELINE_MODEL_ID, FEATURE_SIDE};
pub use convergence::{assess_convergence, Convergence};
pub use scoring::{argmax, softmax, top_class};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub epochs: u32,
    pub optimizer_name: String,
    pub learning_rate: f64,
    pub batch_size: u32,
    pub train_seed: u64,
    pub input_resize: u32,
}

impl TrainingConfig {
    /// Full fine-tuning preset: 50 epochs of Adam at 1e-4, batch 16, seed 1,
    /// inputs resized to 224 (299 for InceptionV3).
    pub fn fine_tune_preset(model_id: &str) -> Self {
        TrainingConfig {
            epochs: 50,
            optimizer_name: "adam".into(),
            learning_rate: 1e-4,
            batch_size: 16,
            train_seed: 1,
            input_resize: if model_id == "inceptionv3" { 299 } else { 224 },
        }
    }

    /// The centroid baseline trains in one pass over 16x16 features.
    pub fn baseline() -> Self {
        TrainingConfig {
            epochs: 1,
            optimizer_name: "none".into(),
            learning_rate: 1.0,
            batch_size: 1,
            train_seed: 1,
            input_resize: FEATURE_SIDE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Validation("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Validation("learning rate must be positive".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Validation("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Pending,
    Completed,
    Excluded,
    Failed,
}

impl fmt::Display for RunStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RunStatus::Pending => "pending",
            RunStatus::Completed => "completed",
            RunStatus::Excluded => "excluded",
            RunStatus::Failed => "failed",
        };
        f.write_str(s)
    }
}

/// One (model, dataset type, seed) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub model_id: String,
    pub dataset_type: String,
    pub seed: u64,
    pub training_config: TrainingConfig,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exclusion_reason: Option<String>,
}

impl RunManifest {
    pub fn new(
        model_id: impl Into<String>,
        dataset_type: impl Into<String>,
        seed: u64,
        training_config: TrainingConfig,
    ) -> Self {
        RunManifest {
            model_id: model_id.into(),
            dataset_type: dataset_type.into(),
            seed,
            training_config,
            status: RunStatus::Pending,
            exclusion_reason: None,
        }
    }

    pub fn run_id(&self) -> String {
        format!("{}_{}_{}", self.model_id, self.dataset_type, self.seed)
    }

    pub fn key(&self) -> (&str, &str, u64) {
        (&self.model_id, &self.dataset_type, self.seed)
    }

    pub fn exclude(&mut self, reason: impl Into<String>) {
        self.status = RunStatus::Excluded;
        self.exclusion_reason = Some(reason.into());
    }

    pub fn fail(&mut self, reason: impl Into<String>) {
        self.status = RunStatus::Failed;
        self.exclusion_reason = Some(reason.into());
    }

    pub fn validate(&self) -> Result<()> {
        self.training_config.validate()?;
        if self.status == RunStatus::Excluded && self.exclusion_reason.is_none() {
            return Err(Error::Validation(format!(
                "excluded run {} carries no reason",
                self.run_id()
            )));
        }
        Ok(())
    }
}

/// Per-epoch training loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LossCurve(Vec<f64>);

impl LossCurve {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("loss curve"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Schema(format!(
                "loss at epoch {} is {} (must be finite and non-negative)",
                i + 1,
                values[i]
            )));
        }
        Ok(LossCurve(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn epochs(&self) -> usize {
        self.0.len()
    }
}

impl TryFrom<Vec<f64>> for LossCurve {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        LossCurve::new(v)
    }
}

impl From<LossCurve> for Vec<f64> {
    fn from(c: LossCurve) -> Self {
        c.0
    }
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub sample_id: String,
    pub true_class: Option<ClassId>,
    pub raw_scores: Vec<f64>,
    pub predicted_class: ClassId,
}

impl PredictionRecord {
    /// Builds a record whose prediction is the argmax of `raw_scores`.
    pub fn from_scores(
        sample_id: impl Into<String>,
        true_class: Option<ClassId>,
        raw_scores: Vec<f64>,
    ) -> Result<Self> {
        let (predicted_class, _) = top_class(&raw_scores)?;
        Ok(PredictionRecord {
            sample_id: sample_id.into(),
            true_class,
            raw_scores,
            predicted_class,
        })
    }

    pub fn is_correct(&self) -> bool {
        self.true_class == Some(self.predicted_class)
    }
}

pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    write_jsonl(path, records)
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| {
                Error::Schema(format!("{} line {}: {e}", path.display(), i + 1))
            })
        })
        .collect()
}

/// Checks a predictions file against the samples it should cover: one record
/// per expected id, matching labels, `n_classes` finite scores, and
/// `predicted_class == argmax(raw_scores)`.
pub fn validate_predictions(
    records: &[PredictionRecord],
    expected: &[(String, Option<ClassId>)],
    n_classes: u32,
) -> Result<()> {
    let expected_map: HashMap<&str, Option<ClassId>> =
        expected.iter().map(|(id, c)| (id.as_str(), *c)).collect();
    let mut seen = HashMap::with_capacity(records.len());
    for r in records {
        if r.raw_scores.len() != n_classes as usize {
            return Err(Error::Schema(format!(
                "sample {}: {} raw scores, expected {n_classes}",
                r.sample_id,
                r.raw_scores.len()
            )));
        }
        let (top, _) = top_class(&r.raw_scores)
            .map_err(|e| Error::Schema(format!("sample {}: {e}", r.sample_id)))?;
        if top != r.predicted_class {
            return Err(Error::Schema(format!(
                "sample {}: predicted_class {} is not the argmax class {top}",
                r.sample_id, r.predicted_class
            )));
        }
        let Some(&label) = expected_map.get(r.sample_id.as_str()) else {
            return Err(Error::Schema(format!("unknown sample id {}", r.sample_id)));
        };
        if r.true_class != label {
            return Err(Error::Schema(format!(
                "sample {}: true_class {:?} does not match dataset label {:?}",
                r.sample_id, r.true_class, label
            )));
        }
        if seen.insert(r.sample_id.as_str(), ()).is_some() {
            return Err(Error::Schema(format!("duplicate sample id {}", r.sample_id)));
        }
    }
    if let Some((missing, _)) = expected.iter().find(|(id, _)| !seen.contains_key(id.as_str())) {
        return Err(Error::Schema(format!("missing prediction for sample {missing}")));
    }
    Ok(())
}

/// Fraction of labelled records predicted correctly.
pub fn accuracy(records: &[PredictionRecord]) -> f64 {
    let labelled: Vec<_> = records.iter().filter(|r| r.true_class.is_some()).collect();
    if labelled.is_empty() {
        return 0.0;
    }
    labelled.iter().filter(|r| r.is_correct()).count() as f64 / labelled.len() as f64
}
