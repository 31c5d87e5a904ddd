//! Single pipeline steps over on-disk artifacts: one run, the analysis of
//! a set of run directories, attribution of one external set and a vote
//! over verdict files.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::dataset::{read_dataset, DatasetType};
use crate::error::{Error, Result};
use crate::experiment::{external_predictions_path, settle_run, write_text, BackendKind, ExclusionPolicy};
use crate::geometry::ClassScheme;
use crate::harness::{
    invoke_external_backend, read_predictions, run_baseline, softmax, write_predictions, CentroidModel,
    ExternalSetRef, LossCurve, RunManifest, RunStatus, LOSS_CURVE_FILE, PREDICTIONS_FILE, RUN_MANIFEST_FILE,
};
use crate::jsonio::{read_json, write_json};
use crate::similarity::{confusion_matrix, default_relations, sum_matrices, ConfusionMatrix, RelationThresholds, SimilarityReport};
use crate::svg;
use crate::vote::{run_verdict, score_external, scores_csv, ExternalTileSet, TallyMode, VerdictFile};

/// Executes one run into `out` and returns its final manifest, which is
/// also written to `<out>/run_manifest.json`.
pub fn run_one(
    backend: &BackendKind,
    dataset: &Path,
    run_manifest: &Path,
    out: &Path,
    external: &[PathBuf],
    policy: ExclusionPolicy,
) -> Result<RunManifest> {
    let mut manifest: RunManifest = read_json(run_manifest)?;
    manifest.validate()?;
    let curve: LossCurve = match backend {
        BackendKind::Baseline => {
            let data = read_dataset(dataset)?;
            if data.spec.dataset_type != manifest.dataset_type || data.spec.seed != manifest.seed {
                return Err(Error::Validation(format!(
                    "run {} does not match dataset {} seed {}",
                    manifest.run_id(),
                    data.spec.dataset_type,
                    data.spec.seed
                )));
            }
            // read external sets before training so a bad path fails fast
            let sets = external.iter().map(|p| ExternalTileSet::read(p)).collect::<Result<Vec<_>>>()?;
            let (records, curve) = run_baseline(&data, &manifest)?;
            let model = CentroidModel::fit(&data)?;
            write_predictions(&out.join(PREDICTIONS_FILE), &records)?;
            write_json(&out.join(LOSS_CURVE_FILE), &curve)?;
            for set in sets {
                let recs = set
                    .tiles
                    .par_iter()
                    .map(|t| model.predict(&t.sample_id, None, &t.pixels))
                    .collect::<Result<Vec<_>>>()?;
                write_predictions(&external_predictions_path(out, &set.set_id), &recs)?;
            }
            curve
        }
        BackendKind::Exec(program) => {
            let refs = external
                .iter()
                .map(|p| {
                    let set = ExternalTileSet::read(p)?;
                    Ok(ExternalSetRef {
                        set_id: set.set_id,
                        manifest: p.clone(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
            manifest = invoke_external_backend(program, dataset, run_manifest, out, &refs)?;
            read_json(&out.join(LOSS_CURVE_FILE))?
        }
    };
    settle_run(&mut manifest, &curve, policy)?;
    write_json(&out.join(RUN_MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Run directories whose manifest says completed, in path order.
fn completed_runs(run_dirs: &[PathBuf]) -> Result<Vec<(PathBuf, RunManifest)>> {
    let mut dirs = run_dirs.to_vec();
    dirs.sort();
    dirs.dedup();
    let mut out = Vec::new();
    for dir in dirs {
        let manifest: RunManifest = read_json(&dir.join(RUN_MANIFEST_FILE))?;
        if manifest.status == RunStatus::Completed {
            out.push((dir, manifest));
        } else {
            log::info!("skipping {} run {}", manifest.status, manifest.run_id());
        }
    }
    Ok(out)
}

/// Sums the confusion matrices of completed runs per (model, scheme), checks
/// the default relations and writes `<out>/<model>_<n>class/`.
pub fn analyze(run_dirs: &[PathBuf], thresholds: &RelationThresholds, out: &Path) -> Result<Vec<SimilarityReport>> {
    let mut groups: BTreeMap<(String, u32), Vec<ConfusionMatrix>> = BTreeMap::new();
    for (dir, manifest) in completed_runs(run_dirs)? {
        let n = manifest.dataset_type.parse::<DatasetType>()?.n_classes();
        let records = read_predictions(&dir.join(PREDICTIONS_FILE))?;
        let m = confusion_matrix(&records, n)?.with_provenance(manifest.run_id());
        groups.entry((manifest.model_id.clone(), n)).or_default().push(m);
    }
    if groups.is_empty() {
        return Err(Error::Empty("no completed runs to analyze"));
    }
    groups
        .into_iter()
        .map(|((model_id, n), matrices)| {
            let summed = sum_matrices(&matrices)?;
            let report = SimilarityReport::build(&model_id, &summed, &default_relations(n), thresholds)?;
            let dir = out.join(format!("{model_id}_{n}class"));
            write_text(&dir.join("summed.csv"), &summed.to_csv())?;
            write_json(&dir.join("summed.json"), &summed)?;
            write_json(&dir.join("similarity.json"), &report)?;
            Ok(report)
        })
        .collect()
}

/// Scores the external set at `tiles` with every completed run under
/// `scheme`, writes per-run score tables and `<out>/verdict.json`.
pub fn attribute(
    tiles: &Path,
    run_dirs: &[PathBuf],
    scheme: &ClassScheme,
    mode: TallyMode,
    out: &Path,
) -> Result<VerdictFile> {
    let set = ExternalTileSet::read(tiles)?;
    let mut verdicts = Vec::new();
    for (dir, manifest) in completed_runs(run_dirs)? {
        let records = read_predictions(&external_predictions_path(&dir, &set.set_id))?;
        let scores = score_external(&set, &records, scheme)?;
        let run_id = manifest.run_id();
        write_text(&out.join("scores").join(format!("{run_id}.csv")), &scores_csv(&scores, scheme.n_classes))?;
        let rows: Vec<String> = scores.iter().map(|s| s.sample_id.clone()).collect();
        let cols: Vec<String> = (1..=scheme.n_classes).map(|c| format!("class {c}")).collect();
        let probs: Vec<Vec<f64>> = scores.iter().map(|s| s.probabilities.clone()).collect();
        let chart = svg::heatmap(&format!("{run_id} on {}", set.set_id), &rows, &cols, &probs, |i, j| {
            format!("{:.2}", probs[i][j])
        });
        write_text(&out.join("scores").join(format!("{run_id}.svg")), &chart)?;
        let authors: Vec<_> = scores.iter().map(|s| s.author).collect();
        verdicts.push(run_verdict(&manifest, &authors)?);
    }
    let file = VerdictFile::new(&set.set_id, verdicts, mode);
    write_json(&out.join("verdict.json"), &file)?;
    Ok(file)
}

/// Re-tallies the run verdicts of one or more verdict files for the same
/// external set, e.g. one file per class scheme.
pub fn vote(inputs: &[PathBuf], mode: TallyMode) -> Result<VerdictFile> {
    let mut set_id: Option<String> = None;
    let mut runs = Vec::new();
    let mut seen = HashSet::new();
    for path in inputs {
        let file: VerdictFile = read_json(path)?;
        match &set_id {
            Some(id) if *id != file.set_id => {
                return Err(Error::Validation(format!(
                    "{} is for set {}, expected {id}",
                    path.display(),
                    file.set_id
                )))
            }
            _ => set_id = Some(file.set_id.clone()),
        }
        for r in file.runs {
            if !seen.insert((r.model_id.clone(), r.dataset_type.clone(), r.seed)) {
                return Err(Error::Validation(format!(
                    "run {}_{}_{} appears twice",
                    r.model_id, r.dataset_type, r.seed
                )));
            }
            runs.push(r);
        }
    }
    let set_id = set_id.ok_or(Error::Empty("no verdict files"))?;
    Ok(VerdictFile::new(set_id, runs, mode))
}

/// Softmax rows of a predictions file, for ad-hoc heatmaps.
pub fn probability_rows(path: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    read_predictions(path)?
        .into_iter()
        .map(|r| Ok((r.sample_id, softmax(&r.raw_scores)?)))
        .collect()
}
