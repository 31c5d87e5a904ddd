use std::collections::BTreeSet;
use std::fs;
use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use scribe::dataset::DatasetType;
use scribe::experiment::{
    run_experiment, BackendConfig, ExperimentConfig, ExperimentLedger, Outcome, EVENTS_FILE, LEDGER_FILE,
};
use scribe::harness::RunStatus;
use scribe::report::{render_report, REPORT_FILE};
use scribe::synthetic::{write_fixture, SyntheticConfig, SyntheticFixture};
use scribe::vote::FinalVerdict;
use scribe::Error;

const SEEDS: [u64; 2] = [1033, 1931];
const TYPES: [DatasetType; 2] = [DatasetType::V01, DatasetType::V001];

struct Finished {
    _dir: tempfile::TempDir,
    fixture: SyntheticFixture,
    config: ExperimentConfig,
    ledger: ExperimentLedger,
}

/// One baseline experiment over 2 types x 2 seeds, shared by the tests.
fn finished() -> &'static Finished {
    static CELL: OnceLock<Finished> = OnceLock::new();
    CELL.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let fixture = write_fixture(&dir.path().join("fixture"), &SyntheticConfig::default()).unwrap();
        let config = fixture.experiment_config(dir.path().join("out"), &TYPES, &SEEDS);
        let ledger = run_experiment(&config).unwrap();
        Finished {
            _dir: dir,
            fixture,
            config,
            ledger,
        }
    })
}

#[test]
fn grid_yields_one_completed_run_per_cell_and_a_verdict_per_set() {
    let f = finished();
    let mut expected = BTreeSet::new();
    for t in TYPES {
        for s in SEEDS {
            expected.insert(format!("baseline-centroid_{}_{s}", t.name()));
        }
    }
    let got: BTreeSet<String> = f.ledger.runs.iter().map(|r| r.run_id.clone()).collect();
    assert_eq!(got, expected);
    assert!(f.ledger.runs.iter().all(|r| r.status == RunStatus::Completed));
    assert_eq!(f.ledger.datasets.len(), 4);
    assert!(f.ledger.datasets.iter().all(|d| d.built && d.external.len() == 2));
    assert_eq!(f.ledger.outcome(), Outcome::Success);
    assert_eq!(f.ledger.analyses.len(), 2);
    assert!(f.ledger.analyses.iter().all(|a| a.runs.len() == 2));
    assert_eq!(f.ledger.votes.len(), 2);
    for v in &f.ledger.votes {
        let expected = match f.fixture.expected[&v.set_id] {
            scribe::geometry::Author::Author1 => FinalVerdict::Author1,
            scribe::geometry::Author::Author2 => FinalVerdict::Author2,
        };
        assert_eq!(v.tally.final_verdict, expected, "{}", v.set_id);
    }
    f.ledger.verify_artifacts(&f.config.output_root).unwrap();
    let on_disk = ExperimentLedger::read(&f.config.output_root.join(LEDGER_FILE)).unwrap();
    assert_eq!(on_disk, f.ledger);
}

#[test]
fn rerun_rewrites_identical_ledger_and_events() {
    let f = finished();
    let root = &f.config.output_root;
    let ledger = fs::read(root.join(LEDGER_FILE)).unwrap();
    let events = fs::read(root.join(EVENTS_FILE)).unwrap();
    let mut again = f.config.clone();
    again.output_root = root.with_file_name("rerun");
    run_experiment(&again).unwrap();
    let ledger_b = fs::read_to_string(again.output_root.join(LEDGER_FILE)).unwrap();
    let as_first = String::from_utf8(ledger)
        .unwrap()
        .replace(&root.display().to_string(), &again.output_root.display().to_string());
    assert_eq!(as_first, ledger_b);
    assert_eq!(events, fs::read(again.output_root.join(EVENTS_FILE)).unwrap());
}

#[test]
fn zero_backends_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = ExperimentConfig::new(dir.path().join("a.json"), dir.path().join("out"));
    config.backends.clear();
    assert!(matches!(run_experiment(&config), Err(Error::Validation(_))));
    assert!(!dir.path().join("out").exists());
}

fn failing_backend(dir: &Path) -> PathBuf {
    let path = dir.join("broken.sh");
    fs::write(&path, "#!/bin/sh\necho no weights >&2\nexit 1\n").unwrap();
    fs::set_permissions(&path, fs::Permissions::from_mode(0o755)).unwrap();
    path
}

#[test]
fn failing_backend_makes_a_partial_failure() {
    let f = finished();
    let dir = tempfile::tempdir().unwrap();
    let mut config = f.fixture.experiment_config(dir.path().join("out"), &[DatasetType::V01], &[1033]);
    config.backends.push(BackendConfig::exec("vgg19", failing_backend(dir.path())));
    let ledger = run_experiment(&config).unwrap();
    assert_eq!(ledger.outcome(), Outcome::PartialFailure);
    let failed = ledger.run("vgg19_v01_1033").unwrap();
    assert_eq!(failed.status, RunStatus::Failed);
    assert!(failed.reason.as_deref().unwrap().contains("no weights"));
    // the failed run takes no part in analysis or votes
    assert!(ledger.analyses.iter().all(|a| a.model_id == "baseline-centroid"));
    assert!(ledger.votes.iter().all(|v| !v.tally.step1.contains_key("vgg19")));

    let bundle = render_report(&ledger, &config.output_root, &dir.path().join("report")).unwrap();
    let md = fs::read_to_string(bundle.dir.join(REPORT_FILE)).unwrap();
    assert!(md.contains("## Failed runs"));
}

#[test]
fn report_has_one_heatmap_per_model_and_scheme() {
    let f = finished();
    let out = tempfile::tempdir().unwrap();
    let bundle = render_report(&f.ledger, &f.config.output_root, out.path()).unwrap();
    let heatmaps: BTreeSet<&String> = bundle.heatmaps().collect();
    assert_eq!(heatmaps.len(), 2);
    assert!(heatmaps.contains(&"heatmap_baseline-centroid_4class.svg".to_string()));
    for file in &bundle.files {
        assert!(out.path().join(file).is_file(), "{file}");
    }
    let md = fs::read_to_string(out.path().join(REPORT_FILE)).unwrap();
    assert!(md.contains("## Similarity relations"));
    assert!(md.contains("## Excluded runs\n\nNone."));
    assert!(md.contains("Final verdict: **Author1**"));
}

#[test]
fn report_lists_excluded_runs_with_reason() {
    let f = finished();
    let mut ledger = f.ledger.clone();
    let run = &mut ledger.runs[0];
    run.status = RunStatus::Excluded;
    run.reason = Some("loss did not settle".into());
    let out = tempfile::tempdir().unwrap();
    render_report(&ledger, &f.config.output_root, out.path()).unwrap();
    let md = fs::read_to_string(out.path().join(REPORT_FILE)).unwrap();
    let section = md.split("## Excluded runs").nth(1).unwrap();
    assert!(section.contains(&format!("- {}: loss did not settle", ledger.runs[0].run_id)));
}

#[test]
fn report_without_labelled_analysis_omits_relations() {
    let f = finished();
    let mut ledger = f.ledger.clone();
    ledger.analyses.clear();
    let out = tempfile::tempdir().unwrap();
    let bundle = render_report(&ledger, &f.config.output_root, out.path()).unwrap();
    assert_eq!(bundle.heatmaps().count(), 0);
    let md = fs::read_to_string(out.path().join(REPORT_FILE)).unwrap();
    assert!(!md.contains("Similarity relations"));
    assert!(md.contains("## Attribution"));
}

#[test]
fn report_refuses_changed_artifacts() {
    let f = finished();
    let mut ledger = f.ledger.clone();
    let key = ledger.runs[0].artifacts.keys().next().unwrap().clone();
    ledger.runs[0].artifacts.get_mut(&key).unwrap().sha256 = "0".repeat(64);
    let out = tempfile::tempdir().unwrap();
    assert!(render_report(&ledger, &f.config.output_root, out.path()).is_err());
}
