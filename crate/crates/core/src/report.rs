//! Static report bundle for a finished experiment: markdown summary, CSV
//! tables, confusion heatmaps, learning curves and tile score heatmaps.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::experiment::{write_text, ArtifactRef, ExperimentLedger, RunEntry};
use crate::harness::{read_predictions, softmax, LossCurve, RunStatus};
use crate::jsonio::read_json;
use crate::similarity::ConfusionMatrix;
use crate::svg;
use crate::vote::VerdictFile;

pub const REPORT_FILE: &str = "report.md";

#[derive(Debug, Clone, PartialEq)]
pub struct ReportBundle {
    pub dir: PathBuf,
    /// Paths relative to `dir`, in write order.
    pub files: Vec<String>,
}

impl ReportBundle {
    fn write(&mut self, rel: &str, text: &str) -> Result<()> {
        write_text(&self.dir.join(rel), text)?;
        self.files.push(rel.to_string());
        Ok(())
    }

    pub fn heatmaps(&self) -> impl Iterator<Item = &String> {
        self.files.iter().filter(|f| f.starts_with("heatmap_"))
    }
}

fn artifact<'a>(run: &'a RunEntry, key: &str) -> Option<&'a ArtifactRef> {
    run.artifacts.get(key)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn fmt_accuracy(a: Option<f64>) -> String {
    a.map(|a| format!("{a:.4}")).unwrap_or_else(|| "-".into())
}

/// Renders the bundle into `out_dir`. Every artifact the ledger references
/// must still exist under `root` with its recorded digest.
pub fn render_report(ledger: &ExperimentLedger, root: &Path, out_dir: &Path) -> Result<ReportBundle> {
    ledger.verify_artifacts(root)?;
    let mut bundle = ReportBundle {
        dir: out_dir.to_path_buf(),
        files: Vec::new(),
    };
    let mut md = String::from("# Experiment report\n\n");
    let c = &ledger.config;
    writeln!(md, "- annotations: `{}`", c.annotations.display()).unwrap();
    writeln!(md, "- dataset types: {}", c.dataset_types.join(", ")).unwrap();
    let seeds: Vec<String> = c.seeds.iter().map(u64::to_string).collect();
    writeln!(md, "- seeds: {}", seeds.join(", ")).unwrap();
    let backends: Vec<String> = c.backends.iter().map(|b| format!("{} ({})", b.model_id, b.backend)).collect();
    writeln!(md, "- backends: {}", backends.join(", ")).unwrap();
    writeln!(md, "- exclusion policy: {:?}, tally mode: {:?}", c.exclusion_policy, c.tally_mode).unwrap();
    let completed = ledger.runs.iter().filter(|r| r.status == RunStatus::Completed).count();
    writeln!(md, "- runs: {} total, {completed} completed\n", ledger.runs.len()).unwrap();

    // runs
    let mut runs_csv = String::from("run_id,model_id,dataset_type,seed,n_classes,status,convergence,accuracy,reason\n");
    md.push_str("## Runs\n\n| run | status | convergence | test accuracy |\n|---|---|---|---|\n");
    for r in &ledger.runs {
        let conv = r
            .convergence
            .map(|c| serde_json::to_value(c).expect("enum serializes").as_str().unwrap_or("").to_string())
            .unwrap_or_else(|| "-".into());
        writeln!(
            runs_csv,
            "{},{},{},{},{},{},{},{},{}",
            r.run_id,
            r.model_id,
            r.dataset_type,
            r.seed,
            r.n_classes,
            r.status,
            conv,
            r.accuracy.map(|a| a.to_string()).unwrap_or_default(),
            csv_field(r.reason.as_deref().unwrap_or(""))
        )
        .unwrap();
        writeln!(md, "| {} | {} | {conv} | {} |", r.run_id, r.status, fmt_accuracy(r.accuracy)).unwrap();
    }
    bundle.write("runs.csv", &runs_csv)?;

    md.push_str("\n## Excluded runs\n\n");
    let excluded: Vec<&RunEntry> = ledger.runs.iter().filter(|r| r.status == RunStatus::Excluded).collect();
    if excluded.is_empty() {
        md.push_str("None.\n");
    }
    for r in excluded {
        writeln!(md, "- {}: {}", r.run_id, r.reason.as_deref().unwrap_or("no reason recorded")).unwrap();
    }
    let failed: Vec<&RunEntry> = ledger.runs.iter().filter(|r| r.status == RunStatus::Failed).collect();
    if !failed.is_empty() {
        md.push_str("\n## Failed runs\n\n");
        for r in failed {
            writeln!(md, "- {}: {}", r.run_id, r.reason.as_deref().unwrap_or("no reason recorded")).unwrap();
        }
    }

    // learning curves
    md.push_str("\n## Learning curves\n\n");
    for r in &ledger.runs {
        if let Some(a) = artifact(r, "loss_curve") {
            let curve: LossCurve = read_json(&a.resolve(root))?;
            let rel = format!("curves/{}.svg", r.run_id);
            bundle.write(&rel, &svg::line_chart(&r.run_id, curve.values(), "epoch", "loss"))?;
            writeln!(md, "- [{}]({rel}) ({} epochs)", r.run_id, curve.epochs()).unwrap();
        }
    }

    // summed matrices and similarity
    if !ledger.analyses.is_empty() {
        md.push_str("\n## Summed confusion matrices\n\n");
    }
    let mut sim_csv = String::from("model_id,scheme,pair,value\n");
    for a in &ledger.analyses {
        let m: ConfusionMatrix = read_json(&a.matrix_json.resolve(root))?;
        let labels: Vec<String> = (1..=m.n).map(|i| i.to_string()).collect();
        let values: Vec<Vec<f64>> = m.counts.iter().map(|r| r.iter().map(|&v| v as f64).collect()).collect();
        let name = format!("heatmap_{}_{}class.svg", a.model_id, a.scheme);
        let title = format!("{} {}-class, {} runs (rows: true, columns: predicted)", a.model_id, a.scheme, a.runs.len());
        bundle.write(&name, &svg::heatmap(&title, &labels, &labels, &values, |i, j| m.counts[i][j].to_string()))?;
        writeln!(md, "### {} / {}-class\n\n![{name}]({name})\n", a.model_id, a.scheme).unwrap();
        md.push_str("| pair | similarity |\n|---|---|\n");
        for (pair, v) in &a.report.pairs {
            writeln!(md, "| {pair} | {v} |").unwrap();
            writeln!(sim_csv, "{},{},{},{v}", a.model_id, a.scheme, csv_field(&pair.to_string())).unwrap();
        }
        writeln!(md, "\nOff-{} mass: {}\n", if a.scheme == 8 { "block" } else { "diagonal" }, a.report.off_mass).unwrap();
    }
    if !ledger.analyses.is_empty() {
        bundle.write("similarity.csv", &sim_csv)?;
    }
    let checks: Vec<_> = ledger
        .analyses
        .iter()
        .flat_map(|a| a.report.relations.iter().map(move |c| (a, c)))
        .collect();
    if !checks.is_empty() {
        md.push_str("## Similarity relations\n\n| model | scheme | relation | values | holds | branch |\n|---|---|---|---|---|---|\n");
        for (a, c) in checks {
            let values: Vec<String> = c.values.iter().map(u64::to_string).collect();
            let branch = c
                .branch
                .map(|b| serde_json::to_value(b).expect("enum serializes").as_str().unwrap_or("").to_string())
                .unwrap_or_else(|| "-".into());
            writeln!(
                md,
                "| {} | {} | `{}` | {} | {} | {branch} |",
                a.model_id,
                a.scheme,
                c.description,
                values.join(", "),
                if c.holds { "yes" } else { "no" }
            )
            .unwrap();
        }
        md.push('\n');
    }

    // attribution
    if !ledger.votes.is_empty() {
        md.push_str("## Attribution\n\n");
    }
    let mut tally_csv = String::from("set_id,model_id,author1,author2,ties,winner\n");
    for v in &ledger.votes {
        let file: VerdictFile = read_json(&v.verdict_file.resolve(root))?;
        if file.step1 != v.tally.step1 || file.final_verdict != v.tally.final_verdict {
            return Err(Error::Validation(format!(
                "verdict file for {} disagrees with the ledger",
                v.set_id
            )));
        }
        writeln!(md, "### {}\n\n| model | Author1 | Author2 | ties | step-1 winner |\n|---|---|---|---|---|", v.set_id).unwrap();
        for (model, t) in &file.step1 {
            writeln!(md, "| {model} | {} | {} | {} | {} |", t.author1, t.author2, t.ties, t.winner).unwrap();
            writeln!(tally_csv, "{},{model},{},{},{},{}", v.set_id, t.author1, t.author2, t.ties, t.winner).unwrap();
        }
        writeln!(tally_csv, "{},final,,,,{}", v.set_id, file.final_verdict).unwrap();
        writeln!(md, "\nFinal verdict: **{}** ({} runs, {:?} tally)\n", file.final_verdict, file.runs.len(), file.tally_mode).unwrap();
        md.push_str("Tile score heatmaps:\n\n");
        for r in ledger.runs.iter().filter(|r| r.counts()) {
            let Some(a) = artifact(r, &format!("external/{}", v.set_id)) else {
                continue;
            };
            let records = read_predictions(&a.resolve(root))?;
            let rows: Vec<String> = records.iter().map(|p| p.sample_id.clone()).collect();
            let probs = records
                .iter()
                .map(|p| softmax(&p.raw_scores))
                .collect::<Result<Vec<_>>>()?;
            let cols: Vec<String> = (1..=r.n_classes).map(|c| format!("class {c}")).collect();
            let rel = format!("scores/{}_{}.svg", r.run_id, v.set_id);
            let title = format!("{} on {}: softmax per tile", r.run_id, v.set_id);
            let svg = svg::heatmap(&title, &rows, &cols, &probs, |i, j| format!("{:.2}", probs[i][j]));
            bundle.write(&rel, &svg)?;
            writeln!(md, "- [{}]({rel})", r.run_id).unwrap();
        }
        md.push('\n');
    }
    if !ledger.votes.is_empty() {
        bundle.write("tallies.csv", &tally_csv)?;
    }

    bundle.write(REPORT_FILE, &md)?;
    Ok(bundle)
}
