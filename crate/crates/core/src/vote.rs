//! Author attribution of unlabelled regions: per-tile scoring, per-run
//! verdicts and the two-step majority vote (per model type, then across
//! model types).

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use image::GrayImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::store::{load_tile, manifest_path, TileWriter};
use crate::dataset::{tile, TileRef, TileStorage, DATASET_MANIFEST};
use crate::error::{Error, Result};
use crate::geometry::{Author, ClassId, ClassScheme, PieceImage};
use crate::harness::{argmax, softmax, PredictionRecord, RunManifest};
use crate::jsonio::{read_json, write_json};

#[derive(Debug, Clone, PartialEq)]
pub struct ExternalTile {
    pub sample_id: String,
    pub piece_id: String,
    pub offset_x: u32,
    pub offset_y: u32,
    pub pixels: GrayImage,
}

/// Unaugmented square tiles cut from regions of unknown authorship.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalTileSet {
    pub set_id: String,
    pub tile_size: u32,
    pub regions: Vec<String>,
    pub tiles: Vec<ExternalTile>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ExternalRow {
    sample_id: String,
    piece_id: String,
    offset_x: u32,
    offset_y: u32,
    tile: TileRef,
}

#[derive(Debug, Serialize, Deserialize)]
struct ExternalManifest {
    set_id: String,
    tile_size: u32,
    regions: Vec<String>,
    tiles: Vec<ExternalRow>,
}

impl ExternalTileSet {
    /// Tiles each piece directly, at the tile size and stride of the
    /// training dataset the scoring model saw.
    pub fn build(set_id: impl Into<String>, pieces: &[PieceImage], tile_size: u32, stride: u32) -> Result<Self> {
        let set_id = set_id.into();
        if pieces.is_empty() {
            return Err(Error::Empty("external set has no regions"));
        }
        let mut tiles = Vec::new();
        for piece in pieces {
            for t in tile(piece, tile_size, stride)? {
                tiles.push(ExternalTile {
                    sample_id: format!("{set_id}__{}__{}_{}", piece.piece_id, t.offset_x, t.offset_y),
                    piece_id: piece.piece_id.clone(),
                    offset_x: t.offset_x,
                    offset_y: t.offset_y,
                    pixels: t.pixels,
                });
            }
        }
        Ok(ExternalTileSet {
            set_id,
            tile_size,
            regions: pieces.iter().map(|p| p.piece_id.clone()).collect(),
            tiles,
        })
    }

    pub fn sample_ids(&self) -> Vec<String> {
        self.tiles.iter().map(|t| t.sample_id.clone()).collect()
    }

    /// Writes `<dir>/manifest.json` and returns its path.
    pub fn write(&self, dir: &Path, storage: TileStorage) -> Result<PathBuf> {
        let writer = TileWriter::new(dir, storage)?;
        let tiles = self
            .tiles
            .iter()
            .map(|t| {
                Ok(ExternalRow {
                    sample_id: t.sample_id.clone(),
                    piece_id: t.piece_id.clone(),
                    offset_x: t.offset_x,
                    offset_y: t.offset_y,
                    tile: writer.store(&t.pixels)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let manifest = ExternalManifest {
            set_id: self.set_id.clone(),
            tile_size: self.tile_size,
            regions: self.regions.clone(),
            tiles,
        };
        let path = dir.join(DATASET_MANIFEST);
        write_json(&path, &manifest)?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let path = manifest_path(path);
        let dir = path.parent().unwrap_or(Path::new("."));
        let m: ExternalManifest = read_json(&path)?;
        let tiles = m
            .tiles
            .into_par_iter()
            .map(|row| {
                let pixels = load_tile(&row.tile, dir)?;
                if pixels.dimensions() != (m.tile_size, m.tile_size) {
                    return Err(Error::Validation(format!(
                        "external tile {} is not {}x{}",
                        row.sample_id, m.tile_size, m.tile_size
                    )));
                }
                Ok(ExternalTile {
                    sample_id: row.sample_id,
                    piece_id: row.piece_id,
                    offset_x: row.offset_x,
                    offset_y: row.offset_y,
                    pixels,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ExternalTileSet {
            set_id: m.set_id,
            tile_size: m.tile_size,
            regions: m.regions,
            tiles,
        })
    }

    /// Sample ids only, without decoding tiles.
    pub fn read_sample_ids(path: &Path) -> Result<Vec<String>> {
        let m: ExternalManifest = read_json(&manifest_path(path))?;
        Ok(m.tiles.into_iter().map(|r| r.sample_id).collect())
    }
}

/// One row of the tile-by-class score table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileScore {
    pub sample_id: String,
    pub class: ClassId,
    pub author: Author,
    pub score: f64,
    pub probabilities: Vec<f64>,
}

/// Top class, its author and the full softmax row for every tile.
pub fn score_external(
    tiles: &ExternalTileSet,
    predictions: &[PredictionRecord],
    scheme: &ClassScheme,
) -> Result<Vec<TileScore>> {
    let by_id: BTreeMap<&str, &PredictionRecord> =
        predictions.iter().map(|r| (r.sample_id.as_str(), r)).collect();
    tiles
        .tiles
        .iter()
        .map(|t| {
            let r = by_id.get(t.sample_id.as_str()).ok_or_else(|| {
                Error::Validation(format!("no prediction for external tile {}", t.sample_id))
            })?;
            if r.raw_scores.len() != scheme.n_classes as usize {
                return Err(Error::Schema(format!(
                    "tile {}: {} scores under the {}-class scheme {}",
                    t.sample_id,
                    r.raw_scores.len(),
                    scheme.n_classes,
                    scheme.id
                )));
            }
            let probabilities = softmax(&r.raw_scores)?;
            let idx = argmax(&r.raw_scores).expect("non-empty");
            let class = idx as ClassId + 1;
            Ok(TileScore {
                sample_id: t.sample_id.clone(),
                class,
                author: scheme.author_of(class).expect("validated scheme covers its classes"),
                score: probabilities[idx],
                probabilities,
            })
        })
        .collect()
}

/// Tiles x classes softmax table.
pub fn scores_csv(scores: &[TileScore], n_classes: u32) -> String {
    let mut out = String::from("sample_id");
    for c in 1..=n_classes {
        write!(out, ",class_{c}").unwrap();
    }
    out.push_str(",top_class,author\n");
    for s in scores {
        out.push_str(&s.sample_id);
        for p in &s.probabilities {
            write!(out, ",{p}").unwrap();
        }
        writeln!(out, ",{},{}", s.class, s.author).unwrap();
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    Author1,
    Author2,
    Tie,
}

impl Verdict {
    fn from_counts(a1: usize, a2: usize) -> Self {
        match a1.cmp(&a2) {
            std::cmp::Ordering::Greater => Verdict::Author1,
            std::cmp::Ordering::Less => Verdict::Author2,
            std::cmp::Ordering::Equal => Verdict::Tie,
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Author1 => "Author1",
            Verdict::Author2 => "Author2",
            Verdict::Tie => "Tie",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FinalVerdict {
    Author1,
    Author2,
    Inconclusive,
}

impl fmt::Display for FinalVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FinalVerdict::Author1 => "Author1",
            FinalVerdict::Author2 => "Author2",
            FinalVerdict::Inconclusive => "Inconclusive",
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthorCounts {
    pub author1: usize,
    pub author2: usize,
}

/// Author-level majority of one run over its tiles.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunVerdict {
    pub model_id: String,
    pub dataset_type: String,
    pub seed: u64,
    pub counts: AuthorCounts,
    pub verdict: Verdict,
}

pub fn run_verdict(run: &RunManifest, authors: &[Author]) -> Result<RunVerdict> {
    if authors.is_empty() {
        return Err(Error::Empty("run verdict over zero tiles"));
    }
    let author1 = authors.iter().filter(|a| **a == Author::Author1).count();
    let counts = AuthorCounts {
        author1,
        author2: authors.len() - author1,
    };
    Ok(RunVerdict {
        model_id: run.model_id.clone(),
        dataset_type: run.dataset_type.clone(),
        seed: run.seed,
        counts,
        verdict: Verdict::from_counts(counts.author1, counts.author2),
    })
}

/// What a step-1 tally counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TallyMode {
    /// One vote per run verdict; tied runs are counted separately.
    #[default]
    PerRun,
    /// One vote per tile, pooled over all runs of the model.
    PerTile,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelTally {
    pub author1: usize,
    pub author2: usize,
    pub ties: usize,
    pub winner: Verdict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteTally {
    pub mode: TallyMode,
    pub step1: BTreeMap<String, ModelTally>,
    #[serde(rename = "final")]
    pub final_verdict: FinalVerdict,
}

/// Step 1 tallies per model id; step 2 takes the majority of the decided
/// step-1 winners. An even split at step 2 is reported as inconclusive.
pub fn majority_vote(verdicts: &[RunVerdict], mode: TallyMode) -> VoteTally {
    let mut step1: BTreeMap<String, ModelTally> = BTreeMap::new();
    for v in verdicts {
        let t = step1.entry(v.model_id.clone()).or_insert(ModelTally {
            author1: 0,
            author2: 0,
            ties: 0,
            winner: Verdict::Tie,
        });
        match mode {
            TallyMode::PerRun => match v.verdict {
                Verdict::Author1 => t.author1 += 1,
                Verdict::Author2 => t.author2 += 1,
                Verdict::Tie => t.ties += 1,
            },
            TallyMode::PerTile => {
                t.author1 += v.counts.author1;
                t.author2 += v.counts.author2;
            }
        }
    }
    for t in step1.values_mut() {
        t.winner = Verdict::from_counts(t.author1, t.author2);
    }
    let a1 = step1.values().filter(|t| t.winner == Verdict::Author1).count();
    let a2 = step1.values().filter(|t| t.winner == Verdict::Author2).count();
    let final_verdict = match Verdict::from_counts(a1, a2) {
        Verdict::Author1 => FinalVerdict::Author1,
        Verdict::Author2 => FinalVerdict::Author2,
        Verdict::Tie => FinalVerdict::Inconclusive,
    };
    VoteTally {
        mode,
        step1,
        final_verdict,
    }
}

/// The verdict file for one external set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictFile {
    pub set_id: String,
    pub runs: Vec<RunVerdict>,
    pub step1: BTreeMap<String, ModelTally>,
    #[serde(rename = "final")]
    pub final_verdict: FinalVerdict,
    pub tally_mode: TallyMode,
}

impl VerdictFile {
    pub fn new(set_id: impl Into<String>, runs: Vec<RunVerdict>, mode: TallyMode) -> Self {
        let tally = majority_vote(&runs, mode);
        VerdictFile {
            set_id: set_id.into(),
            runs,
            step1: tally.step1,
            final_verdict: tally.final_verdict,
            tally_mode: mode,
        }
    }
}
