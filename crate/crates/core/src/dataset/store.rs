//! Dataset manifests: a JSON document listing every sample, with tile pixels
//! either as content-addressed PNG files or inline base64 PNG.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use image::GrayImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ClassId;
use crate::imaging::{content_digest, decode_png, encode_png};
use crate::jsonio::{read_json, write_json};

use super::{ClassCounts, DatasetSpec, Partition, Provenance, TileDataset, TileSample};

pub const DATASET_MANIFEST: &str = "manifest.json";
const TILE_DIR: &str = "tiles";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TileStorage {
    /// `tiles/<sha256>.png` next to the manifest.
    #[default]
    Files,
    /// Base64 PNG inside the manifest.
    Inline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TileRef {
    File(String),
    Base64(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub sample_id: String,
    pub partition: Partition,
    pub true_class: ClassId,
    pub provenance: Provenance,
    pub tile: TileRef,
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetManifest {
    spec: DatasetSpec,
    tile_size: u32,
    counts: ClassCounts,
    samples: Vec<SampleRow>,
}

/// Writes `manifest.json` (and tile files) under `dir`; returns the manifest path.
pub fn write_dataset(dataset: &TileDataset, dir: &Path, storage: TileStorage) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let writer = TileWriter::new(dir, storage)?;
    let samples = dataset
        .samples()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|s| {
            Ok(SampleRow {
                sample_id: s.sample_id.clone(),
                partition: s.partition,
                true_class: s.true_class,
                provenance: s.provenance.clone(),
                tile: writer.store(&s.pixels)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest {
        spec: dataset.spec.clone(),
        tile_size: dataset.tile_size,
        counts: dataset.counts.clone(),
        samples,
    };
    let path = dir.join(DATASET_MANIFEST);
    write_json(&path, &manifest)?;
    Ok(path)
}

/// Reads a dataset from its directory or manifest path.
pub fn read_dataset(path: &Path) -> Result<TileDataset> {
    let manifest_path = manifest_path(path);
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let manifest: DatasetManifest = read_json(&manifest_path)?;
    let samples = manifest
        .samples
        .into_par_iter()
        .map(|row| {
            Ok(TileSample {
                pixels: load_tile(&row.tile, dir)?,
                sample_id: row.sample_id,
                true_class: row.true_class,
                provenance: row.provenance,
                partition: row.partition,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (train, test) = samples
        .into_iter()
        .partition(|s| s.partition == Partition::Train);
    let dataset = TileDataset {
        spec: manifest.spec,
        tile_size: manifest.tile_size,
        train,
        test,
        counts: manifest.counts,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Reads the manifest rows without decoding any tile pixels.
pub fn read_sample_rows(path: &Path) -> Result<(DatasetSpec, Vec<SampleRow>)> {
    let manifest: DatasetManifest = read_json(&manifest_path(path))?;
    Ok((manifest.spec, manifest.samples))
}

pub(crate) fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(DATASET_MANIFEST)
    } else {
        path.to_path_buf()
    }
}

/// Stores tiles, writing each distinct file once.
pub(crate) struct TileWriter {
    dir: PathBuf,
    storage: TileStorage,
    written: Mutex<HashSet<String>>,
}

impl TileWriter {
    pub(crate) fn new(dir: &Path, storage: TileStorage) -> Result<Self> {
        if storage == TileStorage::Files {
            let tiles = dir.join(TILE_DIR);
            fs::create_dir_all(&tiles).map_err(|e| Error::io(&tiles, e))?;
        }
        Ok(TileWriter {
            dir: dir.to_path_buf(),
            storage,
            written: Mutex::new(HashSet::new()),
        })
    }

    pub(crate) fn store(&self, img: &GrayImage) -> Result<TileRef> {
        match self.storage {
            TileStorage::Inline => Ok(TileRef::Base64(BASE64.encode(encode_png(img)?))),
            TileStorage::Files => {
                let rel = format!("{TILE_DIR}/{}.png", content_digest(img));
                let fresh = self.written.lock().expect("tile set poisoned").insert(rel.clone());
                let path = self.dir.join(&rel);
                if fresh && !path.exists() {
                    fs::write(&path, encode_png(img)?).map_err(|e| Error::io(&path, e))?;
                }
                Ok(TileRef::File(rel))
            }
        }
    }
}

pub(crate) fn load_tile(tile: &TileRef, dir: &Path) -> Result<GrayImage> {
    match tile {
        TileRef::File(rel) => {
            let path = dir.join(rel);
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            decode_png(&bytes, &path)
        }
        TileRef::Base64(data) => {
            let bytes = BASE64
                .decode(data)
                .map_err(|e| Error::parse(dir, format!("bad base64 tile: {e}")))?;
            decode_png(&bytes, dir)
        }
    }
}
