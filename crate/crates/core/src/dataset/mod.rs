//! Seeded train/test splitting, augmentation and square tiling of pieces
//! into the v01–v004 dataset families.

mod augment;
mod rng;
mod split;
pub(crate) mod store;
mod tiling;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use image::GrayImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ClassId, PieceImage};

pub use augment::{augment, chains, shift, shine, zoom, AugmentationChain, AugmentationParams, AugmentedPiece};
pub use rng::SplitMix64;
pub use split::{split_pieces, test_count};
pub use store::{read_dataset, read_sample_rows, write_dataset, SampleRow, TileRef, TileStorage, DATASET_MANIFEST};
pub use tiling::{compute_tile_size, positions, tile, tile_count, Tile};

/// The seeds used for the five repeated splits.
pub const DEFAULT_SEEDS: [u64; 5] = [1033, 1931, 2201, 4179, 9325];

/// One of the eight named dataset families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DatasetType {
    V01,
    V02,
    V03,
    V04,
    V001,
    V002,
    V003,
    V004,
}

impl DatasetType {
    pub const ALL: [DatasetType; 8] = [
        DatasetType::V01,
        DatasetType::V02,
        DatasetType::V03,
        DatasetType::V04,
        DatasetType::V001,
        DatasetType::V002,
        DatasetType::V003,
        DatasetType::V004,
    ];

    /// `(zoom_enabled, stride_px, n_classes)`.
    pub fn params(self) -> (bool, u32, u32) {
        use DatasetType::*;
        match self {
            V01 => (false, 20, 4),
            V02 => (true, 20, 4),
            V03 => (false, 10, 4),
            V04 => (true, 10, 4),
            V001 => (false, 20, 8),
            V002 => (true, 20, 8),
            V003 => (false, 10, 8),
            V004 => (true, 10, 8),
        }
    }

    pub fn zoom_enabled(self) -> bool {
        self.params().0
    }

    pub fn stride(self) -> u32 {
        self.params().1
    }

    pub fn n_classes(self) -> u32 {
        self.params().2
    }

    pub fn name(self) -> &'static str {
        use DatasetType::*;
        match self {
            V01 => "v01",
            V02 => "v02",
            V03 => "v03",
            V04 => "v04",
            V001 => "v001",
            V002 => "v002",
            V003 => "v003",
            V004 => "v004",
        }
    }
}

impl fmt::Display for DatasetType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DatasetType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DatasetType::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown dataset type {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub dataset_type: String,
    pub zoom_enabled: bool,
    pub stride_px: u32,
    pub scheme_id: String,
    pub n_classes: u32,
    pub seed: u64,
    pub split_ratio: f64,
    pub augmentation_params: AugmentationParams,
}

impl DatasetSpec {
    /// Spec for a named family with default ratio and augmentation.
    pub fn for_type(dataset_type: DatasetType, scheme_id: impl Into<String>, seed: u64) -> Self {
        let (zoom_enabled, stride_px, n_classes) = dataset_type.params();
        DatasetSpec {
            dataset_type: dataset_type.name().to_string(),
            zoom_enabled,
            stride_px,
            scheme_id: scheme_id.into(),
            n_classes,
            seed,
            split_ratio: 0.8,
            augmentation_params: AugmentationParams::default(),
        }
    }

    pub fn with_augmentation(mut self, params: AugmentationParams) -> Self {
        self.augmentation_params = params;
        self
    }

    pub fn kind(&self) -> Result<DatasetType> {
        self.dataset_type.parse()
    }

    pub fn validate(&self) -> Result<()> {
        let kind = self.kind()?;
        if kind.params() != (self.zoom_enabled, self.stride_px, self.n_classes) {
            let (z, s, n) = kind.params();
            return Err(Error::Validation(format!(
                "{kind} requires zoom={z}, stride={s}, classes={n}; got zoom={}, stride={}, classes={}",
                self.zoom_enabled, self.stride_px, self.n_classes
            )));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::Validation(format!(
                "split ratio {} must lie in (0, 1)",
                self.split_ratio
            )));
        }
        self.augmentation_params.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub piece_id: String,
    pub chain: AugmentationChain,
    pub offset_x: u32,
    pub offset_y: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TileSample {
    pub sample_id: String,
    pub pixels: GrayImage,
    pub true_class: ClassId,
    pub provenance: Provenance,
    pub partition: Partition,
}

/// Per-class sample counts of both partitions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub train: BTreeMap<ClassId, usize>,
    pub test: BTreeMap<ClassId, usize>,
}

impl ClassCounts {
    pub fn total(&self) -> usize {
        self.train.values().sum::<usize>() + self.test.values().sum::<usize>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TileDataset {
    pub spec: DatasetSpec,
    pub tile_size: u32,
    pub train: Vec<TileSample>,
    pub test: Vec<TileSample>,
    pub counts: ClassCounts,
}

impl TileDataset {
    pub fn n_classes(&self) -> u32 {
        self.spec.n_classes
    }

    pub fn samples(&self) -> impl Iterator<Item = &TileSample> {
        self.train.iter().chain(self.test.iter())
    }

    /// Checks tile shape, class range, piece-level disjointness and test
    /// coverage of every class.
    pub fn validate(&self) -> Result<()> {
        for s in self.samples() {
            if s.pixels.dimensions() != (self.tile_size, self.tile_size) {
                return Err(Error::Validation(format!(
                    "sample {} is {:?}, expected {}x{}",
                    s.sample_id,
                    s.pixels.dimensions(),
                    self.tile_size,
                    self.tile_size
                )));
            }
            if !(1..=self.n_classes()).contains(&s.true_class) {
                return Err(Error::Validation(format!(
                    "sample {} has class {} outside 1..={}",
                    s.sample_id,
                    s.true_class,
                    self.n_classes()
                )));
            }
        }
        let train_pieces: HashSet<&str> =
            self.train.iter().map(|s| s.provenance.piece_id.as_str()).collect();
        if let Some(leak) = self
            .test
            .iter()
            .find(|s| train_pieces.contains(s.provenance.piece_id.as_str()))
        {
            return Err(Error::Validation(format!(
                "piece {} appears in both train and test",
                leak.provenance.piece_id
            )));
        }
        let tested: BTreeSet<ClassId> = self.test.iter().map(|s| s.true_class).collect();
        if let Some(missing) = (1..=self.n_classes()).find(|c| !tested.contains(c)) {
            return Err(Error::Validation(format!("class {missing} has no test samples")));
        }
        Ok(())
    }
}

/// split -> augment -> tile size over every augmented piece -> tile.
pub fn build_dataset(pieces: Vec<PieceImage>, spec: &DatasetSpec) -> Result<TileDataset> {
    spec.validate()?;
    check_coverage(&pieces, spec)?;

    let (train_pieces, test_pieces) = split_pieces(pieces, spec.split_ratio, spec.seed)?;
    let params = &spec.augmentation_params;
    let augment_all = |pieces: &[PieceImage]| -> Vec<AugmentedPiece> {
        pieces
            .par_iter()
            .flat_map_iter(|p| augment(p, params, spec.zoom_enabled))
            .collect()
    };
    let train_aug = augment_all(&train_pieces);
    let test_aug = augment_all(&test_pieces);

    let tile_size = compute_tile_size(train_aug.iter().chain(&test_aug).map(|a| &a.piece))?;
    let train = tile_partition(&train_aug, tile_size, spec.stride_px, Partition::Train)?;
    let test = tile_partition(&test_aug, tile_size, spec.stride_px, Partition::Test)?;

    let mut counts = ClassCounts::default();
    for s in &train {
        *counts.train.entry(s.true_class).or_default() += 1;
    }
    for s in &test {
        *counts.test.entry(s.true_class).or_default() += 1;
    }
    let dataset = TileDataset {
        spec: spec.clone(),
        tile_size,
        train,
        test,
        counts,
    };
    dataset.validate()?;
    Ok(dataset)
}

fn check_coverage(pieces: &[PieceImage], spec: &DatasetSpec) -> Result<()> {
    if let Some(p) = pieces.iter().find(|p| p.scheme_id != spec.scheme_id) {
        return Err(Error::Validation(format!(
            "piece {} belongs to scheme {}, dataset uses {}",
            p.piece_id, p.scheme_id, spec.scheme_id
        )));
    }
    let present: BTreeSet<ClassId> = pieces.iter().map(|p| p.class_label).collect();
    if let Some(c) = present.iter().find(|&&c| !(1..=spec.n_classes).contains(&c)) {
        return Err(Error::Validation(format!(
            "class {c} is outside 1..={}",
            spec.n_classes
        )));
    }
    if let Some(missing) = (1..=spec.n_classes).find(|c| !present.contains(c)) {
        return Err(Error::Validation(format!("no pieces for class {missing}")));
    }
    Ok(())
}

fn tile_partition(
    augmented: &[AugmentedPiece],
    size: u32,
    stride: u32,
    partition: Partition,
) -> Result<Vec<TileSample>> {
    let per_piece: Vec<Vec<TileSample>> = augmented
        .par_iter()
        .map(|aug| {
            let tiles = tile(&aug.piece, size, stride)?;
            Ok(tiles
                .into_iter()
                .map(|t| TileSample {
                    sample_id: format!(
                        "{}__{}__{}_{}",
                        aug.piece.piece_id, aug.chain, t.offset_x, t.offset_y
                    ),
                    pixels: t.pixels,
                    true_class: aug.piece.class_label,
                    provenance: Provenance {
                        piece_id: aug.piece.piece_id.clone(),
                        chain: aug.chain,
                        offset_x: t.offset_x,
                        offset_y: t.offset_y,
                    },
                    partition,
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(per_piece.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Luma;

    #[test]
    fn type_table() {
        assert_eq!(DatasetType::V01.params(), (false, 20, 4));
        assert_eq!(DatasetType::V04.params(), (true, 10, 4));
        assert_eq!(DatasetType::V002.params(), (true, 20, 8));
        assert_eq!("v003".parse::<DatasetType>().unwrap(), DatasetType::V003);
        assert!("v05".parse::<DatasetType>().is_err());
    }

    #[test]
    fn inconsistent_spec_rejected() {
        let mut spec = DatasetSpec::for_type(DatasetType::V01, "4-class", 1033);
        assert!(spec.validate().is_ok());
        spec.stride_px = 10;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn pieces_from_other_scheme_rejected() {
        let pieces: Vec<PieceImage> = (1..=4)
            .flat_map(|c| {
                (0..2).map(move |i| PieceImage {
                    piece_id: format!("{c}-{i}"),
                    pixels: GrayImage::from_pixel(60, 40, Luma([c as u8 * 40])),
                    class_label: c,
                    scheme_id: "8-class".into(),
                })
            })
            .collect();
        let spec = DatasetSpec::for_type(DatasetType::V01, "4-class", 1)
            .with_augmentation(AugmentationParams::identity());
        assert!(build_dataset(pieces, &spec).is_err());
    }
}
