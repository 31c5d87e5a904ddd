//! Nearest class-centroid classifier over 16x16 box-averaged tiles.

use image::GrayImage;
use rayon::prelude::*;

use crate::dataset::TileDataset;
use crate::error::{Error, Result};
use crate::geometry::ClassId;

use super::{softmax, LossCurve, PredictionRecord, RunManifest};

pub const BASELINE_MODEL_ID: &str = "baseline-centroid";
pub const FEATURE_SIDE: u32 = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct CentroidModel {
    centroids: Vec<Vec<f64>>,
}

impl CentroidModel {
    pub fn fit(dataset: &TileDataset) -> Result<Self> {
        let n = dataset.n_classes() as usize;
        let features: Vec<Vec<f64>> = dataset.train.par_iter().map(|s| features(&s.pixels)).collect();
        let dim = (FEATURE_SIDE * FEATURE_SIDE) as usize;
        let mut sums = vec![vec![0.0; dim]; n];
        let mut counts = vec![0usize; n];
        for (sample, f) in dataset.train.iter().zip(&features) {
            let c = sample.true_class as usize - 1;
            counts[c] += 1;
            for (acc, v) in sums[c].iter_mut().zip(f) {
                *acc += v;
            }
        }
        if let Some(empty) = counts.iter().position(|&c| c == 0) {
            return Err(Error::Validation(format!(
                "class {} has no training tiles",
                empty + 1
            )));
        }
        let centroids = sums
            .into_iter()
            .zip(counts)
            .map(|(sum, count)| sum.into_iter().map(|v| v / count as f64).collect())
            .collect();
        Ok(CentroidModel { centroids })
    }

    pub fn n_classes(&self) -> u32 {
        self.centroids.len() as u32
    }

    /// Negated Euclidean distances to each class centroid.
    pub fn raw_scores(&self, tile: &GrayImage) -> Vec<f64> {
        let f = features(tile);
        self.centroids
            .iter()
            .map(|c| {
                -c.iter()
                    .zip(&f)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    }

    pub fn predict(
        &self,
        sample_id: &str,
        true_class: Option<ClassId>,
        tile: &GrayImage,
    ) -> Result<PredictionRecord> {
        PredictionRecord::from_scores(sample_id, true_class, self.raw_scores(tile))
    }
}

/// Area-weighted box average onto a 16x16 grid, scaled to `[0, 1]`.
pub fn features(tile: &GrayImage) -> Vec<f64> {
    let (w, h) = tile.dimensions();
    let wx = box_weights(w);
    let wy = box_weights(h);
    let side = FEATURE_SIDE as usize;
    // Collapse columns first: rows x 16
    let mut partial = vec![0.0; h as usize * side];
    for (y, row) in tile.rows().enumerate() {
        for (x, p) in row.enumerate() {
            let v = p[0] as f64 / 255.0;
            for &(k, weight) in &wx[x] {
                partial[y * side + k] += v * weight;
            }
        }
    }
    let mut out = vec![0.0; side * side];
    for y in 0..h as usize {
        for &(k, weight) in &wy[y] {
            for kx in 0..side {
                out[k * side + kx] += partial[y * side + kx] * weight;
            }
        }
    }
    out
}

/// For each source pixel, the output bins it overlaps and the overlap
/// fraction of that bin.
fn box_weights(len: u32) -> Vec<Vec<(usize, f64)>> {
    let bins = FEATURE_SIDE as f64;
    let bin_width = len as f64 / bins;
    (0..len)
        .map(|i| {
            let (lo, hi) = (i as f64, i as f64 + 1.0);
            let first = (lo / bin_width).floor() as usize;
            let last = ((hi / bin_width).ceil() as usize).min(FEATURE_SIDE as usize);
            (first..last)
                .filter_map(|k| {
                    let b_lo = k as f64 * bin_width;
                    let b_hi = b_lo + bin_width;
                    let overlap = hi.min(b_hi) - lo.max(b_lo);
                    (overlap > 1e-12).then_some((k, overlap / bin_width))
                })
                .collect()
        })
        .collect()
}

/// Fits the centroid model on the train partition and scores every test
/// tile. The single-epoch loss is the mean cross-entropy of the training
/// tiles under softmax of their raw scores.
pub fn run_baseline(
    dataset: &TileDataset,
    manifest: &RunManifest,
) -> Result<(Vec<PredictionRecord>, LossCurve)> {
    if manifest.model_id != BASELINE_MODEL_ID {
        return Err(Error::Validation(format!(
            "run_baseline needs model_id {BASELINE_MODEL_ID}, got {}",
            manifest.model_id
        )));
    }
    let model = CentroidModel::fit(dataset)?;
    let records = dataset
        .test
        .par_iter()
        .map(|s| model.predict(&s.sample_id, Some(s.true_class), &s.pixels))
        .collect::<Result<Vec<_>>>()?;
    let losses = dataset
        .train
        .par_iter()
        .map(|s| {
            let p = softmax(&model.raw_scores(&s.pixels))?;
            Ok(-p[s.true_class as usize - 1].max(f64::MIN_POSITIVE).ln())
        })
        .collect::<Result<Vec<f64>>>()?;
    let loss = losses.iter().sum::<f64>() / losses.len() as f64;
    Ok((records, LossCurve::new(vec![loss.max(0.0)])?))
}
