//! Synthetic two-hand corpus for end-to-end runs without real tablets.
//!
//! Each hand draws stripes of period 10 px in its own orientation: the first
//! hand vertical, the second horizontal. Classes of one hand differ in
//! stroke width and stripe phase. Pieces are 101 x 41 px and sit at
//! multiples of 10 px in their source image, so stripe phase survives the
//! default shifts, flips and a 20 px tiling stride.
//!
//! The 8-class variants are ordered so that the two classes of a
//! neighbouring pair differ in phase and neighbouring pairs differ in width.
//! The centroid baseline separates phase cleanly and confuses widths a
//! little, so the residual confusion stays within one hand but crosses
//! pair blocks.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma};

use crate::dataset::{DatasetType, SplitMix64};
use crate::error::{Error, Result};
use crate::experiment::{ExperimentConfig, ExternalSetConfig};
use crate::geometry::{AnnotationFile, Author, ClassScheme, Quad, RegionAnnotation, SourceRef};
use crate::imaging::{clamp_u8, encode_png};
use crate::jsonio::write_json;

pub const PIECE_WIDTH: u32 = 101;
pub const PIECE_HEIGHT: u32 = 41;
pub const PERIOD: u32 = 10;
const PITCH_X: u32 = 120;
const PITCH_Y: u32 = 60;
const MARGIN: u32 = 10;
const BACKGROUND: f64 = 200.0;
const INK: f64 = 60.0;

pub const ANNOTATION_FILE: &str = "annotations.json";

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub pieces_per_class: usize,
    /// Standard deviation of the additive Gaussian pixel noise.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            pieces_per_class: 8,
            noise_sigma: 20.0,
            seed: 7,
        }
    }
}

/// Shine factors for experiments on this fixture. The centroid baseline
/// compares raw intensities, and the default +-20% shine moves whole
/// augmentation groups across the width boundary.
pub const SHINE_FACTORS: [f64; 3] = [0.9, 1.0, 1.1];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Texture {
    pub vertical: bool,
    /// Ink where the distance to the nearest stripe centre is at most this.
    pub half_width: u32,
    /// Stripe centre modulo the period: 0 or 5, the two phases that are
    /// mirror-symmetric within a 101 x 41 piece.
    pub centre: u32,
}

impl Texture {
    pub fn of(author: Author, half_width: u32, centre: u32) -> Self {
        Texture {
            vertical: author == Author::Author1,
            half_width,
            centre,
        }
    }

    /// Texture of `class` under the standard `n`-class scheme.
    pub fn for_class(n_classes: u32, class: u32) -> Self {
        let per_author = n_classes / 2;
        let variant = ((class - 1) % per_author) as usize;
        let author = if class <= per_author { Author::Author1 } else { Author::Author2 };
        let (half_width, centre) = if n_classes == 4 {
            [(1, 5), (2, 5)][variant]
        } else {
            [(1, 0), (1, 5), (2, 5), (2, 0)][variant]
        };
        Texture::of(author, half_width, centre)
    }

    pub fn is_ink(&self, x: u32, y: u32) -> bool {
        let c = if self.vertical { x } else { y };
        let d = (c % PERIOD).abs_diff(self.centre);
        d.min(PERIOD - d) <= self.half_width
    }
}

/// One standard-normal draw (Box-Muller).
fn gaussian(rng: &mut SplitMix64) -> f64 {
    let u1 = 1.0 - rng.next_f64();
    let u2 = rng.next_f64();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Light background with the given textured rectangles, all noisy.
fn render(width: u32, height: u32, patches: &[(u32, u32, Texture)], sigma: f64, seed: u64) -> GrayImage {
    let mut rng = SplitMix64::new(seed);
    let mut img = GrayImage::new(width, height);
    for y in 0..height {
        for x in 0..width {
            let inside = patches.iter().find(|(x0, y0, _)| {
                (*x0..x0 + PIECE_WIDTH).contains(&x) && (*y0..y0 + PIECE_HEIGHT).contains(&y)
            });
            let base = match inside {
                Some((_, _, t)) if t.is_ink(x, y) => INK,
                _ => BACKGROUND,
            };
            img.put_pixel(x, y, Luma([clamp_u8(base + sigma * gaussian(&mut rng))]));
        }
    }
    img
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticFixture {
    pub dir: PathBuf,
    pub annotations: PathBuf,
    pub external_sets: Vec<ExternalSetConfig>,
    /// Generating hand of each external set.
    pub expected: BTreeMap<String, Author>,
}

impl SyntheticFixture {
    /// Baseline-only config over `dataset_types` x `seeds`, with
    /// [`SHINE_FACTORS`].
    pub fn experiment_config(
        &self,
        output_root: impl Into<PathBuf>,
        dataset_types: &[DatasetType],
        seeds: &[u64],
    ) -> ExperimentConfig {
        let mut c = ExperimentConfig::new(&self.annotations, output_root);
        c.dataset_types = dataset_types.iter().map(|t| t.name().to_string()).collect();
        c.seeds = seeds.to_vec();
        c.external_sets = self.external_sets.clone();
        c.augmentation.shine_factors = SHINE_FACTORS.to_vec();
        c
    }
}

fn write_png(path: &Path, img: &GrayImage) -> Result<()> {
    fs::write(path, encode_png(img)?).map_err(|e| Error::io(path, e))
}

/// Writes source PNGs and `annotations.json` into `dir`.
///
/// Sources: `tablet-4c` (4 classes) and `tablet-8c` (8 classes) with
/// `pieces_per_class` pieces per class, plus `held-out` holding one region
/// per hand. The held-out regions form the external sets `held-out-a`
/// (first hand) and `held-out-b` (second hand).
pub fn write_fixture(dir: &Path, config: &SyntheticConfig) -> Result<SyntheticFixture> {
    if config.pieces_per_class < 2 {
        return Err(Error::Validation("the split needs at least 2 pieces per class".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let schemes = vec![ClassScheme::standard("4-class", 4)?, ClassScheme::standard("8-class", 8)?];
    let mut sources = Vec::new();
    let mut regions = Vec::new();
    let cols = config.pieces_per_class as u32;

    for (k, scheme) in schemes.iter().enumerate() {
        let source_id = format!("tablet-{}c", scheme.n_classes);
        let mut patches = Vec::new();
        for class in 1..=scheme.n_classes {
            for col in 0..cols {
                let (x0, y0) = (MARGIN + col * PITCH_X, MARGIN + (class - 1) * PITCH_Y);
                patches.push((x0, y0, Texture::for_class(scheme.n_classes, class)));
                regions.push(RegionAnnotation {
                    piece_id: format!("{}c-{class}-{col:02}", scheme.n_classes),
                    source_id: source_id.clone(),
                    quad: Quad::axis_aligned(x0 as f64, y0 as f64, PIECE_WIDTH as f64, PIECE_HEIGHT as f64),
                    class_label: class,
                    scheme_id: scheme.id.clone(),
                    line_pair_index: col,
                });
            }
        }
        let width = 2 * MARGIN + cols * PITCH_X;
        let height = 2 * MARGIN + scheme.n_classes * PITCH_Y;
        let img = render(width, height, &patches, config.noise_sigma, config.seed.wrapping_add(k as u64));
        let file = format!("{source_id}.png");
        write_png(&dir.join(&file), &img)?;
        sources.push(SourceRef {
            id: source_id,
            path: file.into(),
        });
    }

    let held = [
        ("held-out-a", Author::Author1, MARGIN),
        ("held-out-b", Author::Author2, MARGIN + PITCH_Y),
    ];
    let patches: Vec<_> = held
        .iter()
        .map(|&(_, author, y0)| (MARGIN, y0, Texture::of(author, 1, 5)))
        .collect();
    let img = render(2 * MARGIN + PITCH_X, 2 * MARGIN + 2 * PITCH_Y, &patches, config.noise_sigma, config.seed.wrapping_add(99));
    write_png(&dir.join("held-out.png"), &img)?;
    sources.push(SourceRef {
        id: "held-out".into(),
        path: "held-out.png".into(),
    });
    let mut external_sets = Vec::new();
    let mut expected = BTreeMap::new();
    for (i, &(set_id, author, y0)) in held.iter().enumerate() {
        let piece_id = format!("{set_id}-region");
        regions.push(RegionAnnotation {
            piece_id: piece_id.clone(),
            source_id: "held-out".into(),
            quad: Quad::axis_aligned(MARGIN as f64, y0 as f64, PIECE_WIDTH as f64, PIECE_HEIGHT as f64),
            // required by the schema, ignored for external sets
            class_label: 1,
            scheme_id: "4-class".into(),
            line_pair_index: i as u32,
        });
        external_sets.push(ExternalSetConfig {
            set_id: set_id.into(),
            regions: vec![piece_id],
        });
        expected.insert(set_id.to_string(), author);
    }

    let annotations = dir.join(ANNOTATION_FILE);
    write_json(
        &annotations,
        &AnnotationFile {
            schemes,
            sources,
            regions,
        },
    )?;
    Ok(SyntheticFixture {
        dir: dir.to_path_buf(),
        annotations,
        external_sets,
        expected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textures_follow_scheme_authors() {
        for n in [4, 8] {
            for c in 1..=n {
                let t = Texture::for_class(n, c);
                assert_eq!(t.vertical, c <= n / 2);
            }
        }
        assert_eq!(Texture::for_class(4, 4).half_width, 2);
        assert_eq!(Texture::for_class(8, 5), Texture::of(Author::Author2, 1, 0));
        assert_eq!(Texture::for_class(8, 7), Texture::of(Author::Author2, 2, 5));
    }

    #[test]
    fn stripes_are_mirror_symmetric_within_a_piece() {
        for class in 1..=8 {
            let t = Texture::for_class(8, class);
            for x in 0..PIECE_WIDTH {
                for y in 0..PIECE_HEIGHT {
                    let ink = t.is_ink(x, y);
                    assert_eq!(ink, t.is_ink(PIECE_WIDTH - 1 - x, y));
                    assert_eq!(ink, t.is_ink(x, PIECE_HEIGHT - 1 - y));
                }
            }
        }
    }
}
