//! The six augmentation operations and their Cartesian product.

use std::fmt;

use image::{imageops, GrayImage, Luma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PieceImage;
use crate::imaging::{clamp_u8, sample_bilinear};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationParams {
    pub shine_factors: Vec<f64>,
    pub shift_offsets_h: Vec<i32>,
    pub shift_offsets_v: Vec<i32>,
    pub zoom_factors: Vec<f64>,
}

impl Default for AugmentationParams {
    fn default() -> Self {
        AugmentationParams {
            shine_factors: vec![0.8, 1.0, 1.2],
            shift_offsets_h: vec![-10, 0, 10],
            shift_offsets_v: vec![-10, 0, 10],
            zoom_factors: vec![0.9, 1.0, 1.1],
        }
    }
}

impl AugmentationParams {
    /// Only identity entries; augmentation then yields the four flip variants.
    pub fn identity() -> Self {
        AugmentationParams {
            shine_factors: vec![1.0],
            shift_offsets_h: vec![0],
            shift_offsets_v: vec![0],
            zoom_factors: vec![1.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        fn check_f(name: &str, v: &[f64]) -> Result<()> {
            if v.is_empty() || !v.contains(&1.0) {
                return Err(Error::Validation(format!(
                    "{name} must be non-empty and include 1.0"
                )));
            }
            if v.iter().any(|f| !f.is_finite() || *f <= 0.0) {
                return Err(Error::Validation(format!("{name} must be positive and finite")));
            }
            Ok(())
        }
        fn check_i(name: &str, v: &[i32]) -> Result<()> {
            if v.is_empty() || !v.contains(&0) {
                return Err(Error::Validation(format!("{name} must be non-empty and include 0")));
            }
            Ok(())
        }
        check_f("shine_factors", &self.shine_factors)?;
        check_i("shift_offsets_h", &self.shift_offsets_h)?;
        check_i("shift_offsets_v", &self.shift_offsets_v)?;
        check_f("zoom_factors", &self.zoom_factors)?;
        Ok(())
    }

    /// Number of variants `augment` produces per piece.
    pub fn variant_count(&self, zoom_enabled: bool) -> usize {
        let zoom = if zoom_enabled { self.zoom_factors.len() } else { 1 };
        self.shine_factors.len() * self.shift_offsets_h.len() * self.shift_offsets_v.len() * 4 * zoom
    }
}

/// The operations applied to one augmented variant, in application order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationChain {
    pub shine: f64,
    pub shift_h: i32,
    pub shift_v: i32,
    pub flip_h: bool,
    pub flip_v: bool,
    pub zoom: f64,
}

impl AugmentationChain {
    pub const IDENTITY: AugmentationChain = AugmentationChain {
        shine: 1.0,
        shift_h: 0,
        shift_v: 0,
        flip_h: false,
        flip_v: false,
        zoom: 1.0,
    };

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }

    pub fn apply(&self, img: &GrayImage) -> GrayImage {
        let mut out = shine(img, self.shine);
        out = shift(&out, self.shift_h, self.shift_v);
        if self.flip_h {
            imageops::flip_horizontal_in_place(&mut out);
        }
        if self.flip_v {
            imageops::flip_vertical_in_place(&mut out);
        }
        zoom(&out, self.zoom)
    }
}

impl fmt::Display for AugmentationChain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "s{}_h{}_v{}_f{}{}_z{}",
            self.shine,
            self.shift_h,
            self.shift_v,
            u8::from(self.flip_h),
            u8::from(self.flip_v),
            self.zoom
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedPiece {
    pub piece: PieceImage,
    pub chain: AugmentationChain,
}

/// Every chain of the product shine × h-shift × v-shift × flip-h × flip-v ×
/// zoom, in that nesting order.
pub fn chains(params: &AugmentationParams, zoom_enabled: bool) -> Vec<AugmentationChain> {
    let zooms: &[f64] = if zoom_enabled { &params.zoom_factors } else { &[1.0] };
    let mut out = Vec::with_capacity(params.variant_count(zoom_enabled));
    for &shine in &params.shine_factors {
        for &shift_h in &params.shift_offsets_h {
            for &shift_v in &params.shift_offsets_v {
                for flip_h in [false, true] {
                    for flip_v in [false, true] {
                        for &zoom in zooms {
                            out.push(AugmentationChain {
                                shine,
                                shift_h,
                                shift_v,
                                flip_h,
                                flip_v,
                                zoom,
                            });
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn augment(
    piece: &PieceImage,
    params: &AugmentationParams,
    zoom_enabled: bool,
) -> Vec<AugmentedPiece> {
    chains(params, zoom_enabled)
        .into_iter()
        .map(|chain| AugmentedPiece {
            piece: piece.with_pixels(chain.apply(&piece.pixels)),
            chain,
        })
        .collect()
}

/// Multiplicative luminance scaling, clamped to the 8-bit range.
pub fn shine(img: &GrayImage, factor: f64) -> GrayImage {
    if factor == 1.0 {
        return img.clone();
    }
    let mut out = img.clone();
    for p in out.pixels_mut() {
        p[0] = clamp_u8(p[0] as f64 * factor);
    }
    out
}

/// Translates content by `(dx, dy)` (positive = right/down), replicating the
/// edge pixels into the uncovered border.
pub fn shift(img: &GrayImage, dx: i32, dy: i32) -> GrayImage {
    if dx == 0 && dy == 0 {
        return img.clone();
    }
    let (w, h) = img.dimensions();
    GrayImage::from_fn(w, h, |x, y| {
        let sx = (x as i64 - dx as i64).clamp(0, w as i64 - 1) as u32;
        let sy = (y as i64 - dy as i64).clamp(0, h as i64 - 1) as u32;
        *img.get_pixel(sx, sy)
    })
}

/// Bilinear rescale about the centre, then centre-crop or edge-pad back to
/// the input dimensions.
pub fn zoom(img: &GrayImage, factor: f64) -> GrayImage {
    if factor == 1.0 {
        return img.clone();
    }
    let (w, h) = img.dimensions();
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    GrayImage::from_fn(w, h, |x, y| {
        let sx = (x as f64 - cx) / factor + cx;
        let sy = (y as f64 - cy) / factor + cy;
        Luma([clamp_u8(sample_bilinear(img, sx, sy))])
    })
}
