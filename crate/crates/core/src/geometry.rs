//! Source images, region annotations and class schemes, plus de-rotating
//! extraction of rectangular pieces.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{clamp_u8, load_luma, sample_bilinear};

/// 1-indexed class label.
pub type ClassId = u32;

/// One of the two candidate writers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Author {
    Author1,
    Author2,
}

impl fmt::Display for Author {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Author::Author1 => f.write_str("Author1"),
            Author::Author2 => f.write_str("Author2"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassScheme {
    pub id: String,
    pub n_classes: u32,
    pub author_of_class: BTreeMap<ClassId, Author>,
}

impl ClassScheme {
    /// The standard split: the first half of the classes belongs to Author1,
    /// the second half to Author2.
    pub fn standard(id: impl Into<String>, n_classes: u32) -> Result<Self> {
        if n_classes != 4 && n_classes != 8 {
            return Err(Error::Validation(format!(
                "class schemes have 4 or 8 classes, got {n_classes}"
            )));
        }
        let author_of_class = (1..=n_classes)
            .map(|c| (c, standard_author(c, n_classes)))
            .collect();
        Ok(ClassScheme {
            id: id.into(),
            n_classes,
            author_of_class,
        })
    }

    /// Built-in scheme ids accepted wherever a scheme is named: `4-class`, `8-class`.
    pub fn builtin(id: &str) -> Result<Self> {
        match id {
            "4-class" | "4" => Self::standard("4-class", 4),
            "8-class" | "8" => Self::standard("8-class", 8),
            other => Err(Error::Validation(format!("unknown scheme id {other:?}"))),
        }
    }

    pub fn author_of(&self, class: ClassId) -> Option<Author> {
        self.author_of_class.get(&class).copied()
    }

    pub fn contains(&self, class: ClassId) -> bool {
        (1..=self.n_classes).contains(&class)
    }

    pub fn validate(&self) -> Result<()> {
        let expected = Self::standard(self.id.clone(), self.n_classes)?;
        if expected.author_of_class != self.author_of_class {
            return Err(Error::Validation(format!(
                "scheme {}: author mapping must assign classes 1..={} to Author1 and the rest to Author2",
                self.id,
                self.n_classes / 2
            )));
        }
        Ok(())
    }
}

fn standard_author(class: ClassId, n: u32) -> Author {
    if class <= n / 2 {
        Author::Author1
    } else {
        Author::Author2
    }
}

pub type Point = [f64; 2];

/// Four corners, clockwise in image coordinates (y down), starting at the
/// top-left of the text so that `p0 -> p1` follows the writing direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Quad(pub [Point; 4]);

impl Quad {
    pub fn axis_aligned(x: f64, y: f64, width: f64, height: f64) -> Self {
        Quad([[x, y], [x + width, y], [x + width, y + height], [x, y + height]])
    }

    /// Rotates every corner by `degrees` about the quad's centroid.
    pub fn rotated(&self, degrees: f64) -> Self {
        let [cx, cy] = self.centroid();
        let (s, c) = degrees.to_radians().sin_cos();
        let mut out = self.0;
        for p in out.iter_mut() {
            let dx = p[0] - cx;
            let dy = p[1] - cy;
            *p = [cx + c * dx - s * dy, cy + s * dx + c * dy];
        }
        Quad(out)
    }

    pub fn centroid(&self) -> Point {
        let sx: f64 = self.0.iter().map(|p| p[0]).sum();
        let sy: f64 = self.0.iter().map(|p| p[1]).sum();
        [sx / 4.0, sy / 4.0]
    }

    /// Shoelace area; positive for clockwise order in image coordinates.
    pub fn signed_area(&self) -> f64 {
        let p = &self.0;
        (0..4)
            .map(|i| {
                let a = p[i];
                let b = p[(i + 1) % 4];
                a[0] * b[1] - b[0] * a[1]
            })
            .sum::<f64>()
            / 2.0
    }

    fn is_convex_clockwise(&self) -> bool {
        let p = &self.0;
        (0..4).all(|i| {
            let a = p[i];
            let b = p[(i + 1) % 4];
            let c = p[(i + 2) % 4];
            let cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]);
            cross > 0.0
        })
    }

    /// Output piece size: rounded means of the opposite edge lengths.
    pub fn piece_dimensions(&self) -> (u32, u32) {
        let p = &self.0;
        let len = |a: Point, b: Point| ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
        let w = (len(p[0], p[1]) + len(p[3], p[2])) / 2.0;
        let h = (len(p[1], p[2]) + len(p[0], p[3])) / 2.0;
        (w.round() as u32, h.round() as u32)
    }

    /// Maps normalized piece coordinates `(s, t) ∈ [0,1]²` onto the quad.
    fn map(&self, s: f64, t: f64) -> Point {
        let p = &self.0;
        let w0 = (1.0 - s) * (1.0 - t);
        let w1 = s * (1.0 - t);
        let w2 = s * t;
        let w3 = (1.0 - s) * t;
        [
            w0 * p[0][0] + w1 * p[1][0] + w2 * p[2][0] + w3 * p[3][0],
            w0 * p[0][1] + w1 * p[1][1] + w2 * p[2][1] + w3 * p[3][1],
        ]
    }

    fn check_geometry(&self, piece_id: &str) -> Result<()> {
        if self.0.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateQuad {
                piece_id: piece_id.into(),
                reason: "non-finite corner".into(),
            });
        }
        let area = self.signed_area();
        if area.abs() < 1.0 {
            return Err(Error::DegenerateQuad {
                piece_id: piece_id.into(),
                reason: format!("area {area:.3} px² is below 1"),
            });
        }
        if !self.is_convex_clockwise() {
            return Err(Error::DegenerateQuad {
                piece_id: piece_id.into(),
                reason: "corners must form a convex quadrilateral in clockwise order".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceImage {
    pub id: String,
    pub pixels: GrayImage,
}

impl SourceImage {
    pub fn new(id: impl Into<String>, pixels: GrayImage) -> Result<Self> {
        if pixels.width() == 0 || pixels.height() == 0 {
            return Err(Error::Validation("source image must be at least 1x1".into()));
        }
        Ok(SourceImage {
            id: id.into(),
            pixels,
        })
    }

    pub fn width(&self) -> u32 {
        self.pixels.width()
    }

    pub fn height(&self) -> u32 {
        self.pixels.height()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionAnnotation {
    pub piece_id: String,
    pub source_id: String,
    pub quad: Quad,
    pub class_label: ClassId,
    pub scheme_id: String,
    pub line_pair_index: u32,
}

impl RegionAnnotation {
    fn check_bounds(&self, width: u32, height: u32) -> Result<()> {
        for &[x, y] in &self.quad.0 {
            if x < 0.0 || y < 0.0 || x > width as f64 || y > height as f64 {
                return Err(Error::Validation(format!(
                    "piece {}: corner ({x}, {y}) lies outside source {} ({width}x{height})",
                    self.piece_id, self.source_id
                )));
            }
        }
        Ok(())
    }
}

/// A de-rotated rectangular crop of one annotated region.
#[derive(Debug, Clone, PartialEq)]
pub struct PieceImage {
    pub piece_id: String,
    pub pixels: GrayImage,
    pub class_label: ClassId,
    pub scheme_id: String,
}

impl PieceImage {
    pub fn width(&self) -> u32 {
        self.pixels.width()
    }

    pub fn height(&self) -> u32 {
        self.pixels.height()
    }

    /// Same provenance, different pixels.
    pub fn with_pixels(&self, pixels: GrayImage) -> Self {
        PieceImage {
            piece_id: self.piece_id.clone(),
            pixels,
            class_label: self.class_label,
            scheme_id: self.scheme_id.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceRef {
    pub id: String,
    pub path: PathBuf,
}

/// On-disk annotation document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationFile {
    pub schemes: Vec<ClassScheme>,
    pub sources: Vec<SourceRef>,
    pub regions: Vec<RegionAnnotation>,
}

/// A validated annotation file together with the directory its relative
/// source paths resolve against.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationSet {
    pub file: AnnotationFile,
    pub base_dir: PathBuf,
}

pub fn load_annotations(path: &Path) -> Result<AnnotationSet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: AnnotationFile = serde_json::from_str(&text).map_err(|e| Error::parse(path, e))?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let set = AnnotationSet { file, base_dir };
    let dims = set.source_dimensions()?;
    set.validate(&dims)?;
    Ok(set)
}

impl AnnotationSet {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.file).expect("annotation file serializes")
    }

    pub fn regions(&self) -> &[RegionAnnotation] {
        &self.file.regions
    }

    pub fn scheme(&self, id: &str) -> Option<&ClassScheme> {
        self.file.schemes.iter().find(|s| s.id == id)
    }

    /// The unique scheme with `n_classes` classes.
    pub fn scheme_with_classes(&self, n_classes: u32) -> Result<&ClassScheme> {
        let mut found = self.file.schemes.iter().filter(|s| s.n_classes == n_classes);
        match (found.next(), found.next()) {
            (Some(s), None) => Ok(s),
            (None, _) => Err(Error::Validation(format!(
                "no {n_classes}-class scheme declared"
            ))),
            (Some(_), Some(_)) => Err(Error::Validation(format!(
                "more than one {n_classes}-class scheme declared"
            ))),
        }
    }

    pub fn source_path(&self, source: &SourceRef) -> PathBuf {
        if source.path.is_absolute() {
            source.path.clone()
        } else {
            self.base_dir.join(&source.path)
        }
    }

    fn source_dimensions(&self) -> Result<HashMap<String, (u32, u32)>> {
        self.file
            .sources
            .iter()
            .map(|s| {
                let path = self.source_path(s);
                let dims = image::image_dimensions(&path)
                    .map_err(|source| Error::Image { path, source })?;
                Ok((s.id.clone(), dims))
            })
            .collect()
    }

    /// Checks every cross-reference, label range and quad against the given
    /// source dimensions.
    pub fn validate(&self, dims: &HashMap<String, (u32, u32)>) -> Result<()> {
        let mut scheme_ids = HashSet::new();
        for scheme in &self.file.schemes {
            scheme.validate()?;
            if !scheme_ids.insert(scheme.id.as_str()) {
                return Err(Error::Validation(format!("duplicate scheme id {}", scheme.id)));
            }
        }
        let mut source_ids = HashSet::new();
        for source in &self.file.sources {
            if !source_ids.insert(source.id.as_str()) {
                return Err(Error::Validation(format!("duplicate source id {}", source.id)));
            }
        }
        let mut piece_ids = HashSet::new();
        for region in &self.file.regions {
            if !piece_ids.insert(region.piece_id.as_str()) {
                return Err(Error::Validation(format!(
                    "duplicate piece id {}",
                    region.piece_id
                )));
            }
            let scheme = self.scheme(&region.scheme_id).ok_or_else(|| {
                Error::Validation(format!(
                    "piece {}: unknown scheme {}",
                    region.piece_id, region.scheme_id
                ))
            })?;
            if !scheme.contains(region.class_label) {
                return Err(Error::Validation(format!(
                    "piece {}: class {} is not valid under {} ({} classes)",
                    region.piece_id, region.class_label, scheme.id, scheme.n_classes
                )));
            }
            let &(w, h) = dims.get(&region.source_id).ok_or_else(|| {
                Error::Validation(format!(
                    "piece {}: undeclared source {}",
                    region.piece_id, region.source_id
                ))
            })?;
            region.quad.check_geometry(&region.piece_id)?;
            region.check_bounds(w, h)?;
        }
        Ok(())
    }

    pub fn load_sources(&self) -> Result<HashMap<String, SourceImage>> {
        self.file
            .sources
            .par_iter()
            .map(|s| {
                let pixels = load_luma(&self.source_path(s))?;
                Ok((s.id.clone(), SourceImage::new(s.id.clone(), pixels)?))
            })
            .collect()
    }

    /// Extracts every region matching `filter`, in annotation order.
    pub fn extract_pieces<F>(
        &self,
        sources: &HashMap<String, SourceImage>,
        filter: F,
    ) -> Result<Vec<PieceImage>>
    where
        F: Fn(&RegionAnnotation) -> bool + Sync,
    {
        self.file
            .regions
            .par_iter()
            .filter(|r| filter(r))
            .map(|r| {
                let src = sources.get(&r.source_id).ok_or_else(|| {
                    Error::Validation(format!("source {} not loaded", r.source_id))
                })?;
                extract_piece(src, r)
            })
            .collect()
    }
}

/// Resamples the annotated quad onto an axis-aligned rectangle so the
/// writing direction becomes horizontal.
pub fn extract_piece(img: &SourceImage, ann: &RegionAnnotation) -> Result<PieceImage> {
    ann.quad.check_geometry(&ann.piece_id)?;
    ann.check_bounds(img.width(), img.height())?;
    let (w, h) = ann.quad.piece_dimensions();
    if w == 0 || h == 0 {
        return Err(Error::DegenerateQuad {
            piece_id: ann.piece_id.clone(),
            reason: format!("resolves to an empty {w}x{h} piece"),
        });
    }
    if w < h {
        return Err(Error::Validation(format!(
            "piece {}: {w}x{h} is taller than wide; the first quad edge must follow the text line",
            ann.piece_id
        )));
    }
    let quad = ann.quad;
    let pixels = GrayImage::from_fn(w, h, |u, v| {
        let s = (u as f64 + 0.5) / w as f64;
        let t = (v as f64 + 0.5) / h as f64;
        let [x, y] = quad.map(s, t);
        let value = sample_bilinear(&img.pixels, snap(x - 0.5), snap(y - 0.5));
        Luma([clamp_u8(value)])
    });
    Ok(PieceImage {
        piece_id: ann.piece_id.clone(),
        pixels,
        class_label: ann.class_label,
        scheme_id: ann.scheme_id.clone(),
    })
}

/// Removes floating-point residue so grid-aligned crops copy pixels exactly.
fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn region(quad: Quad) -> RegionAnnotation {
        RegionAnnotation {
            piece_id: "p".into(),
            source_id: "s".into(),
            quad,
            class_label: 1,
            scheme_id: "4-class".into(),
            line_pair_index: 0,
        }
    }

    #[test]
    fn standard_schemes() {
        let s4 = ClassScheme::standard("a", 4).unwrap();
        assert_eq!(s4.author_of(2), Some(Author::Author1));
        assert_eq!(s4.author_of(3), Some(Author::Author2));
        let s8 = ClassScheme::standard("b", 8).unwrap();
        assert_eq!(s8.author_of(4), Some(Author::Author1));
        assert_eq!(s8.author_of(5), Some(Author::Author2));
        assert!(ClassScheme::standard("c", 6).is_err());
    }

    #[test]
    fn non_standard_mapping_rejected() {
        let mut s = ClassScheme::standard("a", 4).unwrap();
        s.author_of_class.insert(2, Author::Author2);
        assert!(s.validate().is_err());
    }

    #[test]
    fn identity_crop_is_exact_subarray() {
        let src = GrayImage::from_fn(130, 60, |x, y| Luma([((x * 7 + y * 13) % 256) as u8]));
        let img = SourceImage::new("s", src.clone()).unwrap();
        let piece = extract_piece(&img, &region(Quad::axis_aligned(0.0, 0.0, 100.0, 40.0))).unwrap();
        assert_eq!((piece.width(), piece.height()), (100, 40));
        for y in 0..40 {
            for x in 0..100 {
                assert_eq!(piece.pixels.get_pixel(x, y), src.get_pixel(x, y));
            }
        }
        let offset = extract_piece(&img, &region(Quad::axis_aligned(17.0, 9.0, 100.0, 40.0))).unwrap();
        assert_eq!(offset.pixels.get_pixel(0, 0), src.get_pixel(17, 9));
        assert_eq!(offset.pixels.get_pixel(99, 39), src.get_pixel(116, 48));
    }

    #[test]
    fn zero_area_quad_rejected() {
        let img = SourceImage::new("s", GrayImage::new(50, 50)).unwrap();
        let flat = Quad([[0.0, 0.0], [10.0, 0.0], [20.0, 0.0], [5.0, 0.0]]);
        assert!(matches!(
            extract_piece(&img, &region(flat)),
            Err(Error::DegenerateQuad { .. })
        ));
    }

    #[test]
    fn counterclockwise_quad_rejected() {
        let img = SourceImage::new("s", GrayImage::new(50, 50)).unwrap();
        let mut q = Quad::axis_aligned(0.0, 0.0, 20.0, 10.0);
        q.0.reverse();
        assert!(extract_piece(&img, &region(q)).is_err());
    }

    #[test]
    fn out_of_bounds_quad_rejected() {
        let img = SourceImage::new("s", GrayImage::new(50, 50)).unwrap();
        let q = Quad::axis_aligned(-3.0, 5.0, 20.0, 10.0);
        assert!(matches!(extract_piece(&img, &region(q)), Err(Error::Validation(_))));
    }

    #[test]
    fn dimensions_depend_on_geometry_only() {
        let q = Quad::axis_aligned(20.0, 30.0, 100.0, 40.0).rotated(10.0);
        assert_eq!(q.piece_dimensions(), (100, 40));
        let a = SourceImage::new("s", GrayImage::from_pixel(200, 120, Luma([3]))).unwrap();
        let b = SourceImage::new("s", GrayImage::from_fn(200, 120, |x, _| Luma([x as u8]))).unwrap();
        let pa = extract_piece(&a, &region(q)).unwrap();
        let pb = extract_piece(&b, &region(q)).unwrap();
        assert_eq!(pa.pixels.dimensions(), pb.pixels.dimensions());
    }
}
