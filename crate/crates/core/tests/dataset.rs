mod common;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use common::{brute_force_offsets, noise_image, piece, split_oracle};
use image::{imageops, GrayImage, Luma};
use proptest::prelude::*;
use scribe::dataset::{
    build_dataset, chains, read_dataset, split_pieces, tile, tile_count, write_dataset, AugmentationChain,
    AugmentationParams, DatasetSpec, DatasetType, TileStorage,
};
use scribe::geometry::{
    extract_piece, load_annotations, AnnotationFile, ClassScheme, PieceImage, Quad, RegionAnnotation, SourceImage,
    SourceRef,
};
use scribe::imaging::encode_png;
use scribe::Error;

fn smooth(x: f64, y: f64) -> f64 {
    128.0 + 50.0 * (x / 11.0).sin() + 40.0 * (y / 7.0).cos()
}

fn region(id: &str, quad: Quad, class: u32, scheme: &str) -> RegionAnnotation {
    RegionAnnotation {
        piece_id: id.into(),
        source_id: "src".into(),
        quad,
        class_label: class,
        scheme_id: scheme.into(),
        line_pair_index: 0,
    }
}

#[test]
fn rotated_region_recovers_the_unrotated_texture() {
    let (w, h) = (300u32, 200u32);
    let (cx, cy) = (150.0, 100.0);
    let theta = 10f64.to_radians();
    let plain = GrayImage::from_fn(w, h, |x, y| Luma([smooth(x as f64 + 0.5, y as f64 + 0.5).round() as u8]));
    // the same texture turned by +10 degrees about (cx, cy)
    let turned = GrayImage::from_fn(w, h, |x, y| {
        let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
        let (s, c) = theta.sin_cos();
        let (qx, qy) = (cx + c * dx + s * dy, cy - s * dx + c * dy);
        Luma([smooth(qx, qy).round() as u8])
    });
    let quad = Quad::axis_aligned(100.0, 80.0, 100.0, 40.0);
    let straight = extract_piece(&SourceImage::new("a", plain).unwrap(), &region("p", quad, 1, "4-class")).unwrap();
    let rotated =
        extract_piece(&SourceImage::new("b", turned).unwrap(), &region("p", quad.rotated(10.0), 1, "4-class")).unwrap();
    assert_eq!(rotated.pixels.dimensions(), (100, 40));
    let n = (100 * 40) as f64;
    let vs_crop: f64 = straight
        .pixels
        .pixels()
        .zip(rotated.pixels.pixels())
        .map(|(a, b)| (a[0] as f64 - b[0] as f64).abs())
        .sum::<f64>()
        / n;
    let vs_closed_form: f64 = rotated
        .pixels
        .enumerate_pixels()
        .map(|(u, v, p)| (p[0] as f64 - smooth(100.0 + u as f64 + 0.5, 80.0 + v as f64 + 0.5)).abs())
        .sum::<f64>()
        / n;
    assert!(vs_crop <= 8.0, "mean abs diff to unrotated crop {vs_crop}");
    assert!(vs_closed_form <= 8.0, "mean abs diff to closed form {vs_closed_form}");
}

fn write_annotations(dir: &Path, regions: Vec<RegionAnnotation>) -> std::path::PathBuf {
    let img = GrayImage::from_fn(200, 100, |x, y| Luma([((x + y) % 256) as u8]));
    fs::write(dir.join("src.png"), encode_png(&img).unwrap()).unwrap();
    let file = AnnotationFile {
        schemes: vec![ClassScheme::standard("4-class", 4).unwrap(), ClassScheme::standard("8-class", 8).unwrap()],
        sources: vec![SourceRef {
            id: "src".into(),
            path: "src.png".into(),
        }],
        regions,
    };
    let path = dir.join("annotations.json");
    fs::write(&path, serde_json::to_string_pretty(&file).unwrap()).unwrap();
    path
}

#[test]
fn two_region_file_loads_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_annotations(
        dir.path(),
        vec![
            region("a", Quad::axis_aligned(0.0, 0.0, 100.0, 40.0), 1, "4-class"),
            region("b", Quad::axis_aligned(20.0, 50.0, 100.0, 40.0).rotated(3.0), 7, "8-class"),
        ],
    );
    let set = load_annotations(&path).unwrap();
    assert_eq!(set.regions().len(), 2);
    let again: AnnotationFile = serde_json::from_str(&set.to_json()).unwrap();
    assert_eq!(again, set.file);
    let sources = set.load_sources().unwrap();
    let pieces = set.extract_pieces(&sources, |_| true).unwrap();
    assert_eq!(pieces[0].pixels.dimensions(), (100, 40));
}

#[test]
fn out_of_bounds_corner_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let quad = Quad([[-3.0, 5.0], [97.0, 5.0], [97.0, 45.0], [-3.0, 45.0]]);
    let path = write_annotations(dir.path(), vec![region("a", quad, 1, "4-class")]);
    assert!(matches!(load_annotations(&path), Err(Error::Validation(_))));
}

#[test]
fn class_nine_under_eight_classes_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_annotations(dir.path(), vec![region("a", Quad::axis_aligned(0.0, 0.0, 100.0, 40.0), 9, "8-class")]);
    assert!(matches!(load_annotations(&path), Err(Error::Validation(_))));
}

#[test]
fn malformed_file_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("annotations.json");
    fs::write(&path, "{\"schemes\": [").unwrap();
    let err = load_annotations(&path).unwrap_err();
    assert!(matches!(err, Error::Parse { .. }));
    assert!(err.is_validation());
}

#[test]
fn split_matches_documented_procedure() {
    let mut pieces = Vec::new();
    for class in 1..=4u32 {
        for k in 0..(3 + class as usize * 2) {
            pieces.push(piece(&format!("c{class}-{k:02}"), class, "4-class", 50, 20));
        }
    }
    let ids: Vec<(u32, String)> = pieces.iter().map(|p| (p.class_label, p.piece_id.clone())).collect();
    for seed in [1033, 1931, 2201, 4179, 9325] {
        let (train, test) = split_pieces(pieces.clone(), 0.8, seed).unwrap();
        let got: HashSet<String> = test.iter().map(|p| p.piece_id.clone()).collect();
        assert_eq!(got, split_oracle(&ids, 0.8, seed), "seed {seed}");
        assert_eq!(train.len() + test.len(), pieces.len());
    }
}

#[test]
fn default_seeds_give_different_partitions_of_twenty() {
    let pieces: Vec<PieceImage> = (0..20).map(|k| piece(&format!("p{k:02}"), 1, "4-class", 50, 20)).collect();
    let ids: Vec<(u32, String)> = pieces.iter().map(|p| (1, p.piece_id.clone())).collect();
    let a = split_oracle(&ids, 0.8, 1033);
    let b = split_oracle(&ids, 0.8, 1931);
    assert_ne!(a, b);
    let (_, test_a) = split_pieces(pieces.clone(), 0.8, 1033).unwrap();
    let (_, test_b) = split_pieces(pieces, 0.8, 1931).unwrap();
    assert_eq!(test_a.iter().map(|p| p.piece_id.clone()).collect::<HashSet<_>>(), a);
    assert_eq!(test_b.iter().map(|p| p.piece_id.clone()).collect::<HashSet<_>>(), b);
}

#[test]
fn default_product_enumerates_108_chains() {
    let p = AugmentationParams::default();
    let mut count = 0;
    for _ in &p.shine_factors {
        for _ in &p.shift_offsets_h {
            for _ in &p.shift_offsets_v {
                for _flip_h in [false, true] {
                    for _flip_v in [false, true] {
                        count += 1;
                    }
                }
            }
        }
    }
    assert_eq!(count, 108);
    let got = chains(&p, false);
    assert_eq!(got.len(), count);
    assert_eq!(got.iter().map(|c| c.to_string()).collect::<HashSet<_>>().len(), count, "chains are distinct");
    assert_eq!(chains(&p, true).len(), 3 * count);
}

#[test]
fn tile_examples_match_enumeration() {
    for (w, h, s, stride) in [(100, 40, 40, 20), (40, 40, 40, 7), (60, 40, 40, 10)] {
        let p = piece("p", 1, "4-class", w, h);
        let tiles = tile(&p, s, stride).unwrap();
        let offsets: Vec<(u32, u32)> = tiles.iter().map(|t| (t.offset_x, t.offset_y)).collect();
        assert_eq!(offsets, brute_force_offsets(w, h, s, stride));
    }
}

fn small_fixture() -> Vec<PieceImage> {
    let mut pieces = Vec::new();
    for class in 1..=4u32 {
        for k in 0..2u32 {
            pieces.push(piece(&format!("c{class}-{k}"), class, "4-class", 60 + 10 * class + 7 * k, 30 + 3 * k));
        }
    }
    pieces
}

#[test]
fn identity_dataset_counts_match_per_piece_tiling() {
    let pieces = small_fixture();
    let spec = DatasetSpec::for_type(DatasetType::V01, "4-class", 1033).with_augmentation(AugmentationParams::identity());
    let ds = build_dataset(pieces.clone(), &spec).unwrap();
    let size = pieces.iter().map(|p| p.width().min(p.height())).min().unwrap();
    assert_eq!(ds.tile_size, size);
    let ids: Vec<(u32, String)> = pieces.iter().map(|p| (p.class_label, p.piece_id.clone())).collect();
    let test_ids = split_oracle(&ids, spec.split_ratio, spec.seed);
    let mut train = BTreeMap::new();
    let mut test = BTreeMap::new();
    for p in &pieces {
        // four flip variants of the same size
        let n = 4 * brute_force_offsets(p.width(), p.height(), size, spec.stride_px).len();
        let side = if test_ids.contains(&p.piece_id) { &mut test } else { &mut train };
        *side.entry(p.class_label).or_insert(0) += n;
    }
    assert_eq!(ds.counts.train, train);
    assert_eq!(ds.counts.test, test);
    let train_pieces: HashSet<_> = ds.train.iter().map(|s| &s.provenance.piece_id).collect();
    assert!(ds.test.iter().all(|s| !train_pieces.contains(&s.provenance.piece_id)));
}

#[test]
fn rebuilding_gives_byte_identical_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let spec = DatasetSpec::for_type(DatasetType::V02, "4-class", 2201).with_augmentation(AugmentationParams {
        shine_factors: vec![0.9, 1.0],
        shift_offsets_h: vec![0, 10],
        shift_offsets_v: vec![0],
        zoom_factors: vec![1.0, 1.1],
    });
    let mut manifests = Vec::new();
    for (k, storage) in [TileStorage::Files, TileStorage::Files, TileStorage::Inline].into_iter().enumerate() {
        let ds = build_dataset(small_fixture(), &spec).unwrap();
        let path = write_dataset(&ds, &dir.path().join(k.to_string()), storage).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(back.train.len(), ds.train.len());
        assert_eq!(back.test[0].pixels, ds.test[0].pixels);
        manifests.push(fs::read(path).unwrap());
    }
    assert_eq!(manifests[0], manifests[1]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn closed_form_tile_count(w in 1u32..300, h in 1u32..300, size in 1u32..120, stride in 1u32..60) {
        let expected = brute_force_offsets(w, h, size, stride).len() as u32;
        prop_assert_eq!(tile_count(w, h, size, stride), expected);
    }

    #[test]
    fn flips_are_involutions(w in 1u32..40, h in 1u32..40, seed in any::<u64>()) {
        let img = noise_image(w, h, seed);
        prop_assert_eq!(imageops::flip_horizontal(&imageops::flip_horizontal(&img)), img.clone());
        let both = AugmentationChain { flip_h: true, flip_v: true, ..AugmentationChain::IDENTITY };
        prop_assert_eq!(both.apply(&both.apply(&img)), img.clone());
        prop_assert_eq!(AugmentationChain::IDENTITY.apply(&img), img);
    }

    #[test]
    fn splits_never_leak(sizes in prop::collection::vec(2usize..12, 1..6), ratio in 0.05f64..0.95, seed in any::<u64>()) {
        let mut pieces = Vec::new();
        for (c, &k) in sizes.iter().enumerate() {
            for i in 0..k {
                pieces.push(piece(&format!("{c}-{i}"), c as u32 + 1, "s", 8, 4));
            }
        }
        let (train, test) = split_pieces(pieces.clone(), ratio, seed).unwrap();
        let a: HashSet<_> = train.iter().map(|p| p.piece_id.clone()).collect();
        let b: HashSet<_> = test.iter().map(|p| p.piece_id.clone()).collect();
        prop_assert!(a.is_disjoint(&b));
        prop_assert_eq!(a.len() + b.len(), pieces.len());
        for c in 1..=sizes.len() as u32 {
            prop_assert!(train.iter().any(|p| p.class_label == c));
            prop_assert!(test.iter().any(|p| p.class_label == c));
        }
    }
}
