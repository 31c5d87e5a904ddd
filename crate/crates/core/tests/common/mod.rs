//! Fixtures and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::HashSet;

use image::{GrayImage, Luma};
use scribe::dataset::SplitMix64;
use scribe::geometry::{ClassId, PieceImage};
use scribe::harness::{RunManifest, TrainingConfig};
use scribe::similarity::ConfusionMatrix;
use scribe::vote::{AuthorCounts, RunVerdict, Verdict};

/// Dummy 4-class confusion matrix (rows true, columns predicted).
pub fn example4() -> ConfusionMatrix {
    ConfusionMatrix::from_rows(vec![
        vec![45, 11, 0, 0],
        vec![0, 73, 0, 0],
        vec![0, 0, 31, 24],
        vec![0, 0, 0, 67],
    ])
    .unwrap()
}

/// Dummy 8-class confusion matrix.
pub fn example8() -> ConfusionMatrix {
    ConfusionMatrix::from_rows(vec![
        vec![45, 11, 0, 0, 0, 0, 0, 0],
        vec![6, 73, 0, 0, 0, 0, 0, 7],
        vec![0, 0, 31, 24, 0, 0, 0, 0],
        vec![0, 0, 0, 67, 0, 0, 0, 0],
        vec![0, 0, 0, 0, 5, 1, 0, 0],
        vec![0, 0, 11, 0, 25, 11, 0, 0],
        vec![0, 0, 0, 0, 0, 0, 2, 0],
        vec![0, 0, 0, 0, 0, 0, 5, 14],
    ])
    .unwrap()
}

/// Mass between the blocks holding classes `i` and `j`, found by scanning
/// every cell and asking which block its row and column fall in.
pub fn block_oracle(m: &ConfusionMatrix, i: ClassId, j: ClassId) -> u64 {
    let block = |c: usize| c / 2;
    let (bi, bj) = (block(i as usize - 1), block(j as usize - 1));
    let mut total = 0;
    for (r, row) in m.counts.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            let (br, bc) = (block(r), block(c));
            if (br == bi && bc == bj) || (br == bj && bc == bi) {
                total += v;
            }
        }
    }
    total
}

pub fn off_diagonal_oracle(m: &ConfusionMatrix) -> u64 {
    let mut total = 0;
    for (r, row) in m.counts.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            if r != c {
                total += v;
            }
        }
    }
    total
}

pub fn off_block_oracle(m: &ConfusionMatrix) -> u64 {
    let mut total = 0;
    for (r, row) in m.counts.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            if r / 2 != c / 2 {
                total += v;
            }
        }
    }
    total
}

/// `runs_a1` runs decided for Author1 and `runs_a2` for Author2, each over
/// ten tiles.
pub fn model_runs(model_id: &str, runs_a1: usize, runs_a2: usize) -> Vec<RunVerdict> {
    let mut out = Vec::new();
    for k in 0..runs_a1 + runs_a2 {
        let (counts, verdict) = if k < runs_a1 {
            (AuthorCounts { author1: 8, author2: 2 }, Verdict::Author1)
        } else {
            (AuthorCounts { author1: 2, author2: 8 }, Verdict::Author2)
        };
        out.push(RunVerdict {
            model_id: model_id.into(),
            dataset_type: format!("v{:02}", k % 8),
            seed: k as u64,
            counts,
            verdict,
        });
    }
    out
}

pub fn baseline_manifest(dataset_type: &str, seed: u64) -> RunManifest {
    RunManifest::new("baseline-centroid", dataset_type, seed, TrainingConfig::baseline())
}

/// Piece filled with a deterministic pattern.
pub fn piece(id: &str, class: ClassId, scheme: &str, w: u32, h: u32) -> PieceImage {
    let salt = id.bytes().fold(0u32, |a, b| a.wrapping_mul(31).wrapping_add(b as u32));
    PieceImage {
        piece_id: id.into(),
        pixels: GrayImage::from_fn(w, h, |x, y| Luma([((x * 3 + y * 5 + salt) % 251) as u8])),
        class_label: class,
        scheme_id: scheme.into(),
    }
}

/// Every valid top-left offset of a `size` window on the `stride` grid.
pub fn brute_force_offsets(w: u32, h: u32, size: u32, stride: u32) -> Vec<(u32, u32)> {
    let mut out = Vec::new();
    let mut y = 0;
    while y + size <= h {
        let mut x = 0;
        while x + size <= w {
            out.push((x, y));
            x += stride;
        }
        y += stride;
    }
    out
}

/// Test ids of a stratified split, re-derived from the documented procedure:
/// per class in ascending order, sort ids, shuffle with one shared stream
/// (Fisher-Yates from the last index, bound by the high half of the 128-bit
/// product), take the first `ceil((1 - ratio) * k)` clamped to `1..k-1`.
pub fn split_oracle(pieces: &[(ClassId, String)], ratio: f64, seed: u64) -> HashSet<String> {
    let mut classes: Vec<ClassId> = pieces.iter().map(|(c, _)| *c).collect();
    classes.sort_unstable();
    classes.dedup();
    let mut state = seed;
    let mut next = move || {
        state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    };
    let mut test = HashSet::new();
    for c in classes {
        let mut ids: Vec<&String> = pieces.iter().filter(|(k, _)| *k == c).map(|(_, id)| id).collect();
        ids.sort();
        for i in (1..ids.len()).rev() {
            let j = ((next() as u128 * (i as u128 + 1)) >> 64) as usize;
            ids.swap(i, j);
        }
        let k = ids.len();
        let mut n = ((1.0 - ratio) * k as f64).ceil() as usize;
        if ((1.0 - ratio) * k as f64 - (n as f64 - 1.0)).abs() < 1e-9 {
            // (1 - ratio) * k landed on an integer up to rounding noise
            n -= 1;
        }
        let n = n.clamp(1, k - 1);
        test.extend(ids.into_iter().take(n).cloned());
    }
    test
}

/// Random grayscale image for property tests.
pub fn noise_image(w: u32, h: u32, seed: u64) -> GrayImage {
    let mut rng = SplitMix64::new(seed);
    GrayImage::from_fn(w, h, |_, _| Luma([rng.below(256) as u8]))
}
