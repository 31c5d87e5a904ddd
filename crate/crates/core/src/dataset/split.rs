use std::collections::{BTreeMap, HashSet};

use crate::error::{Error, Result};
use crate::geometry::{ClassId, PieceImage};

use super::rng::SplitMix64;

/// Test pieces kept for a class of `count` pieces: `ceil((1 - ratio) * count)`,
/// clamped so both partitions stay non-empty.
pub fn test_count(count: usize, ratio: f64) -> usize {
    let raw = ((1.0 - ratio) * count as f64 - 1e-9).ceil();
    (raw.max(1.0) as usize).min(count.saturating_sub(1))
}

/// Stratified, seeded piece-level split.
///
/// Within each class (ascending) the piece ids are sorted, shuffled with one
/// shared SplitMix64 stream seeded by `seed`, and the first
/// [`test_count`] ids go to test. Both outputs keep input order.
pub fn split_pieces(
    pieces: Vec<PieceImage>,
    ratio: f64,
    seed: u64,
) -> Result<(Vec<PieceImage>, Vec<PieceImage>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Validation(format!("split ratio {ratio} must lie in (0, 1)")));
    }
    let test_ids = select_test_ids(pieces.iter().map(|p| (p.class_label, p.piece_id.as_str())), ratio, seed)?;
    let (test, train): (Vec<_>, Vec<_>) = pieces
        .into_iter()
        .partition(|p| test_ids.contains(&p.piece_id));
    Ok((train, test))
}

fn select_test_ids<'a, I>(pieces: I, ratio: f64, seed: u64) -> Result<HashSet<String>>
where
    I: IntoIterator<Item = (ClassId, &'a str)>,
{
    let mut by_class: BTreeMap<ClassId, Vec<&'a str>> = BTreeMap::new();
    for (class, id) in pieces {
        by_class.entry(class).or_default().push(id);
    }
    let mut rng = SplitMix64::new(seed);
    let mut test = HashSet::new();
    for (class, mut ids) in by_class {
        if ids.len() < 2 {
            return Err(Error::InsufficientPieces {
                class,
                count: ids.len(),
            });
        }
        let n_test = test_count(ids.len(), ratio);
        ids.sort_unstable();
        rng.shuffle(&mut ids);
        test.extend(ids.into_iter().take(n_test).map(str::to_owned));
    }
    Ok(test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::GrayImage;

    fn pieces(per_class: &[usize]) -> Vec<PieceImage> {
        let mut out = Vec::new();
        for (c, &k) in per_class.iter().enumerate() {
            for i in 0..k {
                out.push(PieceImage {
                    piece_id: format!("c{}-{i:02}", c + 1),
                    pixels: GrayImage::new(1, 1),
                    class_label: c as u32 + 1,
                    scheme_id: "s".into(),
                });
            }
        }
        out
    }

    #[test]
    fn ten_pieces_split_eight_two() {
        let (train, test) = split_pieces(pieces(&[10]), 0.8, 1033).unwrap();
        assert_eq!((train.len(), test.len()), (8, 2));
    }

    #[test]
    fn split_is_deterministic() {
        let a = split_pieces(pieces(&[10, 7]), 0.8, 2201).unwrap();
        let b = split_pieces(pieces(&[10, 7]), 0.8, 2201).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn test_count_rounding() {
        assert_eq!(test_count(10, 0.8), 2);
        assert_eq!(test_count(5, 0.8), 1);
        assert_eq!(test_count(8, 0.8), 2);
        assert_eq!(test_count(10, 0.7), 3);
        assert_eq!(test_count(2, 0.1), 1);
        assert_eq!(test_count(2, 0.99), 1);
    }

    #[test]
    fn singleton_class_rejected() {
        assert!(matches!(
            split_pieces(pieces(&[3, 1]), 0.8, 1),
            Err(Error::InsufficientPieces { class: 2, count: 1 })
        ));
    }

    #[test]
    fn bad_ratio_rejected() {
        assert!(split_pieces(pieces(&[4]), 1.0, 1).is_err());
        assert!(split_pieces(pieces(&[4]), 0.0, 1).is_err());
    }
}
