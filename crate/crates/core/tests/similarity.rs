mod common;

use common::{block_oracle, off_block_oracle, off_diagonal_oracle, example4, example8};
use proptest::prelude::*;
use scribe::harness::PredictionRecord;
use scribe::similarity::{
    confusion_matrix, default_relations, much_greater, near_zero, scheme_pairs, similarity4, similarity8,
    sum_matrices, ConfusionMatrix, PairKey, RelationThresholds, SimilarityReport,
};

#[test]
fn example4_similarities() {
    let m = example4();
    assert_eq!(similarity4(&m, 3, 4).unwrap(), 24);
    assert_eq!(similarity4(&m, 1, 2).unwrap(), 11);
    assert_eq!(similarity4(&m, 4, 3).unwrap(), 24);
    assert_eq!(similarity4(&m, 2, 3).unwrap(), 0);
}

#[test]
fn example8_block_similarities() {
    let m = example8();
    assert_eq!(similarity8(&m, 3, 5).unwrap(), 11);
    assert_eq!(similarity8(&m, 1, 7).unwrap(), 7);
    for (i, j) in [(1, 3), (1, 5), (1, 7), (3, 5), (3, 7), (5, 7)] {
        assert_eq!(similarity8(&m, i, j).unwrap(), block_oracle(&m, i, j), "blocks {i},{j}");
    }
}

#[test]
fn eight_term_decomposition_sums_to_720() {
    let mut rows = vec![vec![0u64; 8]; 8];
    // right-top: rows 1-2, columns 7-8
    rows[0][6] = 65;
    rows[0][7] = 32;
    rows[1][6] = 7;
    rows[1][7] = 16;
    // left-bottom: rows 7-8, columns 1-2
    rows[6][0] = 63;
    rows[6][1] = 12;
    rows[7][0] = 218;
    rows[7][1] = 307;
    // matching cases never count
    rows[0][1] = 982;
    rows[7][6] = 400;
    let m = ConfusionMatrix::from_rows(rows).unwrap();
    assert_eq!(similarity8(&m, 1, 7).unwrap(), 720);
}

#[test]
fn records_reproduce_example4() {
    let t = example4();
    let mut records = Vec::new();
    for (i, row) in t.counts.iter().enumerate() {
        for (j, &count) in row.iter().enumerate() {
            for k in 0..count {
                let mut scores = vec![0.0; 4];
                scores[j] = 1.0;
                records.push(PredictionRecord::from_scores(format!("{i}-{j}-{k}"), Some(i as u32 + 1), scores).unwrap());
            }
        }
    }
    assert_eq!(confusion_matrix(&records, 4).unwrap().counts, t.counts);
}

#[test]
fn summing_example4_doubles_it() {
    let s = sum_matrices(&[example4(), example4()]).unwrap();
    assert_eq!(s, example4().scaled(2));
    let z = sum_matrices(&[example4(), ConfusionMatrix::zeros(4)]).unwrap();
    assert_eq!(z.counts, example4().counts);
}

#[test]
fn reported_ratio_is_much_greater() {
    let t = RelationThresholds::default();
    assert!(much_greater(1000, 103, &t));
    assert!(!much_greater(100, 90, &t));
    assert!(near_zero(0, 5, &t));
}

#[test]
fn twenty_matrices_sum_like_a_loop() {
    let mut rng = scribe::dataset::SplitMix64::new(42);
    let ms: Vec<ConfusionMatrix> = (0..20)
        .map(|_| ConfusionMatrix::from_rows((0..8).map(|_| (0..8).map(|_| rng.below(50)).collect()).collect()).unwrap())
        .collect();
    let summed = sum_matrices(&ms).unwrap();
    for i in 0..8 {
        for j in 0..8 {
            let mut acc = 0;
            for m in &ms {
                acc += m.counts[i][j];
            }
            assert_eq!(summed.counts[i][j], acc);
        }
    }
}

fn matrix(n: usize) -> impl Strategy<Value = ConfusionMatrix> {
    prop::collection::vec(prop::collection::vec(0u64..1000, n), n)
        .prop_map(|rows| ConfusionMatrix::from_rows(rows).unwrap())
}

proptest! {
    #[test]
    fn pairwise_similarity4_conserves_off_diagonal_mass(m in matrix(4)) {
        let sum: u64 = scheme_pairs(4).iter().map(|p| p.value(&m).unwrap()).sum();
        prop_assert_eq!(sum, off_diagonal_oracle(&m));
        prop_assert_eq!(m.off_diagonal_mass(), off_diagonal_oracle(&m));
    }

    #[test]
    fn block_similarity8_conserves_off_block_mass(m in matrix(8)) {
        let sum: u64 = scheme_pairs(8).iter().map(|p| p.value(&m).unwrap()).sum();
        prop_assert_eq!(sum, off_block_oracle(&m));
        prop_assert_eq!(m.off_block_mass(), off_block_oracle(&m));
    }

    #[test]
    fn similarity_is_symmetric_and_linear(m in matrix(8), c in 1u64..50) {
        let scaled = m.scaled(c);
        for i in 1..=8u32 {
            for j in (1..=8u32).filter(|&j| j != i) {
                prop_assert_eq!(similarity4(&m, i, j).unwrap(), similarity4(&m, j, i).unwrap());
                prop_assert_eq!(similarity4(&scaled, i, j).unwrap(), c * similarity4(&m, i, j).unwrap());
            }
        }
        for (i, j) in [(1, 3), (1, 5), (1, 7), (3, 5), (3, 7), (5, 7)] {
            prop_assert_eq!(similarity8(&scaled, i, j).unwrap(), c * similarity8(&m, i, j).unwrap());
            prop_assert_eq!(PairKey::blocks(i, j).value(&m).unwrap(), block_oracle(&m, i, j));
        }
    }

    #[test]
    fn relation_verdicts_survive_scaling(m4 in matrix(4), m8 in matrix(8), c in 1u64..100) {
        let t = RelationThresholds::default();
        for m in [m4, m8] {
            let a = SimilarityReport::build("x", &m, &default_relations(m.n), &t).unwrap();
            let b = SimilarityReport::build("x", &m.scaled(c), &default_relations(m.n), &t).unwrap();
            for (ra, rb) in a.relations.iter().zip(&b.relations) {
                prop_assert_eq!(ra.holds, rb.holds);
                prop_assert_eq!(ra.branch, rb.branch);
            }
        }
    }

    #[test]
    fn per_run_sum_matches_concatenated_records(
        runs in prop::collection::vec(prop::collection::vec((1u32..=4, 1u32..=4), 0..40), 1..6)
    ) {
        let to_records = |pairs: &[(u32, u32)], tag: usize| -> Vec<PredictionRecord> {
            pairs.iter().enumerate().map(|(k, &(t, p))| {
                let mut s = vec![0.0; 4];
                s[p as usize - 1] = 1.0;
                PredictionRecord::from_scores(format!("{tag}-{k}"), Some(t), s).unwrap()
            }).collect()
        };
        let per_run: Vec<ConfusionMatrix> = runs.iter().enumerate()
            .map(|(i, r)| confusion_matrix(&to_records(r, i), 4).unwrap())
            .collect();
        let all: Vec<PredictionRecord> = runs.iter().enumerate().flat_map(|(i, r)| to_records(r, i)).collect();
        prop_assert_eq!(sum_matrices(&per_run).unwrap().counts, confusion_matrix(&all, 4).unwrap().counts);
    }
}
