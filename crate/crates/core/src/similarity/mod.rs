//! Confusion matrices and the class-similarity measures derived from their
//! non-matching cells.

mod matrix;
mod relation;

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::geometry::ClassId;

pub use matrix::{confusion_matrix, similarity4, similarity8, sum_matrices, ConfusionMatrix};
pub use relation::{
    comparable, default_relations, much_greater, near_zero, relation_check, Branch, RelationCheck,
    RelationSpec, RelationThresholds,
};

/// An unordered pair of classes, or of neighbouring class pairs
/// `(i, i+1)` / `(j, j+1)` in the 8-class scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PairKey {
    Classes(ClassId, ClassId),
    /// Odd leading classes of the two blocks.
    Blocks(ClassId, ClassId),
}

impl PairKey {
    pub fn classes(i: ClassId, j: ClassId) -> Self {
        PairKey::Classes(i.min(j), i.max(j))
    }

    pub fn blocks(i: ClassId, j: ClassId) -> Self {
        PairKey::Blocks(i.min(j), i.max(j))
    }

    pub fn value(&self, m: &ConfusionMatrix) -> Result<u64> {
        match *self {
            PairKey::Classes(i, j) => similarity4(m, i, j),
            PairKey::Blocks(i, j) => similarity8(m, i, j),
        }
    }
}

impl fmt::Display for PairKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            PairKey::Classes(i, j) => write!(f, "({i},{j})"),
            PairKey::Blocks(i, j) => write!(f, "({},{};{},{})", i, i + 1, j, j + 1),
        }
    }
}

impl FromStr for PairKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Validation(format!("malformed pair key {s:?}"));
        let inner = s
            .strip_prefix('(')
            .and_then(|r| r.strip_suffix(')'))
            .ok_or_else(bad)?;
        let nums = |part: &str| -> Result<Vec<ClassId>> {
            part.split(',')
                .map(|n| n.trim().parse::<ClassId>().map_err(|_| bad()))
                .collect()
        };
        match inner.split_once(';') {
            None => match nums(inner)?.as_slice() {
                &[i, j] => Ok(PairKey::classes(i, j)),
                _ => Err(bad()),
            },
            Some((a, b)) => match (nums(a)?.as_slice(), nums(b)?.as_slice()) {
                (&[i, i1], &[j, j1]) if i % 2 == 1 && j % 2 == 1 && i1 == i + 1 && j1 == j + 1 => {
                    Ok(PairKey::blocks(i, j))
                }
                _ => Err(bad()),
            },
        }
    }
}

impl Serialize for PairKey {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PairKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Every unordered pair for a scheme: plain classes for 4, blocks for 8.
pub fn scheme_pairs(scheme: u32) -> Vec<PairKey> {
    match scheme {
        8 => {
            let odd: Vec<ClassId> = (1..=8).step_by(2).collect();
            let mut out = Vec::new();
            for (a, &i) in odd.iter().enumerate() {
                for &j in &odd[a + 1..] {
                    out.push(PairKey::blocks(i, j));
                }
            }
            out
        }
        n => {
            let mut out = Vec::new();
            for i in 1..=n {
                for j in i + 1..=n {
                    out.push(PairKey::classes(i, j));
                }
            }
            out
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub model_id: String,
    pub scheme: u32,
    pub pairs: BTreeMap<PairKey, u64>,
    /// Off-diagonal (4-class) or off-block (8-class) mass.
    pub off_mass: u64,
    pub relations: Vec<RelationCheck>,
}

impl SimilarityReport {
    /// Pair values of one model's (summed) matrix, checked against
    /// `relations`.
    pub fn build(
        model_id: impl Into<String>,
        matrix: &ConfusionMatrix,
        relations: &[RelationSpec],
        thresholds: &RelationThresholds,
    ) -> Result<Self> {
        let scheme = matrix.n;
        let pairs = scheme_pairs(scheme)
            .into_iter()
            .map(|k| Ok((k, k.value(matrix)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        let off_mass = if scheme == 8 {
            matrix.off_block_mass()
        } else {
            matrix.off_diagonal_mass()
        };
        let relations = relation_check(&pairs, off_mass, relations, thresholds)?;
        Ok(SimilarityReport {
            model_id: model_id.into(),
            scheme,
            pairs,
            off_mass,
            relations,
        })
    }

    pub fn value(&self, pair: &PairKey) -> Result<u64> {
        self.pairs
            .get(pair)
            .copied()
            .ok_or_else(|| Error::MissingPair(pair.to_string()))
    }

    /// Orders `s(a)` of this report against `s(b)` of `other`. Similarity
    /// values are only comparable within one model.
    pub fn compare(&self, a: &PairKey, other: &SimilarityReport, b: &PairKey) -> Result<Ordering> {
        if self.model_id != other.model_id {
            return Err(Error::CrossModel(self.model_id.clone(), other.model_id.clone()));
        }
        Ok(self.value(a)?.cmp(&other.value(b)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_key_text_roundtrip() {
        for k in [PairKey::classes(3, 1), PairKey::blocks(7, 1)] {
            let s = k.to_string();
            assert_eq!(s.parse::<PairKey>().unwrap(), k);
        }
        assert_eq!(PairKey::blocks(1, 7).to_string(), "(1,2;7,8)");
        assert!("(1,2;4,5)".parse::<PairKey>().is_err());
        assert!("(1,3;5,6)".parse::<PairKey>().is_err());
        assert!("1,2".parse::<PairKey>().is_err());
    }

    #[test]
    fn scheme_pair_counts() {
        assert_eq!(scheme_pairs(4).len(), 6);
        assert_eq!(scheme_pairs(8).len(), 6);
    }

    #[test]
    fn cross_model_comparison_refused() {
        let m = ConfusionMatrix::zeros(4);
        let rels = default_relations(4);
        let t = RelationThresholds::default();
        let a = SimilarityReport::build("vgg19", &m, &rels, &t).unwrap();
        let b = SimilarityReport::build("resnet50", &m, &rels, &t).unwrap();
        let k = PairKey::classes(1, 2);
        assert!(matches!(a.compare(&k, &b, &k), Err(Error::CrossModel(..))));
        assert_eq!(a.compare(&k, &a, &PairKey::classes(3, 4)).unwrap(), Ordering::Equal);
    }

    #[test]
    fn report_json_uses_pair_strings() {
        let m = ConfusionMatrix::zeros(8);
        let r = SimilarityReport::build("m", &m, &default_relations(8), &RelationThresholds::default()).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["pairs"]["(1,2;7,8)"], 0);
        assert_eq!(v["scheme"], 8);
        let back: SimilarityReport = serde_json::from_value(v).unwrap();
        assert_eq!(back, r);
    }
}
