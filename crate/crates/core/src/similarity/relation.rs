//! Mechanical versions of the informal relations `~0`, `>>` and `~` used to
//! compare similarity values within one model.
//!
//! Each predicate compares a ratio of two integers, so multiplying every
//! count by the same positive integer never changes a verdict.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::PairKey;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelationThresholds {
    /// `s ~ 0` when `s <= fraction * total off-diagonal (or off-block) mass`.
    pub near_zero_fraction: f64,
    /// `a >> b` when `a > 0` and `a >= factor * b`.
    pub much_greater_factor: f64,
    /// `a ~ b` when `low <= a / b <= high`.
    pub comparable_low: f64,
    pub comparable_high: f64,
}

impl Default for RelationThresholds {
    fn default() -> Self {
        RelationThresholds {
            near_zero_fraction: 0.01,
            much_greater_factor: 5.0,
            comparable_low: 0.8,
            comparable_high: 1.25,
        }
    }
}

pub fn near_zero(s: u64, total: u64, t: &RelationThresholds) -> bool {
    if total == 0 {
        return s == 0;
    }
    s as f64 / total as f64 <= t.near_zero_fraction
}

pub fn much_greater(a: u64, b: u64, t: &RelationThresholds) -> bool {
    if b == 0 {
        return a > 0;
    }
    a as f64 / b as f64 >= t.much_greater_factor
}

pub fn comparable(a: u64, b: u64, t: &RelationThresholds) -> bool {
    if b == 0 {
        return a == 0;
    }
    let r = a as f64 / b as f64;
    t.comparable_low <= r && r <= t.comparable_high
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RelationSpec {
    /// `s(pair) ~ 0`
    NearZero { pair: PairKey },
    /// `s(top) > s(mid) >> s(low) >= 0`, or `s(top) ~ s(mid) >> s(low) >= 0`
    Chain {
        top: PairKey,
        mid: PairKey,
        low: PairKey,
    },
}

impl RelationSpec {
    pub fn describe(&self) -> String {
        match self {
            RelationSpec::NearZero { pair } => format!("s{pair} ~ 0"),
            RelationSpec::Chain { top, mid, low } => {
                format!("s{top} > s{mid} >> s{low}  or  s{top} ~ s{mid} >> s{low}")
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// `top > mid >> low`
    Greater,
    /// `top ~ mid >> low`
    Comparable,
    Neither,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationCheck {
    pub relation: RelationSpec,
    pub description: String,
    pub values: Vec<u64>,
    pub holds: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branch: Option<Branch>,
}

/// Default checks for a scheme: the cross-author near-zero pair and the
/// ordering chain.
pub fn default_relations(scheme: u32) -> Vec<RelationSpec> {
    match scheme {
        4 => vec![
            RelationSpec::NearZero {
                pair: PairKey::classes(2, 3),
            },
            RelationSpec::Chain {
                top: PairKey::classes(1, 4),
                mid: PairKey::classes(3, 4),
                low: PairKey::classes(1, 3),
            },
        ],
        8 => vec![
            RelationSpec::NearZero {
                pair: PairKey::blocks(3, 5),
            },
            RelationSpec::Chain {
                top: PairKey::blocks(1, 7),
                mid: PairKey::blocks(5, 7),
                low: PairKey::blocks(1, 5),
            },
        ],
        _ => Vec::new(),
    }
}

/// Evaluates each relation against the pair values of one model.
pub fn relation_check(
    values: &BTreeMap<PairKey, u64>,
    total_off_mass: u64,
    relations: &[RelationSpec],
    thresholds: &RelationThresholds,
) -> Result<Vec<RelationCheck>> {
    let get = |k: &PairKey| {
        values
            .get(k)
            .copied()
            .ok_or_else(|| Error::MissingPair(k.to_string()))
    };
    relations
        .iter()
        .map(|rel| {
            let check = match rel {
                RelationSpec::NearZero { pair } => {
                    let s = get(pair)?;
                    RelationCheck {
                        relation: rel.clone(),
                        description: rel.describe(),
                        values: vec![s],
                        holds: near_zero(s, total_off_mass, thresholds),
                        branch: None,
                    }
                }
                RelationSpec::Chain { top, mid, low } => {
                    let (a, b, c) = (get(top)?, get(mid)?, get(low)?);
                    let tail = much_greater(b, c, thresholds);
                    let branch = if tail && a > b {
                        Branch::Greater
                    } else if tail && comparable(a, b, thresholds) {
                        Branch::Comparable
                    } else {
                        Branch::Neither
                    };
                    RelationCheck {
                        relation: rel.clone(),
                        description: rel.describe(),
                        values: vec![a, b, c],
                        holds: branch != Branch::Neither,
                        branch: Some(branch),
                    }
                }
            };
            Ok(check)
        })
        .collect()
}
