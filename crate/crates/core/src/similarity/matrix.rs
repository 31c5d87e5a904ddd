use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ClassId;
use crate::harness::PredictionRecord;

/// Row = true class, column = predicted class, both 1-indexed in the API.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub n: u32,
    pub counts: Vec<Vec<u64>>,
    #[serde(default)]
    pub provenance: Vec<String>,
}

impl ConfusionMatrix {
    pub fn zeros(n: u32) -> Self {
        ConfusionMatrix {
            n,
            counts: vec![vec![0; n as usize]; n as usize],
            provenance: Vec::new(),
        }
    }

    pub fn from_rows(rows: Vec<Vec<u64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::Empty("confusion matrix rows"));
        }
        if let Some(bad) = rows.iter().find(|r| r.len() != n) {
            return Err(Error::DimensionMismatch(bad.len(), n));
        }
        Ok(ConfusionMatrix {
            n: n as u32,
            counts: rows,
            provenance: Vec::new(),
        })
    }

    pub fn with_provenance(mut self, run_id: impl Into<String>) -> Self {
        self.provenance.push(run_id.into());
        self
    }

    /// `a_{i,j}`, 1-indexed.
    pub fn get(&self, i: ClassId, j: ClassId) -> u64 {
        self.counts[i as usize - 1][j as usize - 1]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn diagonal_mass(&self) -> u64 {
        (0..self.n as usize).map(|i| self.counts[i][i]).sum()
    }

    pub fn off_diagonal_mass(&self) -> u64 {
        self.total() - self.diagonal_mass()
    }

    /// Mass outside the 2x2 blocks pairing classes `(1,2), (3,4), ...`.
    pub fn off_block_mass(&self) -> u64 {
        let mut mass = 0;
        for (i, row) in self.counts.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if i / 2 != j / 2 {
                    mass += v;
                }
            }
        }
        mass
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn scaled(&self, factor: u64) -> Self {
        ConfusionMatrix {
            n: self.n,
            counts: self
                .counts
                .iter()
                .map(|r| r.iter().map(|v| v * factor).collect())
                .collect(),
            provenance: self.provenance.clone(),
        }
    }

    /// CSV with a header row and a leading column of class labels.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("true\\predicted");
        for j in 1..=self.n {
            write!(out, ",{j}").unwrap();
        }
        out.push('\n');
        for (i, row) in self.counts.iter().enumerate() {
            write!(out, "{}", i + 1).unwrap();
            for v in row {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Tallies labelled records into an `n`x`n` matrix.
pub fn confusion_matrix(records: &[PredictionRecord], n: u32) -> Result<ConfusionMatrix> {
    let mut m = ConfusionMatrix::zeros(n);
    for r in records {
        let t = r.true_class.ok_or_else(|| {
            Error::Validation(format!("record {} has no true class", r.sample_id))
        })?;
        for c in [t, r.predicted_class] {
            if !(1..=n).contains(&c) {
                return Err(Error::Validation(format!(
                    "record {}: class {c} outside 1..={n}",
                    r.sample_id
                )));
            }
        }
        m.counts[t as usize - 1][r.predicted_class as usize - 1] += 1;
    }
    Ok(m)
}

/// Element-wise sum; provenance lists are concatenated in order.
pub fn sum_matrices(matrices: &[ConfusionMatrix]) -> Result<ConfusionMatrix> {
    let first = matrices.first().ok_or(Error::Empty("no matrices to sum"))?;
    let mut acc = ConfusionMatrix::zeros(first.n);
    for m in matrices {
        if m.n != acc.n {
            return Err(Error::DimensionMismatch(acc.n as usize, m.n as usize));
        }
        for (dst, src) in acc.counts.iter_mut().zip(&m.counts) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
        acc.provenance.extend(m.provenance.iter().cloned());
    }
    Ok(acc)
}

fn check_class(m: &ConfusionMatrix, c: ClassId, i: ClassId, j: ClassId) -> Result<()> {
    if c < 1 || c > m.n {
        return Err(Error::InvalidPair(i, j));
    }
    Ok(())
}

/// `a_{i,j} + a_{j,i}` for two distinct classes.
pub fn similarity4(m: &ConfusionMatrix, i: ClassId, j: ClassId) -> Result<u64> {
    if i == j {
        return Err(Error::InvalidPair(i, j));
    }
    check_class(m, i, i, j)?;
    check_class(m, j, i, j)?;
    Ok(m.get(i, j) + m.get(j, i))
}

/// Similarity between the class pairs `(i, i+1)` and `(j, j+1)` of an
/// 8-class matrix: the two off-diagonal 2x2 blocks linking them. The
/// diagonal blocks (matching cases) never contribute.
pub fn similarity8(m: &ConfusionMatrix, i: ClassId, j: ClassId) -> Result<u64> {
    if m.n != 8 {
        return Err(Error::DimensionMismatch(m.n as usize, 8));
    }
    if i == j || i % 2 == 0 || j % 2 == 0 {
        return Err(Error::InvalidPair(i, j));
    }
    check_class(m, i, i, j)?;
    check_class(m, j, i, j)?;
    let forward = m.get(i, j) + m.get(i, j + 1) + m.get(i + 1, j) + m.get(i + 1, j + 1);
    let backward = m.get(j, i) + m.get(j + 1, i) + m.get(j, i + 1) + m.get(j + 1, i + 1);
    Ok(forward + backward)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(t: u32, p: u32) -> PredictionRecord {
        let mut scores = vec![0.0; 4];
        scores[p as usize - 1] = 1.0;
        PredictionRecord::from_scores(format!("{t}-{p}"), Some(t), scores).unwrap()
    }

    #[test]
    fn three_correct_records() {
        let m = confusion_matrix(&[rec(1, 1), rec(1, 1), rec(1, 1)], 4).unwrap();
        assert_eq!(m.get(1, 1), 3);
        assert_eq!(m.total(), 3);
    }

    #[test]
    fn perfect_predictions_are_diagonal() {
        let records: Vec<_> = (1..=4).flat_map(|c| (0..c).map(move |_| rec(c, c))).collect();
        let m = confusion_matrix(&records, 4).unwrap();
        assert_eq!(m.off_diagonal_mass(), 0);
        assert_eq!(m.row_sums(), vec![1, 2, 3, 4]);
    }

    #[test]
    fn unlabeled_or_out_of_range_rejected() {
        let mut r = rec(1, 2);
        r.true_class = None;
        assert!(confusion_matrix(&[r], 4).is_err());
        assert!(confusion_matrix(&[rec(4, 4)], 3).is_err());
    }

    #[test]
    fn dimension_mismatch_on_sum() {
        let err = sum_matrices(&[ConfusionMatrix::zeros(4), ConfusionMatrix::zeros(8)]);
        assert!(matches!(err, Err(Error::DimensionMismatch(4, 8))));
        assert!(sum_matrices(&[]).is_err());
    }

    #[test]
    fn pair_errors() {
        let m4 = ConfusionMatrix::zeros(4);
        assert!(similarity4(&m4, 2, 2).is_err());
        assert!(similarity4(&m4, 0, 2).is_err());
        assert!(similarity4(&m4, 1, 5).is_err());
        assert_eq!(similarity4(&m4, 1, 3).unwrap(), 0);
        let m8 = ConfusionMatrix::zeros(8);
        assert!(similarity8(&m8, 2, 5).is_err());
        assert!(similarity8(&m8, 3, 3).is_err());
        assert!(similarity8(&m8, 7, 9).is_err());
        assert!(similarity8(&m4, 1, 3).is_err());
    }

    #[test]
    fn csv_layout() {
        let m = ConfusionMatrix::from_rows(vec![vec![1, 2], vec![3, 4]]).unwrap();
        assert_eq!(m.to_csv(), "true\\predicted,1,2\n1,1,2\n2,3,4\n");
    }
}
