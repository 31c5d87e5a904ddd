use crate::error::{Error, Result};
use crate::geometry::ClassId;

/// Max-subtracted softmax.
pub fn softmax(raw_scores: &[f64]) -> Result<Vec<f64>> {
    if raw_scores.is_empty() {
        return Err(Error::Empty("softmax of an empty score vector"));
    }
    if let Some(i) = raw_scores.iter().position(|r| !r.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    let max = raw_scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = raw_scores.iter().map(|r| (r - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// 0-based index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in scores.iter().enumerate() {
        match best {
            Some((_, b)) if s <= b => {}
            _ => best = Some((i, s)),
        }
    }
    best.map(|(i, _)| i)
}

/// 1-indexed winning class and its softmax score.
pub fn top_class(raw_scores: &[f64]) -> Result<(ClassId, f64)> {
    let probs = softmax(raw_scores)?;
    let idx = argmax(raw_scores).expect("non-empty after softmax");
    Ok((idx as ClassId + 1, probs[idx]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_pair() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn ln2_pair() {
        let p = softmax(&[2f64.ln(), 0.0]).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn overflow_safe() {
        let p = softmax(&[1000.0, 999.0]).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_finite_and_empty() {
        assert!(matches!(softmax(&[0.0, f64::NAN]), Err(Error::NonFinite(1))));
        assert!(matches!(softmax(&[f64::INFINITY]), Err(Error::NonFinite(0))));
        assert!(softmax(&[]).is_err());
    }

    #[test]
    fn top_class_examples() {
        let (c, s) = top_class(&[1.0, 3.0, 2.0, 0.0]).unwrap();
        assert_eq!(c, 2);
        assert!((s - softmax(&[1.0, 3.0, 2.0, 0.0]).unwrap()[1]).abs() < 1e-15);
        assert_eq!(top_class(&[5.0, 5.0]).unwrap().0, 1);
        assert_eq!(top_class(&[8.0, 10.0, 9.0, 7.0]).unwrap().0, 2);
    }
}
