//! Loss helpers shared by the training loops.

use super::matrix::Matrix;
use crate::error::{Error, Result};

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Log-probabilities of a softmax over the entries where `legal` is true;
/// illegal entries get `-inf`.
pub fn masked_log_softmax(logits: &[f32], legal: &[bool]) -> Vec<f64> {
    let max = logits
        .iter()
        .zip(legal)
        .filter(|(_, &ok)| ok)
        .map(|(&l, _)| l as f64)
        .fold(f64::NEG_INFINITY, f64::max);
    let lse = logits
        .iter()
        .zip(legal)
        .filter(|(_, &ok)| ok)
        .map(|(&l, _)| (l as f64 - max).exp())
        .sum::<f64>()
        .ln()
        + max;
    logits
        .iter()
        .zip(legal)
        .map(|(&l, &ok)| if ok { l as f64 - lse } else { f64::NEG_INFINITY })
        .collect()
}

/// Mean softmax cross-entropy over rows of `logits` against class indices,
/// and its gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &Matrix, targets: &[usize]) -> Result<(f64, Matrix)> {
    if logits.rows() != targets.len() {
        return Err(Error::Dimension(format!(
            "{} logit rows, {} targets",
            logits.rows(),
            targets.len()
        )));
    }
    let n = logits.rows();
    let k = logits.cols();
    let legal = vec![true; k];
    let mut grad = Matrix::zeros(n, k);
    let mut loss = 0.0f64;
    for (r, &t) in targets.iter().enumerate() {
        if t >= k {
            return Err(Error::InvalidArgument(format!("class {t} out of range {k}")));
        }
        let lp = masked_log_softmax(logits.row(r), &legal);
        loss -= lp[t];
        let gr = grad.row_mut(r);
        for j in 0..k {
            let p = lp[j].exp();
            gr[j] = ((p - if j == t { 1.0 } else { 0.0 }) / n as f64) as f32;
        }
    }
    Ok((loss / n as f64, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_matches_definition() {
        for x in [-30.0, -1.0, 0.0, 0.5, 30.0] {
            let direct = (1.0f64 + f64::exp(x)).ln();
            assert!((softplus(x) - direct).abs() < 1e-12);
        }
        assert!(softplus(1000.0).is_finite());
    }

    #[test]
    fn masked_entries_get_no_mass() {
        let lp = masked_log_softmax(&[1.0, 5.0, 2.0], &[true, false, true]);
        assert_eq!(lp[1], f64::NEG_INFINITY);
        let total: f64 = lp.iter().map(|v| v.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_logits_give_log_k() {
        let logits = Matrix::zeros(3, 25);
        let (loss, _) = softmax_cross_entropy(&logits, &[0, 5, 24]).unwrap();
        assert!((loss - (25.0f64).ln()).abs() < 1e-9);
    }
}
