//! Per-feature input standardization fitted on training states.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Standardizer {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Column means and standard deviations (floored at 1e-6), accumulated in f64.
    pub fn fit<'a, I>(dim: usize, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f32]>,
    {
        let mut n = 0usize;
        let mut sum = vec![0.0f64; dim];
        let mut sq = vec![0.0f64; dim];
        for r in rows {
            if r.len() != dim {
                return Err(Error::Dimension(format!("row of width {}, expected {dim}", r.len())));
            }
            n += 1;
            for (j, &v) in r.iter().enumerate() {
                sum[j] += v as f64;
                sq[j] += (v as f64) * (v as f64);
            }
        }
        if n == 0 {
            return Err(Error::InvalidArgument("cannot fit a standardizer on no rows".into()));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| ((q / n as f64 - m * m).max(0.0).sqrt().max(1e-6)) as f32)
            .collect();
        Ok(Standardizer {
            mean: mean.into_iter().map(|m| m as f32).collect(),
            std,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    #[inline]
    pub fn apply(&self, j: usize, v: f32) -> f32 {
        (v - self.mean[j]) / self.std[j]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fits_moments() {
        let rows = [vec![1.0f32, 5.0], vec![3.0, 5.0]];
        let s = Standardizer::fit(2, rows.iter().map(|r| r.as_slice())).unwrap();
        assert_eq!(s.mean, vec![2.0, 5.0]);
        assert_eq!(s.std[0], 1.0);
        assert_eq!(s.apply(0, 3.0), 1.0);
        assert!(s.std[1] > 0.0);
    }
}
