//! Point estimates with standard errors of the mean.

use serde::{Deserialize, Serialize};

/// Mean of `n` samples with standard error `sample std / √n`; intervals are
/// reported as `estimate ± 2·se`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub estimate: f64,
    pub se: f64,
    pub n: usize,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Estimate {
                estimate: f64::NAN,
                se: f64::NAN,
                n: 0,
            };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let se = if n > 1 {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Estimate { estimate: mean, se, n }
    }

    pub fn lower(&self) -> f64 {
        self.estimate - 2.0 * self.se
    }

    pub fn upper(&self) -> f64 {
        self.estimate + 2.0 * self.se
    }

    /// Pools several estimates of the same quantity (e.g. across seeds) as
    /// the mean of means with the standard error of that mean.
    pub fn pool(parts: &[Estimate]) -> Self {
        let means: Vec<f64> = parts.iter().map(|e| e.estimate).collect();
        let mut e = Estimate::from_samples(&means);
        e.n = parts.iter().map(|p| p.n).sum();
        e
    }
}

impl std::fmt::Display for Estimate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.4} ± {:.4} (n={})", self.estimate, 2.0 * self.se, self.n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_is_two_se() {
        let e = Estimate::from_samples(&[1.0, 0.0, 1.0, 0.0]);
        assert_eq!(e.estimate, 0.5);
        // sample std = sqrt(1/3), se = sqrt(1/3)/2
        assert!((e.se - (1.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-12);
        assert!((e.upper() - e.lower() - 4.0 * e.se).abs() < 1e-12);
    }

    #[test]
    fn single_sample_has_zero_se() {
        let e = Estimate::from_samples(&[0.7]);
        assert_eq!((e.estimate, e.se, e.n), (0.7, 0.0, 1));
    }
}
