//! Adam with bias correction and decoupled weight decay, plus global
//! gradient-norm clipping.

use super::network::{Gradients, Network};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new(lr: f32) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn with_weight_decay(mut self, wd: f32) -> Self {
        self.weight_decay = wd;
        self
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update of `params` using `grads`. Accumulators are allocated on
    /// the first call and must keep the same shapes afterwards.
    pub fn step(&mut self, params: &mut [&mut [f32]], grads: &[&[f32]]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Dimension(format!(
                "{} parameter tensors, {} gradient tensors",
                params.len(),
                grads.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.len() != g.len() {
                return Err(Error::Dimension("parameter/gradient shape mismatch".into()));
            }
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        } else if self.m.len() != params.len()
            || self.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.len())
        {
            return Err(Error::Dimension("optimizer state does not match parameters".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - (self.beta1 as f64).powi(t);
        let bc2 = 1.0 - (self.beta2 as f64).powi(t);
        let step_size = (self.lr as f64 / bc1) as f32;
        let bc2_sqrt = bc2.sqrt() as f32;
        let decay = self.lr * self.weight_decay;
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                if decay > 0.0 {
                    p[i] -= decay * p[i];
                }
                let denom = v[i].sqrt() / bc2_sqrt + self.eps;
                p[i] -= step_size * m[i] / denom;
            }
        }
        Ok(())
    }

    pub fn step_network(&mut self, net: &mut Network, grads: &Gradients) -> Result<()> {
        let g = grads.tensors();
        let mut p = net.params_mut();
        self.step(&mut p, &g)
    }
}

/// Global L2 norm over every tensor, accumulated in f64.
pub fn global_norm(tensors: &[&[f32]]) -> f64 {
    tensors
        .iter()
        .flat_map(|t| t.iter())
        .map(|v| (*v as f64) * (*v as f64))
        .sum::<f64>()
        .sqrt()
}

/// Rescales all tensors by `max_norm / norm` when their global norm exceeds
/// `max_norm`. Returns the pre-clip norm.
pub fn clip_grad_norm(tensors: &mut [&mut [f32]], max_norm: f32) -> Result<f64> {
    if max_norm.is_nan() || max_norm <= 0.0 {
        return Err(Error::InvalidArgument(format!("max_norm must be > 0, got {max_norm}")));
    }
    let norm = {
        let views: Vec<&[f32]> = tensors.iter().map(|t| &**t).collect();
        global_norm(&views)
    };
    if norm > max_norm as f64 {
        let scale = (max_norm as f64 / norm) as f32;
        for t in tensors.iter_mut() {
            t.iter_mut().for_each(|v| *v *= scale);
        }
    }
    Ok(norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_grad_leaves_params() {
        let mut p = vec![1.0f32, -2.0, 3.0];
        let g = vec![0.0f32; 3];
        let mut adam = AdamState::new(1e-3);
        for _ in 0..10 {
            adam.step(&mut [&mut p], &[&g]).unwrap();
        }
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn constant_grad_descends() {
        let mut p = vec![0.0f32, 0.0];
        let g = vec![0.5f32, -2.0];
        let mut adam = AdamState::new(1e-2);
        for _ in 0..100 {
            adam.step(&mut [&mut p], &[&g]).unwrap();
        }
        assert!(p[0] < 0.0 && p[1] > 0.0);
        assert_eq!(adam.step_count(), 100);
    }

    #[test]
    fn first_step_magnitude_is_lr() {
        // m̂ = g, v̂ = g², so the first update is lr·g/(|g| + eps).
        let g = vec![0.3f32, -7.0, 1e-2];
        let mut p = vec![0.0f32; 3];
        let mut adam = AdamState::new(5e-4);
        adam.step(&mut [&mut p], &[&g]).unwrap();
        for (pi, gi) in p.iter().zip(&g) {
            let expected = -5e-4 * gi / (gi.abs() + 1e-8);
            assert!((pi - expected).abs() < 1e-8, "{pi} vs {expected}");
        }
    }

    #[test]
    fn decoupled_weight_decay_shrinks() {
        let mut p = vec![1.0f32];
        let mut adam = AdamState::new(0.1).with_weight_decay(0.5);
        adam.step(&mut [&mut p], &[&[0.0]]).unwrap();
        assert!((p[0] - 0.95).abs() < 1e-6);
    }

    #[test]
    fn shape_mismatch_is_error() {
        let mut p = vec![0.0f32; 2];
        let mut adam = AdamState::new(1e-3);
        assert!(adam.step(&mut [&mut p], &[&[1.0]]).is_err());
        adam.step(&mut [&mut p], &[&[1.0, 1.0]]).unwrap();
        let mut q = vec![0.0f32; 3];
        assert!(adam.step(&mut [&mut q], &[&[1.0, 1.0, 1.0]]).is_err());
    }

    #[test]
    fn clip_examples() {
        let mut g = vec![0.03f32, 0.04];
        clip_grad_norm(&mut [&mut g], 0.1).unwrap();
        assert_eq!(g, vec![0.03, 0.04]);
        let mut g = vec![3.0f32, 4.0];
        let norm = clip_grad_norm(&mut [&mut g], 0.1).unwrap();
        assert_eq!(norm, 5.0);
        assert!((g[0] - 0.06).abs() < 1e-7 && (g[1] - 0.08).abs() < 1e-7);
        assert!(clip_grad_norm(&mut [&mut g], 0.0).is_err());
    }

    proptest! {
        #[test]
        fn clipped_norm_bounded(
            a in prop::collection::vec(-100.0f32..100.0, 1..20),
            b in prop::collection::vec(-100.0f32..100.0, 1..20),
            max in 0.01f32..10.0,
        ) {
            let (mut a, mut b) = (a, b);
            clip_grad_norm(&mut [&mut a, &mut b], max).unwrap();
            prop_assert!(global_norm(&[&a, &b]) <= max as f64 + 1e-6);
        }
    }
}
