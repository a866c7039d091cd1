//! Clinically shaped intermediate rewards and terminal rewards.

use super::{Outcome, PatientState};
use crate::error::{Error, Result};

/// Penalty when SOFA stays unchanged at a nonzero level.
pub const C0: f64 = -0.025;
/// Weight on the SOFA change.
pub const C1: f64 = -0.125;
/// Weight on the squashed lactate change.
pub const C2: f64 = -2.0;

pub const TERMINAL_REWARD: f32 = 15.0;

/// SOFA feature on its integer scale (nearest integer, floored at zero).
pub fn sofa_level(value: f32) -> f64 {
    (value.round() as f64).max(0.0)
}

/// `C0·1(SOFA' = SOFA ∧ SOFA' > 0) + C1·(SOFA' − SOFA) + C2·tanh(Lactate' − Lactate)`
/// with SOFA compared on its rounded integer scale.
pub fn shaped_reward_raw(sofa: f32, sofa_next: f32, lactate: f32, lactate_next: f32) -> f64 {
    let s0 = sofa_level(sofa);
    let s1 = sofa_level(sofa_next);
    let same = if s1 == s0 && s1 > 0.0 { 1.0 } else { 0.0 };
    C0 * same + C1 * (s1 - s0) + C2 * (lactate_next as f64 - lactate as f64).tanh()
}

pub fn shaped_reward(
    s_t: &PatientState,
    s_next: &PatientState,
    sofa_index: usize,
    lactate_index: usize,
) -> f64 {
    shaped_reward_raw(
        s_t.features()[sofa_index],
        s_next.features()[sofa_index],
        s_t.features()[lactate_index],
        s_next.features()[lactate_index],
    )
}

/// `+15` for survival, `−15` for death (scaled by `scale / 15` when a
/// different terminal magnitude is requested).
pub fn terminal_reward(outcome: Outcome) -> Result<f32> {
    terminal_reward_scaled(outcome, TERMINAL_REWARD)
}

pub fn terminal_reward_scaled(outcome: Outcome, magnitude: f32) -> Result<f32> {
    match outcome {
        Outcome::Survival => Ok(magnitude),
        Outcome::Death => Ok(-magnitude),
        Outcome::None => Err(Error::InvalidArgument(
            "terminal reward requested for a non-terminal outcome".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_examples() {
        assert_eq!(shaped_reward_raw(0.0, 0.0, 2.0, 2.0), 0.0);
        assert!((shaped_reward_raw(3.0, 3.0, 1.5, 1.5) - -0.025).abs() < 1e-12);
        assert!((shaped_reward_raw(2.0, 3.0, 1.5, 1.5) - -0.125).abs() < 1e-12);
        // -0.025 + (-2)·tanh(1)
        let expected = -0.025 - 2.0 * 1.0f64.tanh();
        assert!((shaped_reward_raw(2.0, 2.0, 1.0, 2.0) - expected).abs() < 1e-9);
        // Quoted to five decimals as ≈ −1.54822; the exact value is −1.548188.
        assert!((expected - -1.54822).abs() < 1e-4);
    }

    #[test]
    fn sofa_is_rounded_before_comparison() {
        // 2.6 and 3.4 both round to 3.
        assert!((shaped_reward_raw(2.6, 3.4, 1.0, 1.0) - C0).abs() < 1e-12);
        assert_eq!(sofa_level(-0.7), 0.0);
    }

    #[test]
    fn terminal_rewards() {
        assert_eq!(terminal_reward(Outcome::Survival).unwrap(), 15.0);
        assert_eq!(terminal_reward(Outcome::Death).unwrap(), -15.0);
        assert!(terminal_reward(Outcome::None).is_err());
        assert_eq!(terminal_reward_scaled(Outcome::Death, 1.0).unwrap(), -1.0);
    }

    proptest! {
        #[test]
        fn bounded(s0 in 0.0f32..24.0, s1 in 0.0f32..24.0, l0 in 0.0f32..20.0, l1 in 0.0f32..20.0) {
            let r = shaped_reward_raw(s0, s1, l0, l1);
            let dsofa = (sofa_level(s1) - sofa_level(s0)).abs();
            prop_assert!(r.abs() <= C0.abs() + C1.abs() * dsofa + 2.0 + 1e-12);
        }

        #[test]
        fn zero_sofa_self_transition_is_zero(l in 0.0f32..20.0) {
            prop_assert_eq!(shaped_reward_raw(0.2, 0.2, l, l), 0.0);
        }
    }
}
