#[path = "support/brute.rs"]
mod brute;

use brute::{linear_judge, random_context, two_turn_values};
use jdebate::debate::*;
use jdebate::judge::EvidenceMask;
use jdebate::rng::seeded;
use proptest::prelude::*;

#[test]
fn exact_solver_matches_normal_form_enumeration() {
    let mut rng = seeded(42);
    for i in 0..60 {
        let judge = linear_judge(4, &mut rng);
        let ctx = random_context(4, &mut rng);
        let kind = if i % 2 == 0 { UtilityKind::Sign } else { UtilityKind::Difference };
        let cfg = GameConfig {
            turns: 2,
            utility: kind,
            ..GameConfig::default()
        };
        for tau in 0..2 {
            let (maximin, minimax) = two_turn_values(&judge, &ctx, tau, kind);
            // perfect information: a pure saddle point exists
            assert_eq!(maximin, minimax);
            assert_eq!(solve_exact_tau(&ctx, &judge, &cfg, tau).unwrap().value, maximin, "context {i}, tau {tau}");
        }
    }
}

#[test]
fn principal_variation_realizes_the_value() {
    let mut rng = seeded(7);
    for _ in 0..30 {
        let judge = linear_judge(6, &mut rng);
        let ctx = random_context(6, &mut rng);
        let cfg = GameConfig {
            turns: 4,
            ..GameConfig::default()
        };
        let sol = solve_exact(&ctx, &judge, &cfg).unwrap();
        let mask: EvidenceMask = sol.principal_variation.iter().map(|&i| 1u64 << i).sum();
        assert_eq!(sol.principal_variation.len(), 4);
        assert_eq!(mask.count_ones(), 4);
        assert_eq!(utility(&judge, &ctx, mask, &cfg).unwrap(), sol.value);
        // scripted optimal play cannot be exploited
        let script = Scripted(sol.principal_variation.clone());
        let br = best_response_value(&ctx, &judge, &cfg, &script, Role::First, 0, &mut rng).unwrap();
        assert!(br <= sol.value);
    }
}

#[test]
fn exploitability_of_random_play_is_nonnegative() {
    let mut rng = seeded(3);
    for _ in 0..20 {
        let judge = linear_judge(5, &mut rng);
        let ctx = random_context(5, &mut rng);
        let cfg = GameConfig {
            turns: 4,
            ..GameConfig::default()
        };
        let first_legal = FnStrategy(|c: &DebateContext, n: &DebateNode, _| legal_evidence(n, c.dim())[0]);
        assert!(exploitability(&ctx, &judge, &cfg, &first_legal, &mut rng).unwrap() >= 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rollouts_are_zero_sum_without_repeats(seed in any::<u64>(), half in 1usize..4, diff in any::<bool>()) {
        let mut rng = seeded(seed);
        let judge = linear_judge(8, &mut rng);
        let ctx = random_context(8, &mut rng);
        let turns = 2 * half;
        let cfg = GameConfig {
            turns,
            utility: if diff { UtilityKind::Difference } else { UtilityKind::Sign },
            ..GameConfig::default()
        };
        let t = play_debate(&ctx, &UniformRandom, &UniformRandom, &judge, &cfg, &mut rng).unwrap();
        let mut seen: Vec<usize> = t.evidence.iter().map(|e| e.0).collect();
        seen.sort_unstable();
        seen.dedup();
        prop_assert_eq!(seen.len(), turns);
        let u2 = utility(&judge, &ctx.swapped(), t.node().mask(), &cfg).unwrap();
        prop_assert_eq!(t.utility + u2, 0.0);
    }

    #[test]
    fn exact_value_is_antisymmetric_and_bounded(seed in any::<u64>(), half in 1usize..3) {
        let mut rng = seeded(seed);
        let judge = linear_judge(5, &mut rng);
        let ctx = random_context(5, &mut rng);
        let cfg = GameConfig { turns: 2 * half, ..GameConfig::default() };
        let v = solve_exact_tau(&ctx, &judge, &cfg, 0).unwrap().value;
        prop_assert!((-1.0..=1.0).contains(&v));
        // swapping the arguments and the opener is the same game from the other side
        let w = solve_exact_tau(&ctx.swapped(), &judge, &cfg, 1).unwrap().value;
        prop_assert_eq!(v, -w);
    }

    #[test]
    fn debate_reward_scales_value(v in -1.0f64..1.0, alpha in 0.1f64..10.0) {
        let cfg = GameConfig { alpha, ..GameConfig::default() };
        prop_assert!((debate_reward(v, &cfg) - alpha * v).abs() < 1e-12);
    }
}
