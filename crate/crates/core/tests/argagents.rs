use jdebate::argagents::*;
use jdebate::debate::{play_debate, DebateContext, GameConfig, UtilityKind};
use jdebate::judge::{train_judge, JudgeTrainConfig};
use jdebate::neural::standardize::Standardizer;
use jdebate::prefdata::{build_preferences, split, DatasetStrategy, Split};
use jdebate::rng::seeded;
use jdebate::synthenv::{generate_cohort, EnvConfig};

fn small_ppo() -> PpoConfig {
    PpoConfig {
        n_steps: 64,
        n_envs: 4,
        n_epochs: 2,
        hidden: 32,
        ..PpoConfig::default()
    }
}

/// Mean player-1 utility when `policy` argues both sides of test contexts
/// in their stored (randomly oriented) order.
fn self_play_mean(policy: &ArgPolicy, judge: &dyn jdebate::judge::Judge, ctxs: &[DebateContext], game: &GameConfig, seed: u64) -> f64 {
    let mut rng = seeded(seed);
    let s = PolicyStrategy {
        policy,
        mode: ActMode::Stochastic,
    };
    let total: f64 = ctxs
        .iter()
        .map(|c| play_debate(c, &s, &s, judge, game, &mut rng).unwrap().utility)
        .sum();
    total / ctxs.len() as f64
}

#[test]
fn self_play_is_symmetric_when_sides_are_randomized() {
    let cohort = generate_cohort(&EnvConfig {
        n_patients: 120,
        seed: 8,
        ..EnvConfig::default()
    })
    .unwrap();
    let ds = split(build_preferences(&cohort, DatasetStrategy::Random, 8).unwrap(), 8).unwrap();
    let (judge, _) = train_judge(
        &ds,
        &JudgeTrainConfig {
            epochs: 3,
            evidence_size: 4,
            ..JudgeTrainConfig::default()
        },
        8,
    )
    .unwrap();
    let game = GameConfig {
        turns: 4,
        utility: UtilityKind::Sign,
        ..GameConfig::default()
    };
    let ctxs: Vec<DebateContext> = ds
        .tuples
        .iter()
        .take(1000)
        .map(|t| DebateContext::new(t.state.clone(), t.a0, t.a1).unwrap())
        .collect();
    assert_eq!(ctxs.len(), 1000);

    let untrained = ArgPolicy::new(8, 32, true, Standardizer::identity(8), &mut seeded(1)).unwrap();
    let m0 = self_play_mean(&untrained, &judge, &ctxs, &game, 2);
    assert!(m0.abs() < 0.1, "untrained mean u1 {m0}");

    let sched = Schedule {
        generations: 2,
        selfplay_steps: 512,
        ..Schedule::default()
    };
    let trained = train_selfplay(&ds, &judge, &game, &small_ppo(), &sched, 3, None).unwrap();
    assert!(trained.steps >= 1024);
    let m1 = self_play_mean(&trained.policy, &judge, &ctxs, &game, 4);
    assert!(m1.abs() < 0.1, "trained mean u1 {m1}");
}

#[test]
fn agents_round_trip_through_files_and_checkpoints() {
    let cohort = generate_cohort(&EnvConfig {
        n_patients: 30,
        seed: 2,
        ..EnvConfig::default()
    })
    .unwrap();
    let ds = split(build_preferences(&cohort, DatasetStrategy::Random, 2).unwrap(), 2).unwrap();
    let (judge, _) = train_judge(
        &ds,
        &JudgeTrainConfig {
            epochs: 1,
            evidence_size: 4,
            ..JudgeTrainConfig::default()
        },
        2,
    )
    .unwrap();
    let game = GameConfig {
        turns: 4,
        ..GameConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let sched = Schedule {
        generations: 2,
        selfplay_steps: 128,
        ..Schedule::default()
    };
    let t = train_selfplay(&ds, &judge, &game, &small_ppo(), &sched, 0, Some(dir.path())).unwrap();
    assert!(std::fs::read_dir(dir.path()).unwrap().count() >= 2);
    let p = dir.path().join("final.bin");
    t.policy.save(&p, &Default::default()).unwrap();
    let (back, _) = ArgPolicy::load(&p).unwrap();
    let tuple = ds.split_iter(Split::Test).next().unwrap();
    assert_eq!(
        t.policy.log_probs(tuple.state.features(), tuple.a0, 0b11).unwrap(),
        back.log_probs(tuple.state.features(), tuple.a0, 0b11).unwrap()
    );
}
