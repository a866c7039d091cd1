//! Brute-force minimax oracle: enumerates every pure-strategy profile of a
//! two-turn debate in normal form.

use jdebate::debate::{turn_owner, DebateContext, GameConfig, Role, UtilityKind};
use jdebate::judge::{EvidenceMask, FnJudge, Judge};
use jdebate::rng::DetRng;
use jdebate::synthenv::{PatientState, N_ACTIONS};
use rand::Rng;

/// Random linear judge: `J(a, e, s) = Σ_{i∈e} w[a][i]·s[i]`.
pub fn linear_judge(dim: usize, rng: &mut DetRng) -> FnJudge<impl Fn(usize, EvidenceMask, &[f32]) -> f64 + Sync> {
    let w: Vec<Vec<f64>> = (0..N_ACTIONS)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    FnJudge {
        dim,
        f: move |a: usize, m: EvidenceMask, s: &[f32]| {
            (0..dim).filter(|i| m >> i & 1 == 1).map(|i| w[a][i] * s[i] as f64).sum()
        },
    }
}

pub fn random_context(dim: usize, rng: &mut DetRng) -> DebateContext {
    let s = PatientState::new((0..dim).map(|_| rng.random_range(-2.0f32..2.0)).collect()).unwrap();
    let a0 = rng.random_range(0..N_ACTIONS);
    let a1 = (a0 + rng.random_range(1..N_ACTIONS)) % N_ACTIONS;
    DebateContext::new(s, a0, a1).unwrap()
}

fn leaf<J: Judge>(judge: &J, ctx: &DebateContext, m: EvidenceMask, kind: UtilityKind) -> f64 {
    let cfg = GameConfig {
        turns: m.count_ones() as usize,
        utility: kind,
        ..GameConfig::default()
    };
    jdebate::debate::utility(judge, ctx, m, &cfg).unwrap()
}

/// Player 1's pure maximin and minimax values of the two-turn game with
/// first mover given by `tau`. A strategy of the opening player is an index
/// `e0`; a strategy of the responder is a map `e0 ↦ e1`.
pub fn two_turn_values<J: Judge>(judge: &J, ctx: &DebateContext, tau: usize, kind: UtilityKind) -> (f64, f64) {
    let d = ctx.dim();
    let responses: Vec<Vec<usize>> = {
        // every function e0 -> e1 with e1 != e0, encoded as a vector
        let mut all = vec![vec![]];
        for e0 in 0..d {
            let mut next = Vec::new();
            for f in &all {
                for e1 in (0..d).filter(|&e1| e1 != e0) {
                    let mut g: Vec<usize> = f.clone();
                    g.push(e1);
                    next.push(g);
                }
            }
            all = next;
        }
        all
    };
    let payoff: Vec<Vec<f64>> = (0..d)
        .map(|e0| {
            responses
                .iter()
                .map(|g| leaf(judge, ctx, 1 << e0 | 1 << g[e0], kind))
                .collect()
        })
        .collect();
    // payoff[opener strategy][responder strategy], to player 1
    let opener_is_p1 = turn_owner(0, tau) == Role::First;
    let rows = 0..d;
    let cols = 0..responses.len();
    let max_min_rows = rows.clone().map(|i| cols.clone().map(|j| payoff[i][j]).fold(f64::INFINITY, f64::min)).fold(f64::NEG_INFINITY, f64::max);
    let min_max_cols = cols.clone().map(|j| rows.clone().map(|i| payoff[i][j]).fold(f64::NEG_INFINITY, f64::max)).fold(f64::INFINITY, f64::min);
    let max_min_cols = cols.clone().map(|j| rows.clone().map(|i| payoff[i][j]).fold(f64::INFINITY, f64::min)).fold(f64::NEG_INFINITY, f64::max);
    let min_max_rows = rows.map(|i| cols.clone().map(|j| payoff[i][j]).fold(f64::NEG_INFINITY, f64::max)).fold(f64::INFINITY, f64::min);
    if opener_is_p1 {
        (max_min_rows, min_max_cols)
    } else {
        (max_min_cols, min_max_rows)
    }
}
