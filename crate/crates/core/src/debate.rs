//! The debate game. Two players alternately reveal state features (no
//! repeats) for `L` turns; player 1 argues `a_first`, player 2 `a_second`.
//! The judge then compares both actions on the revealed set, and player 1
//! receives `u1` (player 2 receives `−u1`).
//!
//! Turn `l` belongs to player 1 when `(l + τ)` is even. Because the judge is
//! set-valued, `τ` only changes the order of the evidence, and the exact
//! solver can memoize on the revealed subset: its depth fixes the turn owner.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::judge::{indices_of, EvidenceMask, Judge};
use crate::rng::DetRng;
use crate::synthenv::{PatientState, N_ACTIONS};

/// Largest tree (`D^L` sequence nodes) the exact solver accepts.
pub const NODE_BUDGET: u128 = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum UtilityKind {
    /// `+1 / 0 / −1` by which action the judge scores higher.
    #[default]
    Sign,
    /// `J(a_first) − J(a_second)`.
    Difference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FirstMover {
    /// `τ = 0`: player 1 opens.
    Fixed,
    /// `τ ~ U{0, 1}` per game.
    #[default]
    Randomized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GameConfig {
    /// Total number of turns `L` (even).
    pub turns: usize,
    pub utility: UtilityKind,
    /// Debate-reward scale.
    pub alpha: f64,
    pub first_mover: FirstMover,
}

impl Default for GameConfig {
    fn default() -> Self {
        GameConfig {
            turns: 6,
            utility: UtilityKind::Sign,
            alpha: 5.0,
            first_mover: FirstMover::Randomized,
        }
    }
}

impl GameConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.turns == 0 || self.turns % 2 != 0 {
            return Err(Error::Config(format!("debate length {} must be even and positive", self.turns)));
        }
        if self.turns > dim {
            return Err(Error::Config(format!("debate length {} exceeds {dim} features", self.turns)));
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::Config(format!("alpha {} must be positive", self.alpha)));
        }
        Ok(())
    }

    /// Draws `τ` for one game.
    pub fn draw_tau(&self, rng: &mut DetRng) -> usize {
        match self.first_mover {
            FirstMover::Fixed => 0,
            FirstMover::Randomized => rng.random_range(0..2),
        }
    }
}

/// The game-inducing tuple `z = (s, a_first, a_second)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DebateContext {
    pub state: PatientState,
    pub a_first: usize,
    pub a_second: usize,
}

impl DebateContext {
    pub fn new(state: PatientState, a_first: usize, a_second: usize) -> Result<Self> {
        if a_first == a_second {
            return Err(Error::InvalidArgument(format!("both players argue action {a_first}")));
        }
        if a_first >= N_ACTIONS || a_second >= N_ACTIONS {
            return Err(Error::InvalidArgument("debated action out of range".into()));
        }
        Ok(DebateContext {
            state,
            a_first,
            a_second,
        })
    }

    pub fn swapped(&self) -> Self {
        DebateContext {
            state: self.state.clone(),
            a_first: self.a_second,
            a_second: self.a_first,
        }
    }

    pub fn dim(&self) -> usize {
        self.state.dim()
    }

    /// Action argued by `role`.
    pub fn action_of(&self, role: Role) -> usize {
        match role {
            Role::First => self.a_first,
            Role::Second => self.a_second,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    First,
    Second,
}

impl Role {
    pub fn other(self) -> Role {
        match self {
            Role::First => Role::Second,
            Role::Second => Role::First,
        }
    }

    /// `+1` for player 1, `−1` for player 2.
    pub fn sign(self) -> f64 {
        match self {
            Role::First => 1.0,
            Role::Second => -1.0,
        }
    }
}

/// Owner of turn `l` under first-mover offset `τ`.
pub fn turn_owner(turn: usize, tau: usize) -> Role {
    if (turn + tau) % 2 == 0 {
        Role::First
    } else {
        Role::Second
    }
}

/// Evidence revealed so far, in order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DebateNode {
    pub proposed: Vec<usize>,
}

impl DebateNode {
    pub fn mask(&self) -> EvidenceMask {
        self.proposed.iter().fold(0, |m, &i| m | (1u64 << i))
    }

    pub fn depth(&self) -> usize {
        self.proposed.len()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.proposed.contains(&i)
    }

    /// Appends `index` after checking it is legal.
    pub fn push(&mut self, index: usize, dim: usize) -> Result<()> {
        if index >= dim {
            return Err(Error::IllegalEvidence {
                index,
                reason: format!("outside state dimension {dim}"),
            });
        }
        if self.contains(index) {
            return Err(Error::IllegalEvidence {
                index,
                reason: "already proposed".into(),
            });
        }
        self.proposed.push(index);
        Ok(())
    }
}

/// `{0..D} \ proposed`, ascending.
pub fn legal_evidence(node: &DebateNode, dim: usize) -> Vec<usize> {
    let m = node.mask();
    (0..dim).filter(|&i| m >> i & 1 == 0).collect()
}

pub fn utility_from_scores(j_first: f64, j_second: f64, kind: UtilityKind) -> f64 {
    match kind {
        UtilityKind::Sign => {
            if j_first > j_second {
                1.0
            } else if j_first == j_second {
                0.0
            } else {
                -1.0
            }
        }
        UtilityKind::Difference => j_first - j_second,
    }
}

/// Player 1's utility for a complete evidence set of size `L`.
pub fn utility<J: Judge + ?Sized>(
    judge: &J,
    ctx: &DebateContext,
    evidence: EvidenceMask,
    cfg: &GameConfig,
) -> Result<f64> {
    if evidence.count_ones() as usize != cfg.turns {
        return Err(Error::InvalidArgument(format!(
            "utility needs {} pieces of evidence, got {}",
            cfg.turns,
            evidence.count_ones()
        )));
    }
    let s = judge.score_masks(ctx.state.features(), &[(ctx.a_first, evidence), (ctx.a_second, evidence)])?;
    Ok(utility_from_scores(s[0], s[1], cfg.utility))
}

/// An evidence-proposing strategy `σ: (context, node, role) → evidence`.
pub trait Strategy {
    fn propose(&self, ctx: &DebateContext, node: &DebateNode, role: Role, rng: &mut DetRng) -> Result<usize>;
}

/// Proposes the first index of a fixed script that is still legal.
#[derive(Debug, Clone)]
pub struct Scripted(pub Vec<usize>);

impl Strategy for Scripted {
    fn propose(&self, ctx: &DebateContext, node: &DebateNode, _: Role, _: &mut DetRng) -> Result<usize> {
        self.0
            .iter()
            .copied()
            .find(|&i| i < ctx.dim() && !node.contains(i))
            .ok_or_else(|| Error::InvalidArgument("script exhausted".into()))
    }
}

/// Uniformly random legal evidence.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformRandom;

impl Strategy for UniformRandom {
    fn propose(&self, ctx: &DebateContext, node: &DebateNode, _: Role, rng: &mut DetRng) -> Result<usize> {
        let legal = legal_evidence(node, ctx.dim());
        if legal.is_empty() {
            return Err(Error::InvalidArgument("no legal evidence left".into()));
        }
        Ok(legal[rng.random_range(0..legal.len())])
    }
}

/// Strategy given by a closure.
pub struct FnStrategy<F>(pub F);

impl<F> Strategy for FnStrategy<F>
where
    F: Fn(&DebateContext, &DebateNode, Role) -> usize,
{
    fn propose(&self, ctx: &DebateContext, node: &DebateNode, role: Role, _: &mut DetRng) -> Result<usize> {
        Ok((self.0)(ctx, node, role))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Transcript {
    pub state: Vec<f32>,
    pub a_first: usize,
    pub a_second: usize,
    pub tau: usize,
    /// Revealed evidence in order, with its proposer.
    pub evidence: Vec<(usize, Role)>,
    /// Player 1's utility.
    pub utility: f64,
}

impl Transcript {
    pub fn node(&self) -> DebateNode {
        DebateNode {
            proposed: self.evidence.iter().map(|&(i, _)| i).collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Plays one game; `τ` is drawn per the config.
pub fn play_debate<J: Judge + ?Sized>(
    ctx: &DebateContext,
    first: &dyn Strategy,
    second: &dyn Strategy,
    judge: &J,
    cfg: &GameConfig,
    rng: &mut DetRng,
) -> Result<Transcript> {
    let tau = cfg.draw_tau(rng);
    play_debate_tau(ctx, first, second, judge, cfg, tau, rng)
}

pub fn play_debate_tau<J: Judge + ?Sized>(
    ctx: &DebateContext,
    first: &dyn Strategy,
    second: &dyn Strategy,
    judge: &J,
    cfg: &GameConfig,
    tau: usize,
    rng: &mut DetRng,
) -> Result<Transcript> {
    let schedule: Vec<Role> = (0..cfg.turns).map(|l| turn_owner(l, tau)).collect();
    let mut t = play_schedule(ctx, &schedule, first, second, judge, cfg, rng)?;
    t.tau = tau;
    Ok(t)
}

/// Plays turns in an arbitrary owner order (e.g. all of player 1's turns
/// first, for a precommitted proposer followed by a responder). `tau` in
/// the returned transcript is 0 unless the schedule is the alternating one.
pub fn play_schedule<J: Judge + ?Sized>(
    ctx: &DebateContext,
    schedule: &[Role],
    first: &dyn Strategy,
    second: &dyn Strategy,
    judge: &J,
    cfg: &GameConfig,
    rng: &mut DetRng,
) -> Result<Transcript> {
    cfg.validate(ctx.dim())?;
    if schedule.len() != cfg.turns {
        return Err(Error::InvalidArgument(format!(
            "schedule has {} turns, game has {}",
            schedule.len(),
            cfg.turns
        )));
    }
    let mut node = DebateNode::default();
    let mut evidence = Vec::with_capacity(cfg.turns);
    for &role in schedule {
        let strat = match role {
            Role::First => first,
            Role::Second => second,
        };
        let e = strat.propose(ctx, &node, role, rng)?;
        node.push(e, ctx.dim())?;
        evidence.push((e, role));
    }
    let utility = utility(judge, ctx, node.mask(), cfg)?;
    Ok(Transcript {
        state: ctx.state.features().to_vec(),
        a_first: ctx.a_first,
        a_second: ctx.a_second,
        tau: 0,
        evidence,
        utility,
    })
}

/// `D^L`, the sequence-tree size the budget is checked against.
pub fn tree_size(dim: usize, turns: usize) -> u128 {
    (dim as u128).saturating_pow(turns as u32)
}

fn check_budget(dim: usize, turns: usize) -> Result<()> {
    let nodes = tree_size(dim, turns);
    if nodes > NODE_BUDGET {
        return Err(Error::Budget {
            nodes,
            budget: NODE_BUDGET,
        });
    }
    Ok(())
}

/// Player 1's utility for every size-`L` evidence subset, scored in one batch.
pub fn terminal_utilities<J: Judge + ?Sized>(
    judge: &J,
    ctx: &DebateContext,
    cfg: &GameConfig,
) -> Result<HashMap<EvidenceMask, f64>> {
    let subsets = subsets_of_size(ctx.dim(), cfg.turns);
    let queries: Vec<_> = subsets
        .iter()
        .flat_map(|&m| [(ctx.a_first, m), (ctx.a_second, m)])
        .collect();
    let scores = judge.score_masks(ctx.state.features(), &queries)?;
    Ok(subsets
        .iter()
        .enumerate()
        .map(|(i, &m)| (m, utility_from_scores(scores[2 * i], scores[2 * i + 1], cfg.utility)))
        .collect())
}

/// All subsets of `{0..n}` with `k` elements, as masks in increasing order.
pub fn subsets_of_size(n: usize, k: usize) -> Vec<EvidenceMask> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    if k == 0 {
        return vec![0];
    }
    // Gosper's hack.
    let mut m: u64 = (1u64 << k) - 1;
    let limit = 1u128 << n;
    while (m as u128) < limit {
        out.push(m);
        let c = m & m.wrapping_neg();
        let r = m + c;
        m = (((r ^ m) >> 2) / c) | r;
        if r == 0 {
            break;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Solution {
    /// Player 1's minimax value.
    pub value: f64,
    /// Evidence along the equilibrium path, in play order.
    pub principal_variation: Vec<usize>,
    pub tau: usize,
}

/// Exact backward induction with `τ = 0` (player 1 opens).
pub fn solve_exact<J: Judge + ?Sized>(ctx: &DebateContext, judge: &J, cfg: &GameConfig) -> Result<Solution> {
    solve_exact_tau(ctx, judge, cfg, 0)
}

/// Exact backward induction: player 1 maximizes on its turns, player 2
/// minimizes; ties go to the lowest evidence index.
pub fn solve_exact_tau<J: Judge + ?Sized>(
    ctx: &DebateContext,
    judge: &J,
    cfg: &GameConfig,
    tau: usize,
) -> Result<Solution> {
    cfg.validate(ctx.dim())?;
    check_budget(ctx.dim(), cfg.turns)?;
    let leaves = terminal_utilities(judge, ctx, cfg)?;
    let mut solver = Solver {
        dim: ctx.dim(),
        turns: cfg.turns,
        tau,
        leaves: &leaves,
        memo: HashMap::new(),
    };
    let value = solver.value(0);
    let mut pv = Vec::with_capacity(cfg.turns);
    let mut m = 0u64;
    while (m.count_ones() as usize) < cfg.turns {
        let e = solver.memo[&m].1;
        pv.push(e);
        m |= 1 << e;
    }
    Ok(Solution {
        value,
        principal_variation: pv,
        tau,
    })
}

struct Solver<'a> {
    dim: usize,
    turns: usize,
    tau: usize,
    leaves: &'a HashMap<EvidenceMask, f64>,
    memo: HashMap<EvidenceMask, (f64, usize)>,
}

impl Solver<'_> {
    fn value(&mut self, m: EvidenceMask) -> f64 {
        let depth = m.count_ones() as usize;
        if depth == self.turns {
            return self.leaves[&m];
        }
        if let Some(&(v, _)) = self.memo.get(&m) {
            return v;
        }
        let maximize = turn_owner(depth, self.tau) == Role::First;
        let mut best: Option<(f64, usize)> = None;
        for e in 0..self.dim {
            if m >> e & 1 == 1 {
                continue;
            }
            let v = self.value(m | 1 << e);
            let better = match best {
                None => true,
                Some((b, _)) => {
                    if maximize {
                        v > b
                    } else {
                        v < b
                    }
                }
            };
            if better {
                best = Some((v, e));
            }
        }
        let best = best.expect("non-terminal node has a legal move");
        self.memo.insert(m, best);
        best.0
    }
}

/// Value player 1 obtains when `fixed` plays `fixed_role` (deterministically)
/// and the other player best-responds. For `fixed_role = First` this is at
/// most the game value, with equality iff the fixed strategy is maximin.
pub fn best_response_value<J: Judge + ?Sized>(
    ctx: &DebateContext,
    judge: &J,
    cfg: &GameConfig,
    fixed: &dyn Strategy,
    fixed_role: Role,
    tau: usize,
    rng: &mut DetRng,
) -> Result<f64> {
    cfg.validate(ctx.dim())?;
    check_budget(ctx.dim(), cfg.turns)?;
    let leaves = terminal_utilities(judge, ctx, cfg)?;
    let mut node = DebateNode::default();
    br_rec(ctx, cfg, fixed, fixed_role, tau, &leaves, &mut node, rng)
}

#[allow(clippy::too_many_arguments)]
fn br_rec(
    ctx: &DebateContext,
    cfg: &GameConfig,
    fixed: &dyn Strategy,
    fixed_role: Role,
    tau: usize,
    leaves: &HashMap<EvidenceMask, f64>,
    node: &mut DebateNode,
    rng: &mut DetRng,
) -> Result<f64> {
    if node.depth() == cfg.turns {
        return Ok(leaves[&node.mask()]);
    }
    let role = turn_owner(node.depth(), tau);
    if role == fixed_role {
        let e = fixed.propose(ctx, node, role, rng)?;
        node.push(e, ctx.dim())?;
        let v = br_rec(ctx, cfg, fixed, fixed_role, tau, leaves, node, rng);
        node.proposed.pop();
        return v;
    }
    let mut best: Option<f64> = None;
    for e in legal_evidence(node, ctx.dim()) {
        node.proposed.push(e);
        let v = br_rec(ctx, cfg, fixed, fixed_role, tau, leaves, node, rng)?;
        node.proposed.pop();
        best = Some(match (best, role) {
            (None, _) => v,
            (Some(b), Role::First) => b.max(v),
            (Some(b), Role::Second) => b.min(v),
        });
    }
    Ok(best.expect("legal move exists"))
}

/// `game value − best-response value` for a player-1 strategy (≥ 0).
pub fn exploitability<J: Judge + ?Sized>(
    ctx: &DebateContext,
    judge: &J,
    cfg: &GameConfig,
    first: &dyn Strategy,
    rng: &mut DetRng,
) -> Result<f64> {
    let v = solve_exact(ctx, judge, cfg)?.value;
    let br = best_response_value(ctx, judge, cfg, first, Role::First, 0, rng)?;
    Ok(v - br)
}

/// `α ×` a game value or played-out utility.
pub fn debate_reward(value: f64, cfg: &GameConfig) -> f64 {
    cfg.alpha * value
}

/// `α × solve_exact(...)`, or 0 when both actions coincide.
pub fn exact_debate_reward<J: Judge + ?Sized>(
    state: &PatientState,
    a_t: usize,
    a_baseline: usize,
    judge: &J,
    cfg: &GameConfig,
) -> Result<f64> {
    if a_t == a_baseline {
        return Ok(0.0);
    }
    let ctx = DebateContext::new(state.clone(), a_t, a_baseline)?;
    Ok(debate_reward(solve_exact(&ctx, judge, cfg)?.value, cfg))
}

/// Indices revealed by a mask, ascending (re-exported for transcripts).
pub fn evidence_indices(m: EvidenceMask) -> Vec<usize> {
    indices_of(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::judge::FnJudge;
    use crate::rng::seeded;

    fn ctx(d: usize) -> DebateContext {
        DebateContext::new(PatientState::new((0..d).map(|i| i as f32).collect()).unwrap(), 3, 9).unwrap()
    }

    fn cfg(turns: usize) -> GameConfig {
        GameConfig {
            turns,
            first_mover: FirstMover::Fixed,
            ..GameConfig::default()
        }
    }

    #[test]
    fn legal_sets() {
        let mut node = DebateNode::default();
        assert_eq!(legal_evidence(&node, 8), (0..8).collect::<Vec<_>>());
        node.proposed = vec![0, 1, 2, 3, 4, 6, 7];
        assert_eq!(legal_evidence(&node, 8), vec![5]);
        assert!(node.push(3, 8).is_err());
        assert!(node.push(8, 8).is_err());
    }

    #[test]
    fn utility_cases() {
        assert_eq!(utility_from_scores(0.7, 0.3, UtilityKind::Sign), 1.0);
        assert_eq!(utility_from_scores(0.3, 0.3, UtilityKind::Sign), 0.0);
        assert_eq!(utility_from_scores(0.3, 0.7, UtilityKind::Sign), -1.0);
        assert!((utility_from_scores(0.7, 0.3, UtilityKind::Difference) - 0.4).abs() < 1e-12);
        for kind in [UtilityKind::Sign, UtilityKind::Difference] {
            assert_eq!(utility_from_scores(0.1, 0.8, kind), -utility_from_scores(0.8, 0.1, kind));
        }
    }

    #[test]
    fn utility_requires_full_evidence() {
        let j = FnJudge { dim: 4, f: |_, _, _: &[f32]| 0.0 };
        assert!(utility(&j, &ctx(4), 0b1, &cfg(2)).is_err());
        assert_eq!(utility(&j, &ctx(4), 0b11, &cfg(2)).unwrap(), 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(cfg(3).validate(8).is_err());
        assert!(cfg(10).validate(8).is_err());
        assert!(GameConfig { alpha: 0.0, ..cfg(2) }.validate(8).is_err());
        assert!(DebateContext::new(PatientState::new(vec![0.0; 4]).unwrap(), 2, 2).is_err());
    }

    #[test]
    fn scripted_play_interleaves() {
        let j = FnJudge { dim: 8, f: |_, _, _: &[f32]| 0.0 };
        let mut rng = seeded(0);
        let t = play_debate_tau(&ctx(8), &Scripted(vec![5, 1, 2]), &Scripted(vec![5, 6, 7]), &j, &cfg(4), 0, &mut rng)
            .unwrap();
        assert_eq!(t.node().proposed, vec![5, 6, 1, 7]);
        assert_eq!(t.evidence[1].1, Role::Second);
        let t1 = play_debate_tau(&ctx(8), &Scripted(vec![5, 1, 2]), &Scripted(vec![5, 6, 7]), &j, &cfg(4), 1, &mut rng)
            .unwrap();
        assert_eq!(t1.node().proposed, vec![5, 1, 6, 2]);
    }

    #[test]
    fn illegal_strategy_is_an_error() {
        let j = FnJudge { dim: 4, f: |_, _, _: &[f32]| 0.0 };
        let dup = FnStrategy(|_: &DebateContext, _: &DebateNode, _| 0usize);
        let r = play_debate_tau(&ctx(4), &dup, &dup, &j, &cfg(2), 0, &mut seeded(0));
        assert!(matches!(r, Err(Error::IllegalEvidence { index: 0, .. })));
    }

    #[test]
    fn subsets_enumeration() {
        assert_eq!(subsets_of_size(4, 2), vec![0b0011, 0b0101, 0b0110, 0b1001, 0b1010, 0b1100]);
        assert_eq!(subsets_of_size(8, 4).len(), 70);
        assert_eq!(subsets_of_size(44, 2).len(), 946);
    }

    #[test]
    fn single_deciding_feature() {
        // Revealing feature 2 makes a_first win; otherwise a_second wins.
        // Player 1 opens and grabs it.
        let j = FnJudge {
            dim: 4,
            f: |a, m: u64, _: &[f32]| if (m >> 2 & 1 == 1) == (a == 3) { 1.0 } else { 0.0 },
        };
        let s = solve_exact(&ctx(4), &j, &cfg(2)).unwrap();
        assert_eq!(s.value, 1.0);
        assert_eq!(s.principal_variation[0], 2);
        // If player 2 opens, it takes feature 2 off the table... but revealing
        // it helps player 1, so player 2 avoids it and player 1 then takes it.
        let s1 = solve_exact_tau(&ctx(4), &j, &cfg(2), 1).unwrap();
        assert_eq!(s1.value, 1.0);
        assert_ne!(s1.principal_variation[0], 2);
    }

    #[test]
    fn swapping_actions_negates_value() {
        let j = FnJudge {
            dim: 4,
            f: |a, m: u64, s: &[f32]| (a as f64) * indices_of(m).iter().map(|&i| s[i] as f64 - 1.5).sum::<f64>(),
        };
        let c = ctx(4);
        let v = solve_exact(&c, &j, &cfg(2)).unwrap().value;
        // With the roles swapped, the same player still opens.
        let w = solve_exact_tau(&c.swapped(), &j, &cfg(2), 1).unwrap().value;
        assert_eq!(v, -w);
    }

    #[test]
    fn budget_enforced() {
        let j = FnJudge { dim: 44, f: |_, _, _: &[f32]| 0.0 };
        let r = solve_exact(&ctx(44), &j, &cfg(6));
        assert!(matches!(r, Err(Error::Budget { .. })));
        assert_eq!(tree_size(8, 6), 262_144);
    }

    #[test]
    fn reward_scaling() {
        let g = GameConfig::default();
        assert_eq!(debate_reward(1.0, &g), 5.0);
        assert_eq!(debate_reward(0.0, &g), 0.0);
        let j = FnJudge { dim: 4, f: |_, _, _: &[f32]| 1.0 };
        assert_eq!(exact_debate_reward(&ctx(4).state, 3, 3, &j, &cfg(2)).unwrap(), 0.0);
    }
}
