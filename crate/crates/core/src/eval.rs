//! Evaluation: weighted importance sampling of task policies, judge
//! preference recovery under different evidence proposers (optionally
//! attacked by a confuser), justifiable-vs-baseline preference breakdown,
//! and exact Shapley attributions as an evidence baseline.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::argagents::{ActMode, ArgPolicy, PolicyStrategy};
use crate::debate::{
    play_debate, play_schedule, solve_exact, turn_owner, DebateContext, GameConfig, Role, Strategy, UniformRandom,
};
use crate::error::{Error, Result};
use crate::judge::{mask_of, EvidenceSet, Judge};
use crate::prefdata::PreferenceTuple;
use crate::rng::DetRng;
use crate::stats::Estimate;
use crate::synthenv::{PatientState, N_ACTIONS};
use crate::taskpolicy::{BcPolicy, DebateSource, Episode, QNet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WisConfig {
    /// ε of the ε-greedy softening applied to the evaluated greedy policy.
    pub epsilon: f64,
    /// Lower bound on behavior probabilities before taking ratios.
    pub bc_floor: f64,
}

impl Default for WisConfig {
    fn default() -> Self {
        WisConfig {
            epsilon: 0.01,
            bc_floor: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WisEstimate {
    pub value: f64,
    /// `(Σ w)² / Σ w²`.
    pub ess: f64,
    /// Self-normalized per-trajectory weights (sum to 1).
    pub weights: Vec<f64>,
}

/// Self-normalized importance-sampling estimate of the ±1 outcome return
/// from per-trajectory ratio products and returns. Weights are handled in
/// log space.
pub fn wis_from_log_weights(log_w: &[f64], returns: &[f64]) -> Result<WisEstimate> {
    if log_w.is_empty() || log_w.len() != returns.len() {
        return Err(Error::InvalidArgument("WIS needs one weight per trajectory".into()));
    }
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::NonFinite("all importance weights are zero".into()));
    }
    let w: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    let sq: f64 = w.iter().map(|x| x * x).sum();
    let weights: Vec<f64> = w.iter().map(|x| x / total).collect();
    let value = weights.iter().zip(returns).map(|(w, g)| w * g).sum();
    Ok(WisEstimate {
        value,
        ess: total * total / sq,
        weights,
    })
}

/// Log importance ratio of each trajectory for evaluation policy `pi_e`
/// (a distribution per state) against the floored behavior model.
fn log_ratios(
    episodes: &[Episode],
    bc: &BcPolicy,
    cfg: &WisConfig,
    mut pi_e: impl FnMut(&[&[f32]]) -> Result<Vec<[f64; N_ACTIONS]>>,
) -> Result<Vec<f64>> {
    episodes
        .iter()
        .map(|ep| {
            if ep.steps.is_empty() {
                return Ok(0.0);
            }
            let states: Vec<&[f32]> = ep.steps.iter().map(|s| s.state.as_slice()).collect();
            let pb = bc.probs(&states)?;
            let pe = pi_e(&states)?;
            Ok(ep
                .steps
                .iter()
                .enumerate()
                .map(|(t, s)| pe[t][s.action].ln() - pb[t][s.action].max(cfg.bc_floor).ln())
                .sum())
        })
        .collect()
}

/// WIS value of the ε-greedy softening of `policy`'s greedy actions, with
/// returns equal to each trajectory's ±1 outcome.
pub fn wis_evaluate(policy: &QNet, bc: &BcPolicy, episodes: &[Episode], cfg: &WisConfig) -> Result<WisEstimate> {
    if !(0.0..=1.0).contains(&cfg.epsilon) || !(cfg.bc_floor > 0.0 && cfg.bc_floor <= 1.0) {
        return Err(Error::Config("WIS epsilon must be in [0, 1] and floor in (0, 1]".into()));
    }
    let lw = log_ratios(episodes, bc, cfg, |states| {
        let greedy = policy.greedy(states)?;
        Ok(greedy
            .into_iter()
            .map(|g| {
                let mut p = [cfg.epsilon / N_ACTIONS as f64; N_ACTIONS];
                p[g] += 1.0 - cfg.epsilon;
                p
            })
            .collect())
    })?;
    let returns: Vec<f64> = episodes.iter().map(|e| e.outcome).collect();
    wis_from_log_weights(&lw, &returns)
}

/// WIS value of the behavior model's own (floored) distribution; every
/// ratio is exactly 1 unless the floor binds.
pub fn wis_evaluate_bc(bc: &BcPolicy, episodes: &[Episode], cfg: &WisConfig) -> Result<WisEstimate> {
    let lw = log_ratios(episodes, bc, cfg, |states| {
        Ok(bc
            .probs(states)?
            .into_iter()
            .map(|p| std::array::from_fn(|a| p[a].max(cfg.bc_floor)))
            .collect())
    })?;
    let returns: Vec<f64> = episodes.iter().map(|e| e.outcome).collect();
    wis_from_log_weights(&lw, &returns)
}

/// Who supplies the evidence for `a_p`.
#[derive(Debug, Clone, Copy)]
pub enum Proposer<'a> {
    /// Uniformly random evidence.
    Random,
    /// A single-agent proposer (precommit or adaptive).
    Isolated(&'a ArgPolicy),
    /// A self-play agent; plays both sides when there is no confuser.
    SelfPlay(&'a ArgPolicy),
    /// The main agent argues `a_p`, its trained opponent `a_{1−p}`.
    Maxmin { main: &'a ArgPolicy, opponent: &'a ArgPolicy },
}

impl Proposer<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Proposer::Random => "random",
            Proposer::Isolated(_) => "isolated",
            Proposer::SelfPlay(_) => "selfplay",
            Proposer::Maxmin { .. } => "maxmin",
        }
    }
}

/// Credit for `a_p` from player 1's utility (player 1 always argues `a_p`).
fn credit_of(u: f64) -> f64 {
    if u > 0.0 {
        1.0
    } else if u == 0.0 {
        0.5
    } else {
        0.0
    }
}

/// Judge accuracy at recovering `a_p` over `n_games` games on `tuples`
/// (cycled in order). Agents act deterministically.
///
/// Without a confuser the proposer supplies all `L` evidence, except that
/// debate agents play both sides. With a confuser arguing `a_{1−p}`, turns
/// alternate `L/2` each; an isolated proposer instead precommits its `L/2`
/// before the confuser's `L/2`.
pub fn preference_recovery(
    judge: &dyn Judge,
    proposer: Proposer<'_>,
    confuser: Option<&ArgPolicy>,
    tuples: &[PreferenceTuple],
    n_games: usize,
    game: &GameConfig,
    rng: &mut DetRng,
) -> Result<Estimate> {
    if tuples.is_empty() || n_games == 0 {
        return Err(Error::InvalidArgument("preference recovery needs games".into()));
    }
    let d = tuples[0].state.dim();
    game.validate(d)?;
    if judge.state_dim() != d {
        return Err(Error::Dimension(format!("judge expects {} features, tuples have {d}", judge.state_dim())));
    }
    for p in [proposer_policy(&proposer), confuser].into_iter().flatten() {
        if p.state_dim != d {
            return Err(Error::Dimension("agent and tuples disagree on state_dim".into()));
        }
    }
    let l = game.turns;
    let mut credits = Vec::with_capacity(n_games);
    for k in 0..n_games {
        let t = &tuples[k % tuples.len()];
        let ctx = DebateContext::new(t.state.clone(), t.preferred(), t.rejected())?;
        let alternating = |rng: &mut DetRng| {
            let tau = game.draw_tau(rng);
            (0..l).map(|i| turn_owner(i, tau)).collect::<Vec<_>>()
        };
        let (schedule, first, second): (Vec<Role>, Box<dyn Strategy + '_>, Box<dyn Strategy + '_>) =
            match (proposer, confuser) {
                (Proposer::Random, None) => (vec![Role::First; l], Box::new(UniformRandom), Box::new(UniformRandom)),
                (Proposer::Isolated(p), None) => (vec![Role::First; l], Box::new(det(p)), Box::new(UniformRandom)),
                (Proposer::SelfPlay(p), None) => (alternating(rng), Box::new(det(p)), Box::new(det(p))),
                (Proposer::Maxmin { main, opponent }, None) => {
                    (alternating(rng), Box::new(det(main)), Box::new(det(opponent)))
                }
                (Proposer::Random, Some(c)) => (alternating(rng), Box::new(UniformRandom), Box::new(det(c))),
                (Proposer::Isolated(p), Some(c)) => {
                    let mut s = vec![Role::First; l / 2];
                    s.extend(vec![Role::Second; l / 2]);
                    (s, Box::new(det(p)), Box::new(det(c)))
                }
                (Proposer::SelfPlay(p), Some(c)) | (Proposer::Maxmin { main: p, .. }, Some(c)) => {
                    (alternating(rng), Box::new(det(p)), Box::new(det(c)))
                }
            };
        let tr = play_schedule(&ctx, &schedule, first.as_ref(), second.as_ref(), judge, game, rng)?;
        credits.push(credit_of(tr.utility));
    }
    Ok(Estimate::from_samples(&credits))
}

fn det(policy: &ArgPolicy) -> PolicyStrategy<'_> {
    PolicyStrategy {
        policy,
        mode: ActMode::Deterministic,
    }
}

fn proposer_policy<'a>(p: &Proposer<'a>) -> Option<&'a ArgPolicy> {
    match *p {
        Proposer::Random => None,
        Proposer::Isolated(a) | Proposer::SelfPlay(a) => Some(a),
        Proposer::Maxmin { main, .. } => Some(main),
    }
}

/// Judge accuracy when the evidence is chosen by `select(tuple)`.
pub fn evidence_accuracy(
    judge: &dyn Judge,
    tuples: &[PreferenceTuple],
    mut select: impl FnMut(&PreferenceTuple) -> Result<EvidenceSet>,
) -> Result<Estimate> {
    if tuples.is_empty() {
        return Err(Error::InvalidArgument("accuracy over no tuples".into()));
    }
    let mut credits = Vec::with_capacity(tuples.len());
    for t in tuples {
        let m = select(t)?.mask();
        let s = judge.score_masks(t.state.features(), &[(t.preferred(), m), (t.rejected(), m)])?;
        credits.push(crate::judge::credit(s[0], s[1]));
    }
    Ok(Estimate::from_samples(&credits))
}

/// Fractions of states where the justifiable policy's action wins the
/// debate (JP), loses it (BP), or equals the baseline's action (EP).
/// Drawn debates count half to each side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Breakdown {
    pub jp: Estimate,
    pub bp: Estimate,
    pub ep: Estimate,
    /// Among differing states, the fraction won by the justifiable action.
    pub preferred: Estimate,
}

pub fn preference_breakdown(
    justifiable: &QNet,
    baseline: &QNet,
    judge: &dyn Judge,
    source: DebateSource<'_>,
    states: &[&[f32]],
    game: &GameConfig,
    rng: &mut DetRng,
) -> Result<Breakdown> {
    if states.is_empty() {
        return Err(Error::InvalidArgument("breakdown over no states".into()));
    }
    let aj = justifiable.greedy(states)?;
    let ab = baseline.greedy(states)?;
    let (mut jp, mut bp, mut ep, mut pref) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for ((s, &a_j), &a_b) in states.iter().zip(&aj).zip(&ab) {
        if a_j == a_b {
            jp.push(0.0);
            bp.push(0.0);
            ep.push(1.0);
            continue;
        }
        let ctx = DebateContext::new(PatientState::new(s.to_vec())?, a_j, a_b)?;
        let u = match source {
            DebateSource::Exact => solve_exact(&ctx, judge, game)?.value,
            DebateSource::Agents(p) => {
                let st = PolicyStrategy { policy: p, mode: ActMode::Deterministic };
                play_debate(&ctx, &st, &st, judge, game, rng)?.utility
            }
        };
        let c = credit_of(u);
        jp.push(c);
        bp.push(1.0 - c);
        ep.push(0.0);
        pref.push(c);
    }
    Ok(Breakdown {
        jp: Estimate::from_samples(&jp),
        bp: Estimate::from_samples(&bp),
        ep: Estimate::from_samples(&ep),
        preferred: Estimate::from_samples(&pref),
    })
}

/// Largest dimension for exact (2^D-coalition) Shapley values.
pub const SHAPLEY_MAX_DIM: usize = 12;

/// Exact Shapley values of `f` at `x`, with absent features set to
/// `baseline`. `f` is evaluated once on all `2^D` coalition inputs.
pub fn shapley_values(
    x: &[f32],
    baseline: &[f32],
    f: impl FnOnce(&[&[f32]]) -> Result<Vec<f64>>,
) -> Result<Vec<f64>> {
    let d = x.len();
    if baseline.len() != d {
        return Err(Error::Dimension("Shapley baseline width differs from the input".into()));
    }
    if d == 0 {
        return Err(Error::InvalidArgument("Shapley values of an empty input".into()));
    }
    if d > SHAPLEY_MAX_DIM {
        return Err(Error::Budget {
            nodes: 1u128 << d,
            budget: 1u128 << SHAPLEY_MAX_DIM,
        });
    }
    let n = 1usize << d;
    let inputs: Vec<Vec<f32>> = (0..n)
        .map(|m| (0..d).map(|j| if m >> j & 1 == 1 { x[j] } else { baseline[j] }).collect())
        .collect();
    let views: Vec<&[f32]> = inputs.iter().map(|v| v.as_slice()).collect();
    let v = f(&views)?;
    if v.len() != n {
        return Err(Error::Dimension("coalition values".into()));
    }
    // weight(|S|) = |S|!(D − |S| − 1)!/D!
    let mut fact = vec![1.0f64; d + 1];
    for k in 1..=d {
        fact[k] = fact[k - 1] * k as f64;
    }
    let weight: Vec<f64> = (0..d).map(|s| fact[s] * fact[d - s - 1] / fact[d]).collect();
    let mut phi = vec![0.0; d];
    for m in 0..n {
        let size = (m as u64).count_ones() as usize;
        for (i, p) in phi.iter_mut().enumerate() {
            if m >> i & 1 == 0 {
                *p += weight[size] * (v[m | 1 << i] - v[m]);
            }
        }
    }
    Ok(phi)
}

/// Indices of the `l` largest `|φ|`, ties broken by lower index.
pub fn top_features(phi: &[f64], l: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..phi.len()).collect();
    idx.sort_by(|&a, &b| phi[b].abs().total_cmp(&phi[a].abs()).then(a.cmp(&b)));
    idx.truncate(l);
    idx
}

/// Top-`l` features of `Q(state, action)` by exact Shapley value against
/// `baseline` (the training-split feature means).
pub fn shapley_evidence(
    policy: &QNet,
    state: &[f32],
    action: usize,
    baseline: &[f32],
    l: usize,
) -> Result<(EvidenceSet, Vec<f64>)> {
    if action >= N_ACTIONS {
        return Err(Error::InvalidArgument(format!("action {action} out of range")));
    }
    let phi = shapley_values(state, baseline, |xs| {
        let q = policy.q_values(xs)?;
        Ok((0..q.rows()).map(|r| q.get(r, action) as f64).collect())
    })?;
    let ev = EvidenceSet::new(top_features(&phi, l), state.len())?;
    Ok((ev, phi))
}

/// Column means of `rows`.
pub fn feature_means<'a>(rows: impl IntoIterator<Item = &'a [f32]>) -> Result<Vec<f32>> {
    let mut sum: Vec<f64> = Vec::new();
    let mut n = 0usize;
    for r in rows {
        if sum.is_empty() {
            sum = vec![0.0; r.len()];
        } else if r.len() != sum.len() {
            return Err(Error::Dimension("rows of different widths".into()));
        }
        sum.iter_mut().zip(r).for_each(|(s, &v)| *s += v as f64);
        n += 1;
    }
    if n == 0 {
        return Err(Error::InvalidArgument("mean of no rows".into()));
    }
    Ok(sum.into_iter().map(|s| (s / n as f64) as f32).collect())
}

/// Random evidence of size `l` as an [`EvidenceSet`].
pub fn random_evidence_set(d: usize, l: usize, rng: &mut DetRng) -> Result<EvidenceSet> {
    let mut idx: Vec<usize> = (0..d).collect();
    for i in 0..l.min(d) {
        let j = rng.random_range(i..d);
        idx.swap(i, j);
    }
    idx.truncate(l);
    idx.sort_unstable();
    debug_assert_eq!(mask_of(&idx).count_ones() as usize, idx.len());
    EvidenceSet::new(idx, d)
}

/// One metric row: `estimate ± 2·se` over `n` samples for one seed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub metric: String,
    pub estimate: f64,
    pub se: f64,
    pub n: usize,
    pub seed: u64,
}

impl MetricRow {
    pub fn new(metric: impl Into<String>, e: Estimate, seed: u64) -> Self {
        MetricRow {
            metric: metric.into(),
            estimate: e.estimate,
            se: e.se,
            n: e.n,
            seed,
        }
    }

    pub fn lower(&self) -> f64 {
        self.estimate - 2.0 * self.se
    }

    pub fn upper(&self) -> f64 {
        self.estimate + 2.0 * self.se
    }
}

/// Collected metrics, written as CSV with header `metric,estimate,se,n,seed`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<MetricRow>,
}

impl MetricsReport {
    pub fn push(&mut self, metric: impl Into<String>, e: Estimate, seed: u64) {
        self.rows.push(MetricRow::new(metric, e, seed));
    }

    pub fn get(&self, metric: &str) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.metric == metric)
    }

    /// Fixed formatting (`{:.10}`) so reruns are byte-identical.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "metric,estimate,se,n,seed")?;
        for r in &self.rows {
            if r.metric.contains([',', '"', '\n']) {
                return Err(Error::Format(format!("metric name {:?} is not CSV-safe", r.metric)));
            }
            writeln!(w, "{},{:.10},{:.10},{},{}", r.metric, r.estimate, r.se, r.n, r.seed)?;
        }
        Ok(())
    }

    pub fn read_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some("metric,estimate,se,n,seed") {
            return Err(Error::Format("metrics CSV header".into()));
        }
        let mut rows = Vec::new();
        for (k, line) in lines.enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::Format(format!("metrics CSV line {}: {line:?}", k + 2));
            if f.len() != 5 {
                return Err(bad());
            }
            let num = |s: &str| -> Result<f64> {
                match s {
                    "NaN" => Ok(f64::NAN),
                    _ => s.parse().map_err(|_| bad()),
                }
            };
            rows.push(MetricRow {
                metric: f[0].to_string(),
                estimate: num(f[1])?,
                se: num(f[2])?,
                n: f[3].parse().map_err(|_| bad())?,
                seed: f[4].parse().map_err(|_| bad())?,
            });
        }
        Ok(MetricsReport { rows })
    }
}
