//! Learned contextual argumentative agents trained with PPO.
//!
//! One [`ArgPolicy`] maps `[standardized state | onehot(argued action) |
//! proposed mask]` to evidence logits and a value estimate through a shared
//! two-layer trunk. Proposed indices are masked to `−∞` before sampling.
//!
//! Training runs many games in lockstep inside an [`Arena`]: each tick every
//! active game advances to the learner's next decision, the learner acts in
//! one batched forward pass, and frozen seats (a snapshot, an opponent or a
//! target) play their turns in between. One learner decision is one
//! environment step, so a debate of length `L` contributes `L/2` steps per
//! player and an isolated agent contributes its whole episode.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::debate::{turn_owner, utility_from_scores, DebateContext, DebateNode, GameConfig, Role, Strategy};
use crate::error::{Error, Result};
use crate::judge::{EvidenceMask, Judge};
use crate::neural::loss::masked_log_softmax;
use crate::neural::persist::{load_networks, save_networks, Metadata};
use crate::neural::{clip_grad_norm, Activation, AdamState, Gradients, LayerSpec, Matrix, Network, Standardizer};
use crate::prefdata::{PreferenceDataset, PreferenceTuple, Split};
use crate::rng::{substream, DetRng};
use crate::synthenv::N_ACTIONS;

pub const LEAKY_SLOPE: f32 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub learning_rate: f32,
    pub ent_coef: f64,
    pub clip_range: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub vf_coef: f64,
    pub max_grad_norm: f32,
    pub normalize_rewards: bool,
    pub ortho_init: bool,
    /// Minibatch size.
    pub batch_size: usize,
    /// Learner steps collected per update.
    pub n_steps: usize,
    /// Passes over each rollout.
    pub n_epochs: usize,
    /// Games played in lockstep.
    pub n_envs: usize,
    /// Trunk width.
    pub hidden: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            learning_rate: 5e-4,
            ent_coef: 1e-2,
            clip_range: 0.1,
            gamma: 0.9,
            gae_lambda: 0.7,
            vf_coef: 0.5,
            max_grad_norm: 0.1,
            normalize_rewards: true,
            ortho_init: true,
            batch_size: 128,
            n_steps: 512,
            n_epochs: 10,
            n_envs: 32,
            hidden: 512,
        }
    }
}

impl PpoConfig {
    /// Defaults with the confuser overrides.
    pub fn confuser() -> Self {
        PpoConfig {
            hidden: 256,
            ent_coef: 3e-4,
            clip_range: 0.4,
            vf_coef: 0.65,
            max_grad_norm: 2.0,
            ..PpoConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.clip_range > 0.0 && self.clip_range < 1.0) {
            return bad(format!("clip range {} outside (0, 1)", self.clip_range));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("discount {} outside (0, 1]", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad(format!("GAE lambda {} outside [0, 1]", self.gae_lambda));
        }
        if !(self.learning_rate > 0.0) || !(self.max_grad_norm > 0.0) {
            return bad("learning rate and max grad norm must be positive".into());
        }
        if self.ent_coef < 0.0 || self.vf_coef < 0.0 {
            return bad("loss coefficients must be non-negative".into());
        }
        if self.batch_size == 0 || self.n_steps == 0 || self.n_epochs == 0 || self.n_envs == 0 || self.hidden == 0 {
            return bad("PPO sizes must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleMode {
    #[default]
    Selfplay,
    Maxmin,
}

/// Step budgets. Every count is in learner decisions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schedule {
    pub mode: ScheduleMode,
    pub generations: usize,
    /// Self-play steps between snapshot refreshes.
    pub selfplay_steps: usize,
    /// Maxmin main-agent steps per generation.
    pub main_steps: usize,
    /// Maxmin opponent steps per generation.
    pub opponent_steps: usize,
    /// Re-initialize the maxmin opponent at the start of every generation.
    pub reinit_opponent: bool,
    /// Total steps for isolated agents and confusers.
    pub single_steps: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            mode: ScheduleMode::Selfplay,
            generations: 20,
            selfplay_steps: 2_000,
            main_steps: 500,
            opponent_steps: 2_000,
            reinit_opponent: false,
            single_steps: 40_000,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if self.generations == 0
            || self.selfplay_steps == 0
            || self.main_steps == 0
            || self.opponent_steps == 0
            || self.single_steps == 0
        {
            return Err(Error::Config("schedule step counts must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActMode {
    Stochastic,
    Deterministic,
}

/// Policy and value heads over a shared trunk.
#[derive(Debug, Clone, PartialEq)]
pub struct ArgPolicy {
    pub trunk: Network,
    pub policy_head: Network,
    pub value_head: Network,
    pub state_dim: usize,
    pub standardizer: Standardizer,
}

impl ArgPolicy {
    pub fn obs_dim(state_dim: usize) -> usize {
        2 * state_dim + N_ACTIONS
    }

    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        hidden: usize,
        ortho_init: bool,
        standardizer: Standardizer,
        rng: &mut R,
    ) -> Result<Self> {
        if standardizer.dim() != state_dim {
            return Err(Error::Dimension("standardizer width disagrees with state_dim".into()));
        }
        let act = Activation::LeakyRelu { slope: LEAKY_SLOPE };
        let trunk = [
            LayerSpec::new(Self::obs_dim(state_dim), hidden, act),
            LayerSpec::new(hidden, hidden, act),
        ];
        let pol = [LayerSpec::new(hidden, state_dim, Activation::Identity)];
        let val = [LayerSpec::new(hidden, 1, Activation::Identity)];
        let (trunk, policy_head, value_head) = if ortho_init {
            let g = 2f32.sqrt();
            (
                Network::orthogonal(&trunk, &[g, g], rng)?,
                Network::orthogonal(&pol, &[0.01], rng)?,
                Network::orthogonal(&val, &[1.0], rng)?,
            )
        } else {
            (Network::new(&trunk, rng)?, Network::new(&pol, rng)?, Network::new(&val, rng)?)
        };
        Ok(ArgPolicy {
            trunk,
            policy_head,
            value_head,
            state_dim,
            standardizer,
        })
    }

    pub fn hidden(&self) -> usize {
        self.trunk.out_dim()
    }

    /// Writes `[standardized state | onehot(argued) | mask]` into `row`.
    pub fn encode(&self, row: &mut [f32], state: &[f32], argued: usize, mask: EvidenceMask) {
        let d = self.state_dim;
        row.fill(0.0);
        for (j, &v) in state.iter().enumerate() {
            row[j] = self.standardizer.apply(j, v);
        }
        row[d + argued] = 1.0;
        for j in 0..d {
            if mask >> j & 1 == 1 {
                row[d + N_ACTIONS + j] = 1.0;
            }
        }
    }

    fn check(&self, state: &[f32], argued: usize, mask: EvidenceMask) -> Result<()> {
        if state.len() != self.state_dim {
            return Err(Error::Dimension(format!("state of width {}, policy expects {}", state.len(), self.state_dim)));
        }
        if argued >= N_ACTIONS {
            return Err(Error::InvalidArgument(format!("argued action {argued} out of range")));
        }
        if mask >> self.state_dim != 0 {
            return Err(Error::IllegalEvidence {
                index: 63 - mask.leading_zeros() as usize,
                reason: format!("outside state dimension {}", self.state_dim),
            });
        }
        if mask.count_ones() as usize >= self.state_dim {
            return Err(Error::IllegalEvidence {
                index: self.state_dim,
                reason: "every feature already proposed".into(),
            });
        }
        Ok(())
    }

    /// Evidence logits and values for a batch of encoded observations.
    pub fn evaluate(&self, obs: &Matrix) -> Result<(Matrix, Vec<f64>)> {
        let h = self.trunk.forward(obs)?;
        let logits = self.policy_head.forward(&h)?;
        let values = self.value_head.forward(&h)?;
        Ok((logits, values.data().iter().map(|&v| v as f64).collect()))
    }

    /// Masked log-probabilities over evidence for one observation.
    pub fn log_probs(&self, state: &[f32], argued: usize, mask: EvidenceMask) -> Result<Vec<f64>> {
        self.check(state, argued, mask)?;
        let mut x = Matrix::zeros(1, Self::obs_dim(self.state_dim));
        self.encode(x.row_mut(0), state, argued, mask);
        let (logits, _) = self.evaluate(&x)?;
        Ok(masked_log_softmax(logits.row(0), &legal_flags(mask, self.state_dim)))
    }

    /// Proposes one unproposed feature index.
    pub fn act(
        &self,
        state: &[f32],
        mask: EvidenceMask,
        argued: usize,
        mode: ActMode,
        rng: &mut DetRng,
    ) -> Result<usize> {
        let lp = self.log_probs(state, argued, mask)?;
        Ok(match mode {
            ActMode::Deterministic => argmax_legal(&lp),
            ActMode::Stochastic => sample_log_probs(&lp, rng),
        })
    }

    pub fn save(&self, path: &Path, extra: &Metadata) -> Result<()> {
        let mut meta = extra.clone();
        meta.insert("kind".into(), "argpolicy".into());
        meta.insert("state_dim".into(), self.state_dim.to_string());
        meta.insert("standardizer".into(), serde_json::to_string(&self.standardizer)?);
        save_networks(path, &[&self.trunk, &self.policy_head, &self.value_head], &meta)
    }

    pub fn load(path: &Path) -> Result<(Self, Metadata)> {
        let (nets, meta) = load_networks(path)?;
        if meta.get("kind").map(String::as_str) != Some("argpolicy") || nets.len() != 3 {
            return Err(Error::Format(format!("{} is not an argument-policy file", path.display())));
        }
        let state_dim: usize = meta
            .get("state_dim")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Format("policy file lacks state_dim".into()))?;
        let standardizer: Standardizer = serde_json::from_str(
            meta.get("standardizer")
                .ok_or_else(|| Error::Format("policy file lacks standardizer".into()))?,
        )?;
        let mut it = nets.into_iter();
        let p = ArgPolicy {
            trunk: it.next().expect("3 nets"),
            policy_head: it.next().expect("3 nets"),
            value_head: it.next().expect("3 nets"),
            state_dim,
            standardizer,
        };
        if p.trunk.in_dim() != Self::obs_dim(state_dim)
            || p.policy_head.out_dim() != state_dim
            || p.value_head.out_dim() != 1
            || p.policy_head.in_dim() != p.trunk.out_dim()
            || p.value_head.in_dim() != p.trunk.out_dim()
        {
            return Err(Error::Format("policy network shapes disagree with state_dim".into()));
        }
        Ok((p, meta))
    }
}

fn legal_flags(mask: EvidenceMask, d: usize) -> Vec<bool> {
    (0..d).map(|j| mask >> j & 1 == 0).collect()
}

/// Argmax over finite log-probabilities; ties go to the lowest index.
fn argmax_legal(lp: &[f64]) -> usize {
    let mut best = usize::MAX;
    for (j, &v) in lp.iter().enumerate() {
        if v.is_finite() && (best == usize::MAX || v > lp[best]) {
            best = j;
        }
    }
    best
}

fn sample_log_probs(lp: &[f64], rng: &mut DetRng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = usize::MAX;
    for (j, &v) in lp.iter().enumerate() {
        if v.is_finite() {
            acc += v.exp();
            last = j;
            if u < acc {
                return j;
            }
        }
    }
    last
}

/// A policy used as a debate [`Strategy`]: it argues whichever action its
/// role is assigned.
#[derive(Debug, Clone, Copy)]
pub struct PolicyStrategy<'a> {
    pub policy: &'a ArgPolicy,
    pub mode: ActMode,
}

impl Strategy for PolicyStrategy<'_> {
    fn propose(&self, ctx: &DebateContext, node: &DebateNode, role: Role, rng: &mut DetRng) -> Result<usize> {
        self.policy
            .act(ctx.state.features(), node.mask(), ctx.action_of(role), self.mode, rng)
    }
}

/// Generalized advantage estimates and returns for one sequence of steps.
/// `last_value` bootstraps after the final step unless it is terminal.
pub fn gae(rewards: &[f64], values: &[f64], dones: &[bool], last_value: f64, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let next = if t + 1 < n { values[t + 1] } else { last_value };
        let delta = rewards[t] + gamma * next * live - values[t];
        acc = delta + gamma * lambda * live * acc;
        adv[t] = acc;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

/// Running variance of discounted returns; rewards are divided by its
/// square root.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardNormalizer {
    gamma: f64,
    count: f64,
    mean: f64,
    var: f64,
    returns: Vec<f64>,
}

impl RewardNormalizer {
    pub const CLIP: f64 = 10.0;

    pub fn new(gamma: f64, n_envs: usize) -> Self {
        RewardNormalizer {
            gamma,
            count: 1e-4,
            mean: 0.0,
            var: 1.0,
            returns: vec![0.0; n_envs],
        }
    }

    fn observe(&mut self, x: f64) {
        let n = self.count + 1.0;
        let delta = x - self.mean;
        let mean = self.mean + delta / n;
        let m2 = self.var * self.count + delta * delta * self.count / n;
        self.mean = mean;
        self.var = m2 / n;
        self.count = n;
    }

    /// Feeds raw reward `r` of env `env` and returns its scaled value.
    pub fn normalize(&mut self, env: usize, r: f64, done: bool) -> f64 {
        self.returns[env] = self.returns[env] * self.gamma + r;
        self.observe(self.returns[env]);
        if done {
            self.returns[env] = 0.0;
        }
        (r / (self.var + 1e-8).sqrt()).clamp(-Self::CLIP, Self::CLIP)
    }

    pub fn std(&self) -> f64 {
        self.var.sqrt()
    }
}

/// Which side the learner takes and who fills the other turns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// Random side against a frozen snapshot of itself.
    SelfPlay,
    /// Learner argues `a_p` as player 1 against a frozen opponent.
    Main,
    /// Learner argues `a_{1−p}` as player 2 against a frozen main agent.
    Opponent,
    /// Single agent, `turns` proposals for `a_p`, rewarded by the raw judge score.
    Isolated { turns: usize },
    /// Learner argues `a_{1−p}`, alternating with a frozen debate target.
    ConfuseDebate,
    /// Learner argues `a_{1−p}` with the last `L/2` proposals after a frozen
    /// precommitted target's first `L/2`.
    ConfusePrecommit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Seat {
    Learner,
    Frozen,
}

#[derive(Debug, Clone)]
struct Game {
    ctx: usize,
    turns: Vec<(Seat, usize)>,
    /// `Some((learner action, other action))` for debates, `None` for isolated play.
    debate: Option<(usize, usize)>,
    mask: EvidenceMask,
    cursor: usize,
}

/// Summary of the episodes that finished during one rollout.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EpisodeStats {
    pub episodes: usize,
    /// Mean raw terminal reward of the learner.
    pub mean_payoff: f64,
    /// Fraction of finished debates the judge resolved for `a_p` (ties 0.5);
    /// NaN for isolated play.
    pub accuracy: f64,
}

#[derive(Debug, Clone)]
struct Step {
    obs: Vec<f32>,
    legal: EvidenceMask,
    action: usize,
    logp: f64,
    value: f64,
    reward: f64,
    done: bool,
}

/// Games in lockstep plus everything needed to score them.
pub struct Arena<'a> {
    contexts: &'a [PreferenceTuple],
    scenario: Scenario,
    game: GameConfig,
    judge: &'a dyn Judge,
    frozen: Option<(ArgPolicy, ActMode)>,
    games: Vec<Game>,
    rng: DetRng,
    state_dim: usize,
}

impl<'a> Arena<'a> {
    pub fn new(
        contexts: &'a [PreferenceTuple],
        scenario: Scenario,
        game: &GameConfig,
        judge: &'a dyn Judge,
        n_envs: usize,
        rng: DetRng,
    ) -> Result<Self> {
        if contexts.is_empty() {
            return Err(Error::InvalidArgument("no training contexts".into()));
        }
        let d = contexts[0].state.dim();
        game.validate(d)?;
        if judge.state_dim() != d {
            return Err(Error::Dimension(format!("judge expects {} features, contexts have {d}", judge.state_dim())));
        }
        if let Scenario::Isolated { turns } = scenario {
            if turns == 0 || turns > d {
                return Err(Error::Config(format!("isolated episode length {turns} outside [1, {d}]")));
            }
        }
        let mut a = Arena {
            contexts,
            scenario,
            game: game.clone(),
            judge,
            frozen: None,
            games: Vec::with_capacity(n_envs),
            rng,
            state_dim: d,
        };
        for _ in 0..n_envs {
            let g = a.new_game();
            a.games.push(g);
        }
        Ok(a)
    }

    pub fn set_frozen(&mut self, policy: ArgPolicy, mode: ActMode) {
        self.frozen = Some((policy, mode));
    }

    fn new_game(&mut self) -> Game {
        let ctx = self.rng.random_range(0..self.contexts.len());
        let t = &self.contexts[ctx];
        let (ap, ar) = (t.preferred(), t.rejected());
        let l = self.game.turns;
        let alternating = |rng: &mut DetRng, learner: Role, first: usize, second: usize, game: &GameConfig| {
            let tau = game.draw_tau(rng);
            (0..l)
                .map(|k| {
                    let owner = turn_owner(k, tau);
                    let seat = if owner == learner { Seat::Learner } else { Seat::Frozen };
                    (seat, if owner == Role::First { first } else { second })
                })
                .collect::<Vec<_>>()
        };
        let (turns, debate) = match self.scenario {
            Scenario::SelfPlay => {
                // Dataset pairs are unordered, so the learner argues either side.
                let (first, second) = if self.rng.random::<bool>() { (ap, ar) } else { (ar, ap) };
                let role = if self.rng.random::<bool>() { Role::First } else { Role::Second };
                let turns = alternating(&mut self.rng, role, first, second, &self.game);
                let (mine, theirs) = if role == Role::First { (first, second) } else { (second, first) };
                (turns, Some((mine, theirs)))
            }
            Scenario::Main => (alternating(&mut self.rng, Role::First, ap, ar, &self.game), Some((ap, ar))),
            Scenario::Opponent | Scenario::ConfuseDebate => {
                (alternating(&mut self.rng, Role::Second, ap, ar, &self.game), Some((ar, ap)))
            }
            Scenario::Isolated { turns } => (vec![(Seat::Learner, ap); turns], None),
            Scenario::ConfusePrecommit => {
                let mut turns = vec![(Seat::Frozen, ap); l / 2];
                turns.extend(vec![(Seat::Learner, ar); l / 2]);
                (turns, Some((ar, ap)))
            }
        };
        Game {
            ctx,
            turns,
            debate,
            mask: 0,
            cursor: 0,
        }
    }

    /// Plays frozen turns until the learner is to move or the game is over.
    fn advance(&mut self, g: usize) -> Result<()> {
        loop {
            let game = &self.games[g];
            if game.cursor >= game.turns.len() || game.turns[game.cursor].0 == Seat::Learner {
                return Ok(());
            }
            let (policy, mode) = self
                .frozen
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("scenario needs a frozen policy".into()))?;
            let argued = game.turns[game.cursor].1;
            let state = self.contexts[game.ctx].state.features();
            let e = policy.act(state, game.mask, argued, *mode, &mut self.rng)?;
            let game = &mut self.games[g];
            game.mask |= 1 << e;
            game.cursor += 1;
        }
    }

    /// Terminal learner payoff and whether the judge sided with `a_p`.
    fn payoff(&self, g: usize) -> Result<(f64, f64)> {
        let game = &self.games[g];
        let t = &self.contexts[game.ctx];
        let s = t.state.features();
        match game.debate {
            Some((mine, theirs)) => {
                let j = self.judge.score_masks(s, &[(mine, game.mask), (theirs, game.mask)])?;
                let u = utility_from_scores(j[0], j[1], self.game.utility);
                let (jp, jr) = if mine == t.preferred() { (j[0], j[1]) } else { (j[1], j[0]) };
                Ok((u, crate::judge::credit(jp, jr)))
            }
            None => {
                let j = self.judge.score_masks(s, &[(t.preferred(), game.mask)])?;
                Ok((j[0], f64::NAN))
            }
        }
    }

    fn observe(&self, g: usize, learner: &ArgPolicy, row: &mut [f32]) {
        let game = &self.games[g];
        learner.encode(row, self.contexts[game.ctx].state.features(), game.turns[game.cursor].1, game.mask);
    }

    /// Collects exactly `n` learner steps. Returns per-env step sequences and
    /// the bootstrap value of each env's pending observation.
    fn collect(
        &mut self,
        learner: &ArgPolicy,
        n: usize,
        norm: Option<&mut RewardNormalizer>,
        rng: &mut DetRng,
    ) -> Result<(Vec<Vec<Step>>, Vec<f64>, EpisodeStats)> {
        let n_envs = self.games.len();
        let obs_dim = ArgPolicy::obs_dim(self.state_dim);
        let mut norm = norm;
        let mut buf: Vec<Vec<Step>> = vec![Vec::new(); n_envs];
        let (mut episodes, mut payoff_sum, mut acc_sum, mut acc_n) = (0usize, 0.0, 0.0, 0usize);
        for g in 0..n_envs {
            self.advance(g)?;
        }
        let mut remaining = n;
        while remaining > 0 {
            let k = remaining.min(n_envs);
            let mut x = Matrix::zeros(k, obs_dim);
            for g in 0..k {
                self.observe(g, learner, x.row_mut(g));
            }
            let (logits, values) = learner.evaluate(&x)?;
            for g in 0..k {
                let legal = self.games[g].mask;
                let lp = masked_log_softmax(logits.row(g), &legal_flags(legal, self.state_dim));
                let a = sample_log_probs(&lp, rng);
                let game = &mut self.games[g];
                game.mask |= 1 << a;
                game.cursor += 1;
                self.advance(g)?;
                let game = &self.games[g];
                let (reward, done) = if game.cursor >= game.turns.len() {
                    let (u, acc) = self.payoff(g)?;
                    episodes += 1;
                    payoff_sum += u;
                    if acc.is_finite() {
                        acc_sum += acc;
                        acc_n += 1;
                    }
                    (u, true)
                } else {
                    (0.0, false)
                };
                let scaled = match norm.as_deref_mut() {
                    Some(nm) => nm.normalize(g, reward, done),
                    None => reward,
                };
                buf[g].push(Step {
                    obs: x.row(g).to_vec(),
                    legal,
                    action: a,
                    logp: lp[a],
                    value: values[g],
                    reward: scaled,
                    done,
                });
                if done {
                    self.games[g] = self.new_game();
                    self.advance(g)?;
                }
            }
            remaining -= k;
        }
        let mut x = Matrix::zeros(n_envs, obs_dim);
        for g in 0..n_envs {
            self.observe(g, learner, x.row_mut(g));
        }
        let (_, last_values) = learner.evaluate(&x)?;
        let stats = EpisodeStats {
            episodes,
            mean_payoff: if episodes > 0 { payoff_sum / episodes as f64 } else { f64::NAN },
            accuracy: if acc_n > 0 { acc_sum / acc_n as f64 } else { f64::NAN },
        };
        Ok((buf, last_values, stats))
    }
}

/// Losses and diagnostics of one PPO update, averaged over minibatches.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub grad_norm: f64,
}

/// A policy with its optimizer and reward statistics.
#[derive(Debug, Clone)]
pub struct PpoLearner {
    pub policy: ArgPolicy,
    pub cfg: PpoConfig,
    adam: AdamState,
    norm: RewardNormalizer,
    rng: DetRng,
    pub steps: u64,
}

impl PpoLearner {
    pub fn new(policy: ArgPolicy, cfg: &PpoConfig, rng: DetRng) -> Result<Self> {
        cfg.validate()?;
        Ok(PpoLearner {
            policy,
            adam: AdamState::new(cfg.learning_rate),
            norm: RewardNormalizer::new(cfg.gamma, cfg.n_envs),
            cfg: cfg.clone(),
            rng,
            steps: 0,
        })
    }

    /// Runs `steps` learner decisions in `arena`, updating every `n_steps`.
    pub fn learn(&mut self, arena: &mut Arena<'_>, steps: usize, mut log: impl FnMut(u64, &EpisodeStats, &UpdateStats)) -> Result<()> {
        if arena.games.len() != self.cfg.n_envs {
            return Err(Error::InvalidArgument("arena width disagrees with n_envs".into()));
        }
        let mut remaining = steps;
        while remaining > 0 {
            let n = remaining.min(self.cfg.n_steps);
            let norm = if self.cfg.normalize_rewards { Some(&mut self.norm) } else { None };
            let (buf, last, ep) = arena.collect(&self.policy, n, norm, &mut self.rng)?;
            let up = self.update(&buf, &last)?;
            remaining -= n;
            self.steps += n as u64;
            log(self.steps, &ep, &up);
        }
        Ok(())
    }

    fn update(&mut self, buf: &[Vec<Step>], last: &[f64]) -> Result<UpdateStats> {
        let cfg = self.cfg.clone();
        let mut steps: Vec<&Step> = Vec::new();
        let mut adv = Vec::new();
        let mut ret = Vec::new();
        for (seq, &lv) in buf.iter().zip(last) {
            if seq.is_empty() {
                continue;
            }
            let r: Vec<f64> = seq.iter().map(|s| s.reward).collect();
            let v: Vec<f64> = seq.iter().map(|s| s.value).collect();
            let d: Vec<bool> = seq.iter().map(|s| s.done).collect();
            let (a, rt) = gae(&r, &v, &d, lv, cfg.gamma, cfg.gae_lambda);
            steps.extend(seq.iter());
            adv.extend(a);
            ret.extend(rt);
        }
        if steps.is_empty() {
            return Err(Error::InvalidArgument("empty rollout".into()));
        }
        let n = steps.len();
        let d = self.policy.state_dim;
        let obs_dim = ArgPolicy::obs_dim(d);
        let mut order: Vec<usize> = (0..n).collect();
        let mut total = UpdateStats::default();
        let mut batches = 0usize;
        for _ in 0..cfg.n_epochs {
            order.shuffle(&mut self.rng);
            for chunk in order.chunks(cfg.batch_size) {
                let m = chunk.len();
                let mut x = Matrix::zeros(m, obs_dim);
                for (i, &k) in chunk.iter().enumerate() {
                    x.row_mut(i).copy_from_slice(&steps[k].obs);
                }
                let (h, hc) = self.policy.trunk.forward_train(&x)?;
                let (logits, pc) = self.policy.policy_head.forward_train(&h)?;
                let (values, vc) = self.policy.value_head.forward_train(&h)?;

                let a_mean = chunk.iter().map(|&k| adv[k]).sum::<f64>() / m as f64;
                let a_std = (chunk.iter().map(|&k| (adv[k] - a_mean).powi(2)).sum::<f64>()
                    / (m.max(2) - 1) as f64)
                    .sqrt();
                let mut g_logits = Matrix::zeros(m, d);
                let mut g_values = Matrix::zeros(m, 1);
                let mut s = UpdateStats::default();
                for (i, &k) in chunk.iter().enumerate() {
                    let st = steps[k];
                    let lp = masked_log_softmax(logits.row(i), &legal_flags(st.legal, d));
                    let a = if m > 1 { (adv[k] - a_mean) / (a_std + 1e-8) } else { adv[k] };
                    let ratio = (lp[st.action] - st.logp).exp();
                    let clipped = ratio.clamp(1.0 - cfg.clip_range, 1.0 + cfg.clip_range);
                    s.policy_loss -= (ratio * a).min(clipped * a);
                    let active = !((a >= 0.0 && ratio > 1.0 + cfg.clip_range) || (a < 0.0 && ratio < 1.0 - cfg.clip_range));
                    if (ratio - 1.0).abs() > cfg.clip_range {
                        s.clip_fraction += 1.0;
                    }
                    s.approx_kl += (ratio - 1.0) - (lp[st.action] - st.logp);
                    // d(−surrogate)/d logp_a
                    let dlogp = if active { -ratio * a } else { 0.0 };
                    let ent: f64 = -lp.iter().filter(|v| v.is_finite()).map(|&v| v.exp() * v).sum::<f64>();
                    s.entropy += ent;
                    for j in 0..d {
                        if !lp[j].is_finite() {
                            continue;
                        }
                        let p = lp[j].exp();
                        let onehot = if j == st.action { 1.0 } else { 0.0 };
                        // ∂H/∂z_j = −p_j (log p_j + H)
                        let dent = -p * (lp[j] + ent);
                        let g = dlogp * (onehot - p) - cfg.ent_coef * dent;
                        g_logits.set(i, j, (g / m as f64) as f32);
                    }
                    let v = values.get(i, 0) as f64;
                    s.value_loss += (v - ret[k]).powi(2);
                    g_values.set(i, 0, (cfg.vf_coef * 2.0 * (v - ret[k]) / m as f64) as f32);
                }
                let loss = s.policy_loss / m as f64 + cfg.vf_coef * s.value_loss / m as f64 - cfg.ent_coef * s.entropy / m as f64;
                if !loss.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "PPO loss (policy {}, value {}, entropy {})",
                        s.policy_loss, s.value_loss, s.entropy
                    )));
                }
                let (mut gp, dh_p) = self.policy.policy_head.backward(&pc, &g_logits)?;
                let (mut gv, dh_v) = self.policy.value_head.backward(&vc, &g_values)?;
                let mut dh = dh_p;
                for (o, v) in dh.data_mut().iter_mut().zip(dh_v.data()) {
                    *o += v;
                }
                let (mut gt, _) = self.policy.trunk.backward(&hc, &dh)?;
                let norm = {
                    let mut all: Vec<&mut [f32]> = Vec::new();
                    all.extend(gt.tensors_mut());
                    all.extend(gp.tensors_mut());
                    all.extend(gv.tensors_mut());
                    clip_grad_norm(&mut all, cfg.max_grad_norm)?
                };
                if !norm.is_finite() {
                    return Err(Error::NonFinite("PPO gradient norm".into()));
                }
                self.step(&gt, &gp, &gv)?;
                total.policy_loss += s.policy_loss / m as f64;
                total.value_loss += s.value_loss / m as f64;
                total.entropy += s.entropy / m as f64;
                total.clip_fraction += s.clip_fraction / m as f64;
                total.approx_kl += s.approx_kl / m as f64;
                total.grad_norm += norm;
                batches += 1;
            }
        }
        let b = batches as f64;
        Ok(UpdateStats {
            policy_loss: total.policy_loss / b,
            value_loss: total.value_loss / b,
            entropy: total.entropy / b,
            clip_fraction: total.clip_fraction / b,
            approx_kl: total.approx_kl / b,
            grad_norm: total.grad_norm / b,
        })
    }

    fn step(&mut self, gt: &Gradients, gp: &Gradients, gv: &Gradients) -> Result<()> {
        let mut grads: Vec<&[f32]> = gt.tensors();
        grads.extend(gp.tensors());
        grads.extend(gv.tensors());
        let p = &mut self.policy;
        let mut params: Vec<&mut [f32]> = p.trunk.params_mut();
        params.extend(p.policy_head.params_mut());
        params.extend(p.value_head.params_mut());
        self.adam.step(&mut params, &grads)
    }
}

/// One row of a training curve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveRow {
    pub phase: &'static str,
    pub generation: usize,
    /// Learner steps so far in this phase's learner.
    pub steps: u64,
    pub episodes: usize,
    pub payoff: f64,
    pub accuracy: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub value_loss: f64,
    pub approx_kl: f64,
}

pub fn write_curves<W: Write>(mut w: W, rows: &[CurveRow]) -> Result<()> {
    writeln!(w, "phase,generation,steps,episodes,payoff,accuracy,entropy,clip_fraction,value_loss,approx_kl")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.phase, r.generation, r.steps, r.episodes, r.payoff, r.accuracy, r.entropy, r.clip_fraction, r.value_loss, r.approx_kl
        )?;
    }
    w.flush()?;
    Ok(())
}

fn curve_logger<'a>(rows: &'a mut Vec<CurveRow>, phase: &'static str, generation: usize) -> impl FnMut(u64, &EpisodeStats, &UpdateStats) + 'a {
    move |steps, ep, up| {
        rows.push(CurveRow {
            phase,
            generation,
            steps,
            episodes: ep.episodes,
            payoff: ep.mean_payoff,
            accuracy: ep.accuracy,
            entropy: up.entropy,
            clip_fraction: up.clip_fraction,
            value_loss: up.value_loss,
            approx_kl: up.approx_kl,
        })
    }
}

/// Trained policy plus its curve.
#[derive(Debug, Clone)]
pub struct Trained {
    pub policy: ArgPolicy,
    pub curve: Vec<CurveRow>,
    pub steps: u64,
}

#[derive(Debug, Clone)]
pub struct TrainedMaxmin {
    pub main: ArgPolicy,
    pub opponent: ArgPolicy,
    pub curve: Vec<CurveRow>,
    pub main_steps: u64,
    pub opponent_steps: u64,
}

fn train_contexts(dataset: &PreferenceDataset) -> Result<(Vec<PreferenceTuple>, Standardizer)> {
    let train = dataset.split_vec(Split::Train);
    if train.is_empty() {
        return Err(Error::InvalidArgument("empty train split".into()));
    }
    let st = Standardizer::fit(dataset.state_dim, train.iter().map(|t| t.state.features()))?;
    Ok((train, st))
}

fn fresh_learner(d: usize, st: &Standardizer, cfg: &PpoConfig, seed: u64, label: &str) -> Result<PpoLearner> {
    let mut init = substream(seed, &format!("{label}-init"));
    let policy = ArgPolicy::new(d, cfg.hidden, cfg.ortho_init, st.clone(), &mut init)?;
    PpoLearner::new(policy, cfg, substream(seed, &format!("{label}-ppo")))
}

fn checkpoint(dir: Option<&Path>, name: &str, generation: usize, policy: &ArgPolicy) -> Result<()> {
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir)?;
        let mut meta = Metadata::new();
        meta.insert("generation".into(), generation.to_string());
        policy.save(&dir.join(format!("{name}_gen{generation:04}.bin")), &meta)?;
    }
    Ok(())
}

/// Self-play against a frozen snapshot refreshed every generation.
pub fn train_selfplay(
    dataset: &PreferenceDataset,
    judge: &dyn Judge,
    game: &GameConfig,
    cfg: &PpoConfig,
    schedule: &Schedule,
    seed: u64,
    checkpoints: Option<&Path>,
) -> Result<Trained> {
    schedule.validate()?;
    let (train, st) = train_contexts(dataset)?;
    let mut learner = fresh_learner(dataset.state_dim, &st, cfg, seed, "selfplay")?;
    let mut arena = Arena::new(&train, Scenario::SelfPlay, game, judge, cfg.n_envs, substream(seed, "selfplay-arena"))?;
    let mut curve = Vec::new();
    for g in 0..schedule.generations {
        arena.set_frozen(learner.policy.clone(), ActMode::Deterministic);
        learner.learn(&mut arena, schedule.selfplay_steps, curve_logger(&mut curve, "selfplay", g))?;
        checkpoint(checkpoints, "selfplay", g, &learner.policy)?;
    }
    Ok(Trained {
        steps: learner.steps,
        policy: learner.policy,
        curve,
    })
}

/// Bi-level schedule: the main agent (arguing `a_p`) trains against a frozen
/// opponent, then the opponent trains against the frozen main agent.
pub fn train_maxmin(
    dataset: &PreferenceDataset,
    judge: &dyn Judge,
    game: &GameConfig,
    cfg: &PpoConfig,
    schedule: &Schedule,
    seed: u64,
    checkpoints: Option<&Path>,
) -> Result<TrainedMaxmin> {
    schedule.validate()?;
    let d = dataset.state_dim;
    let (train, st) = train_contexts(dataset)?;
    let mut main = fresh_learner(d, &st, cfg, seed, "maxmin-main")?;
    let mut opp = fresh_learner(d, &st, cfg, seed, "maxmin-opponent")?;
    let mut main_arena = Arena::new(&train, Scenario::Main, game, judge, cfg.n_envs, substream(seed, "maxmin-main-arena"))?;
    let mut opp_arena = Arena::new(&train, Scenario::Opponent, game, judge, cfg.n_envs, substream(seed, "maxmin-opp-arena"))?;
    let mut curve = Vec::new();
    let mut opp_steps = 0;
    for g in 0..schedule.generations {
        if schedule.reinit_opponent && g > 0 {
            opp_steps += opp.steps;
            opp = fresh_learner(d, &st, cfg, seed ^ (g as u64) << 32, "maxmin-opponent")?;
        }
        main_arena.set_frozen(opp.policy.clone(), ActMode::Stochastic);
        main.learn(&mut main_arena, schedule.main_steps, curve_logger(&mut curve, "main", g))?;
        opp_arena.set_frozen(main.policy.clone(), ActMode::Stochastic);
        opp.learn(&mut opp_arena, schedule.opponent_steps, curve_logger(&mut curve, "opponent", g))?;
        checkpoint(checkpoints, "maxmin_main", g, &main.policy)?;
        checkpoint(checkpoints, "maxmin_opponent", g, &opp.policy)?;
    }
    Ok(TrainedMaxmin {
        main_steps: main.steps,
        opponent_steps: opp_steps + opp.steps,
        main: main.policy,
        opponent: opp.policy,
        curve,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IsolatedMode {
    /// `L/2` proposals, rewarded by the `L/2`-evidence judge.
    Precommit,
    /// `L` proposals, rewarded by the main judge.
    Adaptive,
}

impl IsolatedMode {
    pub fn episode_len(self, game: &GameConfig) -> usize {
        match self {
            IsolatedMode::Precommit => game.turns / 2,
            IsolatedMode::Adaptive => game.turns,
        }
    }
}

/// Single-agent evidence search for `a_p`; `judge` is the reward judge
/// (the `L/2` judge for precommit).
pub fn train_isolated(
    dataset: &PreferenceDataset,
    judge: &dyn Judge,
    mode: IsolatedMode,
    game: &GameConfig,
    cfg: &PpoConfig,
    steps: usize,
    seed: u64,
) -> Result<Trained> {
    if steps == 0 {
        return Err(Error::Config("isolated agent needs a positive step budget".into()));
    }
    let (train, st) = train_contexts(dataset)?;
    let mut learner = fresh_learner(dataset.state_dim, &st, cfg, seed, "isolated")?;
    let scenario = Scenario::Isolated { turns: mode.episode_len(game) };
    let mut arena = Arena::new(&train, scenario, game, judge, cfg.n_envs, substream(seed, "isolated-arena"))?;
    let mut curve = Vec::new();
    let phase = match mode {
        IsolatedMode::Precommit => "precommit",
        IsolatedMode::Adaptive => "adaptive",
    };
    learner.learn(&mut arena, steps, curve_logger(&mut curve, phase, 0))?;
    Ok(Trained {
        steps: learner.steps,
        policy: learner.policy,
        curve,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetKind {
    /// A debate agent alternating turns with the confuser.
    Debate,
    /// A precommitted isolated agent that proposes the first `L/2`.
    Precommit,
}

/// Trains a confuser arguing `a_{1−p}` against a frozen, deterministic target.
pub fn train_confuser(
    target: &ArgPolicy,
    kind: TargetKind,
    dataset: &PreferenceDataset,
    judge: &dyn Judge,
    game: &GameConfig,
    cfg: &PpoConfig,
    steps: usize,
    seed: u64,
) -> Result<Trained> {
    if steps == 0 {
        return Err(Error::Config("confuser needs a positive step budget".into()));
    }
    if target.state_dim != dataset.state_dim {
        return Err(Error::Dimension("target policy and dataset disagree on state_dim".into()));
    }
    let (train, st) = train_contexts(dataset)?;
    let mut learner = fresh_learner(dataset.state_dim, &st, cfg, seed, "confuser")?;
    let scenario = match kind {
        TargetKind::Debate => Scenario::ConfuseDebate,
        TargetKind::Precommit => Scenario::ConfusePrecommit,
    };
    let mut arena = Arena::new(&train, scenario, game, judge, cfg.n_envs, substream(seed, "confuser-arena"))?;
    arena.set_frozen(target.clone(), ActMode::Deterministic);
    let mut curve = Vec::new();
    learner.learn(&mut arena, steps, curve_logger(&mut curve, "confuser", 0))?;
    Ok(Trained {
        steps: learner.steps,
        policy: learner.policy,
        curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::judge::FnJudge;
    use crate::rng::seeded;
    use crate::synthenv::PatientState;

    fn policy(d: usize, seed: u64) -> ArgPolicy {
        ArgPolicy::new(d, 32, true, Standardizer::identity(d), &mut seeded(seed)).unwrap()
    }

    #[test]
    fn forced_move_in_both_modes() {
        let p = policy(5, 1);
        let s = [0.1, 0.2, 0.3, 0.4, 0.5];
        let mut rng = seeded(2);
        for mode in [ActMode::Stochastic, ActMode::Deterministic] {
            assert_eq!(p.act(&s, 0b10111, 3, mode, &mut rng).unwrap(), 3);
        }
        assert!(matches!(p.act(&s, 0b11111, 3, ActMode::Stochastic, &mut rng), Err(Error::IllegalEvidence { .. })));
    }

    #[test]
    fn masked_indices_never_sampled() {
        let p = policy(6, 3);
        let s = [1.0, -1.0, 0.5, 0.0, 2.0, -0.3];
        let mask = 0b101001;
        let mut rng = seeded(4);
        let lp = p.log_probs(&s, 7, mask).unwrap();
        for j in [0, 3, 5] {
            assert_eq!(lp[j].exp(), 0.0);
        }
        for _ in 0..10_000 {
            let e = p.act(&s, mask, 7, ActMode::Stochastic, &mut rng).unwrap();
            assert_eq!(mask >> e & 1, 0);
        }
    }

    #[test]
    fn deterministic_ignores_rng() {
        let p = policy(6, 5);
        let s = [0.3; 6];
        let a = p.act(&s, 0b10, 2, ActMode::Deterministic, &mut seeded(1)).unwrap();
        for seed in 2..20 {
            assert_eq!(p.act(&s, 0b10, 2, ActMode::Deterministic, &mut seeded(seed)).unwrap(), a);
        }
    }

    #[test]
    fn gae_unit_lambda_is_return_minus_value() {
        // Three steps, terminal at the end: advantages are discounted
        // returns minus values.
        let r = [1.0, 0.0, 2.0];
        let v = [0.5, -0.25, 1.0];
        let (adv, ret) = gae(&r, &v, &[false, false, true], 99.0, 1.0, 1.0);
        assert_eq!(ret, vec![3.0, 2.0, 2.0]);
        assert_eq!(adv, vec![2.5, 2.25, 1.0]);
        // Bootstrapping with γ = 0.5, λ = 0: one-step TD errors.
        let (adv, _) = gae(&[1.0], &[0.0], &[false], 4.0, 0.5, 0.0);
        assert_eq!(adv, vec![3.0]);
    }

    #[test]
    fn normalizer_scales_by_return_std() {
        let mut n = RewardNormalizer::new(0.9, 1);
        for i in 0..2000 {
            n.normalize(0, if i % 2 == 0 { 4.0 } else { -4.0 }, true);
        }
        assert!((n.std() - 4.0).abs() < 0.1, "{}", n.std());
        assert!((n.normalize(0, 4.0, true) - 1.0).abs() < 0.05);
    }

    #[test]
    fn persistence_round_trip() {
        let p = policy(4, 9);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bin");
        p.save(&path, &Metadata::new()).unwrap();
        assert_eq!(ArgPolicy::load(&path).unwrap().0, p);
    }

    fn toy_contexts(n: usize, d: usize, seed: u64) -> Vec<PreferenceTuple> {
        let mut rng = seeded(seed);
        (0..n)
            .map(|i| {
                let s: Vec<f32> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
                PreferenceTuple {
                    trajectory: i,
                    step: 0,
                    state: PatientState::new(s).unwrap(),
                    a0: 0,
                    a1: 1,
                    p: rng.random_range(0..2),
                    split: Split::Train,
                }
            })
            .collect()
    }

    #[test]
    fn constant_judge_gives_zero_rewards_and_unit_ratio() {
        let d = 4;
        let ctx = toy_contexts(20, d, 1);
        let judge = FnJudge { dim: d, f: |_: usize, _: EvidenceMask, _: &[f32]| 0.0 };
        let game = GameConfig { turns: 2, ..GameConfig::default() };
        let mut arena = Arena::new(&ctx, Scenario::SelfPlay, &game, &judge, 4, seeded(2)).unwrap();
        let p = policy(d, 3);
        arena.set_frozen(p.clone(), ActMode::Stochastic);
        let (buf, _, ep) = arena.collect(&p, 40, None, &mut seeded(4)).unwrap();
        assert_eq!(buf.iter().map(Vec::len).sum::<usize>(), 40);
        // One learner decision per game at L = 2.
        assert_eq!(ep.episodes, 40);
        for st in buf.iter().flatten() {
            assert_eq!(st.reward, 0.0);
            assert!(st.done);
            let lp = masked_log_softmax(
                p.evaluate(&Matrix::from_rows(&[st.obs.clone()]).unwrap()).unwrap().0.row(0),
                &legal_flags(st.legal, d),
            );
            assert!((lp[st.action] - st.logp).abs() < 1e-12);
        }
    }

    #[test]
    fn episode_lengths_per_scenario() {
        let d = 6;
        let ctx = toy_contexts(10, d, 5);
        let judge = FnJudge { dim: d, f: |a: usize, m: EvidenceMask, s: &[f32]| {
            (0..s.len()).filter(|&j| m >> j & 1 == 1).map(|j| s[j] as f64).sum::<f64>() * if a == 0 { 1.0 } else { -1.0 }
        } };
        let game = GameConfig { turns: 6, ..GameConfig::default() };
        let p = policy(d, 6);
        for (scenario, per_episode) in [
            (Scenario::SelfPlay, 3),
            (Scenario::Main, 3),
            (Scenario::ConfusePrecommit, 3),
            (Scenario::Isolated { turns: 3 }, 3),
            (Scenario::Isolated { turns: 6 }, 6),
        ] {
            let mut arena = Arena::new(&ctx, scenario, &game, &judge, 1, seeded(7)).unwrap();
            arena.set_frozen(p.clone(), ActMode::Stochastic);
            let (buf, _, ep) = arena.collect(&p, 5 * per_episode, None, &mut seeded(8)).unwrap();
            assert_eq!(ep.episodes, 5, "{scenario:?}");
            let dones: Vec<usize> = buf[0].iter().enumerate().filter(|(_, s)| s.done).map(|(i, _)| i).collect();
            assert_eq!(dones, (1..=5).map(|k| k * per_episode - 1).collect::<Vec<_>>());
            // Reward only at episode end.
            assert!(buf[0].iter().all(|s| s.done || s.reward == 0.0));
        }
    }

    #[test]
    fn zero_advantage_update_only_follows_entropy() {
        // Constant judge and a zero value head with no value loss: every
        // advantage is exactly 0, so only the entropy bonus moves the policy.
        let d = 4;
        let ctx = toy_contexts(20, d, 9);
        let judge = FnJudge { dim: d, f: |_: usize, _: EvidenceMask, _: &[f32]| 0.0 };
        let game = GameConfig { turns: 2, ..GameConfig::default() };
        let run = |ent_coef: f64| {
            let cfg = PpoConfig { hidden: 16, n_envs: 4, n_steps: 64, n_epochs: 2, vf_coef: 0.0, ent_coef, max_grad_norm: 100.0, ..PpoConfig::default() };
            let mut p = policy(d, 10);
            p.value_head.zero_head();
            // Start from a peaked policy so the entropy has room to grow.
            for w in p.policy_head.params_mut() {
                w.iter_mut().for_each(|v| *v *= 300.0);
            }
            let before = p.clone();
            let mut l = PpoLearner::new(p, &cfg, seeded(11)).unwrap();
            let mut arena = Arena::new(&ctx, Scenario::SelfPlay, &game, &judge, 4, seeded(12)).unwrap();
            arena.set_frozen(l.policy.clone(), ActMode::Stochastic);
            let mut ent = Vec::new();
            l.learn(&mut arena, 640, |_, _, u| ent.push(u.entropy)).unwrap();
            (before, l.policy, ent)
        };
        let (before, after, _) = run(0.0);
        assert_eq!(before, after);
        let (_, _, ent) = run(0.1);
        assert!(ent.last().unwrap() > ent.first().unwrap(), "{ent:?}");
    }
}
