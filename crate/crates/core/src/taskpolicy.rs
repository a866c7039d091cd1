//! Task policies: an offline dueling double-DQN with prioritized replay,
//! Polyak-averaged targets and a Q-magnitude penalty, trained on the mixed
//! reward `(1 − λ)·r^e + λ·r^d`; and a behavior-cloning clinician policy
//! used as the WIS behavior model.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::argagents::{ActMode, ArgPolicy, PolicyStrategy};
use crate::debate::{debate_reward, exact_debate_reward, play_debate, DebateContext, GameConfig};
use crate::error::{Error, Result};
use crate::judge::Judge;
use crate::neural::loss::softmax_cross_entropy;
use crate::neural::network::softmax_in_place;
use crate::neural::persist::{load_networks, save_networks, Metadata};
use crate::neural::{clip_grad_norm, Activation, AdamState, ForwardCache, LayerSpec, Matrix, Network, Standardizer};
use crate::prefdata::Split;
use crate::rng::{substream, DetRng};
use crate::synthenv::tabular::TabularMdp;
use crate::synthenv::{Cohort, Outcome, PatientState, N_ACTIONS};

pub const LEAKY_SLOPE: f32 = 0.01;

/// One logged transition of offline data.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub state: Vec<f32>,
    pub action: usize,
    /// Environment reward `r^e`.
    pub reward: f64,
    pub next_state: Vec<f32>,
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub id: usize,
    pub steps: Vec<Step>,
    /// `+1` survival, `−1` death, `0` when the episode was truncated.
    pub outcome: f64,
}

/// Cohort trajectories whose split (from `splits`) is `which`; `None` keeps all.
pub fn episodes_from_cohort(
    cohort: &Cohort,
    splits: Option<(&std::collections::HashMap<usize, Split>, Split)>,
) -> Vec<Episode> {
    cohort
        .trajectories
        .iter()
        .filter(|t| splits.is_none_or(|(m, s)| m.get(&t.id) == Some(&s)))
        .map(|t| Episode {
            id: t.id,
            outcome: match t.outcome() {
                Outcome::Survival => 1.0,
                Outcome::Death => -1.0,
                Outcome::None => 0.0,
            },
            steps: t
                .transitions
                .iter()
                .map(|tr| Step {
                    state: tr.state.features().to_vec(),
                    action: tr.action,
                    reward: tr.reward as f64,
                    next_state: tr.next_state.features().to_vec(),
                    terminal: tr.terminal,
                })
                .collect(),
        })
        .collect()
}

/// Rolls out `n_episodes` in a tabular MDP from uniformly drawn transient
/// states under `behavior`, truncating at `max_len` steps. States are the
/// MDP's feature vectors.
pub fn simulate_tabular(
    mdp: &TabularMdp,
    mut behavior: impl FnMut(usize, &mut DetRng) -> usize,
    n_episodes: usize,
    max_len: usize,
    rng: &mut DetRng,
) -> Result<Vec<Episode>> {
    let starts: Vec<usize> = mdp.transient_states().collect();
    if starts.is_empty() || max_len == 0 {
        return Err(Error::InvalidArgument("tabular MDP has no transient states or zero horizon".into()));
    }
    let mut out = Vec::with_capacity(n_episodes);
    for id in 0..n_episodes {
        let mut s = starts[rng.random_range(0..starts.len())];
        let mut steps = Vec::new();
        for _ in 0..max_len {
            let a = behavior(s, rng);
            if a >= mdp.n_actions {
                return Err(Error::InvalidArgument(format!("behavior chose action {a}")));
            }
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut s2 = mdp.n_states - 1;
            for cand in 0..mdp.n_states {
                acc += mdp.p(s, a, cand);
                if u < acc {
                    s2 = cand;
                    break;
                }
            }
            let terminal = mdp.absorbing[s2];
            steps.push(Step {
                state: mdp.features[s].clone(),
                action: a,
                reward: mdp.r(s, a, s2),
                next_state: mdp.features[s2].clone(),
                terminal,
            });
            if terminal {
                break;
            }
            s = s2;
        }
        let outcome = match steps.last() {
            Some(st) if st.terminal => st.reward.signum(),
            _ => 0.0,
        };
        out.push(Episode { id, steps, outcome });
    }
    Ok(out)
}

/// Greedy action of `net` in every tabular state.
pub fn tabular_policy(net: &QNet, mdp: &TabularMdp) -> Result<Vec<usize>> {
    let states: Vec<&[f32]> = mdp.features.iter().map(|f| f.as_slice()).collect();
    net.greedy(&states)
}

/// `(1 − λ)·r_e + λ·r_d`.
pub fn mixed_reward(r_e: f64, r_d: f64, lambda: f64) -> f64 {
    (1.0 - lambda) * r_e + lambda * r_d
}

/// Dueling Q-network: `Q(s,a) = V(s) + A(s,a) − mean_a A(s,a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QNet {
    pub trunk: Network,
    pub value: Network,
    pub advantage: Network,
    pub standardizer: Standardizer,
}

pub struct QCache {
    trunk: ForwardCache,
    value: ForwardCache,
    advantage: ForwardCache,
}

impl QNet {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        let act = Activation::LeakyRelu { slope: LEAKY_SLOPE };
        Ok(QNet {
            trunk: Network::new(&[LayerSpec::new(state_dim, hidden, act), LayerSpec::new(hidden, hidden, act)], rng)?,
            value: Network::new(&[LayerSpec::new(hidden, 1, Activation::Identity)], rng)?,
            advantage: Network::new(&[LayerSpec::new(hidden, N_ACTIONS, Activation::Identity)], rng)?,
            standardizer: Standardizer::identity(state_dim),
        })
    }

    pub fn state_dim(&self) -> usize {
        self.trunk.in_dim()
    }

    fn input(&self, states: &[&[f32]]) -> Result<Matrix> {
        let d = self.state_dim();
        let mut x = Matrix::zeros(states.len(), d);
        for (r, s) in states.iter().enumerate() {
            if s.len() != d {
                return Err(Error::Dimension(format!("state of width {}, Q-network expects {d}", s.len())));
            }
            for (j, &v) in s.iter().enumerate() {
                x.set(r, j, self.standardizer.apply(j, v));
            }
        }
        Ok(x)
    }

    fn aggregate(v: &Matrix, a: &Matrix) -> Matrix {
        let mut q = a.clone();
        for r in 0..q.rows() {
            let row = q.row_mut(r);
            let mean = row.iter().map(|&x| x as f64).sum::<f64>() / N_ACTIONS as f64;
            let base = v.get(r, 0) as f64 - mean;
            row.iter_mut().for_each(|x| *x = (*x as f64 + base) as f32);
        }
        q
    }

    /// `n × 25` action values.
    pub fn q_values(&self, states: &[&[f32]]) -> Result<Matrix> {
        let h = self.trunk.forward(&self.input(states)?)?;
        Ok(Self::aggregate(&self.value.forward(&h)?, &self.advantage.forward(&h)?))
    }

    /// State values `V(s)` from the value stream alone.
    pub fn state_values(&self, states: &[&[f32]]) -> Result<Vec<f64>> {
        let h = self.trunk.forward(&self.input(states)?)?;
        Ok(self.value.forward(&h)?.data().iter().map(|&v| v as f64).collect())
    }

    /// Greedy action per state; ties go to the lowest index.
    pub fn greedy(&self, states: &[&[f32]]) -> Result<Vec<usize>> {
        let q = self.q_values(states)?;
        Ok((0..q.rows()).map(|r| argmax_f32(q.row(r))).collect())
    }

    fn forward_train(&mut self, states: &[&[f32]]) -> Result<(Matrix, QCache)> {
        let x = self.input(states)?;
        let (h, trunk) = self.trunk.forward_train(&x)?;
        let (v, value) = self.value.forward_train(&h)?;
        let (a, advantage) = self.advantage.forward_train(&h)?;
        Ok((Self::aggregate(&v, &a), QCache { trunk, value, advantage }))
    }

    /// Backpropagates `dL/dQ` through the dueling head; returns gradients in
    /// parameter order (trunk, value, advantage).
    fn backward(&self, cache: &QCache, dq: &Matrix) -> Result<Vec<Vec<f32>>> {
        let n = dq.rows();
        let mut dv = Matrix::zeros(n, 1);
        let mut da = dq.clone();
        for r in 0..n {
            let row = da.row_mut(r);
            let sum: f64 = row.iter().map(|&x| x as f64).sum();
            dv.set(r, 0, sum as f32);
            let mean = (sum / N_ACTIONS as f64) as f32;
            row.iter_mut().for_each(|x| *x -= mean);
        }
        let (gv, dh_v) = self.value.backward(&cache.value, &dv)?;
        let (ga, dh_a) = self.advantage.backward(&cache.advantage, &da)?;
        let mut dh = dh_v;
        for (o, v) in dh.data_mut().iter_mut().zip(dh_a.data()) {
            *o += v;
        }
        let (gt, _) = self.trunk.backward(&cache.trunk, &dh)?;
        let mut out: Vec<Vec<f32>> = gt.tensors().iter().map(|t| t.to_vec()).collect();
        out.extend(gv.tensors().iter().map(|t| t.to_vec()));
        out.extend(ga.tensors().iter().map(|t| t.to_vec()));
        Ok(out)
    }

    fn params_mut(&mut self) -> Vec<&mut [f32]> {
        let mut p = self.trunk.params_mut();
        p.extend(self.value.params_mut());
        p.extend(self.advantage.params_mut());
        p
    }

    fn params(&self) -> Vec<&[f32]> {
        let mut p = self.trunk.params();
        p.extend(self.value.params());
        p.extend(self.advantage.params());
        p
    }

    pub fn save(&self, path: &Path, extra: &Metadata) -> Result<()> {
        let mut meta = extra.clone();
        meta.insert("kind".into(), "qnet".into());
        meta.insert("standardizer".into(), serde_json::to_string(&self.standardizer)?);
        save_networks(path, &[&self.trunk, &self.value, &self.advantage], &meta)
    }

    pub fn load(path: &Path) -> Result<(Self, Metadata)> {
        let (nets, meta) = load_networks(path)?;
        if meta.get("kind").map(String::as_str) != Some("qnet") || nets.len() != 3 {
            return Err(Error::Format(format!("{} is not a Q-network file", path.display())));
        }
        let standardizer: Standardizer = serde_json::from_str(
            meta.get("standardizer")
                .ok_or_else(|| Error::Format("Q-network file lacks standardizer".into()))?,
        )?;
        let mut it = nets.into_iter();
        let q = QNet {
            trunk: it.next().expect("3 nets"),
            value: it.next().expect("3 nets"),
            advantage: it.next().expect("3 nets"),
            standardizer,
        };
        if q.value.out_dim() != 1 || q.advantage.out_dim() != N_ACTIONS || q.standardizer.dim() != q.state_dim() {
            return Err(Error::Format("Q-network shapes are inconsistent".into()));
        }
        Ok((q, meta))
    }
}

fn argmax_f32(v: &[f32]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

/// `θ′ ← τ·θ + (1 − τ)·θ′` for every parameter.
pub fn polyak_update(target: &mut QNet, online: &QNet, tau: f32) -> Result<()> {
    let src = online.params();
    let mut dst = target.params_mut();
    if src.len() != dst.len() || src.iter().zip(dst.iter()).any(|(a, b)| a.len() != b.len()) {
        return Err(Error::Dimension("Polyak update between differently shaped networks".into()));
    }
    for (d, s) in dst.iter_mut().zip(src) {
        for (x, &y) in d.iter_mut().zip(s) {
            *x = tau * y + (1.0 - tau) * *x;
        }
    }
    Ok(())
}

/// Sum and min segment tree over leaf priorities.
#[derive(Debug, Clone)]
pub struct SumTree {
    cap: usize,
    sum: Vec<f64>,
    min: Vec<f64>,
}

impl SumTree {
    pub fn new(n: usize) -> Self {
        let cap = n.next_power_of_two().max(1);
        SumTree {
            cap,
            sum: vec![0.0; 2 * cap],
            min: vec![f64::INFINITY; 2 * cap],
        }
    }

    pub fn set(&mut self, i: usize, v: f64) {
        let mut k = i + self.cap;
        self.sum[k] = v;
        self.min[k] = v;
        while k > 1 {
            k /= 2;
            self.sum[k] = self.sum[2 * k] + self.sum[2 * k + 1];
            self.min[k] = self.min[2 * k].min(self.min[2 * k + 1]);
        }
    }

    pub fn get(&self, i: usize) -> f64 {
        self.sum[i + self.cap]
    }

    pub fn total(&self) -> f64 {
        self.sum[1]
    }

    pub fn min(&self) -> f64 {
        self.min[1]
    }

    /// Leaf whose cumulative range contains `u ∈ [0, total)`.
    pub fn find(&self, mut u: f64) -> usize {
        let mut k = 1;
        while k < self.cap {
            if u < self.sum[2 * k] || self.sum[2 * k + 1] == 0.0 {
                k *= 2;
            } else {
                u -= self.sum[2 * k];
                k = 2 * k + 1;
            }
        }
        k - self.cap
    }
}

/// Static prioritized replay over a fixed set of items: `P(i) ∝ p_i^α`,
/// importance weights `(N·P(i))^{−β}` divided by their maximum over the buffer.
#[derive(Debug, Clone)]
pub struct PrioritizedReplay {
    tree: SumTree,
    len: usize,
    alpha: f64,
    beta: f64,
    max_priority: f64,
}

impl PrioritizedReplay {
    pub const EPS: f64 = 1e-6;

    /// All priorities start at 1 (the initial maximum).
    pub fn new(len: usize, alpha: f64, beta: f64) -> Result<Self> {
        if len == 0 {
            return Err(Error::InvalidArgument("empty replay buffer".into()));
        }
        let mut tree = SumTree::new(len);
        for i in 0..len {
            tree.set(i, 1.0);
        }
        Ok(PrioritizedReplay {
            tree,
            len,
            alpha,
            beta,
            max_priority: 1.0,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Sampling probability of item `i`.
    pub fn probability(&self, i: usize) -> f64 {
        self.tree.get(i) / self.tree.total()
    }

    /// Sets the raw priority (e.g. `|δ|`) of item `i`.
    pub fn update(&mut self, i: usize, priority: f64) {
        let p = priority.abs() + Self::EPS;
        self.max_priority = self.max_priority.max(p);
        self.tree.set(i, p.powf(self.alpha));
    }

    /// Draws `n` items with replacement; returns indices and IS weights.
    pub fn sample(&self, n: usize, rng: &mut DetRng) -> (Vec<usize>, Vec<f64>) {
        let total = self.tree.total();
        let nf = self.len as f64;
        let max_w = (nf * self.tree.min() / total).powf(-self.beta);
        let mut idx = Vec::with_capacity(n);
        let mut w = Vec::with_capacity(n);
        for _ in 0..n {
            let u = rng.random::<f64>() * total;
            let i = self.tree.find(u).min(self.len - 1);
            idx.push(i);
            w.push((nf * self.tree.get(i) / total).powf(-self.beta) / max_w);
        }
        (idx, w)
    }
}

/// An n-step transition: discounted reward sum, bootstrap state and its discount.
#[derive(Debug, Clone, PartialEq)]
pub struct NStep {
    pub state: Vec<f32>,
    pub action: usize,
    pub ret: f64,
    pub next_state: Vec<f32>,
    /// `γ^k` for the bootstrap term; 0 once a terminal transition is folded in.
    pub discount: f64,
}

/// Folds per-step rewards `rewards[e][t]` into n-step transitions within each episode.
pub fn n_step_transitions(episodes: &[Episode], rewards: &[Vec<f64>], n: usize, gamma: f64) -> Result<Vec<NStep>> {
    if n == 0 {
        return Err(Error::Config("n-step horizon must be positive".into()));
    }
    if rewards.len() != episodes.len() || rewards.iter().zip(episodes).any(|(r, e)| r.len() != e.steps.len()) {
        return Err(Error::Dimension("rewards do not match episodes".into()));
    }
    let mut out = Vec::new();
    for (ep, rw) in episodes.iter().zip(rewards) {
        let len = ep.steps.len();
        for t in 0..len {
            let mut ret = 0.0;
            let mut g = 1.0;
            let mut k = t;
            loop {
                ret += g * rw[k];
                g *= gamma;
                if ep.steps[k].terminal || k + 1 == len || k + 1 - t == n {
                    break;
                }
                k += 1;
            }
            out.push(NStep {
                state: ep.steps[t].state.clone(),
                action: ep.steps[t].action,
                ret,
                next_state: ep.steps[k].next_state.clone(),
                discount: if ep.steps[k].terminal { 0.0 } else { g },
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DqnConfig {
    pub learning_rate: f32,
    pub batch_size: usize,
    pub tau: f32,
    pub gamma: f64,
    /// Fixed n-step horizon; `None` picks 6 / 3 / 1 for `λ = 0` / `0 < λ < 1` / `λ = 1`.
    pub n_step: Option<usize>,
    pub lambda: f64,
    pub q_thresh: f64,
    pub penalty: f64,
    pub per_alpha: f64,
    pub per_beta: f64,
    pub iterations: usize,
    pub eval_every: usize,
    pub hidden: usize,
}

impl Default for DqnConfig {
    fn default() -> Self {
        DqnConfig {
            learning_rate: 1e-4,
            batch_size: 256,
            tau: 1e-3,
            gamma: 0.99,
            n_step: None,
            lambda: 0.0,
            q_thresh: 20.0,
            penalty: 5.0,
            per_alpha: 0.6,
            per_beta: 0.9,
            iterations: 25_000,
            eval_every: 50,
            hidden: 128,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::Config(format!("tau {} outside (0, 1]", self.tau)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("discount {} outside (0, 1]", self.gamma)));
        }
        if self.batch_size == 0 || self.iterations == 0 || self.eval_every == 0 || self.hidden == 0 {
            return Err(Error::Config("DQN sizes must be positive".into()));
        }
        if self.n_step == Some(0) {
            return Err(Error::Config("n-step horizon must be positive".into()));
        }
        Ok(())
    }

    pub fn effective_n_step(&self) -> usize {
        self.n_step.unwrap_or(if self.lambda == 0.0 {
            6
        } else if self.lambda == 1.0 {
            1
        } else {
            3
        })
    }
}

/// Loss value, per-sample TD errors and `dL/dQ` for one batch.
#[derive(Debug, Clone)]
pub struct DqnLoss {
    pub loss: f64,
    pub penalty: f64,
    pub td: Vec<f64>,
    pub targets: Vec<f64>,
    pub grad: Matrix,
}

/// Double-DQN targets `ret + discount · clip(Q′(s′, argmax_a Q(s′, a)))`.
pub fn double_targets(batch: &[&NStep], online: &QNet, target: &QNet, q_thresh: f64) -> Result<Vec<f64>> {
    let next: Vec<&[f32]> = batch.iter().map(|t| t.next_state.as_slice()).collect();
    let a_star = online.greedy(&next)?;
    let qt = target.q_values(&next)?;
    Ok(batch
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if t.discount == 0.0 {
                t.ret
            } else {
                t.ret + t.discount * (qt.get(i, a_star[i]) as f64).clamp(-q_thresh, q_thresh)
            }
        })
        .collect())
}

/// IS-weighted mean squared TD error plus `β·mean(max(|Q(s,a)| − Q_thresh, 0))`,
/// given the online predictions `q` (`n × 25`) and targets.
pub fn dqn_loss(q: &Matrix, batch: &[&NStep], targets: &[f64], weights: &[f64], cfg: &DqnConfig) -> Result<DqnLoss> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty DQN batch".into()));
    }
    if q.rows() != n || targets.len() != n || weights.len() != n {
        return Err(Error::Dimension("DQN batch pieces disagree in length".into()));
    }
    let mut grad = Matrix::zeros(n, N_ACTIONS);
    let (mut loss, mut penalty) = (0.0, 0.0);
    let mut td = Vec::with_capacity(n);
    for (i, t) in batch.iter().enumerate() {
        let qa = q.get(i, t.action) as f64;
        let delta = targets[i] - qa;
        td.push(delta);
        loss += weights[i] * delta * delta / n as f64;
        let over = qa.abs() - cfg.q_thresh;
        let mut g = -2.0 * weights[i] * delta / n as f64;
        if over > 0.0 {
            penalty += cfg.penalty * over / n as f64;
            g += cfg.penalty * qa.signum() / n as f64;
        }
        grad.set(i, t.action, g as f32);
    }
    Ok(DqnLoss {
        loss: loss + penalty,
        penalty,
        td,
        targets: targets.to_vec(),
        grad,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DqnLogRow {
    pub iteration: usize,
    pub loss: f64,
    /// Evaluation value (e.g. WIS) when the hook returned one.
    pub eval: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainedPolicy {
    pub net: QNet,
    pub log: Vec<DqnLogRow>,
}

/// Offline DQN on `episodes`. `debate_rewards[e][t]` (already scaled by `α`)
/// is required when `λ > 0`. `eval` is called every `eval_every` iterations.
pub fn train_policy(
    episodes: &[Episode],
    debate_rewards: Option<&[Vec<f64>]>,
    cfg: &DqnConfig,
    seed: u64,
    mut eval: impl FnMut(usize, &QNet) -> Result<Option<f64>>,
) -> Result<TrainedPolicy> {
    cfg.validate()?;
    if episodes.is_empty() || episodes.iter().all(|e| e.steps.is_empty()) {
        return Err(Error::InvalidArgument("no training episodes".into()));
    }
    let rewards: Vec<Vec<f64>> = match (cfg.lambda > 0.0, debate_rewards) {
        (true, None) => return Err(Error::Config("lambda > 0 needs a debate reward source".into())),
        (false, _) => episodes.iter().map(|e| e.steps.iter().map(|s| s.reward).collect()).collect(),
        (true, Some(rd)) => {
            if rd.len() != episodes.len() || rd.iter().zip(episodes).any(|(r, e)| r.len() != e.steps.len()) {
                return Err(Error::Dimension("debate rewards do not match episodes".into()));
            }
            episodes
                .iter()
                .zip(rd)
                .map(|(e, r)| e.steps.iter().zip(r).map(|(s, &d)| mixed_reward(s.reward, d, cfg.lambda)).collect())
                .collect()
        }
    };
    let data = n_step_transitions(episodes, &rewards, cfg.effective_n_step(), cfg.gamma)?;
    let d = episodes.iter().find(|e| !e.steps.is_empty()).expect("non-empty").steps[0].state.len();
    let mut init = substream(seed, "dqn-init");
    let mut online = QNet::new(d, cfg.hidden, &mut init)?;
    online.standardizer = Standardizer::fit(d, episodes.iter().flat_map(|e| e.steps.iter().map(|s| s.state.as_slice())))?;
    let mut target = online.clone();
    let mut adam = AdamState::new(cfg.learning_rate);
    let mut per = PrioritizedReplay::new(data.len(), cfg.per_alpha, cfg.per_beta)?;
    let mut rng = substream(seed, "dqn-replay");
    let mut log = Vec::new();
    for it in 1..=cfg.iterations {
        let (idx, w) = per.sample(cfg.batch_size, &mut rng);
        let batch: Vec<&NStep> = idx.iter().map(|&i| &data[i]).collect();
        let targets = double_targets(&batch, &online, &target, cfg.q_thresh)?;
        let states: Vec<&[f32]> = batch.iter().map(|t| t.state.as_slice()).collect();
        let (q, cache) = online.forward_train(&states)?;
        let l = dqn_loss(&q, &batch, &targets, &w, cfg)?;
        if !l.loss.is_finite() {
            return Err(Error::NonFinite(format!("DQN loss at iteration {it}")));
        }
        let grads = online.backward(&cache, &l.grad)?;
        let views: Vec<&[f32]> = grads.iter().map(|g| g.as_slice()).collect();
        adam.step(&mut online.params_mut(), &views)?;
        for (&i, &delta) in idx.iter().zip(&l.td) {
            per.update(i, delta);
        }
        polyak_update(&mut target, &online, cfg.tau)?;
        if it % cfg.eval_every == 0 || it == cfg.iterations {
            let e = eval(it, &online)?;
            log.push(DqnLogRow {
                iteration: it,
                loss: l.loss,
                eval: e,
            });
        }
    }
    Ok(TrainedPolicy { net: online, log })
}

/// How the debate value of `(s_t, a_t, a_t^B)` is obtained.
#[derive(Clone, Copy)]
pub enum DebateSource<'a> {
    /// Backward-induction value of the game.
    Exact,
    /// A learned agent playing both sides deterministically.
    Agents(&'a ArgPolicy),
}

/// `r^d = α·value` for every logged step, with player 1 arguing the logged
/// action and player 2 the baseline's greedy action; 0 where they coincide.
pub fn debate_rewards(
    episodes: &[Episode],
    baseline: &QNet,
    judge: &dyn Judge,
    game: &GameConfig,
    source: DebateSource<'_>,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let mut rng = substream(seed, "debate-rewards");
    episodes
        .iter()
        .map(|ep| {
            let states: Vec<&[f32]> = ep.steps.iter().map(|s| s.state.as_slice()).collect();
            let base = if states.is_empty() { Vec::new() } else { baseline.greedy(&states)? };
            ep.steps
                .iter()
                .zip(base)
                .map(|(s, ab)| {
                    let state = PatientState::new(s.state.clone())?;
                    match source {
                        DebateSource::Exact => exact_debate_reward(&state, s.action, ab, judge, game),
                        DebateSource::Agents(p) => {
                            if s.action == ab {
                                return Ok(0.0);
                            }
                            let ctx = DebateContext::new(state, s.action, ab)?;
                            let st = PolicyStrategy { policy: p, mode: ActMode::Deterministic };
                            let t = play_debate(&ctx, &st, &st, judge, game, &mut rng)?;
                            Ok(debate_reward(t.utility, game))
                        }
                    }
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BcConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub weight_decay: f32,
    pub hidden: usize,
}

impl Default for BcConfig {
    fn default() -> Self {
        BcConfig {
            epochs: 100,
            batch_size: 64,
            learning_rate: 1e-3,
            weight_decay: 0.1,
            hidden: 64,
        }
    }
}

/// Behavior-cloned clinician: softmax over the 25 actions.
#[derive(Debug, Clone, PartialEq)]
pub struct BcPolicy {
    pub net: Network,
    pub standardizer: Standardizer,
}

impl BcPolicy {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        let act = Activation::LeakyRelu { slope: LEAKY_SLOPE };
        let specs = [
            LayerSpec::new(state_dim, hidden, act),
            LayerSpec::new(hidden, hidden, act),
            LayerSpec::new(hidden, N_ACTIONS, Activation::Identity),
        ];
        Ok(BcPolicy {
            net: Network::new(&specs, rng)?,
            standardizer: Standardizer::identity(state_dim),
        })
    }

    fn input(&self, states: &[&[f32]]) -> Result<Matrix> {
        let d = self.net.in_dim();
        let mut x = Matrix::zeros(states.len(), d);
        for (r, s) in states.iter().enumerate() {
            if s.len() != d {
                return Err(Error::Dimension(format!("state of width {}, BC policy expects {d}", s.len())));
            }
            for (j, &v) in s.iter().enumerate() {
                x.set(r, j, self.standardizer.apply(j, v));
            }
        }
        Ok(x)
    }

    /// Action distributions, one row per state.
    pub fn probs(&self, states: &[&[f32]]) -> Result<Vec<[f64; N_ACTIONS]>> {
        let mut out = self.net.forward(&self.input(states)?)?;
        Ok((0..out.rows())
            .map(|r| {
                let row = out.row_mut(r);
                softmax_in_place(row);
                std::array::from_fn(|a| row[a] as f64)
            })
            .collect())
    }

    pub fn save(&self, path: &Path, extra: &Metadata) -> Result<()> {
        let mut meta = extra.clone();
        meta.insert("kind".into(), "bc".into());
        meta.insert("standardizer".into(), serde_json::to_string(&self.standardizer)?);
        save_networks(path, &[&self.net], &meta)
    }

    pub fn load(path: &Path) -> Result<(Self, Metadata)> {
        let (mut nets, meta) = load_networks(path)?;
        if meta.get("kind").map(String::as_str) != Some("bc") || nets.len() != 1 {
            return Err(Error::Format(format!("{} is not a BC policy file", path.display())));
        }
        let standardizer: Standardizer = serde_json::from_str(
            meta.get("standardizer")
                .ok_or_else(|| Error::Format("BC file lacks standardizer".into()))?,
        )?;
        let net = nets.remove(0);
        if net.out_dim() != N_ACTIONS || standardizer.dim() != net.in_dim() {
            return Err(Error::Format("BC network shapes are inconsistent".into()));
        }
        Ok((BcPolicy { net, standardizer }, meta))
    }
}

/// Cross-entropy behavior cloning of the logged actions.
pub fn train_bc(episodes: &[Episode], cfg: &BcConfig, seed: u64) -> Result<BcPolicy> {
    let data: Vec<(&[f32], usize)> = episodes
        .iter()
        .flat_map(|e| e.steps.iter().map(|s| (s.state.as_slice(), s.action)))
        .collect();
    if data.is_empty() {
        return Err(Error::InvalidArgument("no transitions to clone".into()));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 || cfg.hidden == 0 {
        return Err(Error::Config("BC sizes must be positive".into()));
    }
    let d = data[0].0.len();
    let mut rng = substream(seed, "bc");
    let mut bc = BcPolicy::new(d, cfg.hidden, &mut rng)?;
    bc.standardizer = Standardizer::fit(d, data.iter().map(|(s, _)| *s))?;
    let mut adam = AdamState::new(cfg.learning_rate).with_weight_decay(cfg.weight_decay);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let states: Vec<&[f32]> = chunk.iter().map(|&i| data[i].0).collect();
            let targets: Vec<usize> = chunk.iter().map(|&i| data[i].1).collect();
            let x = bc.input(&states)?;
            let (logits, cache) = bc.net.forward_train(&x)?;
            let (loss, grad) = softmax_cross_entropy(&logits, &targets)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite("BC loss".into()));
            }
            let (mut g, _) = bc.net.backward(&cache, &grad)?;
            clip_grad_norm(&mut g.tensors_mut(), 10.0)?;
            adam.step_network(&mut bc.net, &g)?;
        }
    }
    Ok(bc)
}

/// Mean negative log-likelihood of the logged actions.
pub fn bc_log_loss(bc: &BcPolicy, episodes: &[Episode]) -> Result<f64> {
    let states: Vec<&[f32]> = episodes.iter().flat_map(|e| e.steps.iter().map(|s| s.state.as_slice())).collect();
    let actions: Vec<usize> = episodes.iter().flat_map(|e| e.steps.iter().map(|s| s.action)).collect();
    if states.is_empty() {
        return Err(Error::InvalidArgument("no transitions".into()));
    }
    let p = bc.probs(&states)?;
    Ok(p.iter().zip(&actions).map(|(p, &a)| -p[a].max(1e-12).ln()).sum::<f64>() / states.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn qnet(d: usize, seed: u64) -> QNet {
        QNet::new(d, 16, &mut seeded(seed)).unwrap()
    }

    #[test]
    fn mixed_reward_examples() {
        assert_eq!(mixed_reward(-0.125, 5.0, 0.0), -0.125);
        assert_eq!(mixed_reward(-0.125, 5.0, 1.0), 5.0);
        assert!((mixed_reward(-0.125, 5.0, 0.5) - 2.4375).abs() < 1e-12);
    }

    #[test]
    fn dueling_identifiability() {
        let q = qnet(5, 1);
        let s = [[0.3f32, -1.0, 2.0, 0.0, 0.5], [1.0, 1.0, 1.0, 1.0, 1.0]];
        let states: Vec<&[f32]> = s.iter().map(|r| r.as_slice()).collect();
        let qv = q.q_values(&states).unwrap();
        let v = q.state_values(&states).unwrap();
        for r in 0..2 {
            let mean = qv.row(r).iter().map(|&x| x as f64).sum::<f64>() / N_ACTIONS as f64;
            assert!((mean - v[r]).abs() < 1e-5);
        }
    }

    #[test]
    fn zero_advantage_stream_gives_state_value() {
        let mut q = qnet(4, 2);
        q.advantage.zero_head();
        let s = [0.1f32, 0.2, 0.3, 0.4];
        let qv = q.q_values(&[&s]).unwrap();
        let v = q.state_values(&[&s]).unwrap()[0];
        assert!(qv.row(0).iter().all(|&x| (x as f64 - v).abs() < 1e-6));
        // A constant shift of every advantage leaves Q unchanged.
        let mut shifted = q.clone();
        let last = shifted.advantage.layers_mut().last_mut().unwrap();
        last.bias.iter_mut().for_each(|b| *b += 3.0);
        assert_eq!(shifted.q_values(&[&s]).unwrap(), qv);
    }

    #[test]
    fn greedy_invariant_to_advantage_rescaling() {
        let mut rng = seeded(3);
        for seed in 0..5 {
            let q = qnet(6, seed);
            let mut scaled = q.clone();
            for p in scaled.advantage.params_mut() {
                p.iter_mut().for_each(|v| *v *= 2.5);
            }
            let s: Vec<Vec<f32>> = (0..20).map(|_| (0..6).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
            let states: Vec<&[f32]> = s.iter().map(|r| r.as_slice()).collect();
            assert_eq!(q.greedy(&states).unwrap(), scaled.greedy(&states).unwrap());
        }
    }

    #[test]
    fn polyak_examples() {
        let online = qnet(3, 4);
        let mut t = qnet(3, 5);
        let before = t.clone();
        polyak_update(&mut t, &online, 1e-9).unwrap();
        for (a, b) in t.params().iter().zip(before.params()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() <= 1e-6 * y.abs().max(1.0));
            }
        }
        polyak_update(&mut t, &online, 1.0).unwrap();
        assert_eq!(t.params(), online.params());
        let mut zero = online.clone();
        for p in zero.params_mut() {
            p.fill(0.0);
        }
        let mut one = online.clone();
        for p in one.params_mut() {
            p.fill(1.0);
        }
        polyak_update(&mut zero, &one, 1e-3).unwrap();
        assert!(zero.params().iter().all(|p| p.iter().all(|&v| (v - 0.001).abs() < 1e-9)));
    }

    fn nstep(action: usize, ret: f64, discount: f64) -> NStep {
        NStep {
            state: vec![0.5, -0.5],
            action,
            ret,
            next_state: vec![1.0, 0.0],
            discount,
        }
    }

    #[test]
    fn loss_penalty_and_terminal_targets() {
        let cfg = DqnConfig::default();
        let t = [nstep(0, 1.0, 0.0), nstep(1, 2.0, 0.0)];
        let batch: Vec<&NStep> = t.iter().collect();
        let online = qnet(2, 6);
        let target = qnet(2, 7);
        // Terminal: target = r exactly.
        assert_eq!(double_targets(&batch, &online, &target, 20.0).unwrap(), vec![1.0, 2.0]);
        let mut q = Matrix::zeros(2, N_ACTIONS);
        q.set(0, 0, 25.0);
        q.set(1, 1, 2.0);
        let l = dqn_loss(&q, &batch, &[25.0, 2.0], &[1.0, 1.0], &cfg).unwrap();
        // Only the penalty remains: β·(25 − 20) averaged over 2 samples.
        assert!((l.penalty - 12.5).abs() < 1e-12);
        assert!((l.loss - 12.5).abs() < 1e-12);
        let q = Matrix::zeros(2, N_ACTIONS);
        assert_eq!(dqn_loss(&q, &batch, &[1.0, 2.0], &[1.0, 1.0], &cfg).unwrap().penalty, 0.0);
        assert!(dqn_loss(&q, &[], &[], &[], &cfg).is_err());
    }

    #[test]
    fn bootstrap_target_is_clipped() {
        let mut target = qnet(2, 8);
        // Push every target Q far above the threshold.
        target.value.layers_mut()[0].bias[0] = 500.0;
        let online = qnet(2, 9);
        let t = [nstep(3, 1.0, 0.99)];
        let y = double_targets(&t.iter().collect::<Vec<_>>(), &online, &target, 20.0).unwrap()[0];
        assert!((y - (1.0 + 0.99 * 20.0)).abs() < 1e-9);
    }

    #[test]
    fn double_target_uses_online_argmax() {
        // Online prefers action 2, target prefers action 5: the target net's
        // value of action 2 must be used.
        let mut online = qnet(2, 10);
        let mut target = qnet(2, 11);
        for net in [&mut online, &mut target] {
            let last = net.advantage.layers_mut().last_mut().unwrap();
            last.weight.data_mut().fill(0.0);
            last.bias.fill(0.0);
            let v = net.value.layers_mut().last_mut().unwrap();
            v.weight.data_mut().fill(0.0);
            v.bias.fill(0.0);
        }
        online.advantage.layers_mut()[0].bias[2] = 1.0;
        target.advantage.layers_mut()[0].bias[5] = 10.0;
        target.advantage.layers_mut()[0].bias[2] = 1.0;
        let t = [nstep(0, 0.0, 1.0)];
        let y = double_targets(&t.iter().collect::<Vec<_>>(), &online, &target, 20.0).unwrap()[0];
        // Q′(s′, 2) = A(2) − mean A = 1 − 11/25.
        assert!((y - (1.0 - 11.0 / 25.0)).abs() < 1e-6, "{y}");
    }

    #[test]
    fn per_frequencies_match_priorities() {
        let mut per = PrioritizedReplay::new(5, 0.6, 0.9).unwrap();
        let raw = [0.5, 1.0, 2.0, 4.0, 0.1];
        for (i, &p) in raw.iter().enumerate() {
            per.update(i, p);
        }
        let z: f64 = raw.iter().map(|p: &f64| (p + PrioritizedReplay::EPS).powf(0.6)).sum();
        let mut counts = [0usize; 5];
        let mut rng = seeded(12);
        let (idx, w) = per.sample(100_000, &mut rng);
        for &i in &idx {
            counts[i] += 1;
        }
        for i in 0..5 {
            let expect = (raw[i] + PrioritizedReplay::EPS).powf(0.6) / z;
            assert!((counts[i] as f64 / 1e5 - expect).abs() < 0.02);
            assert!((per.probability(i) - expect).abs() < 1e-12);
        }
        assert!(w.iter().all(|&x| x > 0.0 && x <= 1.0 + 1e-12));
    }

    #[test]
    fn n_step_folding() {
        let ep = Episode {
            id: 0,
            steps: (0..4)
                .map(|t| Step {
                    state: vec![t as f32],
                    action: t,
                    reward: 0.0,
                    next_state: vec![t as f32 + 1.0],
                    terminal: t == 3,
                })
                .collect(),
            outcome: 1.0,
        };
        let r = vec![vec![1.0, 2.0, 3.0, 4.0]];
        let n = n_step_transitions(&[ep.clone()], &r, 2, 0.5).unwrap();
        assert_eq!(n[0].ret, 1.0 + 0.5 * 2.0);
        assert_eq!(n[0].discount, 0.25);
        assert_eq!(n[0].next_state, vec![2.0]);
        assert_eq!(n[2].ret, 3.0 + 0.5 * 4.0);
        assert_eq!(n[2].discount, 0.0);
        assert_eq!(n[3].ret, 4.0);
        assert_eq!(n[3].discount, 0.0);
        let one = n_step_transitions(&[ep], &r, 1, 0.5).unwrap();
        assert_eq!(one[1].ret, 2.0);
        assert_eq!(one[1].discount, 0.5);
    }

    #[test]
    fn n_step_defaults_by_lambda() {
        for (l, n) in [(0.0, 6), (0.25, 3), (0.5, 3), (0.75, 3), (1.0, 1)] {
            assert_eq!(DqnConfig { lambda: l, ..DqnConfig::default() }.effective_n_step(), n);
        }
    }

    #[test]
    fn bc_outputs_distributions() {
        let bc = BcPolicy::new(3, 8, &mut seeded(13)).unwrap();
        for p in bc.probs(&[&[0.0, 1.0, -1.0], &[5.0, 5.0, 5.0]]).unwrap() {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn persistence_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let q = qnet(4, 14);
        q.save(&dir.path().join("q.bin"), &Metadata::new()).unwrap();
        assert_eq!(QNet::load(&dir.path().join("q.bin")).unwrap().0, q);
        let bc = BcPolicy::new(4, 8, &mut seeded(15)).unwrap();
        bc.save(&dir.path().join("bc.bin"), &Metadata::new()).unwrap();
        assert_eq!(BcPolicy::load(&dir.path().join("bc.bin")).unwrap().0, bc);
    }

    #[test]
    fn lambda_needs_source() {
        let ep = Episode {
            id: 0,
            steps: vec![Step { state: vec![0.0], action: 0, reward: 1.0, next_state: vec![0.0], terminal: true }],
            outcome: 1.0,
        };
        let cfg = DqnConfig { lambda: 0.5, iterations: 1, ..DqnConfig::default() };
        assert!(matches!(train_policy(&[ep], None, &cfg, 0, |_, _| Ok(None)), Err(Error::Config(_))));
    }
}
