//! Small discretized cohort MDP with exact dynamics, used as a ground-truth
//! oracle for the offline DQN. States are (SOFA level, lactate level) pairs
//! plus two absorbing outcome states.

use super::reward::{shaped_reward_raw, TERMINAL_REWARD};
use super::{N_ACTIONS, N_VC};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    /// `P[s][a][s']`, flattened.
    pub transitions: Vec<f64>,
    /// `R[s][a][s']`, flattened.
    pub rewards: Vec<f64>,
    pub absorbing: Vec<bool>,
    /// Continuous feature vector of each state, for function approximators.
    pub features: Vec<Vec<f32>>,
}

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        gamma: f64,
        transitions: Vec<f64>,
        rewards: Vec<f64>,
        absorbing: Vec<bool>,
        features: Vec<Vec<f32>>,
    ) -> Result<Self> {
        let n = n_states * n_actions * n_states;
        if transitions.len() != n || rewards.len() != n || absorbing.len() != n_states || features.len() != n_states
        {
            return Err(Error::Dimension("tabular MDP tensor sizes".into()));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidArgument(format!("discount {gamma} outside [0, 1)")));
        }
        for s in 0..n_states {
            for a in 0..n_actions {
                let row = &transitions[(s * n_actions + a) * n_states..][..n_states];
                let total: f64 = row.iter().sum();
                if (total - 1.0).abs() > 1e-9 || row.iter().any(|&p| p < 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "transition row ({s}, {a}) is not stochastic (sums to {total})"
                    )));
                }
            }
        }
        Ok(TabularMdp {
            n_states,
            n_actions,
            gamma,
            transitions,
            rewards,
            absorbing,
            features,
        })
    }

    #[inline]
    pub fn p(&self, s: usize, a: usize, s2: usize) -> f64 {
        self.transitions[(s * self.n_actions + a) * self.n_states + s2]
    }

    #[inline]
    pub fn r(&self, s: usize, a: usize, s2: usize) -> f64 {
        self.rewards[(s * self.n_actions + a) * self.n_states + s2]
    }

    /// Expected one-step reward plus discounted continuation under `v`.
    pub fn backup(&self, s: usize, a: usize, v: &[f64]) -> f64 {
        (0..self.n_states)
            .map(|s2| {
                let p = self.p(s, a, s2);
                if p == 0.0 {
                    0.0
                } else {
                    p * (self.r(s, a, s2) + self.gamma * v[s2])
                }
            })
            .sum()
    }

    pub fn transient_states(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_states).filter(|&s| !self.absorbing[s])
    }

    /// Mean of `v` over non-absorbing states (uniform start distribution).
    pub fn start_value(&self, v: &[f64]) -> f64 {
        let (sum, n) = self.transient_states().fold((0.0, 0usize), |(a, n), s| (a + v[s], n + 1));
        sum / n.max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub n_states: usize,
    pub n_actions: usize,
    pub q: Vec<f64>,
}

impl QTable {
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.q[s * self.n_actions + a]
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.n_states)
            .map(|s| (0..self.n_actions).map(|a| self.get(s, a)).fold(f64::NEG_INFINITY, f64::max))
            .collect()
    }

    pub fn greedy(&self) -> Vec<usize> {
        (0..self.n_states)
            .map(|s| {
                let mut best = 0;
                for a in 1..self.n_actions {
                    if self.get(s, a) > self.get(s, best) {
                        best = a;
                    }
                }
                best
            })
            .collect()
    }

    /// Sup-norm Bellman optimality residual.
    pub fn bellman_residual(&self, mdp: &TabularMdp) -> f64 {
        let v = self.values();
        let mut worst = 0.0f64;
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                worst = worst.max((mdp.backup(s, a, &v) - self.get(s, a)).abs());
            }
        }
        worst
    }
}

/// Value iteration until the Bellman residual falls below `tol`.
pub fn value_iteration(mdp: &TabularMdp, tol: f64) -> Result<QTable> {
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let mut q = QTable {
        n_states: ns,
        n_actions: na,
        q: vec![0.0; ns * na],
    };
    let max_iter = 200_000;
    for _ in 0..max_iter {
        let v = q.values();
        let mut delta = 0.0f64;
        for s in 0..ns {
            for a in 0..na {
                let new = mdp.backup(s, a, &v);
                delta = delta.max((new - q.q[s * na + a]).abs());
                q.q[s * na + a] = new;
            }
        }
        // The update is a γ-contraction, so one more sweep changes Q by at
        // most γ·delta; stop once that is well inside the tolerance.
        if delta * mdp.gamma < tol * 0.5 {
            return Ok(q);
        }
    }
    Err(Error::NonFinite("value iteration did not converge".into()))
}

/// Exact value of a deterministic policy, by iterating its Bellman operator.
pub fn policy_evaluation(mdp: &TabularMdp, policy: &[usize], tol: f64) -> Result<Vec<f64>> {
    if policy.len() != mdp.n_states || policy.iter().any(|&a| a >= mdp.n_actions) {
        return Err(Error::Dimension("policy must give one valid action per state".into()));
    }
    let mut v = vec![0.0; mdp.n_states];
    for _ in 0..200_000 {
        let new: Vec<f64> = (0..mdp.n_states).map(|s| mdp.backup(s, policy[s], &v)).collect();
        let delta = new.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = new;
        if delta * mdp.gamma < tol * 0.5 {
            return Ok(v);
        }
    }
    Err(Error::NonFinite("policy evaluation did not converge".into()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularConfig {
    pub sofa_levels: usize,
    pub lactate_levels: usize,
    pub gamma: f64,
}

impl Default for TabularConfig {
    fn default() -> Self {
        TabularConfig {
            sofa_levels: 8,
            lactate_levels: 3,
            gamma: 0.99,
        }
    }
}

/// Lactate reading represented by a lactate level.
fn lactate_value(level: usize) -> f32 {
    1.0 + 1.5 * level as f32
}

/// Builds the reduced two-feature cohort MDP. The ideal IV dose rises with
/// SOFA and the ideal VC dose with lactate; the L1 dose mismatch `m` sets
/// the chances of SOFA and lactate improving (`∝ e^{−m/2}`) or worsening.
/// Falling below SOFA level 0 discharges the patient, rising above the top
/// level kills them.
pub fn build_tabular(cfg: &TabularConfig) -> Result<TabularMdp> {
    let (k, l) = (cfg.sofa_levels, cfg.lactate_levels);
    if k < 2 || l < 2 {
        return Err(Error::Config("need at least two SOFA and two lactate levels".into()));
    }
    let transient = k * l;
    let ns = transient + 2;
    if ns > 200 {
        return Err(Error::Config(format!("{ns} states exceeds the 200-state limit")));
    }
    let (death, discharge) = (transient, transient + 1);
    let idx = |sofa: usize, lact: usize| sofa * l + lact;
    let na = N_ACTIONS;
    let mut p = vec![0.0; ns * na * ns];
    let mut r = vec![0.0; ns * na * ns];
    let at = |s: usize, a: usize, s2: usize| (s * na + a) * ns + s2;

    let mut features = vec![Vec::new(); ns];
    for sofa in 0..k {
        for lact in 0..l {
            features[idx(sofa, lact)] = vec![sofa as f32, lactate_value(lact)];
        }
    }
    features[death] = vec![k as f32, lactate_value(l - 1)];
    features[discharge] = vec![0.0, lactate_value(0)];

    for sofa in 0..k {
        for lact in 0..l {
            let s = idx(sofa, lact);
            let g_iv = (sofa as f64 * 4.0 / (k - 1) as f64).round();
            let g_vc = (lact as f64 * 4.0 / (l - 1) as f64).round();
            for a in 0..na {
                let m = ((a / N_VC) as f64 - g_iv).abs() + ((a % N_VC) as f64 - g_vc).abs();
                let good = (-0.5 * m).exp();
                let (s_down, s_up) = (0.7 * good, 0.1 + 0.6 * (1.0 - good));
                let sofa_moves = [(-1i64, s_down), (0, 1.0 - s_down - s_up), (1, s_up)];
                let (l_down, l_up) = (0.3 * good, 0.3 * (1.0 - good));
                let lact_moves = [(-1i64, l_down), (0, 1.0 - l_down - l_up), (1, l_up)];
                for &(ds, ps) in &sofa_moves {
                    for &(dl, pl) in &lact_moves {
                        let prob = ps * pl;
                        let ns_sofa = sofa as i64 + ds;
                        let nl = (lact as i64 + dl).clamp(0, l as i64 - 1) as usize;
                        let (s2, rew) = if ns_sofa < 0 {
                            (discharge, TERMINAL_REWARD as f64)
                        } else if ns_sofa >= k as i64 {
                            (death, -(TERMINAL_REWARD as f64))
                        } else {
                            let s2 = idx(ns_sofa as usize, nl);
                            let rew = shaped_reward_raw(
                                sofa as f32,
                                ns_sofa as f32,
                                lactate_value(lact),
                                lactate_value(nl),
                            );
                            (s2, rew)
                        };
                        // Several moves can land in the same cell (clamping,
                        // absorbing outcomes); rewards there are identical.
                        p[at(s, a, s2)] += prob;
                        r[at(s, a, s2)] = rew;
                    }
                }
            }
        }
    }
    for s in [death, discharge] {
        for a in 0..na {
            p[at(s, a, s)] = 1.0;
        }
    }
    let mut absorbing = vec![false; ns];
    absorbing[death] = true;
    absorbing[discharge] = true;
    TabularMdp::new(ns, na, cfg.gamma, p, r, absorbing, features)
}
