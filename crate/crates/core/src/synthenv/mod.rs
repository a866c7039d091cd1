//! Synthetic clinician cohort.
//!
//! Feature layout for dimension `D`: index 0 is SOFA, index 1 lactate (both
//! relocatable through the config), and the rest come in *refutation pairs*
//! `(z_k + c_k, c_k)`: a mixed reading carrying the latent signal `z_k`
//! contaminated by a nuisance `c_k`, followed by the nuisance alone. Only the
//! pair together pins down `z_k`, so one half can be presented misleadingly
//! and the other half refutes it. The first `signal_pairs` pairs drive the
//! ideal doses; later pairs (and a trailing odd feature) are distractors.
//!
//! A hidden quadratic scorer `h(s, a) = −κ[(iv − g_iv(s))² + (vc − g_vc(s))²]`
//! with `g` affine in the state (clamped to the dose grid) defines both the
//! clinician's softmax behavior and the ground-truth preference.

pub(crate) mod io;
pub mod reward;
pub mod tabular;

pub use io::{read_cohort, write_cohort};
pub use reward::{shaped_reward, shaped_reward_raw, terminal_reward, terminal_reward_scaled};
pub use tabular::{build_tabular, policy_evaluation, value_iteration, QTable, TabularConfig, TabularMdp};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded, tag, DetRng};

pub const N_IV: usize = 5;
pub const N_VC: usize = 5;
pub const N_ACTIONS: usize = N_IV * N_VC;
pub const MAX_STATE_DIM: usize = 44;

/// Cohort generator parameters. Defaults give the 8-feature desk cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub state_dim: usize,
    pub horizon: usize,
    pub sofa_index: usize,
    pub lactate_index: usize,
    pub n_patients: usize,
    pub seed: u64,
    /// Clinician softmax temperature; 0 selects the greedy (deterministic) clinician.
    pub clinician_temperature: f64,
    /// Scorer sharpness κ.
    pub sharpness: f64,
    /// Number of leading refutation pairs that move the ideal doses.
    pub signal_pairs: usize,
    /// Dose shift per unit of latent signal.
    pub dose_gain: f64,
    /// Scale of the latent signals `z`.
    pub signal_scale: f64,
    /// Scale of the nuisances `c`.
    pub nuisance_scale: f64,
    /// AR(1) persistence of latent factors.
    pub persistence: f64,
    /// Ideal-dose shift per unit of lactate above its resting level.
    pub lactate_dose_gain: f64,
    /// SOFA drift per unit of dose mismatch beyond `mismatch_offset`.
    pub sofa_gain: f64,
    pub mismatch_offset: f64,
    pub sofa_noise: f64,
    pub lactate_gain: f64,
    pub lactate_noise: f64,
    pub death_sofa: f64,
    pub discharge_sofa: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            state_dim: 8,
            horizon: 40,
            sofa_index: 0,
            lactate_index: 1,
            n_patients: 500,
            seed: 0,
            clinician_temperature: 1.0,
            sharpness: 4.0,
            signal_pairs: 2,
            dose_gain: 1.5,
            signal_scale: 1.0,
            nuisance_scale: 1.5,
            persistence: 0.8,
            lactate_dose_gain: 0.0,
            sofa_gain: 1.0,
            mismatch_offset: 0.5,
            sofa_noise: 1.5,
            lactate_gain: 0.15,
            lactate_noise: 0.2,
            death_sofa: 15.0,
            discharge_sofa: 1.0,
        }
    }
}

const LACTATE_REST: f64 = 1.5;

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.state_dim < 4 || self.state_dim > MAX_STATE_DIM {
            return bad(format!("state_dim {} outside [4, {MAX_STATE_DIM}]", self.state_dim));
        }
        if self.sofa_index == self.lactate_index
            || self.sofa_index >= self.state_dim
            || self.lactate_index >= self.state_dim
        {
            return bad("sofa_index and lactate_index must be distinct and < state_dim".into());
        }
        if self.horizon < 2 {
            return bad("horizon must be at least 2".into());
        }
        if self.n_patients == 0 {
            return bad("n_patients must be positive".into());
        }
        if !(self.clinician_temperature >= 0.0) || !(self.sharpness > 0.0) {
            return bad("clinician_temperature must be >= 0 and sharpness > 0".into());
        }
        if !(0.0..1.0).contains(&self.persistence) {
            return bad("persistence must lie in [0, 1)".into());
        }
        if self.signal_pairs > (self.state_dim - 2) / 2 {
            return bad(format!(
                "signal_pairs {} exceeds the {} available pairs",
                self.signal_pairs,
                (self.state_dim - 2) / 2
            ));
        }
        if !(self.discharge_sofa < self.death_sofa) {
            return bad("discharge_sofa must be below death_sofa".into());
        }
        let finite = [
            self.dose_gain,
            self.signal_scale,
            self.nuisance_scale,
            self.lactate_dose_gain,
            self.sofa_gain,
            self.mismatch_offset,
            self.sofa_noise,
            self.lactate_gain,
            self.lactate_noise,
        ];
        if finite.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return bad("scale parameters must be finite and nonnegative".into());
        }
        Ok(())
    }

    /// Indices of the features that are neither SOFA nor lactate, in order.
    pub fn pair_feature_indices(&self) -> Vec<usize> {
        (0..self.state_dim)
            .filter(|&i| i != self.sofa_index && i != self.lactate_index)
            .collect()
    }

    pub fn n_pairs(&self) -> usize {
        (self.state_dim - 2) / 2
    }

    /// Ground-truth scorer implied by this configuration.
    pub fn scorer(&self) -> HiddenScorer {
        let d = self.state_dim;
        let mut iv = vec![0.0; d];
        let mut vc = vec![0.0; d];
        let others = self.pair_feature_indices();
        // z_k = mixed − nuisance. Pair 0 drives IV, pair 1 VC, pair 2 pushes
        // them in opposite directions, further signal pairs alternate.
        for k in 0..self.signal_pairs {
            let (mixed, nuis) = (others[2 * k], others[2 * k + 1]);
            let (wi, wv) = match k % 3 {
                0 => (1.0, 0.0),
                1 => (0.0, 1.0),
                _ => (0.5, -0.5),
            };
            for (w, target) in [(wi, &mut iv), (wv, &mut vc)] {
                target[mixed] += w * self.dose_gain;
                target[nuis] -= w * self.dose_gain;
            }
        }
        vc[self.lactate_index] += self.lactate_dose_gain;
        HiddenScorer {
            iv_weights: iv,
            vc_weights: vc,
            iv_bias: 2.0,
            vc_bias: 2.0 - self.lactate_dose_gain * LACTATE_REST,
            sharpness: self.sharpness,
        }
    }
}

/// `h(s, a) = −κ[(iv − g_iv)² + (vc − g_vc)²]`, `g = clamp(bias + w·s, 0, 4)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenScorer {
    pub iv_weights: Vec<f64>,
    pub vc_weights: Vec<f64>,
    pub iv_bias: f64,
    pub vc_bias: f64,
    pub sharpness: f64,
}

impl HiddenScorer {
    /// Ideal (continuous) IV and VC doses for a state.
    pub fn ideal_doses(&self, s: &[f32]) -> (f64, f64) {
        let dot = |w: &[f64]| w.iter().zip(s).map(|(w, &x)| w * x as f64).sum::<f64>();
        let hi = (N_IV - 1) as f64;
        (
            (self.iv_bias + dot(&self.iv_weights)).clamp(0.0, hi),
            (self.vc_bias + dot(&self.vc_weights)).clamp(0.0, hi),
        )
    }

    pub fn score(&self, s: &[f32], action: usize) -> f64 {
        let (gi, gv) = self.ideal_doses(s);
        let (iv, vc) = (action / N_VC, action % N_VC);
        -self.sharpness * ((iv as f64 - gi).powi(2) + (vc as f64 - gv).powi(2))
    }

    pub fn scores(&self, s: &[f32]) -> [f64; N_ACTIONS] {
        std::array::from_fn(|a| self.score(s, a))
    }

    /// L1 distance of an action from the ideal doses.
    pub fn mismatch(&self, s: &[f32], action: usize) -> f64 {
        let (gi, gv) = self.ideal_doses(s);
        (( action / N_VC) as f64 - gi).abs() + ((action % N_VC) as f64 - gv).abs()
    }

    /// Highest-scoring action, lowest index on ties.
    pub fn best_action(&self, s: &[f32]) -> usize {
        argmax(&self.scores(s))
    }

    /// Clinician action distribution at the given temperature.
    pub fn clinician_probs(&self, s: &[f32], temperature: f64) -> [f64; N_ACTIONS] {
        let sc = self.scores(s);
        if temperature == 0.0 {
            let mut p = [0.0; N_ACTIONS];
            p[argmax(&sc)] = 1.0;
            return p;
        }
        let max = sc.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut p = sc.map(|v| ((v - max) / temperature).exp());
        let z: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= z);
        p
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientState(Vec<f32>);

impl PatientState {
    pub fn new(features: Vec<f32>) -> Result<Self> {
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("patient state feature".into()));
        }
        Ok(PatientState(features))
    }

    pub fn features(&self) -> &[f32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    None,
    Survival,
    Death,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::None => "none",
            Outcome::Survival => "survival",
            Outcome::Death => "death",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Outcome::None),
            "survival" => Ok(Outcome::Survival),
            "death" => Ok(Outcome::Death),
            _ => Err(Error::Format(format!("unknown outcome {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: PatientState,
    pub action: usize,
    pub reward: f32,
    pub next_state: PatientState,
    pub terminal: bool,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: usize,
    pub transitions: Vec<Transition>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn outcome(&self) -> Outcome {
        self.transitions.last().map_or(Outcome::None, |t| t.outcome)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub config: EnvConfig,
    pub scorer: HiddenScorer,
    pub trajectories: Vec<Trajectory>,
}

impl Cohort {
    pub fn n_transitions(&self) -> usize {
        self.trajectories.iter().map(|t| t.len()).sum()
    }

    pub fn transitions(&self) -> impl Iterator<Item = (usize, usize, &Transition)> {
        self.trajectories
            .iter()
            .flat_map(|t| t.transitions.iter().enumerate().map(move |(i, tr)| (t.id, i, tr)))
    }

    pub fn mortality(&self) -> f64 {
        let deaths = self
            .trajectories
            .iter()
            .filter(|t| t.outcome() == Outcome::Death)
            .count();
        deaths as f64 / self.trajectories.len().max(1) as f64
    }

    pub fn state_dim(&self) -> usize {
        self.config.state_dim
    }

    /// Checks the structural invariants: one terminal transition, at the end,
    /// with a ±15 reward; lengths within `[2, horizon]`.
    pub fn validate(&self) -> Result<()> {
        for t in &self.trajectories {
            if t.len() < 2 || t.len() > self.config.horizon {
                return Err(Error::Format(format!("trajectory {} has length {}", t.id, t.len())));
            }
            for (i, tr) in t.transitions.iter().enumerate() {
                let last = i + 1 == t.len();
                if tr.terminal != last || tr.terminal != (tr.outcome != Outcome::None) {
                    return Err(Error::Format(format!("trajectory {} step {i}: bad terminal flag", t.id)));
                }
                if tr.terminal && tr.reward.abs() != reward::TERMINAL_REWARD {
                    return Err(Error::Format(format!("trajectory {} ends with reward {}", t.id, tr.reward)));
                }
                if tr.action >= N_ACTIONS || tr.state.dim() != self.config.state_dim {
                    return Err(Error::Format(format!("trajectory {} step {i}: bad action or dim", t.id)));
                }
            }
        }
        Ok(())
    }
}

/// Latent process behind one patient's pair features.
struct Latents {
    signal: Vec<f64>,
    nuisance: Vec<f64>,
    odd: f64,
}

fn normal(rng: &mut DetRng) -> f64 {
    StandardNormal.sample(rng)
}

impl Latents {
    fn init(cfg: &EnvConfig, rng: &mut DetRng) -> Self {
        let n = cfg.n_pairs();
        Latents {
            signal: (0..n).map(|_| cfg.signal_scale * normal(rng)).collect(),
            nuisance: (0..n).map(|_| cfg.nuisance_scale * normal(rng)).collect(),
            odd: normal(rng),
        }
    }

    fn step(&mut self, cfg: &EnvConfig, rng: &mut DetRng) {
        let rho = cfg.persistence;
        let innov = (1.0 - rho * rho).sqrt();
        for z in &mut self.signal {
            *z = rho * *z + innov * cfg.signal_scale * normal(rng);
        }
        for c in &mut self.nuisance {
            *c = rho * *c + innov * cfg.nuisance_scale * normal(rng);
        }
        self.odd = rho * self.odd + innov * normal(rng);
    }

    fn write(&self, cfg: &EnvConfig, sofa: f64, lactate: f64) -> Vec<f32> {
        let mut s = vec![0.0f32; cfg.state_dim];
        s[cfg.sofa_index] = sofa as f32;
        s[cfg.lactate_index] = lactate as f32;
        let others = cfg.pair_feature_indices();
        for k in 0..cfg.n_pairs() {
            let c = self.nuisance[k] as f32;
            // Round the nuisance to f32 first so mixed − nuisance recovers z
            // as closely as f32 allows.
            s[others[2 * k]] = (self.signal[k] as f32) + c;
            s[others[2 * k + 1]] = c;
        }
        if others.len() % 2 == 1 {
            s[*others.last().unwrap()] = self.odd as f32;
        }
        s
    }
}

/// Samples an action index from a probability vector.
pub(crate) fn sample_index(p: &[f64], rng: &mut DetRng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.iter().rposition(|&v| v > 0.0).unwrap_or(p.len() - 1)
}

/// Generates one trajectory per patient. Patient `i` draws from its own
/// stream derived from `(seed, i)`, so cohorts are prefix-stable in `n_patients`.
pub fn generate_cohort(config: &EnvConfig) -> Result<Cohort> {
    config.validate()?;
    let scorer = config.scorer();
    let base = derive_seed(config.seed, tag("cohort"));
    let trajectories = (0..config.n_patients)
        .map(|i| generate_patient(config, &scorer, i, &mut seeded(derive_seed(base, i as u64))))
        .collect::<Result<Vec<_>>>()?;
    let cohort = Cohort {
        config: config.clone(),
        scorer,
        trajectories,
    };
    cohort.validate()?;
    Ok(cohort)
}

fn generate_patient(cfg: &EnvConfig, scorer: &HiddenScorer, id: usize, rng: &mut DetRng) -> Result<Trajectory> {
    let mut lat = Latents::init(cfg, rng);
    let mut sofa: f64 = rng.random_range(2.0..11.0);
    let mut lactate: f64 = rng.random_range(0.8..4.0);
    let mut s = lat.write(cfg, sofa, lactate);
    let mut transitions = Vec::new();
    for t in 0..cfg.horizon {
        let probs = scorer.clinician_probs(&s, cfg.clinician_temperature);
        let action = sample_index(&probs, rng);
        let excess = scorer.mismatch(&s, action) - cfg.mismatch_offset;

        lat.step(cfg, rng);
        sofa = (sofa + cfg.sofa_gain * excess + cfg.sofa_noise * normal(rng)).max(0.0);
        lactate = (lactate
            + 0.2 * (LACTATE_REST - lactate)
            + cfg.lactate_gain * excess
            + cfg.lactate_noise * normal(rng))
        .max(0.1);
        if t == 0 {
            // Trajectories last at least two steps.
            sofa = sofa.clamp(cfg.discharge_sofa + 1e-3, cfg.death_sofa - 1e-3);
        }
        let next = lat.write(cfg, sofa, lactate);

        let outcome = if t == 0 {
            Outcome::None
        } else if sofa >= cfg.death_sofa {
            Outcome::Death
        } else if sofa <= cfg.discharge_sofa || t + 1 == cfg.horizon {
            Outcome::Survival
        } else {
            Outcome::None
        };
        let terminal = outcome != Outcome::None;
        let reward = if terminal {
            terminal_reward(outcome)?
        } else {
            shaped_reward_raw(s[cfg.sofa_index], next[cfg.sofa_index], s[cfg.lactate_index], next[cfg.lactate_index])
                as f32
        };
        transitions.push(Transition {
            state: PatientState::new(s)?,
            action,
            reward,
            next_state: PatientState::new(next.clone())?,
            terminal,
            outcome,
        });
        s = next;
        if terminal {
            break;
        }
    }
    Ok(Trajectory { id, transitions })
}
