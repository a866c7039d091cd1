//! The judge: a scalar scorer `J(a, {e})` of a decision given a set of
//! revealed state features, with Bradley-Terry pairwise preferences
//! `P(a0 ≻ a1) = σ(J(a0) − J(a1))`.
//!
//! Evidence sets are carried as `u64` bitmasks over feature indices
//! (`D ≤ 44`). The judge never sees unrevealed features: its input is
//! `[masked_values | mask | onehot(action)]`.

use std::path::Path;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::loss::{sigmoid, softplus};
use crate::neural::persist::{load_networks, save_networks, Metadata};
use crate::neural::{Activation, AdamState, LayerSpec, Matrix, Network, Standardizer};
use crate::prefdata::{PreferenceDataset, PreferenceTuple, Split};
use crate::rng::{substream, DetRng};
use crate::stats::Estimate;
use crate::synthenv::{PatientState, N_ACTIONS};

pub type EvidenceMask = u64;

pub fn mask_of(indices: &[usize]) -> EvidenceMask {
    indices.iter().fold(0, |m, &i| m | (1u64 << i))
}

pub fn indices_of(mask: EvidenceMask) -> Vec<usize> {
    (0..64).filter(|&i| mask >> i & 1 == 1).collect()
}

/// A set of revealed feature indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceSet {
    indices: Vec<usize>,
}

impl EvidenceSet {
    /// Validates: non-empty, no repeats, every index `< dim`.
    pub fn new(indices: Vec<usize>, dim: usize) -> Result<Self> {
        if indices.is_empty() || indices.len() > dim {
            return Err(Error::InvalidArgument(format!(
                "evidence size {} outside [1, {dim}]",
                indices.len()
            )));
        }
        let mut seen = 0u64;
        for &i in &indices {
            if i >= dim {
                return Err(Error::IllegalEvidence {
                    index: i,
                    reason: format!("outside state dimension {dim}"),
                });
            }
            if seen >> i & 1 == 1 {
                return Err(Error::IllegalEvidence {
                    index: i,
                    reason: "repeated".into(),
                });
            }
            seen |= 1 << i;
        }
        Ok(EvidenceSet { indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn mask(&self) -> EvidenceMask {
        mask_of(&self.indices)
    }

    pub fn values(&self, state: &PatientState) -> Vec<f32> {
        self.indices.iter().map(|&i| state.features()[i]).collect()
    }
}

/// Anything that can score a decision from revealed evidence.
pub trait Judge: Sync {
    fn state_dim(&self) -> usize;

    /// Scores each `(action, evidence)` query against `state`. Only the
    /// features named by each mask may influence its score.
    fn score_masks(&self, state: &[f32], queries: &[(usize, EvidenceMask)]) -> Result<Vec<f64>>;

    fn score(&self, action: usize, evidence: &EvidenceSet, state: &PatientState) -> Result<f64> {
        Ok(self.score_masks(state.features(), &[(action, evidence.mask())])?[0])
    }
}

/// Checks a batch of judge queries against the state dimension.
pub fn validate_queries(dim: usize, state: &[f32], queries: &[(usize, EvidenceMask)]) -> Result<()> {
    if state.len() != dim {
        return Err(Error::Dimension(format!("state has {} features, judge expects {dim}", state.len())));
    }
    for &(a, m) in queries {
        if a >= N_ACTIONS {
            return Err(Error::InvalidArgument(format!("action {a} out of range")));
        }
        if dim < 64 && m >> dim != 0 {
            return Err(Error::IllegalEvidence {
                index: 63 - m.leading_zeros() as usize,
                reason: format!("outside state dimension {dim}"),
            });
        }
    }
    Ok(())
}

/// A judge given by a closure `(action, mask, state) → score`, for
/// hand-constructed test judges.
pub struct FnJudge<F> {
    pub dim: usize,
    pub f: F,
}

impl<F> Judge for FnJudge<F>
where
    F: Fn(usize, EvidenceMask, &[f32]) -> f64 + Sync,
{
    fn state_dim(&self) -> usize {
        self.dim
    }

    fn score_masks(&self, state: &[f32], queries: &[(usize, EvidenceMask)]) -> Result<Vec<f64>> {
        validate_queries(self.dim, state, queries)?;
        Ok(queries.iter().map(|&(a, m)| (self.f)(a, m, state)).collect())
    }
}

/// `P(a0 ≻ a1 | {e}) = e^{J0} / (e^{J0} + e^{J1})`.
pub fn bradley_terry(j0: f64, j1: f64) -> f64 {
    sigmoid(j0 - j1)
}

pub fn pref_prob<J: Judge + ?Sized>(
    judge: &J,
    a0: usize,
    a1: usize,
    evidence: &EvidenceSet,
    state: &PatientState,
) -> Result<f64> {
    if a0 == a1 {
        return Err(Error::InvalidArgument("preference between identical actions".into()));
    }
    let m = evidence.mask();
    let s = judge.score_masks(state.features(), &[(a0, m), (a1, m)])?;
    Ok(bradley_terry(s[0], s[1]))
}

pub const HIDDEN: usize = 256;

/// The learned judge network.
#[derive(Debug, Clone, PartialEq)]
pub struct JudgeModel {
    pub net: Network,
    pub state_dim: usize,
    /// Evidence-set size the judge was trained on (`state_dim` for a full-state judge).
    pub evidence_size: usize,
    /// Applied to revealed values before they enter the network.
    pub standardizer: Standardizer,
}

impl JudgeModel {
    pub fn input_dim(state_dim: usize) -> usize {
        2 * state_dim + N_ACTIONS
    }

    pub fn new<R: Rng + ?Sized>(state_dim: usize, evidence_size: usize, rng: &mut R) -> Result<Self> {
        let prelu = Activation::Prelu;
        let specs = [
            LayerSpec::new(Self::input_dim(state_dim), HIDDEN, prelu).with_batch_norm(),
            LayerSpec::new(HIDDEN, HIDDEN, prelu).with_batch_norm(),
            LayerSpec::new(HIDDEN, 1, Activation::Identity),
        ];
        Ok(JudgeModel {
            net: Network::new(&specs, rng)?,
            state_dim,
            evidence_size,
            standardizer: Standardizer::identity(state_dim),
        })
    }

    /// Writes `[masked_values | mask | onehot(action)]` into `row`; revealed
    /// values are standardized, hidden ones are zero.
    pub fn encode(&self, row: &mut [f32], action: usize, mask: EvidenceMask, state: &[f32]) {
        let d = self.state_dim;
        row.fill(0.0);
        for i in 0..d {
            if mask >> i & 1 == 1 {
                row[i] = self.standardizer.apply(i, state[i]);
                row[d + i] = 1.0;
            }
        }
        row[2 * d + action] = 1.0;
    }

    fn batch(&self, rows: &[(usize, EvidenceMask, &[f32])]) -> Matrix {
        let mut x = Matrix::zeros(rows.len(), Self::input_dim(self.state_dim));
        for (r, &(a, m, s)) in rows.iter().enumerate() {
            self.encode(x.row_mut(r), a, m, s);
        }
        x
    }

    /// Eval-mode scores for queries that may each come from a different state.
    pub fn score_rows(&self, rows: &[(usize, EvidenceMask, &[f32])]) -> Result<Vec<f64>> {
        if rows.is_empty() {
            return Ok(Vec::new());
        }
        for &(a, m, s) in rows {
            validate_queries(self.state_dim, s, &[(a, m)])?;
        }
        let out = self.net.forward(&self.batch(rows))?;
        Ok(out.data().iter().map(|&v| v as f64).collect())
    }

    pub fn save(&self, path: &Path, extra: &Metadata) -> Result<()> {
        let mut meta = extra.clone();
        meta.insert("kind".into(), "judge".into());
        meta.insert("state_dim".into(), self.state_dim.to_string());
        meta.insert("evidence_size".into(), self.evidence_size.to_string());
        meta.insert("standardizer".into(), serde_json::to_string(&self.standardizer)?);
        save_networks(path, &[&self.net], &meta)
    }

    pub fn load(path: &Path) -> Result<(Self, Metadata)> {
        let (mut nets, meta) = load_networks(path)?;
        let field = |k: &str| -> Result<usize> {
            meta.get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Format(format!("judge file lacks {k}")))
        };
        if meta.get("kind").map(String::as_str) != Some("judge") || nets.len() != 1 {
            return Err(Error::Format(format!("{} is not a judge file", path.display())));
        }
        let model = JudgeModel {
            net: nets.remove(0),
            state_dim: field("state_dim")?,
            evidence_size: field("evidence_size")?,
            standardizer: serde_json::from_str(
                meta.get("standardizer")
                    .ok_or_else(|| Error::Format("judge file lacks standardizer".into()))?,
            )?,
        };
        if model.net.in_dim() != Self::input_dim(model.state_dim) {
            return Err(Error::Format("judge input width disagrees with state_dim".into()));
        }
        Ok((model, meta))
    }
}

impl Judge for JudgeModel {
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn score_masks(&self, state: &[f32], queries: &[(usize, EvidenceMask)]) -> Result<Vec<f64>> {
        validate_queries(self.state_dim, state, queries)?;
        let rows: Vec<_> = queries.iter().map(|&(a, m)| (a, m, state)).collect();
        self.score_rows(&rows)
    }
}

/// Uniformly random evidence of size `l` over `d` features.
pub fn random_evidence<R: Rng + ?Sized>(d: usize, l: usize, rng: &mut R) -> EvidenceMask {
    index::sample(rng, d, l).iter().fold(0, |m, i| m | (1u64 << i))
}

pub fn full_mask(d: usize) -> EvidenceMask {
    if d >= 64 {
        u64::MAX
    } else {
        (1u64 << d) - 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JudgeTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    /// Evidence-set size `L` drawn fresh per sample and batch.
    pub evidence_size: usize,
    /// Reveal every feature (the state-based comparison judge).
    pub full_state: bool,
}

impl Default for JudgeTrainConfig {
    fn default() -> Self {
        JudgeTrainConfig {
            epochs: 100,
            batch_size: 64,
            learning_rate: 5e-4,
            evidence_size: 6,
            full_state: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JudgeEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    /// Validation accuracy with random evidence (NaN without a validation split).
    pub val_accuracy: f64,
}

/// Per-sample Bradley-Terry cross-entropy `−[p·ln σ(J1−J0) + (1−p)·ln σ(J0−J1)]`
/// and its derivative with respect to `d = J1 − J0`.
pub fn preference_loss(j0: f64, j1: f64, p: u8) -> (f64, f64) {
    let d = j1 - j0;
    let p = p as f64;
    let loss = p * softplus(-d) + (1.0 - p) * softplus(d);
    (loss, sigmoid(d) - p)
}

/// Trains a judge on the train split with per-batch random evidence.
pub fn train_judge(
    dataset: &PreferenceDataset,
    cfg: &JudgeTrainConfig,
    seed: u64,
) -> Result<(JudgeModel, Vec<JudgeEpoch>)> {
    let d = dataset.state_dim;
    let l = if cfg.full_state { d } else { cfg.evidence_size };
    if l == 0 || l > d {
        return Err(Error::Config(format!("evidence size {l} outside [1, {d}]")));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::Config("judge batch size and epochs must be positive".into()));
    }
    let train: Vec<&PreferenceTuple> = dataset.split_iter(Split::Train).collect();
    if train.is_empty() {
        return Err(Error::InvalidArgument("empty train split".into()));
    }
    let val: Vec<&PreferenceTuple> = dataset.split_iter(Split::Validation).collect();
    let mut rng = substream(seed, "judge-train");
    let mut model = JudgeModel::new(d, l, &mut rng)?;
    model.standardizer = Standardizer::fit(d, train.iter().map(|t| t.state.features()))?;
    let mut adam = AdamState::new(cfg.learning_rate);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut val_rng = substream(seed, "judge-val");

    for epoch in 0..cfg.epochs {
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let mut total = 0.0f64;
        for chunk in order.chunks(cfg.batch_size) {
            let n = chunk.len();
            // Rows 2i and 2i+1 score a0 and a1 under the same evidence.
            let mut rows = Vec::with_capacity(2 * n);
            for &k in chunk {
                let t = train[k];
                let m = if cfg.full_state { full_mask(d) } else { random_evidence(d, l, &mut rng) };
                rows.push((t.a0, m, t.state.features()));
                rows.push((t.a1, m, t.state.features()));
            }
            let x = model.batch(&rows);
            let (out, cache) = model.net.forward_train(&x)?;
            let mut grad = Matrix::zeros(2 * n, 1);
            for (i, &k) in chunk.iter().enumerate() {
                let (loss, dd) = preference_loss(out.get(2 * i, 0) as f64, out.get(2 * i + 1, 0) as f64, train[k].p);
                total += loss;
                grad.set(2 * i, 0, (-dd / n as f64) as f32);
                grad.set(2 * i + 1, 0, (dd / n as f64) as f32);
            }
            if !total.is_finite() {
                return Err(Error::NonFinite(format!("judge loss at epoch {epoch}")));
            }
            let (grads, _) = model.net.backward(&cache, &grad)?;
            adam.step_network(&mut model.net, &grads)?;
        }
        let val_accuracy = if val.is_empty() {
            f64::NAN
        } else {
            let sampler = |_: &PreferenceTuple, r: &mut DetRng| {
                Ok(if cfg.full_state { full_mask(d) } else { random_evidence(d, l, r) })
            };
            judge_accuracy(&model, val.iter().copied(), sampler, &mut val_rng)?.estimate
        };
        log.push(JudgeEpoch {
            epoch,
            train_loss: total / train.len() as f64,
            val_accuracy,
        });
    }
    Ok((model, log))
}

/// Credit for one comparison: 1 if `J(a_p) > J(a_{1−p})`, 0.5 on an exact tie.
pub fn credit(j_pref: f64, j_other: f64) -> f64 {
    if j_pref > j_other {
        1.0
    } else if j_pref == j_other {
        0.5
    } else {
        0.0
    }
}

/// Accuracy at identifying `a_p` with evidence drawn by `sampler`, as a mean
/// with standard error.
pub fn judge_accuracy<'a, J, I, S>(judge: &J, tuples: I, mut sampler: S, rng: &mut DetRng) -> Result<Estimate>
where
    J: Judge + ?Sized,
    I: IntoIterator<Item = &'a PreferenceTuple>,
    S: FnMut(&PreferenceTuple, &mut DetRng) -> Result<EvidenceMask>,
{
    let mut credits = Vec::new();
    for t in tuples {
        let m = sampler(t, rng)?;
        let s = judge.score_masks(t.state.features(), &[(t.preferred(), m), (t.rejected(), m)])?;
        credits.push(credit(s[0], s[1]));
    }
    if credits.is_empty() {
        return Err(Error::InvalidArgument("accuracy over an empty split".into()));
    }
    Ok(Estimate::from_samples(&credits))
}
