//! Preference dataset: each cohort transition's clinician action is paired
//! with an alternative, the pair is put in random order, and `p` records
//! which slot holds the clinician's choice.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded, substream, tag};
use crate::synthenv::io::{fmt_features, parse_features};
use crate::synthenv::{Cohort, PatientState, N_ACTIONS, N_IV, N_VC};

pub fn encode_action(iv: usize, vc: usize) -> Result<usize> {
    if iv >= N_IV || vc >= N_VC {
        return Err(Error::InvalidArgument(format!("dose pair ({iv}, {vc}) out of range")));
    }
    Ok(N_VC * iv + vc)
}

pub fn decode_action(a: usize) -> Result<(usize, usize)> {
    if a >= N_ACTIONS {
        return Err(Error::InvalidArgument(format!("action {a} out of range")));
    }
    Ok((a / N_VC, a % N_VC))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DatasetStrategy {
    #[default]
    Random,
    Exhaustive,
    Offset,
}

impl fmt::Display for DatasetStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetStrategy::Random => "random",
            DatasetStrategy::Exhaustive => "exhaustive",
            DatasetStrategy::Offset => "offset",
        })
    }
}

impl FromStr for DatasetStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(DatasetStrategy::Random),
            "exhaustive" => Ok(DatasetStrategy::Exhaustive),
            "offset" => Ok(DatasetStrategy::Offset),
            _ => Err(Error::Config(format!("unknown dataset strategy {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            _ => Err(Error::Format(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceTuple {
    pub trajectory: usize,
    pub step: usize,
    pub state: PatientState,
    pub a0: usize,
    pub a1: usize,
    /// 0 when `a0` is preferred, 1 when `a1` is.
    pub p: u8,
    pub split: Split,
}

impl PreferenceTuple {
    /// The preferred (clinician) action `a_p`.
    pub fn preferred(&self) -> usize {
        if self.p == 0 {
            self.a0
        } else {
            self.a1
        }
    }

    /// The alternative `a_{1−p}`.
    pub fn rejected(&self) -> usize {
        if self.p == 0 {
            self.a1
        } else {
            self.a0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceDataset {
    pub strategy: DatasetStrategy,
    pub state_dim: usize,
    pub tuples: Vec<PreferenceTuple>,
}

impl PreferenceDataset {
    pub fn split_iter(&self, split: Split) -> impl Iterator<Item = &PreferenceTuple> {
        self.tuples.iter().filter(move |t| t.split == split)
    }

    pub fn split_vec(&self, split: Split) -> Vec<PreferenceTuple> {
        self.split_iter(split).cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }
}

/// Draws an alternative to `a_t` under the offset strategy: IV and VC
/// offsets from `{−1, 0, 1}`, resampled until in range and different from `a_t`.
pub fn offset_alternative<R: Rng>(a_t: usize, rng: &mut R) -> Result<usize> {
    offset_draws(a_t, rng).map(|(a, _)| a)
}

/// The alternative and the number of offset pairs drawn to get it.
fn offset_draws<R: Rng>(a_t: usize, rng: &mut R) -> Result<(usize, usize)> {
    let (iv, vc) = decode_action(a_t)?;
    let mut draws = 0;
    loop {
        draws += 1;
        let di = rng.random_range(-1i64..=1);
        let dv = rng.random_range(-1i64..=1);
        if di == 0 && dv == 0 {
            continue;
        }
        let (ni, nv) = (iv as i64 + di, vc as i64 + dv);
        if (0..N_IV as i64).contains(&ni) && (0..N_VC as i64).contains(&nv) {
            return Ok((encode_action(ni as usize, nv as usize)?, draws));
        }
    }
}

/// Pairs every cohort transition with alternatives per `strategy`. Every
/// tuple starts tagged `Train`; call [`split`] to assign the partition.
pub fn build_preferences(cohort: &Cohort, strategy: DatasetStrategy, seed: u64) -> Result<PreferenceDataset> {
    if cohort.n_transitions() == 0 {
        return Err(Error::InvalidArgument("empty cohort".into()));
    }
    let base = derive_seed(seed, tag("preferences"));
    let mut tuples = Vec::new();
    for traj in &cohort.trajectories {
        let mut rng = seeded(derive_seed(base, traj.id as u64));
        for (step, tr) in traj.transitions.iter().enumerate() {
            let a_t = tr.action;
            let alternatives: Vec<usize> = match strategy {
                DatasetStrategy::Random => {
                    let r = rng.random_range(0..N_ACTIONS - 1);
                    vec![if r >= a_t { r + 1 } else { r }]
                }
                DatasetStrategy::Exhaustive => (0..N_ACTIONS).filter(|&a| a != a_t).collect(),
                DatasetStrategy::Offset => vec![offset_alternative(a_t, &mut rng)?],
            };
            for a_r in alternatives {
                let p = rng.random_range(0..2u8);
                let (a0, a1) = if p == 0 { (a_t, a_r) } else { (a_r, a_t) };
                tuples.push(PreferenceTuple {
                    trajectory: traj.id,
                    step,
                    state: tr.state.clone(),
                    a0,
                    a1,
                    p,
                    split: Split::Train,
                });
            }
        }
    }
    Ok(PreferenceDataset {
        strategy,
        state_dim: cohort.state_dim(),
        tuples,
    })
}

/// Partitions trajectory ids 70/15/15 (train/validation/test) after a
/// seeded shuffle. Duplicate ids are ignored.
pub fn trajectory_splits(ids: &[usize], seed: u64) -> Result<HashMap<usize, Split>> {
    let mut ids = ids.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let n = ids.len();
    if n < 10 {
        return Err(Error::InvalidArgument(format!("{n} trajectories; splitting needs at least 10")));
    }
    ids.shuffle(&mut substream(seed, "split"));
    let n_train = (0.70 * n as f64).round() as usize;
    let n_val = (0.15 * n as f64).round() as usize;
    Ok(ids
        .iter()
        .enumerate()
        .map(|(i, &id)| {
            let s = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Validation
            } else {
                Split::Test
            };
            (id, s)
        })
        .collect())
}

/// Tags every tuple with its trajectory's split from [`trajectory_splits`].
pub fn split(mut dataset: PreferenceDataset, seed: u64) -> Result<PreferenceDataset> {
    let ids: Vec<usize> = dataset.tuples.iter().map(|t| t.trajectory).collect();
    let tag_of = trajectory_splits(&ids, seed)?;
    for t in &mut dataset.tuples {
        t.split = tag_of[&t.trajectory];
    }
    Ok(dataset)
}

const MAGIC: &str = "# jdebate-prefs 1";

/// Records: `trajectory  step  features  a0  a1  p  split`, tab-separated.
pub fn write_dataset<W: Write>(mut w: W, ds: &PreferenceDataset) -> Result<()> {
    writeln!(w, "{MAGIC}")?;
    writeln!(w, "# strategy {}", ds.strategy)?;
    writeln!(w, "# state_dim {}", ds.state_dim)?;
    for t in &ds.tuples {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            t.trajectory,
            t.step,
            fmt_features(t.state.features()),
            t.a0,
            t.a1,
            t.p,
            t.split.as_str()
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset<R: BufRead>(r: R) -> Result<PreferenceDataset> {
    let mut lines = r.lines();
    let mut header = |prefix: &str| -> Result<String> {
        let line = lines
            .next()
            .ok_or_else(|| Error::Format("truncated preference header".into()))??;
        line.strip_prefix(prefix)
            .map(str::to_owned)
            .ok_or_else(|| Error::Format(format!("expected {prefix:?}")))
    };
    header(MAGIC)?;
    let strategy: DatasetStrategy = header("# strategy ")?.parse()?;
    let state_dim: usize = header("# state_dim ")?
        .parse()
        .map_err(|_| Error::Format("state_dim".into()))?;
    let mut tuples = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let bad = |what: &str| Error::Format(format!("preference record {}: {what}", n + 1));
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 7 {
            return Err(bad("expected 7 fields"));
        }
        let num = |s: &str, what: &str| s.parse::<usize>().map_err(|_| bad(what));
        let t = PreferenceTuple {
            trajectory: num(f[0], "trajectory")?,
            step: num(f[1], "step")?,
            state: PatientState::new(parse_features(f[2])?)?,
            a0: num(f[3], "a0")?,
            a1: num(f[4], "a1")?,
            p: match f[5] {
                "0" => 0,
                "1" => 1,
                _ => return Err(bad("p")),
            },
            split: Split::parse(f[6])?,
        };
        if t.a0 == t.a1 || t.a0 >= N_ACTIONS || t.a1 >= N_ACTIONS || t.state.dim() != state_dim {
            return Err(bad("invalid actions or state dimension"));
        }
        tuples.push(t);
    }
    Ok(PreferenceDataset {
        strategy,
        state_dim,
        tuples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthenv::{generate_cohort, EnvConfig};
    use proptest::prelude::*;
    use rand::Rng;

    fn cohort(n: usize) -> Cohort {
        generate_cohort(&EnvConfig {
            n_patients: n,
            ..EnvConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn action_codec() {
        assert_eq!(decode_action(7).unwrap(), (1, 2));
        assert_eq!(decode_action(0).unwrap(), (0, 0));
        assert_eq!(encode_action(4, 4).unwrap(), 24);
        assert!(decode_action(25).is_err());
        assert!(encode_action(5, 0).is_err());
    }

    proptest! {
        #[test]
        fn codec_round_trip(iv in 0usize..5, vc in 0usize..5) {
            let a = encode_action(iv, vc).unwrap();
            prop_assert_eq!(decode_action(a).unwrap(), (iv, vc));
        }
    }

    #[test]
    fn exhaustive_gives_24_per_transition() {
        let c = cohort(8);
        let ds = build_preferences(&c, DatasetStrategy::Exhaustive, 1).unwrap();
        assert_eq!(ds.len(), 24 * c.n_transitions());
    }

    #[test]
    fn preferred_is_clinician_action() {
        let c = cohort(30);
        for strategy in [DatasetStrategy::Random, DatasetStrategy::Exhaustive, DatasetStrategy::Offset] {
            let ds = build_preferences(&c, strategy, 3).unwrap();
            for t in &ds.tuples {
                let tr = &c.trajectories[t.trajectory].transitions[t.step];
                assert_ne!(t.a0, t.a1);
                assert_eq!(t.preferred(), tr.action);
                assert_eq!(&t.state, &tr.state);
            }
        }
    }

    #[test]
    fn offset_neighbors_only() {
        let c = cohort(30);
        let ds = build_preferences(&c, DatasetStrategy::Offset, 4).unwrap();
        for t in &ds.tuples {
            let (i0, v0) = decode_action(t.preferred()).unwrap();
            let (i1, v1) = decode_action(t.rejected()).unwrap();
            assert!(i0.abs_diff(i1) <= 1 && v0.abs_diff(v1) <= 1);
        }
    }

    #[test]
    fn random_alternatives_uniform_and_p_balanced() {
        // Fixed clinician action, so alternative frequencies are directly comparable.
        let mut rng = seeded(9);
        let mut counts = [0usize; N_ACTIONS];
        let a_t = 12;
        let n = 24_000;
        for _ in 0..n {
            let r = rng.random_range(0..N_ACTIONS - 1);
            counts[if r >= a_t { r + 1 } else { r }] += 1;
        }
        assert_eq!(counts[a_t], 0);
        for (a, &c) in counts.iter().enumerate().filter(|(a, _)| *a != a_t) {
            assert!((c as f64 / n as f64 - 1.0 / 24.0).abs() < 0.01, "action {a}");
        }

        let ds = build_preferences(&cohort(800), DatasetStrategy::Random, 5).unwrap();
        assert!(ds.len() >= 10_000);
        let ones = ds.tuples.iter().filter(|t| t.p == 1).count();
        assert!((ones as f64 / ds.len() as f64 - 0.5).abs() < 0.02);
        let mut alt = [0usize; N_ACTIONS];
        let mut total = 0usize;
        for t in &ds.tuples {
            alt[t.rejected()] += 1;
            total += 1;
        }
        // Marginal over clinician actions is not uniform, but no alternative
        // should be wildly over-represented.
        assert!(alt.iter().all(|&c| (c as f64 / total as f64) < 0.1));
    }

    #[test]
    fn offset_resampling_is_cheap() {
        // A corner action has 3 valid offset pairs out of 9, so even there the
        // expected number of resamples is 9/3 − 1 = 2; interior actions need far fewer.
        let mut rng = seeded(2);
        let reps = 400;
        let mut resamples = 0;
        for a in 0..N_ACTIONS {
            for _ in 0..reps {
                let (alt, draws) = offset_draws(a, &mut rng).unwrap();
                assert_ne!(alt, a);
                resamples += draws - 1;
            }
        }
        assert!((resamples as f64 / (reps * N_ACTIONS) as f64) < 2.0);
        let corner: usize = (0..4000).map(|_| offset_draws(0, &mut rng).unwrap().1 - 1).sum();
        assert!((corner as f64 / 4000.0 - 2.0).abs() < 0.15);
    }

    #[test]
    fn split_partitions_trajectories() {
        let ds = build_preferences(&cohort(100), DatasetStrategy::Random, 1).unwrap();
        let a = split(ds.clone(), 7).unwrap();
        let b = split(ds, 7).unwrap();
        assert_eq!(a, b);
        let mut tags = std::collections::HashMap::new();
        for t in &a.tuples {
            let prev = tags.insert(t.trajectory, t.split);
            assert!(prev.is_none() || prev == Some(t.split));
        }
        let count = |s: Split| tags.values().filter(|&&v| v == s).count();
        assert_eq!((count(Split::Train), count(Split::Validation), count(Split::Test)), (70, 15, 15));
    }

    #[test]
    fn split_needs_ten_trajectories() {
        let ds = build_preferences(&cohort(9), DatasetStrategy::Random, 1).unwrap();
        assert!(split(ds, 0).is_err());
    }

    #[test]
    fn file_round_trip() {
        let ds = split(build_preferences(&cohort(12), DatasetStrategy::Offset, 1).unwrap(), 2).unwrap();
        let mut buf = Vec::new();
        write_dataset(&mut buf, &ds).unwrap();
        assert_eq!(read_dataset(buf.as_slice()).unwrap(), ds);
    }
}
