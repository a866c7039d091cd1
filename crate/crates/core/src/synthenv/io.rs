//! Line-oriented cohort files. `#` header lines carry the generator config
//! and scorer as JSON; each record is one tab-separated transition:
//! `trajectory  step  features  next_features  action  reward  terminal  outcome`
//! with comma-separated features. Floats are written with nine significant
//! digits, which round-trips every `f32` exactly.

use std::io::{BufRead, Write};

use super::{Cohort, EnvConfig, HiddenScorer, Outcome, PatientState, Trajectory, Transition};
use crate::error::{Error, Result};

const MAGIC: &str = "# jdebate-cohort 1";

pub(crate) fn fmt_f32(v: f32) -> String {
    format!("{v:.8e}")
}

pub(crate) fn fmt_features(v: &[f32]) -> String {
    v.iter().map(|&x| fmt_f32(x)).collect::<Vec<_>>().join(",")
}

pub(crate) fn parse_features(s: &str) -> Result<Vec<f32>> {
    s.split(',')
        .map(|x| x.parse::<f32>().map_err(|e| Error::Format(format!("feature {x:?}: {e}"))))
        .collect()
}

pub fn write_cohort<W: Write>(mut w: W, cohort: &Cohort) -> Result<()> {
    writeln!(w, "{MAGIC}")?;
    writeln!(w, "# config {}", serde_json::to_string(&cohort.config)?)?;
    writeln!(w, "# scorer {}", serde_json::to_string(&cohort.scorer)?)?;
    for t in &cohort.trajectories {
        for (i, tr) in t.transitions.iter().enumerate() {
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                t.id,
                i,
                fmt_features(tr.state.features()),
                fmt_features(tr.next_state.features()),
                tr.action,
                fmt_f32(tr.reward),
                u8::from(tr.terminal),
                tr.outcome.as_str()
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_cohort<R: BufRead>(r: R) -> Result<Cohort> {
    let mut lines = r.lines();
    let mut next_line = || -> Result<String> {
        lines
            .next()
            .ok_or_else(|| Error::Format("truncated cohort header".into()))?
            .map_err(Error::from)
    };
    if next_line()? != MAGIC {
        return Err(Error::Format("not a cohort file".into()));
    }
    let config: EnvConfig = header(&next_line()?, "# config ")?;
    let scorer: HiddenScorer = header(&next_line()?, "# scorer ")?;
    let mut trajectories: Vec<Trajectory> = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let bad = |what: &str| Error::Format(format!("record {}: {what}", n + 1));
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 8 {
            return Err(bad("expected 8 fields"));
        }
        let id: usize = f[0].parse().map_err(|_| bad("trajectory id"))?;
        let step: usize = f[1].parse().map_err(|_| bad("step"))?;
        let tr = Transition {
            state: PatientState::new(parse_features(f[2])?)?,
            next_state: PatientState::new(parse_features(f[3])?)?,
            action: f[4].parse().map_err(|_| bad("action"))?,
            reward: f[5].parse().map_err(|_| bad("reward"))?,
            terminal: match f[6] {
                "0" => false,
                "1" => true,
                _ => return Err(bad("terminal flag")),
            },
            outcome: Outcome::parse(f[7])?,
        };
        match trajectories.last_mut() {
            Some(t) if t.id == id => {
                if step != t.transitions.len() {
                    return Err(bad("steps out of order"));
                }
                t.transitions.push(tr);
            }
            _ => {
                if step != 0 {
                    return Err(bad("trajectory does not start at step 0"));
                }
                trajectories.push(Trajectory {
                    id,
                    transitions: vec![tr],
                });
            }
        }
    }
    let cohort = Cohort {
        config,
        scorer,
        trajectories,
    };
    cohort.validate()?;
    Ok(cohort)
}

fn header<T: serde::de::DeserializeOwned>(line: &str, prefix: &str) -> Result<T> {
    let body = line
        .strip_prefix(prefix)
        .ok_or_else(|| Error::Format(format!("expected header {prefix:?}")))?;
    Ok(serde_json::from_str(body)?)
}
