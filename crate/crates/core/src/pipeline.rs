//! End-to-end pipeline: the run configuration (TOML, desk or paper scale),
//! stages that read and write artifacts in an output directory, and
//! provenance manifests recording the content hash of every input and
//! output.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::argagents::{
    train_confuser, train_isolated, train_maxmin, train_selfplay, write_curves, ArgPolicy, IsolatedMode, PpoConfig,
    Schedule, TargetKind,
};
use crate::debate::{solve_exact, DebateContext, GameConfig};
use crate::error::{Error, Result};
use crate::eval::{
    evidence_accuracy, feature_means, preference_breakdown, preference_recovery, shapley_evidence, wis_evaluate,
    wis_evaluate_bc, MetricsReport, Proposer, WisConfig,
};
use crate::judge::{train_judge, JudgeModel, JudgeTrainConfig};
use crate::neural::persist::Metadata;
use crate::prefdata::{
    build_preferences, read_dataset, split, trajectory_splits, write_dataset, DatasetStrategy, PreferenceDataset, Split,
};
use crate::rng::{derive_seed, substream, tag};
use crate::stats::Estimate;
use crate::synthenv::{generate_cohort, read_cohort, write_cohort, Cohort, EnvConfig};
use crate::taskpolicy::{
    debate_rewards, episodes_from_cohort, train_bc, train_policy, BcConfig, BcPolicy, DebateSource, DqnConfig,
    Episode, QNet,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Desk,
    Paper,
}

impl std::str::FromStr for Scale {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Scale::Desk),
            "paper" => Ok(Scale::Paper),
            _ => Err(Error::Config(format!("unknown scale {s:?} (expected desk or paper)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrefsConfig {
    pub strategy: DatasetStrategy,
}

impl Default for PrefsConfig {
    fn default() -> Self {
        PrefsConfig {
            strategy: DatasetStrategy::Random,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    /// The self-play debate agent plays both sides.
    Agents,
    /// Backward induction (small `D^L` only).
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    /// Mixing weights to train; `0` (the baseline) is always trained first.
    pub lambdas: Vec<f64>,
    pub debate_source: SourceKind,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            lambdas: vec![0.25, 0.5, 0.75, 1.0],
            debate_source: SourceKind::Agents,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Games per preference-recovery metric, drawn in order from the test split.
    pub n_games: usize,
    /// Shapley-evidence baseline (needs `D ≤ 12`).
    pub shapley: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n_games: 500,
            shapley: true,
        }
    }
}

/// Every parameter of a run. Unknown keys are rejected. `Default` is the
/// desk scale; [`RunConfig::paper`] the paper scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub env: EnvConfig,
    pub prefs: PrefsConfig,
    /// `evidence_size` must equal `game.turns`.
    pub judge: JudgeTrainConfig,
    pub game: GameConfig,
    pub ppo: PpoConfig,
    pub confuser_ppo: PpoConfig,
    pub schedule: Schedule,
    /// `lambda` is set per run from `policy.lambdas`.
    pub dqn: DqnConfig,
    pub policy: PolicyConfig,
    pub bc: BcConfig,
    pub wis: WisConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            env: EnvConfig::default(),
            prefs: PrefsConfig::default(),
            judge: JudgeTrainConfig {
                epochs: 20,
                evidence_size: 4,
                ..JudgeTrainConfig::default()
            },
            game: GameConfig {
                turns: 4,
                ..GameConfig::default()
            },
            ppo: PpoConfig::default(),
            confuser_ppo: PpoConfig::confuser(),
            schedule: Schedule::default(),
            dqn: DqnConfig {
                iterations: 3_000,
                ..DqnConfig::default()
            },
            policy: PolicyConfig::default(),
            bc: BcConfig::default(),
            wis: WisConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn desk() -> Self {
        RunConfig::default()
    }

    /// Paper-sized budgets on a 44-feature cohort.
    pub fn paper() -> Self {
        let mut c = RunConfig::default();
        c.env.state_dim = 44;
        c.env.n_patients = 5_000;
        c.game.turns = 6;
        c.judge = JudgeTrainConfig::default();
        c.schedule = Schedule {
            generations: 500,
            selfplay_steps: 100_000,
            main_steps: 4_000,
            opponent_steps: 100_000,
            single_steps: 1_000_000,
            ..Schedule::default()
        };
        c.dqn = DqnConfig::default();
        c.eval = EvalConfig {
            n_games: 1_000,
            shapley: false,
        };
        c
    }

    pub fn preset(scale: Scale) -> Self {
        match scale {
            Scale::Desk => RunConfig::desk(),
            Scale::Paper => RunConfig::paper(),
        }
    }

    /// Overlays the TOML document `text` on the `scale` preset.
    pub fn from_toml(text: &str, scale: Scale) -> Result<Self> {
        let over: toml::Table = text.parse().map_err(|e| Error::Config(format!("config: {e}")))?;
        let base = toml::Table::try_from(RunConfig::preset(scale)).map_err(|e| Error::Config(e.to_string()))?;
        let merged = merge(base, over);
        let cfg: RunConfig = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("config: {}", e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.game.validate(self.env.state_dim)?;
        if self.judge.evidence_size != self.game.turns {
            return Err(Error::Config(format!(
                "judge evidence size {} differs from debate length {}",
                self.judge.evidence_size, self.game.turns
            )));
        }
        self.ppo.validate()?;
        self.confuser_ppo.validate()?;
        self.schedule.validate()?;
        self.dqn.validate()?;
        if self.policy.lambdas.iter().any(|l| !(*l > 0.0 && *l <= 1.0)) {
            return Err(Error::Config("policy lambdas must lie in (0, 1]".into()));
        }
        if self.eval.n_games == 0 {
            return Err(Error::Config("eval.n_games must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(self.to_toml()?.as_bytes()))
    }
}

fn merge(mut base: toml::Table, over: toml::Table) -> toml::Table {
    for (k, v) in over {
        match (base.remove(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => {
                base.insert(k, toml::Value::Table(merge(b, o)));
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
    base
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_hash(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// Pipeline stages, in dependency order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    GenCohort,
    GenPrefs,
    TrainJudge,
    TrainDebaters,
    TrainConfuser,
    TrainBc,
    TrainPolicy,
    Evaluate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::GenCohort,
        Stage::GenPrefs,
        Stage::TrainJudge,
        Stage::TrainDebaters,
        Stage::TrainConfuser,
        Stage::TrainBc,
        Stage::TrainPolicy,
        Stage::Evaluate,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::GenCohort => "gen-cohort",
            Stage::GenPrefs => "gen-prefs",
            Stage::TrainJudge => "train-judge",
            Stage::TrainDebaters => "train-debaters",
            Stage::TrainConfuser => "train-confuser",
            Stage::TrainBc => "train-bc",
            Stage::TrainPolicy => "train-policy",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }
}

pub mod artifact {
    pub const COHORT: &str = "cohort.txt";
    pub const PREFS: &str = "prefs.txt";
    pub const JUDGE: &str = "judge.bin";
    pub const JUDGE_HALF: &str = "judge_half.bin";
    pub const JUDGE_CURVE: &str = "judge_curve.csv";
    pub const SELFPLAY: &str = "selfplay.bin";
    pub const MAXMIN_MAIN: &str = "maxmin_main.bin";
    pub const MAXMIN_OPPONENT: &str = "maxmin_opponent.bin";
    pub const ISOLATED: &str = "isolated.bin";
    pub const DEBATER_CURVES: &str = "debater_curves.csv";
    pub const CONFUSER_SELFPLAY: &str = "confuser_selfplay.bin";
    pub const CONFUSER_MAXMIN: &str = "confuser_maxmin.bin";
    pub const CONFUSER_ISOLATED: &str = "confuser_isolated.bin";
    pub const CONFUSER_CURVES: &str = "confuser_curves.csv";
    pub const BC: &str = "bc.bin";
    pub const DQN_LOG: &str = "dqn_log.csv";
    pub const METRICS: &str = "metrics.csv";
    pub const REPORT: &str = "report.txt";

    pub fn policy(lambda: f64) -> String {
        format!("policy_l{lambda:.2}.bin")
    }
}

/// Stage that produces each artifact, for diagnostics.
fn producer(name: &str) -> &'static str {
    use artifact::*;
    match name {
        COHORT => "gen-cohort",
        PREFS => "gen-prefs",
        JUDGE | JUDGE_HALF => "train-judge",
        SELFPLAY | MAXMIN_MAIN | MAXMIN_OPPONENT | ISOLATED => "train-debaters",
        CONFUSER_SELFPLAY | CONFUSER_MAXMIN | CONFUSER_ISOLATED => "train-confuser",
        BC => "train-bc",
        METRICS => "evaluate",
        n if n.starts_with("policy_l") => "train-policy",
        _ => "an earlier stage",
    }
}

/// Inputs and outputs of one stage run, with content hashes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub seed: u64,
    pub config_sha256: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

/// A run rooted at an output directory.
pub struct Run {
    pub cfg: RunConfig,
    pub out: PathBuf,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
}

impl Run {
    pub fn new(cfg: RunConfig, out: impl Into<PathBuf>) -> Result<Self> {
        cfg.validate()?;
        let out = out.into();
        fs::create_dir_all(out.join("manifests"))?;
        Ok(Run {
            cfg,
            out,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Path of a required upstream artifact, recording its hash.
    fn input(&mut self, name: &str) -> Result<PathBuf> {
        let p = self.path(name);
        if !p.is_file() {
            return Err(Error::MissingArtifact(format!(
                "{} (produced by `{}`)",
                p.display(),
                producer(name)
            )));
        }
        self.inputs.insert(name.to_string(), file_hash(&p)?);
        Ok(p)
    }

    fn output(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.path(name)
    }

    fn seed(&self, label: &str) -> u64 {
        derive_seed(self.cfg.seed, tag(label))
    }

    fn write_manifest(&mut self, stage: Stage) -> Result<()> {
        let mut outputs = BTreeMap::new();
        for name in &self.outputs {
            outputs.insert(name.clone(), file_hash(&self.path(name))?);
        }
        let m = Manifest {
            stage: stage.name().to_string(),
            seed: self.cfg.seed,
            config_sha256: self.cfg.hash()?,
            inputs: std::mem::take(&mut self.inputs),
            outputs,
        };
        self.outputs.clear();
        let path = self.out.join("manifests").join(format!("{}.json", stage.name()));
        fs::write(path, serde_json::to_string_pretty(&m)? + "\n")?;
        Ok(())
    }

    pub fn run(&mut self, stage: Stage) -> Result<()> {
        self.inputs.clear();
        self.outputs.clear();
        match stage {
            Stage::GenCohort => self.gen_cohort()?,
            Stage::GenPrefs => self.gen_prefs()?,
            Stage::TrainJudge => self.train_judge()?,
            Stage::TrainDebaters => self.train_debaters()?,
            Stage::TrainConfuser => self.train_confusers()?,
            Stage::TrainBc => self.train_bc()?,
            Stage::TrainPolicy => self.train_policies()?,
            Stage::Evaluate => {
                self.evaluate()?;
            }
            Stage::Report => {
                self.report()?;
            }
        }
        self.write_manifest(stage)
    }

    pub fn run_all(&mut self) -> Result<()> {
        for s in Stage::ALL {
            self.run(s)?;
        }
        Ok(())
    }

    fn load_cohort(&mut self) -> Result<Cohort> {
        let p = self.input(artifact::COHORT)?;
        read_cohort(BufReader::new(File::open(p)?))
    }

    fn load_prefs(&mut self) -> Result<PreferenceDataset> {
        let p = self.input(artifact::PREFS)?;
        read_dataset(BufReader::new(File::open(p)?))
    }

    fn load_judge(&mut self, name: &str) -> Result<JudgeModel> {
        let p = self.input(name)?;
        Ok(JudgeModel::load(&p)?.0)
    }

    fn load_agent(&mut self, name: &str) -> Result<ArgPolicy> {
        let p = self.input(name)?;
        Ok(ArgPolicy::load(&p)?.0)
    }

    fn load_qnet(&mut self, lambda: f64) -> Result<QNet> {
        let p = self.input(&artifact::policy(lambda))?;
        Ok(QNet::load(&p)?.0)
    }

    /// Cohort episodes of one split, using the same partition as the
    /// preference dataset.
    pub fn episodes(&self, cohort: &Cohort, which: Split) -> Result<Vec<Episode>> {
        let ids: Vec<usize> = cohort.trajectories.iter().map(|t| t.id).collect();
        let splits = trajectory_splits(&ids, self.seed("split"))?;
        Ok(episodes_from_cohort(cohort, Some((&splits, which))))
    }

    fn gen_cohort(&mut self) -> Result<()> {
        let env = EnvConfig {
            seed: self.seed("cohort"),
            ..self.cfg.env.clone()
        };
        let cohort = generate_cohort(&env)?;
        let p = self.output(artifact::COHORT);
        let mut w = BufWriter::new(File::create(p)?);
        write_cohort(&mut w, &cohort)?;
        w.flush()?;
        Ok(())
    }

    fn gen_prefs(&mut self) -> Result<()> {
        let cohort = self.load_cohort()?;
        let ds = build_preferences(&cohort, self.cfg.prefs.strategy, self.seed("prefs"))?;
        let ds = split(ds, self.seed("split"))?;
        let p = self.output(artifact::PREFS);
        let mut w = BufWriter::new(File::create(p)?);
        write_dataset(&mut w, &ds)?;
        w.flush()?;
        Ok(())
    }

    fn train_judge(&mut self) -> Result<()> {
        let ds = self.load_prefs()?;
        let l = self.cfg.game.turns;
        let mut curve = String::from("judge,epoch,train_loss,val_accuracy\n");
        for (name, size, label) in [(artifact::JUDGE, l, "full"), (artifact::JUDGE_HALF, l / 2, "half")] {
            let cfg = JudgeTrainConfig {
                evidence_size: size,
                ..self.cfg.judge.clone()
            };
            let (judge, epochs) = train_judge(&ds, &cfg, self.seed(&format!("judge-{label}")))?;
            for e in &epochs {
                curve += &format!("{label},{},{:.6},{:.6}\n", e.epoch, e.train_loss, e.val_accuracy);
            }
            let mut meta = Metadata::new();
            meta.insert("evidence_size".into(), size.to_string());
            meta.insert("strategy".into(), ds.strategy.to_string());
            judge.save(&self.output(name), &meta)?;
        }
        fs::write(self.output(artifact::JUDGE_CURVE), curve)?;
        Ok(())
    }

    fn train_debaters(&mut self) -> Result<()> {
        let ds = self.load_prefs()?;
        let judge = self.load_judge(artifact::JUDGE)?;
        let half = self.load_judge(artifact::JUDGE_HALF)?;
        let (game, ppo, sched) = (self.cfg.game.clone(), self.cfg.ppo.clone(), self.cfg.schedule.clone());
        let sp = train_selfplay(&ds, &judge, &game, &ppo, &sched, self.seed("selfplay"), None)?;
        sp.policy.save(&self.output(artifact::SELFPLAY), &Metadata::new())?;
        let mm = train_maxmin(&ds, &judge, &game, &ppo, &sched, self.seed("maxmin"), None)?;
        mm.main.save(&self.output(artifact::MAXMIN_MAIN), &Metadata::new())?;
        mm.opponent.save(&self.output(artifact::MAXMIN_OPPONENT), &Metadata::new())?;
        let iso = train_isolated(
            &ds,
            &half,
            IsolatedMode::Precommit,
            &game,
            &ppo,
            sched.single_steps,
            self.seed("isolated"),
        )?;
        iso.policy.save(&self.output(artifact::ISOLATED), &Metadata::new())?;
        let mut rows = sp.curve;
        rows.extend(mm.curve);
        rows.extend(iso.curve);
        let mut w = BufWriter::new(File::create(self.output(artifact::DEBATER_CURVES))?);
        write_curves(&mut w, &rows)
    }

    fn train_confusers(&mut self) -> Result<()> {
        let ds = self.load_prefs()?;
        let judge = self.load_judge(artifact::JUDGE)?;
        let mut rows = Vec::new();
        for (target, kind, out) in [
            (artifact::SELFPLAY, TargetKind::Debate, artifact::CONFUSER_SELFPLAY),
            (artifact::MAXMIN_MAIN, TargetKind::Debate, artifact::CONFUSER_MAXMIN),
            (artifact::ISOLATED, TargetKind::Precommit, artifact::CONFUSER_ISOLATED),
        ] {
            let t = self.load_agent(target)?;
            let c = train_confuser(
                &t,
                kind,
                &ds,
                &judge,
                &self.cfg.game,
                &self.cfg.confuser_ppo,
                self.cfg.schedule.single_steps,
                self.seed(out),
            )?;
            c.policy.save(&self.output(out), &Metadata::new())?;
            rows.extend(c.curve);
        }
        let mut w = BufWriter::new(File::create(self.output(artifact::CONFUSER_CURVES))?);
        write_curves(&mut w, &rows)
    }

    fn train_bc(&mut self) -> Result<()> {
        let cohort = self.load_cohort()?;
        let train = self.episodes(&cohort, Split::Train)?;
        let bc = train_bc(&train, &self.cfg.bc, self.seed("bc"))?;
        bc.save(&self.output(artifact::BC), &Metadata::new())
    }

    fn train_policies(&mut self) -> Result<()> {
        let cohort = self.load_cohort()?;
        let judge = self.load_judge(artifact::JUDGE)?;
        let bc = BcPolicy::load(&self.input(artifact::BC)?)?.0;
        let agent = match self.cfg.policy.debate_source {
            SourceKind::Agents => Some(self.load_agent(artifact::SELFPLAY)?),
            SourceKind::Exact => None,
        };
        let train = self.episodes(&cohort, Split::Train)?;
        let test = self.episodes(&cohort, Split::Test)?;
        let mut log = String::from("lambda,iteration,loss,wis\n");
        let (wis_cfg, dqn_cfg, run_seed) = (self.cfg.wis.clone(), self.cfg.dqn.clone(), self.cfg.seed);
        let fit = |lambda: f64, rewards: Option<&[Vec<f64>]>, log: &mut String| -> Result<QNet> {
            let cfg = DqnConfig {
                lambda,
                ..dqn_cfg.clone()
            };
            let seed = derive_seed(run_seed, tag(&format!("dqn-{lambda:.2}")));
            let t = train_policy(&train, rewards, &cfg, seed, |_, net| {
                Ok(Some(wis_evaluate(net, &bc, &test, &wis_cfg)?.value))
            })?;
            for r in &t.log {
                *log += &format!("{lambda:.2},{},{:.6},{:.6}\n", r.iteration, r.loss, r.eval.unwrap_or(f64::NAN));
            }
            Ok(t.net)
        };
        let baseline = fit(0.0, None, &mut log)?;
        baseline.save(&self.output(&artifact::policy(0.0)), &Metadata::new())?;
        let lambdas = self.cfg.policy.lambdas.clone();
        if !lambdas.is_empty() {
            let source = match &agent {
                Some(a) => DebateSource::Agents(a),
                None => DebateSource::Exact,
            };
            let rd = debate_rewards(&train, &baseline, &judge, &self.cfg.game, source, self.seed("debate-rewards"))?;
            for &l in &lambdas {
                let net = fit(l, Some(&rd), &mut log)?;
                net.save(&self.output(&artifact::policy(l)), &Metadata::new())?;
            }
        }
        fs::write(self.output(artifact::DQN_LOG), log)?;
        Ok(())
    }

    /// Computes every metric and writes `metrics.csv`.
    pub fn evaluate(&mut self) -> Result<MetricsReport> {
        let seed = self.cfg.seed;
        let cohort = self.load_cohort()?;
        let ds = self.load_prefs()?;
        let judge = self.load_judge(artifact::JUDGE)?;
        let sp = self.load_agent(artifact::SELFPLAY)?;
        let main = self.load_agent(artifact::MAXMIN_MAIN)?;
        let opp = self.load_agent(artifact::MAXMIN_OPPONENT)?;
        let iso = self.load_agent(artifact::ISOLATED)?;
        let c_sp = self.load_agent(artifact::CONFUSER_SELFPLAY)?;
        let c_mm = self.load_agent(artifact::CONFUSER_MAXMIN)?;
        let c_iso = self.load_agent(artifact::CONFUSER_ISOLATED)?;
        let bc = BcPolicy::load(&self.input(artifact::BC)?)?.0;
        let baseline = self.load_qnet(0.0)?;
        let lambdas = self.cfg.policy.lambdas.clone();
        let mut nets = Vec::new();
        for &l in &lambdas {
            nets.push((l, self.load_qnet(l)?));
        }

        let game = self.cfg.game.clone();
        let n = self.cfg.eval.n_games;
        let test = ds.split_vec(Split::Test);
        let mut report = MetricsReport::default();
        let mut rng = substream(seed, "evaluate");

        let proposers = [
            Proposer::Random,
            Proposer::Isolated(&iso),
            Proposer::SelfPlay(&sp),
            Proposer::Maxmin {
                main: &main,
                opponent: &opp,
            },
        ];
        for p in proposers {
            let e = preference_recovery(&judge, p, None, &test, n, &game, &mut rng)?;
            report.push(format!("recovery_{}", p.name()), e, seed);
        }
        for (p, c) in [(proposers[1], &c_iso), (proposers[2], &c_sp), (proposers[3], &c_mm)] {
            let e = preference_recovery(&judge, p, Some(c), &test, n, &game, &mut rng)?;
            report.push(format!("recovery_{}_confuser", p.name()), e, seed);
        }

        let train_states: Vec<&[f32]> = ds.split_iter(Split::Train).map(|t| t.state.features()).collect();
        if self.cfg.eval.shapley && ds.state_dim <= crate::eval::SHAPLEY_MAX_DIM {
            let means = feature_means(train_states.iter().copied())?;
            let games: Vec<_> = test.iter().take(n).cloned().collect();
            let e = evidence_accuracy(&judge, &games, |t| {
                Ok(shapley_evidence(&baseline, t.state.features(), t.preferred(), &means, game.turns)?.0)
            })?;
            report.push("recovery_shapley", e, seed);
        }

        let test_eps = self.episodes(&cohort, Split::Test)?;
        let wis_bc = wis_evaluate_bc(&bc, &test_eps, &self.cfg.wis)?;
        report.push("wis_bc", point(wis_bc.value, test_eps.len()), seed);
        let wis0 = wis_evaluate(&baseline, &bc, &test_eps, &self.cfg.wis)?;
        report.push("wis_l0.00", point(wis0.value, test_eps.len()), seed);
        report.push("ess_l0.00", point(wis0.ess, test_eps.len()), seed);

        let states: Vec<&[f32]> = test_eps.iter().flat_map(|e| e.steps.iter().map(|s| s.state.as_slice())).collect();
        let source = match self.cfg.policy.debate_source {
            SourceKind::Agents => DebateSource::Agents(&sp),
            SourceKind::Exact => DebateSource::Exact,
        };
        for (l, net) in &nets {
            let w = wis_evaluate(net, &bc, &test_eps, &self.cfg.wis)?;
            report.push(format!("wis_l{l:.2}"), point(w.value, test_eps.len()), seed);
            report.push(format!("ess_l{l:.2}"), point(w.ess, test_eps.len()), seed);
            let b = preference_breakdown(net, &baseline, &judge, source, &states, &game, &mut rng)?;
            report.push(format!("jp_l{l:.2}"), b.jp, seed);
            report.push(format!("bp_l{l:.2}"), b.bp, seed);
            report.push(format!("ep_l{l:.2}"), b.ep, seed);
            report.push(format!("preferred_l{l:.2}"), b.preferred, seed);
        }

        let mut w = BufWriter::new(File::create(self.output(artifact::METRICS))?);
        report.write_csv(&mut w)?;
        w.flush()?;
        Ok(report)
    }

    /// Checks every manifest against the current files and renders the metrics.
    pub fn report(&mut self) -> Result<String> {
        verify_manifests(&self.out)?;
        let p = self.input(artifact::METRICS)?;
        let metrics = MetricsReport::read_csv(&fs::read_to_string(p)?)?;
        let mut text = format!("seed {}\n{:<28} {:>10} {:>22} {:>6}\n", self.cfg.seed, "metric", "estimate", "±2 SE", "n");
        for r in &metrics.rows {
            text += &format!(
                "{:<28} {:>10.4} [{:>9.4}, {:>9.4}] {:>6}\n",
                r.metric,
                r.estimate,
                r.lower(),
                r.upper(),
                r.n
            );
        }
        text += &format!(
            "WIS evaluation policy: epsilon-greedy (epsilon = {}), behavior floor {}\n",
            self.cfg.wis.epsilon, self.cfg.wis.bc_floor
        );
        fs::write(self.output(artifact::REPORT), &text)?;
        Ok(text)
    }

    /// Exact debate on test tuple `index`: value and principal variation.
    pub fn solve_debate(&mut self, index: usize) -> Result<String> {
        let ds = self.load_prefs()?;
        let judge = self.load_judge(artifact::JUDGE)?;
        let test = ds.split_vec(Split::Test);
        let t = test
            .get(index)
            .ok_or_else(|| Error::InvalidArgument(format!("test split has {} tuples, index {index}", test.len())))?;
        let ctx = DebateContext::new(t.state.clone(), t.preferred(), t.rejected())?;
        let sol = solve_exact(&ctx, &judge, &self.cfg.game)?;
        Ok(format!(
            "context: state {:?}, a_first {} (preferred), a_second {}\nvalue {}\nprincipal variation {:?}\n",
            t.state.features(),
            ctx.a_first,
            ctx.a_second,
            sol.value,
            sol.principal_variation
        ))
    }
}

fn point(v: f64, n: usize) -> Estimate {
    Estimate {
        estimate: v,
        se: 0.0,
        n,
    }
}

/// Fails with [`Error::StaleArtifact`] if any recorded input or output of
/// any manifest no longer matches the file on disk.
pub fn verify_manifests(out: &Path) -> Result<()> {
    let dir = out.join("manifests");
    let mut paths: Vec<PathBuf> = match fs::read_dir(&dir) {
        Ok(rd) => rd.filter_map(|e| e.ok().map(|e| e.path())).collect(),
        Err(_) => return Err(Error::MissingArtifact(format!("{}", dir.display()))),
    };
    paths.sort();
    for p in paths {
        if p.extension().and_then(|e| e.to_str()) != Some("json") {
            continue;
        }
        let m: Manifest = serde_json::from_str(&fs::read_to_string(&p)?)?;
        if m.stage == Stage::Report.name() {
            continue;
        }
        for (name, recorded) in m.inputs.iter().chain(&m.outputs) {
            let f = out.join(name);
            if !f.is_file() {
                return Err(Error::MissingArtifact(format!("{} (recorded by {})", f.display(), m.stage)));
            }
            let found = file_hash(&f)?;
            if &found != recorded {
                return Err(Error::StaleArtifact {
                    path: f.display().to_string(),
                    recorded: recorded.clone(),
                    found,
                });
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_desk_preset() {
        assert_eq!(RunConfig::from_toml("", Scale::Desk).unwrap(), RunConfig::desk());
        assert_eq!(RunConfig::from_toml("", Scale::Paper).unwrap(), RunConfig::paper());
    }

    #[test]
    fn overrides_merge_into_preset() {
        let c = RunConfig::from_toml("seed = 7\n[env]\nn_patients = 50\n[game]\nutility = \"difference\"\n", Scale::Desk)
            .unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.env.n_patients, 50);
        assert_eq!(c.env.state_dim, 8);
        assert_eq!(c.game.turns, 4);
        assert_eq!(c.game.utility, crate::debate::UtilityKind::Difference);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(RunConfig::from_toml("sed = 1\n", Scale::Desk), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml("[env]\nfoo = 1\n", Scale::Desk), Err(Error::Config(_))));
    }

    #[test]
    fn mismatched_evidence_size_rejected() {
        assert!(RunConfig::from_toml("[game]\nturns = 6\n", Scale::Desk).is_err());
        assert!(RunConfig::from_toml("[game]\nturns = 6\n[judge]\nevidence_size = 6\n", Scale::Desk).is_ok());
    }

    #[test]
    fn toml_round_trip() {
        let c = RunConfig::paper();
        assert_eq!(RunConfig::from_toml(&c.to_toml().unwrap(), Scale::Desk).unwrap(), c);
    }

    #[test]
    fn missing_input_names_producer() {
        let dir = tempfile::tempdir().unwrap();
        let mut run = Run::new(RunConfig::desk(), dir.path()).unwrap();
        let err = run.run(Stage::GenPrefs).unwrap_err();
        assert!(matches!(&err, Error::MissingArtifact(m) if m.contains("cohort.txt") && m.contains("gen-cohort")));
    }

    #[test]
    fn manifests_detect_changes() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::desk();
        cfg.env.n_patients = 20;
        let mut run = Run::new(cfg, dir.path()).unwrap();
        run.run(Stage::GenCohort).unwrap();
        run.run(Stage::GenPrefs).unwrap();
        verify_manifests(dir.path()).unwrap();
        let m: Manifest =
            serde_json::from_str(&fs::read_to_string(dir.path().join("manifests/gen-prefs.json")).unwrap()).unwrap();
        assert!(m.inputs.contains_key(artifact::COHORT));
        assert!(m.outputs.contains_key(artifact::PREFS));
        fs::write(dir.path().join(artifact::COHORT), "tampered").unwrap();
        assert!(matches!(verify_manifests(dir.path()), Err(Error::StaleArtifact { .. })));
    }
}
