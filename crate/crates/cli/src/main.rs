//! `jdebate`: runs the debate-reward pipeline stage by stage.
//!
//! Every stage reads its inputs from `--out`, writes its artifacts there and
//! records a manifest with content hashes under `--out/manifests`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use jdebate::pipeline::{Run, RunConfig, Scale, Stage};
use jdebate::{Error, Result};

#[derive(Parser)]
#[command(name = "jdebate", version, about = "Debate-based reward design for justifiable policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML file overlaid on the scale preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Artifact directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Preset the config file is overlaid on: desk or paper.
    #[arg(long, global = true, default_value = "desk")]
    scale: String,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic clinician cohort.
    GenCohort(Common),
    /// Build and split the preference dataset.
    GenPrefs(Common),
    /// Train the full-evidence and half-evidence judges.
    TrainJudge(Common),
    /// Train self-play, maxmin and isolated argumentative agents.
    TrainDebaters(Common),
    /// Train a confuser against each debater.
    TrainConfuser(Common),
    /// Train the behavior-cloning clinician policy.
    TrainBc(Common),
    /// Train the baseline and justifiable task policies.
    TrainPolicy(Common),
    /// Solve one test-split debate exactly and print its value and principal variation.
    SolveDebate {
        #[command(flatten)]
        common: Common,
        /// Index into the test split.
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
    /// Compute all metrics into metrics.csv.
    Evaluate(Common),
    /// Verify manifests and write report.txt.
    Report(Common),
    /// Run every stage in order.
    All(Common),
    /// Print the resolved configuration as TOML.
    ShowConfig(Common),
}

fn exit_code(e: &Error) -> u8 {
    match e.category() {
        "config" => 2,
        "artifact" => 3,
        "format" => 4,
        "io" => 5,
        "numeric" => 6,
        "game" => 7,
        _ => 1,
    }
}

fn load(c: &Common) -> Result<RunConfig> {
    let scale: Scale = c.scale.parse()?;
    let text = match &c.config {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
        None => String::new(),
    };
    let mut cfg = RunConfig::from_toml(&text, scale)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn stage(c: &Common, s: Stage) -> Result<()> {
    let mut run = Run::new(load(c)?, &c.out)?;
    run.run(s)?;
    eprintln!("{}: done ({})", s.name(), c.out.display());
    Ok(())
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenCohort(c) => stage(&c, Stage::GenCohort),
        Command::GenPrefs(c) => stage(&c, Stage::GenPrefs),
        Command::TrainJudge(c) => stage(&c, Stage::TrainJudge),
        Command::TrainDebaters(c) => stage(&c, Stage::TrainDebaters),
        Command::TrainConfuser(c) => stage(&c, Stage::TrainConfuser),
        Command::TrainBc(c) => stage(&c, Stage::TrainBc),
        Command::TrainPolicy(c) => stage(&c, Stage::TrainPolicy),
        Command::Evaluate(c) => stage(&c, Stage::Evaluate),
        Command::Report(c) => {
            let mut run = Run::new(load(&c)?, &c.out)?;
            run.run(Stage::Report)?;
            print!("{}", std::fs::read_to_string(run.path(jdebate::pipeline::artifact::REPORT))?);
            Ok(())
        }
        Command::SolveDebate { common, index } => {
            let mut run = Run::new(load(&common)?, &common.out)?;
            print!("{}", run.solve_debate(index)?);
            Ok(())
        }
        Command::All(c) => {
            for s in Stage::ALL {
                stage(&c, s)?;
            }
            Ok(())
        }
        Command::ShowConfig(c) => {
            print!("{}", load(&c)?.to_toml()?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.category());
            ExitCode::from(exit_code(&e))
        }
    }
}
