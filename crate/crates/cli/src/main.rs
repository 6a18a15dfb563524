use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use refvid_bench::remote::RemoteJudgeConfig;
use refvid_bench::JudgeErrorPolicy;
use refvid_cli::commands::{self, BenchArgs, JudgeSource};
use refvid_cli::config::{resolve, ExperimentConfig, Overrides};
use refvid_cli::corpus::gen_corpus;
use refvid_cli::error::{CliError, Result};
use refvid_cli::experiment::RefStrategy;

/// Toy experiments, data curation and benchmark scoring for
/// identity-conditioned video generation.
///
/// Settings come from defaults, then `--config`, then flags. Errors are
/// printed to stderr as one JSON line; exit codes are 0 success, 2 config
/// error, 3 I/O error, 4 contract or validation error.
#[derive(Parser)]
#[command(name = "refvid", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; keys it omits take their defaults.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed for every random choice; overrides `seed`.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Output directory; overrides `out_dir`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    None,
    RawCrop,
    Random,
    ViewpointAdaptive,
}

impl From<StrategyArg> for RefStrategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::None => RefStrategy::None,
            StrategyArg::RawCrop => RefStrategy::RawCrop,
            StrategyArg::Random => RefStrategy::Random,
            StrategyArg::ViewpointAdaptive => RefStrategy::ViewpointAdaptive,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    CountAsZero,
    Exclude,
}

impl From<PolicyArg> for JudgeErrorPolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::CountAsZero => JudgeErrorPolicy::CountAsZero,
            PolicyArg::Exclude => JudgeErrorPolicy::Exclude,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic corpus: reference renders, clips, captions, a
    /// candidate pool and curation records, under `<out>/corpus`.
    GenCorpus {
        #[command(flatten)]
        common: Common,
        /// Number of subjects; overrides `corpus.subjects`.
        #[arg(long, value_name = "N")]
        subjects: Option<usize>,
        /// Frames per clip; overrides `corpus.frames`.
        #[arg(long, value_name = "N")]
        frames: Option<usize>,
    },
    /// Train a toy model; writes `model.ckpt`, `loss.csv` and `train.json`.
    Train {
        #[command(flatten)]
        common: Common,
        /// Optimizer steps; overrides `train.steps`.
        #[arg(long, value_name = "N")]
        steps: Option<usize>,
        /// Reference sampling strategy; overrides `train.strategy`.
        #[arg(long, value_enum)]
        strategy: Option<StrategyArg>,
    },
    /// Generate clips for held-out subjects from three-view references;
    /// writes `samples/`.
    Sample {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to load [default: <out>/model.ckpt].
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Train and score the sampling and architecture ablations; writes
    /// `ablation.txt` and `ablation.json`.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Optimizer steps per model; overrides `train.steps`.
        #[arg(long, value_name = "N")]
        steps: Option<usize>,
    },
    /// Filter clip records through the coarse and fine stages; writes
    /// `kept.jsonl` and `audit.jsonl`.
    Curate {
        #[command(flatten)]
        common: Common,
        /// Clip records, one JSON object per line.
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
    },
    /// Tabulate viewpoint distributions of clip records; writes `stats.txt`
    /// and `stats.json`.
    Stats {
        #[command(flatten)]
        common: Common,
        /// Clip records, one JSON object per line.
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
    },
    /// Score generated videos; writes `bench.csv` and `bench.json`. Without
    /// `--verdicts` the judge is the service at WA_JUDGE_URL, authorised by
    /// WA_JUDGE_TOKEN.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Videos and reference banks, a JSON array.
        #[arg(long, value_name = "PATH")]
        inputs: PathBuf,
        /// Embedding fixture for face, video and text features.
        #[arg(long, value_name = "PATH")]
        embeddings: PathBuf,
        /// Judge verdict fixture, one JSON object per line.
        #[arg(long, value_name = "PATH")]
        verdicts: Option<PathBuf>,
        /// Treatment of failed judge calls; overrides `bench.policy`.
        #[arg(long, value_enum)]
        policy: Option<PolicyArg>,
    },
}

fn config(common: &Common, overrides: Overrides) -> Result<ExperimentConfig> {
    let overrides = Overrides {
        seed: common.seed,
        out_dir: common.out.clone(),
        ..overrides
    };
    resolve(common.config.as_deref(), &overrides)
}

fn print(value: &impl serde::Serialize) -> Result<()> {
    println!(
        "{}",
        serde_json::to_string(value).map_err(|e| CliError::Contract(e.to_string()))?
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenCorpus {
            common,
            subjects,
            frames,
        } => {
            let mut cfg = config(
                &common,
                Overrides {
                    subjects,
                    ..Default::default()
                },
            )?;
            if let Some(f) = frames {
                cfg.corpus.frames = f;
                cfg.validate()?;
            }
            print(&gen_corpus(&cfg)?)
        }
        Command::Train {
            common,
            steps,
            strategy,
        } => {
            let mut cfg = config(
                &common,
                Overrides {
                    steps,
                    ..Default::default()
                },
            )?;
            if let Some(s) = strategy {
                cfg.train.strategy = s.into();
            }
            print(&commands::cmd_train(&cfg)?)
        }
        Command::Sample { common, checkpoint } => {
            let cfg = config(&common, Overrides::default())?;
            let checkpoint = checkpoint.unwrap_or_else(|| cfg.out_dir.join("model.ckpt"));
            let rows = commands::cmd_sample(&cfg, &checkpoint)?;
            print(&serde_json::json!({ "samples": rows.len(), "dir": cfg.out_dir.join("samples") }))
        }
        Command::Ablate { common, steps } => {
            let cfg = config(
                &common,
                Overrides {
                    steps,
                    ..Default::default()
                },
            )?;
            let report = commands::cmd_ablate(&cfg)?;
            print!("{}", report.to_table());
            Ok(())
        }
        Command::Curate { common, input } => {
            let cfg = config(&common, Overrides::default())?;
            print(&commands::cmd_curate(&cfg, &input)?)
        }
        Command::Stats { common, input } => {
            let cfg = config(&common, Overrides::default())?;
            print!("{}", commands::cmd_stats(&cfg, &input)?.to_table());
            Ok(())
        }
        Command::Bench {
            common,
            inputs,
            embeddings,
            verdicts,
            policy,
        } => {
            let cfg = config(&common, Overrides::default())?;
            let judge = match verdicts {
                Some(path) => JudgeSource::Fixture(path),
                None => JudgeSource::Remote(RemoteJudgeConfig::from_env().ok_or_else(|| {
                    CliError::Config("no judge: pass --verdicts or set WA_JUDGE_URL".into())
                })?),
            };
            let args = BenchArgs {
                inputs,
                embeddings,
                judge,
                policy: policy.map(Into::into),
            };
            let report = commands::cmd_bench(&cfg, &args)?;
            let mut csv = Vec::new();
            report.write_csv(&mut csv)?;
            print!("{}", String::from_utf8_lossy(&csv));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.render().to_string();
            let first = msg
                .lines()
                .next()
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ");
            let err = CliError::Config(first.to_string());
            eprintln!("{}", err.to_line());
            return ExitCode::from(err.exit_code());
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_line());
            ExitCode::from(e.exit_code())
        }
    }
}
