//! Command-line front end: `fit`, `train`, `eval`, `sweep`, and `trace`.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use totsched::channel::DistanceUnit;
use totsched::config::ExperimentConfig;
use totsched::dsac::{metrics_to_csv, train_dsac, ActorQMode, TrainOutput};
use totsched::env::Env;
use totsched::genai::{fit_delay, fit_quality, FitSample};
use totsched::harness::{
    evaluate, run_episode, run_sweep, sweep_rows_to_csv, train_ddqn, train_sac_mlp, Policy,
    PolicyKind, TraceReport, EVAL_CSV_HEADER,
};
use totsched::rng::sub_seed;
use totsched::{Error, Result};

#[derive(Parser)]
#[command(
    name = "totsched",
    version,
    about = "Edge-network simulator and trainers for tree-of-thoughts generation scheduling"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// Experiment config file (JSON); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Interpret link distances in kilometers or literal meters.
    #[arg(long, value_parser = parse_distance_unit)]
    distance_unit: Option<DistanceUnit>,
    /// Report the raw delay increment as the reward instead of its
    /// negation.
    #[arg(long)]
    literal_reward: bool,
}

fn parse_distance_unit(s: &str) -> Result<DistanceUnit> {
    s.parse()
}

fn parse_actor_q(s: &str) -> Result<ActorQMode> {
    s.parse()
}

fn parse_policy(s: &str) -> Result<PolicyKind> {
    s.parse()
}

#[derive(Subcommand)]
enum Command {
    /// Fit generation-law constants from a measurement CSV
    /// (`tokens,score` or `tokens,delay_s`).
    Fit {
        /// Input CSV path.
        #[arg(long)]
        input: PathBuf,
        /// Force the law to fit; auto-detected from the header otherwise.
        #[arg(long, value_parser = ["quality", "delay"])]
        kind: Option<String>,
        /// Score ceiling for the quality law.
        #[arg(long, default_value_t = 10.0)]
        score_max: f64,
        /// Output JSON path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a scheduler and write metrics plus a checkpoint.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Algorithm to train.
        #[arg(long, default_value = "dsac", value_parser = ["dsac", "sac_mlp", "ddqn"])]
        algo: String,
        /// Override both environment and trainer seeds.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the episode count.
        #[arg(long)]
        episodes: Option<usize>,
        /// Critic feeding the actor objective.
        #[arg(long, value_parser = parse_actor_q)]
        actor_q: Option<ActorQMode>,
        /// Output directory for metrics.csv and checkpoint.ckpt.
        #[arg(long, default_value = "runs")]
        out_dir: PathBuf,
    },
    /// Evaluate a policy greedily over a seed list.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        /// Policy to evaluate.
        #[arg(long, value_parser = parse_policy)]
        policy: PolicyKind,
        /// Checkpoint path (required for learned policies).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated seeds.
        #[arg(long, default_value = "0", value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Output CSV path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the sweep described by the config's `sweep` section.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        /// Include per-decision wall-clock in the CSV (breaks bit-for-bit
        /// reproducibility of the output).
        #[arg(long)]
        timing: bool,
    },
    /// Emit one episode's per-thought JSON timeline.
    Trace {
        #[command(flatten)]
        config: ConfigArgs,
        /// Policy driving the episode.
        #[arg(long, default_value = "local_only", value_parser = parse_policy)]
        policy: PolicyKind,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Environment seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output JSON path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli.command) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn load_config(args: &ConfigArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(unit) = args.distance_unit {
        cfg.env.channel.distance_unit = unit;
    }
    if args.literal_reward {
        cfg.env.literal_reward = true;
    }
    Ok(cfg)
}

fn write_or_print(out: Option<&Path>, content: &str) -> Result<()> {
    match out {
        Some(path) => {
            if let Some(parent) = path.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)?;
                }
            }
            std::fs::write(path, content)?;
            Ok(())
        }
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Fit {
            input,
            kind,
            score_max,
            out,
        } => {
            let (samples, detected) = read_fit_csv(&input)?;
            let kind = kind.or(detected).ok_or_else(|| {
                Error::Config(
                    "cannot detect the law from the header; pass --kind quality|delay".into(),
                )
            })?;
            let json = match kind.as_str() {
                "quality" => {
                    let fit = fit_quality(&samples, score_max)?;
                    serde_json::to_string_pretty(&fit)?
                }
                _ => {
                    let fit = fit_delay(&samples)?;
                    serde_json::to_string_pretty(&fit)?
                }
            };
            write_or_print(out.as_deref(), &format!("{json}\n"))
        }
        Command::Train {
            config,
            algo,
            seed,
            episodes,
            actor_q,
            out_dir,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(seed) = seed {
                cfg.env.seed = seed;
                cfg.train.seed = seed;
            }
            if let Some(episodes) = episodes {
                cfg.train.episodes = episodes;
            }
            if let Some(mode) = actor_q {
                cfg.train.actor_q = mode;
            }
            cfg.validate()?;
            let TrainOutput {
                metrics,
                checkpoint,
            } = match algo.as_str() {
                "dsac" => train_dsac(&cfg.env, &cfg.train)?,
                "sac_mlp" => train_sac_mlp(&cfg.env, &cfg.train)?,
                _ => train_ddqn(&cfg.env, &cfg.train)?,
            };
            std::fs::create_dir_all(&out_dir)?;
            let metrics_path = out_dir.join("metrics.csv");
            std::fs::write(&metrics_path, metrics_to_csv(&metrics))?;
            let ckpt_path = out_dir.join("checkpoint.ckpt");
            checkpoint.save(&ckpt_path)?;
            let last = metrics.last().expect("at least one episode");
            println!(
                "trained {algo} for {} episodes: final t_tot {:.3} s, reward {:.3}",
                metrics.len(),
                last.t_tot_s,
                last.reward_sum
            );
            println!("metrics: {}", metrics_path.display());
            println!("checkpoint: {}", ckpt_path.display());
            Ok(())
        }
        Command::Eval {
            config,
            policy,
            checkpoint,
            seeds,
            out,
        } => {
            let cfg = load_config(&config)?;
            cfg.validate()?;
            let rows = evaluate(policy, checkpoint.as_deref(), &cfg.env, &seeds)?;
            let mut csv = String::from(EVAL_CSV_HEADER);
            csv.push('\n');
            for r in &rows {
                csv.push_str(&r.csv_row());
                csv.push('\n');
            }
            write_or_print(out.as_deref(), &csv)
        }
        Command::Sweep {
            config,
            out,
            timing,
        } => {
            let cfg = load_config(&config)?;
            cfg.validate()?;
            let spec = cfg
                .sweep
                .as_ref()
                .ok_or_else(|| Error::Config("config has no `sweep` section".into()))?;
            let rows = run_sweep(spec, &cfg.env, timing)?;
            write_or_print(Some(&out), &sweep_rows_to_csv(&rows))?;
            println!("wrote {} sweep rows to {}", rows.len(), out.display());
            Ok(())
        }
        Command::Trace {
            config,
            policy,
            checkpoint,
            seed,
            out,
        } => {
            let mut cfg = load_config(&config)?;
            cfg.env.seed = seed;
            cfg.validate()?;
            let mut env = Env::new(cfg.env.clone())?;
            let mut pol =
                Policy::load(policy, checkpoint.as_deref(), &env, sub_seed(seed, 0x9a11))?;
            let run = run_episode(&mut pol, &mut env)?;
            let report = TraceReport {
                policy: policy.to_string(),
                seed,
                t_tot_s: run.t_tot_s,
                score_tot: run.score_tot,
                score_min: env.score_min(),
                constraint_ok: run.score_tot >= env.score_min(),
                thoughts: run.thoughts,
            };
            let json = serde_json::to_string_pretty(&report)?;
            write_or_print(out.as_deref(), &format!("{json}\n"))
        }
    }
}

/// Reads a two-column measurement CSV; returns the samples and the law
/// detected from the header, if any.
fn read_fit_csv(path: &Path) -> Result<(Vec<FitSample>, Option<String>)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Csv(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Csv("empty file".into()))?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    if columns.len() != 2 || !columns[0].eq_ignore_ascii_case("tokens") {
        return Err(Error::Csv(format!(
            "expected header `tokens,score` or `tokens,delay_s`, got `{header}`"
        )));
    }
    let detected = match columns[1].to_ascii_lowercase().as_str() {
        "score" => Some("quality".to_string()),
        "delay_s" | "delay" => Some("delay".to_string()),
        _ => None,
    };
    let mut samples = Vec::new();
    for (idx, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 2 {
            return Err(Error::Csv(format!("row {}: expected 2 fields", idx + 2)));
        }
        let tokens: f64 = fields[0]
            .parse()
            .map_err(|e| Error::Csv(format!("row {}: bad tokens value: {e}", idx + 2)))?;
        let value: f64 = fields[1]
            .parse()
            .map_err(|e| Error::Csv(format!("row {}: bad value: {e}", idx + 2)))?;
        samples.push(FitSample { tokens, value });
    }
    Ok((samples, detected))
}
