use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use qcloud::agent::PolicyCheckpoint;
use qcloud::baselines::BaselineKind;
use qcloud::harness::{self, ExperimentConfig, PolicySpec, TuneGrid};
use qcloud::workload::{generate_episode_workload, EpisodeWorkload};
use qcloud::{Error, Result};

#[derive(Parser)]
#[command(
    name = "qcloud",
    version,
    about = "Quantum cloud task placement experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PolicyArg {
    Drlq,
    Greedy,
    Roundrobin,
    Random,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment config (TOML); defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a Rainbow agent and write checkpoint.json and train_log.jsonl.
    Train {
        #[command(flatten)]
        common: Common,
        /// Agent seed (network init, noise, replay sampling).
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Evaluate one policy and write a per-episode CSV with a summary row.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        policy: PolicyArg,
        /// Checkpoint for --policy drlq.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// First evaluation workload seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        episodes: Option<usize>,
        /// Replay workload dumps instead of generating from seeds.
        #[arg(long = "workload")]
        workloads: Vec<PathBuf>,
        /// Episode CSV path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write one row per task.
        #[arg(long)]
        tasks_out: Option<PathBuf>,
        /// Write the simulator event log of the first episode as JSON lines.
        #[arg(long)]
        events_out: Option<PathBuf>,
        #[arg(long)]
        allow_overlap: bool,
    },
    /// Run several policies on identical workloads and tabulate reductions.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Policies to compare; all four (or the three baselines without a checkpoint) when omitted.
        #[arg(long = "policy", value_enum)]
        policies: Vec<PolicyArg>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        episodes: Option<usize>,
        /// Output directory for summary.csv and per-policy episode CSVs.
        #[arg(long, default_value = "compare")]
        out: PathBuf,
        #[arg(long)]
        allow_overlap: bool,
    },
    /// Grid-search hyperparameters under a reduced training budget.
    Tune {
        #[command(flatten)]
        common: Common,
        /// Grid file: a [params] table of dotted keys to value lists, plus optional
        /// iterations and steps_per_iteration.
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for trials.csv and best.toml.
        #[arg(long, default_value = "tune")]
        out: PathBuf,
    },
    /// Write one episode workload as JSON lines.
    WorkloadGen {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of tasks; the config's n_tasks when omitted.
        #[arg(long)]
        n: Option<usize>,
        /// Arrival window in seconds; the config's window when omitted.
        #[arg(long)]
        window: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the default configuration.
    Defaults,
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    match &common.config {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn policy_spec(policy: PolicyArg, checkpoint: Option<&Path>) -> Result<PolicySpec> {
    Ok(match policy {
        PolicyArg::Drlq => {
            let path =
                checkpoint.ok_or_else(|| Error::usage("--policy drlq needs --checkpoint"))?;
            PolicySpec::Trained(Box::new(PolicyCheckpoint::load(path)?))
        }
        PolicyArg::Greedy => PolicySpec::Baseline(BaselineKind::Greedy),
        PolicyArg::Roundrobin => PolicySpec::Baseline(BaselineKind::RoundRobin),
        PolicyArg::Random => PolicySpec::Baseline(BaselineKind::Random),
    })
}

fn apply_eval_overrides(
    cfg: &mut ExperimentConfig,
    seed: Option<u64>,
    episodes: Option<usize>,
) -> Result<()> {
    if let Some(s) = seed {
        cfg.eval.seed_start = s;
    }
    if let Some(n) = episodes {
        cfg.eval.episodes = n;
    }
    cfg.validate()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Defaults => {
            print!("{}", ExperimentConfig::default().to_toml_string());
        }
        Command::Train { common, seed, out } => {
            let mut cfg = load_config(&common)?;
            if let Some(s) = seed {
                cfg.agent.seed = s;
            }
            fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let mut log_file = create(&out.join("train_log.jsonl"))?;
            let outcome = harness::train(&cfg, |row| {
                let fmt = |v: Option<f64>| v.map_or("-".to_owned(), |x| format!("{x:.3}"));
                eprintln!(
                    "iter {:>4}  steps {:>7}  episodes {:>3}  reward {:>9}  length {:>7}  loss {:>7}",
                    row.iter,
                    row.steps,
                    row.episodes,
                    fmt(row.mean_episode_reward),
                    fmt(row.mean_episode_length),
                    fmt(row.loss)
                );
                // Written as we go so an aborted run still leaves its log behind.
                let _ = harness::write_train_log(&mut log_file, std::slice::from_ref(row));
                let _ = log_file.flush();
            })?;
            outcome.checkpoint.save(out.join("checkpoint.json"))?;
            fs::write(out.join("config.toml"), cfg.to_toml_string())
                .map_err(|e| Error::io(&out, e))?;
            eprintln!(
                "wrote {} (training seeds {}..{})",
                out.join("checkpoint.json").display(),
                outcome.train_seeds.start,
                outcome.train_seeds.end
            );
        }
        Command::Evaluate {
            common,
            policy,
            checkpoint,
            seed,
            episodes,
            workloads,
            out,
            tasks_out,
            events_out,
            allow_overlap,
        } => {
            let mut cfg = load_config(&common)?;
            apply_eval_overrides(&mut cfg, seed, episodes)?;
            let spec = policy_spec(policy, checkpoint.as_deref())?;
            let reports = if workloads.is_empty() {
                harness::evaluate(&cfg, &spec, allow_overlap)?
            } else {
                let loaded = workloads
                    .iter()
                    .map(EpisodeWorkload::load)
                    .collect::<Result<Vec<_>>>()?;
                let seeds: Vec<u64> = loaded.iter().map(|w| w.seed).collect();
                harness::check_seed_disjointness(&spec, &seeds, allow_overlap)?;
                harness::evaluate_workloads(&cfg, &spec, &loaded)?
            };
            match &out {
                Some(p) => harness::write_episode_csv(create(p)?, &reports)?,
                None => harness::write_episode_csv(io::stdout().lock(), &reports)?,
            }
            if let Some(p) = &tasks_out {
                harness::write_task_csv(create(p)?, &reports)?;
            }
            if let Some(p) = &events_out {
                write_first_episode_events(&cfg, &spec, &reports, &workloads, p)?;
            }
            let s = harness::summarize(&reports);
            eprintln!(
                "{}: {} episodes, mean total completion {:.3} s (sd {:.3}), mean reschedules {:.2}",
                spec.name(),
                s.episodes,
                s.mean_total_completion_time,
                s.sd_total_completion_time,
                s.mean_reschedules
            );
        }
        Command::Compare {
            common,
            mut policies,
            checkpoint,
            seed,
            episodes,
            out,
            allow_overlap,
        } => {
            let mut cfg = load_config(&common)?;
            apply_eval_overrides(&mut cfg, seed, episodes)?;
            if policies.is_empty() {
                if checkpoint.is_some() {
                    policies.push(PolicyArg::Drlq);
                }
                policies.extend([PolicyArg::Greedy, PolicyArg::Roundrobin, PolicyArg::Random]);
            }
            let specs = policies
                .iter()
                .map(|&p| policy_spec(p, checkpoint.as_deref()))
                .collect::<Result<Vec<_>>>()?;
            let cmp = harness::compare(&cfg, &specs, allow_overlap)?;
            fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            harness::write_comparison_csv(create(&out.join("summary.csv"))?, &cmp.rows)?;
            for (name, reports) in &cmp.reports {
                harness::write_episode_csv(
                    create(&out.join(format!("{name}_episodes.csv")))?,
                    reports,
                )?;
            }
            harness::write_comparison_csv(io::stdout().lock(), &cmp.rows)?;
        }
        Command::Tune {
            common,
            grid,
            seed,
            out,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(s) = seed {
                cfg.agent.seed = s;
            }
            let grid = TuneGrid::load(&grid)?;
            let trials = harness::tune(&cfg, &grid, |t| {
                let desc: Vec<String> = t
                    .overrides
                    .iter()
                    .map(|(k, v)| format!("{k}={v}"))
                    .collect();
                eprintln!(
                    "trial {}: {}  final-quarter reward {}",
                    t.index,
                    desc.join(" "),
                    t.final_quarter_reward
                        .map_or("-".to_owned(), |r| format!("{r:.4}"))
                );
            })?;
            fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            harness::write_trial_csv(create(&out.join("trials.csv"))?, &trials)?;
            let best = &trials[0];
            fs::write(out.join("best.toml"), best.config.to_toml_string())
                .map_err(|e| Error::io(&out, e))?;
            eprintln!(
                "best: trial {} -> {}",
                best.index,
                out.join("best.toml").display()
            );
        }
        Command::WorkloadGen {
            common,
            seed,
            n,
            window,
            out,
        } => {
            let cfg = load_config(&common)?;
            let env = cfg.build_env()?;
            let n = n.unwrap_or(cfg.env.n_tasks);
            let window = window.unwrap_or(cfg.env.window);
            let w = generate_episode_workload(env.records(), seed, n, window)?;
            w.save(&out)?;
        }
    }
    Ok(())
}

fn write_first_episode_events(
    cfg: &ExperimentConfig,
    spec: &PolicySpec,
    reports: &[harness::EpisodeReport],
    workloads: &[PathBuf],
    path: &Path,
) -> Result<()> {
    let Some(first) = reports.first() else {
        return Ok(());
    };
    let mut env = cfg.build_env()?;
    let workload = match workloads.first() {
        Some(p) => EpisodeWorkload::load(p)?,
        None => env.workload(first.seed)?,
    };
    let mut policy = spec.instantiate(cfg.eval.policy_seed, workload.seed)?;
    harness::run_episode(&mut env, policy.as_mut(), workload, 0)?;
    let dc = env.data_center().expect("episode ran");
    dc.write_event_log(create(path)?)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Usage(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
