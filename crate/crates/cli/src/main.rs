use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use prefillsim::workload::SloProfile;
use prefillsim::PreemptionGranularity;
use prefillsim_cli::config::{GeneratorSpec, SearchSpec, SweepSpec, SweepVar, TraceSource};
use prefillsim_cli::{cmd_calibrate, cmd_gen_trace, cmd_run, cmd_sweep, ExperimentConfig, Overrides};

#[derive(Parser, Debug)]
#[command(name = "prefillsim", version, about = "Discrete-event simulator for preemptive LLM prefill scheduling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one simulation and write run.csv + summary.json.
    Run {
        #[command(flatten)]
        common: CommonArgs,
        /// Also write the command/event log as events.jsonl.
        #[arg(long)]
        event_log: bool,
    },
    /// Run one simulation per sweep value, with optional bisection.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_parser = parse_var)]
        var: Option<SweepVar>,
        /// Comma-separated sweep values.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
        /// Bisection bounds `lo,hi` (rate: goodput search; slo_scale: minimum scale).
        #[arg(long, value_delimiter = ',', num_args = 1)]
        search: Option<Vec<f64>>,
        #[arg(long, default_value_t = 0.9)]
        target: f64,
        #[arg(long, default_value_t = 0.05)]
        tol: f64,
        /// Maximum concurrent runs (defaults to the number of CPUs).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Fit the TTFT polynomial to a tokens,seconds CSV or to the cost model.
    Calibrate {
        #[arg(long)]
        profile: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        degree: usize,
        #[arg(long)]
        cost_model: Option<PathBuf>,
        #[arg(long)]
        chunk_tokens: Option<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
    /// Generate a synthetic trace into <out>/trace.jsonl.
    GenTrace {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_parser = parse_profile)]
        slo_profile: Option<SloProfile>,
        #[arg(long)]
        rate: Option<f64>,
        #[arg(long)]
        duration: Option<f64>,
    },
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// TOML experiment config; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    cost_model: Option<PathBuf>,
    #[arg(long)]
    predictor: Option<PathBuf>,
    #[arg(long)]
    policy: Option<String>,
    #[arg(long, value_parser = parse_granularity)]
    granularity: Option<PreemptionGranularity>,
    #[arg(long)]
    chunk_tokens: Option<u64>,
    #[arg(long)]
    batch_budget: Option<u64>,
    #[arg(long)]
    rate_scale: Option<f64>,
    #[arg(long)]
    slo_scale: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_granularity(s: &str) -> Result<PreemptionGranularity, String> {
    s.parse()
}

fn parse_profile(s: &str) -> Result<SloProfile, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn parse_var(s: &str) -> Result<SweepVar, String> {
    match s {
        "rate" => Ok(SweepVar::Rate),
        "slo_scale" => Ok(SweepVar::SloScale),
        "chunk_tokens" => Ok(SweepVar::ChunkTokens),
        "batch_budget" => Ok(SweepVar::BatchBudget),
        other => Err(format!("unknown sweep variable `{other}`")),
    }
}

impl CommonArgs {
    fn resolve(self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        cfg.apply(Overrides {
            trace: self.trace,
            cost_model: self.cost_model,
            predictor: self.predictor,
            policy: self.policy,
            granularity: self.granularity,
            chunk_tokens: self.chunk_tokens,
            batch_budget: self.batch_budget,
            rate_scale: self.rate_scale,
            slo_scale: self.slo_scale,
            seed: self.seed,
            out: self.out,
        });
        Ok(cfg)
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { common, event_log } => {
            let cfg = common.resolve()?;
            let s = cmd_run(&cfg, event_log)?;
            println!(
                "attainment {:.4} over {} requests, {} rounds, {} preemptions -> {}",
                s.attainment,
                s.requests,
                s.rounds,
                s.preemptions,
                cfg.out.display()
            );
        }
        Command::Sweep {
            common,
            var,
            values,
            search,
            target,
            tol,
            jobs,
        } => {
            let mut cfg = common.resolve()?;
            if var.is_some() || values.is_some() || search.is_some() {
                let base = cfg.sweep.take();
                let variable = var
                    .or(base.as_ref().map(|s| s.variable))
                    .context("--var is required without a [sweep] section")?;
                let search = match search {
                    Some(b) => {
                        anyhow::ensure!(b.len() == 2, "--search takes `lo,hi`");
                        Some(SearchSpec {
                            lo: b[0],
                            hi: b[1],
                            tol,
                            target,
                        })
                    }
                    None => base.as_ref().and_then(|s| s.search),
                };
                cfg.sweep = Some(SweepSpec {
                    variable,
                    values: values.or(base.map(|s| s.values)).unwrap_or_default(),
                    search,
                });
            }
            let report = cmd_sweep(&cfg, jobs)?;
            for r in &report.rows {
                println!("{}={} attainment {:.4}", r.sweep_var, r.value, r.attainment);
            }
            if let Some(s) = &report.search {
                let note = if s.saturated { " (saturated at upper bound)" } else { "" };
                println!("search {}: {:.4}{note}", report.sweep_var, s.value);
            }
        }
        Command::Calibrate {
            profile,
            degree,
            cost_model,
            chunk_tokens,
            seed,
            out,
        } => {
            let r = cmd_calibrate(profile.as_deref(), degree, cost_model.as_deref(), chunk_tokens, seed, &out)?;
            println!(
                "degree {} fit: r2 {:.6}, max residual {:.3e} s -> {}",
                r.degree,
                r.diagnostics.r_squared,
                r.diagnostics.max_abs_residual,
                out.join("predictor.json").display()
            );
        }
        Command::GenTrace {
            common,
            slo_profile,
            rate,
            duration,
        } => {
            let mut cfg = common.resolve()?;
            if rate.is_some() || duration.is_some() || slo_profile.is_some() {
                let base = cfg.trace.generate.take();
                cfg.trace = TraceSource {
                    path: None,
                    generate: Some(GeneratorSpec {
                        profile: slo_profile.or(base.as_ref().map(|g| g.profile)).unwrap_or(SloProfile::Llama3_8b),
                        classes: base.as_ref().and_then(|g| g.classes.clone()),
                        rate: rate.or(base.as_ref().map(|g| g.rate)).context("--rate is required")?,
                        duration: duration.or(base.map(|g| g.duration)).context("--duration is required")?,
                    }),
                };
            }
            let m = cmd_gen_trace(&cfg)?;
            println!("{} requests -> {}", m.requests, cfg.out.join(&m.path).display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
