use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use prefillsim::predictor::{default_profile_grid, diagnostics, profile_cost_model, FitDiagnostics};
use prefillsim::search::{search_max, search_min, SearchError, SearchOutcome};
use prefillsim::{
    fit_ttft_poly, run_with, save_trace, scale_rate, scale_slo, CostParams, PolicyRegistry, RunConfig, RunOptions,
    RunResult, Trace, TtftPoly,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, SearchSpec, SweepVar};
use crate::output::{
    event_log_bytes, run_csv, sweep_csv, write_atomic, write_json, Provenance, RunSummary, SweepRow,
};

/// Inputs shared by every simulation of one invocation.
struct Prepared {
    provenance: Provenance,
    cost: CostParams,
    predictor: Option<TtftPoly>,
    base: Trace,
    base_rate: f64,
}

fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    let cost = cfg.cost_params()?;
    let predictor = match &cfg.predictor {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Some(serde_json::from_str::<TtftPoly>(&text).with_context(|| format!("parsing {}", p.display()))?)
        }
        None => None,
    };
    let (base, base_rate) = cfg.base_trace()?;
    ensure!(!base.is_empty(), "trace is empty");
    Ok(Prepared {
        provenance: Provenance {
            config_hash: cfg.hash(),
            seed: cfg.seed,
        },
        cost,
        predictor,
        base,
        base_rate,
    })
}

fn simulate(trace: &Trace, run: &RunConfig, prep: &Prepared, event_log: bool) -> Result<RunResult> {
    let options = RunOptions {
        event_log,
        predictor: prep.predictor.clone(),
    };
    Ok(run_with(trace, run, &prep.cost, &PolicyRegistry::builtin(), &options)?)
}

fn create_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

/// One simulation; writes `run.csv`, `summary.json` and optionally `events.jsonl`.
pub fn cmd_run(cfg: &ExperimentConfig, event_log: bool) -> Result<RunSummary> {
    let prep = prepare(cfg)?;
    let trace = scale_slo(&scale_rate(&prep.base, cfg.rate_scale)?, cfg.slo_scale)?;
    let res = simulate(&trace, &cfg.run, &prep, event_log)?;
    let summary = RunSummary::new(prep.provenance.clone(), &cfg.run.policy, cfg.run.granularity.name(), &res);

    let csv = run_csv(&res.outcomes)?;
    let events = event_log.then(|| event_log_bytes(&res)).transpose()?;
    create_out(&cfg.out)?;
    write_atomic(&cfg.out.join("run.csv"), &csv)?;
    write_json(&cfg.out.join("summary.json"), &summary)?;
    if let Some(bytes) = events {
        write_atomic(&cfg.out.join("events.jsonl"), &bytes)?;
    }
    Ok(summary)
}

fn point(cfg: &ExperimentConfig, prep: &Prepared, var: SweepVar, value: f64) -> Result<SweepRow> {
    let mut run = cfg.run.clone();
    let trace = match var {
        SweepVar::Rate => scale_slo(&scale_rate(&prep.base, value / prep.base_rate)?, cfg.slo_scale)?,
        SweepVar::SloScale => scale_slo(&scale_rate(&prep.base, cfg.rate_scale)?, value)?,
        SweepVar::ChunkTokens | SweepVar::BatchBudget => {
            ensure!(
                value >= 1.0 && value.fract() == 0.0,
                "{} values must be whole token counts, got {value}",
                var.name()
            );
            if var == SweepVar::ChunkTokens {
                run.chunk_tokens = Some(value as u64);
            } else {
                run.batch_budget_tokens = value as u64;
            }
            scale_slo(&scale_rate(&prep.base, cfg.rate_scale)?, cfg.slo_scale)?
        }
    };
    let res = simulate(&trace, &run, prep, false)?;
    Ok(SweepRow::from_run(var.name(), value, &res))
}

#[derive(Debug, Clone, Serialize)]
pub struct SearchReport {
    pub target: f64,
    pub lo: f64,
    pub hi: f64,
    pub tol: f64,
    pub value: f64,
    pub bracket_other: Option<f64>,
    pub saturated: bool,
    pub non_monotone: bool,
    pub runs: usize,
}

impl SearchReport {
    fn new(spec: &SearchSpec, out: &SearchOutcome) -> Self {
        Self {
            target: spec.target,
            lo: spec.lo,
            hi: spec.hi,
            tol: spec.tol,
            value: out.value,
            bracket_other: out.bracket_other,
            saturated: out.saturated,
            non_monotone: out.non_monotone,
            runs: out.runs(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    #[serde(flatten)]
    pub provenance: Provenance,
    pub sweep_var: String,
    pub policy: String,
    pub granularity: String,
    pub rows: Vec<SweepRow>,
    /// Goodput (rate) or minimum SLO scale when bisection bounds were given.
    pub search: Option<SearchReport>,
}

fn thread_pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        ensure!(j >= 1, "--jobs must be at least 1");
        b = b.num_threads(j);
    }
    Ok(b.build()?)
}

/// One run per sweep value, plus a bisection when bounds are configured.
/// Writes `sweep.csv` and `sweep.json`.
pub fn cmd_sweep(cfg: &ExperimentConfig, jobs: Option<usize>) -> Result<SweepReport> {
    let Some(sweep) = cfg.sweep.clone() else {
        bail!("no sweep configured (add a [sweep] section or --var/--values)");
    };
    let prep = prepare(cfg)?;
    let var = sweep.variable;

    let pool = thread_pool(jobs)?;
    let mut rows: Vec<SweepRow> = pool.install(|| {
        sweep
            .values
            .par_iter()
            .map(|&v| point(cfg, &prep, var, v))
            .collect::<Result<Vec<_>>>()
    })?;

    let search = match &sweep.search {
        None => None,
        Some(spec) => {
            let mut evaluated = Vec::new();
            let mut eval = |x: f64| -> Result<f64, SearchError> {
                let row = point(cfg, &prep, var, x).map_err(|e| SearchError::InvalidBounds(format!("{e:#}")))?;
                let a = row.attainment;
                evaluated.push(row);
                Ok(a)
            };
            let outcome = match var {
                SweepVar::Rate => search_max(&mut eval, spec.target, spec.bounds()),
                SweepVar::SloScale => search_min(&mut eval, spec.target, spec.bounds()),
                _ => unreachable!("validated"),
            }?;
            rows.extend(evaluated);
            Some(SearchReport::new(spec, &outcome))
        }
    };
    rows.sort_by(|a, b| a.value.total_cmp(&b.value));
    rows.dedup_by(|a, b| a.value == b.value);

    let report = SweepReport {
        provenance: prep.provenance,
        sweep_var: var.name().to_string(),
        policy: cfg.run.policy.clone(),
        granularity: cfg.run.granularity.name().to_string(),
        rows,
        search,
    };
    let csv = sweep_csv(&report.rows)?;
    create_out(&cfg.out)?;
    write_atomic(&cfg.out.join("sweep.csv"), &csv)?;
    write_json(&cfg.out.join("sweep.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Deserialize)]
struct ProfileRow {
    tokens: f64,
    seconds: f64,
}

pub fn read_profile_csv(path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let headers = rdr.headers()?.clone();
    ensure!(
        headers.iter().eq(["tokens", "seconds"]),
        "{}: expected header `tokens,seconds`, found `{}`",
        path.display(),
        headers.iter().collect::<Vec<_>>().join(",")
    );
    rdr.deserialize::<ProfileRow>()
        .enumerate()
        .map(|(i, r)| {
            let r = r.with_context(|| format!("{}: bad row {}", path.display(), i + 2))?;
            Ok((r.tokens, r.seconds))
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct CalibrationReport {
    #[serde(flatten)]
    pub provenance: Provenance,
    pub source: String,
    pub degree: usize,
    pub coefficients: Vec<f64>,
    #[serde(flatten)]
    pub diagnostics: FitDiagnostics,
}

/// Fits the TTFT polynomial to `profile` samples, or to the cost model when absent.
/// Writes `predictor.json`, which `run --predictor` accepts.
pub fn cmd_calibrate(
    profile: Option<&Path>,
    degree: usize,
    cost_model: Option<&Path>,
    chunk_tokens: Option<u64>,
    seed: u64,
    out: &Path,
) -> Result<CalibrationReport> {
    let (samples, source) = match profile {
        Some(p) => (read_profile_csv(p)?, p.display().to_string()),
        None => {
            let cost = match cost_model {
                Some(p) => CostParams::load(p)?,
                None => CostParams::default(),
            };
            let samples = profile_cost_model(&default_profile_grid(), chunk_tokens, &cost);
            (samples, "cost_model".to_string())
        }
    };
    let poly = fit_ttft_poly(&samples, degree)?;
    let diag = diagnostics(&poly, &samples);

    let mut h = Sha256::new();
    h.update(format!("degree={degree};chunk={chunk_tokens:?};seed={seed};"));
    for (x, y) in &samples {
        h.update(x.to_le_bytes());
        h.update(y.to_le_bytes());
    }
    let report = CalibrationReport {
        provenance: Provenance {
            config_hash: hex::encode(h.finalize()),
            seed,
        },
        source,
        degree: poly.degree,
        coefficients: poly.coefficients,
        diagnostics: diag,
    };
    create_out(out)?;
    write_json(&out.join("predictor.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceManifest {
    #[serde(flatten)]
    pub provenance: Provenance,
    pub requests: usize,
    pub rate: f64,
    pub path: PathBuf,
}

/// Materializes the configured generator into `trace.jsonl` plus `trace.json`.
pub fn cmd_gen_trace(cfg: &ExperimentConfig) -> Result<TraceManifest> {
    ensure!(
        cfg.trace.generate.is_some() && cfg.trace.path.is_none(),
        "gen-trace needs generator parameters (--rate/--duration or [trace.generate])"
    );
    cfg.validate()?;
    let (trace, rate) = cfg.base_trace()?;
    create_out(&cfg.out)?;
    let path = cfg.out.join("trace.jsonl");
    let tmp = cfg.out.join(".trace.jsonl.tmp");
    save_trace(&trace, &tmp)?;
    std::fs::rename(&tmp, &path).with_context(|| format!("writing {}", path.display()))?;
    let manifest = TraceManifest {
        provenance: Provenance {
            config_hash: cfg.hash(),
            seed: cfg.seed,
        },
        requests: trace.len(),
        rate,
        path: PathBuf::from("trace.jsonl"),
    };
    write_json(&cfg.out.join("trace.json"), &manifest)?;
    Ok(manifest)
}
