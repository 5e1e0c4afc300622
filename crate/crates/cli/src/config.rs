//! Experiment configuration: one TOML file, overridden by flat CLI flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use prefillsim::search::SearchBounds;
use prefillsim::workload::{production_mix, SloProfile};
use prefillsim::{generate_trace, load_trace, CostParams, PreemptionGranularity, RunConfig, TaskClass, Trace};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    /// Built-in mix; ignored when `classes` is given.
    #[serde(default = "default_profile")]
    pub profile: SloProfile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<Vec<TaskClass>>,
    pub rate: f64,
    pub duration: f64,
}

fn default_profile() -> SloProfile {
    SloProfile::Llama3_8b
}

impl GeneratorSpec {
    pub fn classes(&self) -> Vec<TaskClass> {
        self.classes.clone().unwrap_or_else(|| production_mix(self.profile))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generate: Option<GeneratorSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVar {
    Rate,
    SloScale,
    ChunkTokens,
    BatchBudget,
}

impl SweepVar {
    pub fn name(self) -> &'static str {
        match self {
            SweepVar::Rate => "rate",
            SweepVar::SloScale => "slo_scale",
            SweepVar::ChunkTokens => "chunk_tokens",
            SweepVar::BatchBudget => "batch_budget",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpec {
    pub lo: f64,
    pub hi: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_target")]
    pub target: f64,
}

fn default_tol() -> f64 {
    0.05
}

fn default_target() -> f64 {
    0.9
}

impl SearchSpec {
    pub fn bounds(&self) -> SearchBounds {
        SearchBounds::new(self.lo, self.hi, self.tol)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub variable: SweepVar,
    #[serde(default)]
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search: Option<SearchSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub trace: TraceSource,
    /// Calibration file; defaults apply when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost_model: Option<PathBuf>,
    /// Predictor JSON from `calibrate`; otherwise fitted to the cost model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predictor: Option<PathBuf>,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default = "one")]
    pub rate_scale: f64,
    #[serde(default = "one")]
    pub slo_scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    /// Output directory; excluded from the provenance hash.
    #[serde(default = "default_out", skip_serializing)]
    pub out: PathBuf,
}

fn one() -> f64 {
    1.0
}

fn default_out() -> PathBuf {
    PathBuf::from("results")
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            trace: TraceSource::default(),
            cost_model: None,
            predictor: None,
            run: RunConfig::default(),
            rate_scale: 1.0,
            slo_scale: 1.0,
            sweep: None,
            out: default_out(),
        }
    }
}

/// Flag overrides; every field mirrors a config key.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub trace: Option<PathBuf>,
    pub cost_model: Option<PathBuf>,
    pub predictor: Option<PathBuf>,
    pub policy: Option<String>,
    pub granularity: Option<PreemptionGranularity>,
    pub chunk_tokens: Option<u64>,
    pub batch_budget: Option<u64>,
    pub rate_scale: Option<f64>,
    pub slo_scale: Option<f64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: Self = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        // relative input paths resolve against the config file
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.trace.path, &mut cfg.cost_model, &mut cfg.predictor].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: Overrides) {
        if let Some(p) = o.trace {
            self.trace = TraceSource {
                path: Some(p),
                generate: None,
            };
        }
        if let Some(p) = o.cost_model {
            self.cost_model = Some(p);
        }
        if let Some(p) = o.predictor {
            self.predictor = Some(p);
        }
        if let Some(p) = o.policy {
            self.run.policy = p;
        }
        if let Some(g) = o.granularity {
            self.run.granularity = g;
        }
        if let Some(c) = o.chunk_tokens {
            self.run.chunk_tokens = Some(c);
        }
        if let Some(b) = o.batch_budget {
            self.run.batch_budget_tokens = b;
        }
        if let Some(r) = o.rate_scale {
            self.rate_scale = r;
        }
        if let Some(s) = o.slo_scale {
            self.slo_scale = s;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(out) = o.out {
            self.out = out;
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.trace.path, &self.trace.generate) {
            (Some(_), Some(_)) => bail!("trace: give either `path` or `generate`, not both"),
            (None, None) => bail!("trace: no source (set --trace or [trace] in the config)"),
            (Some(p), None) => ensure!(p.is_file(), "trace file {} does not exist", p.display()),
            (None, Some(g)) => ensure!(
                g.rate > 0.0 && g.duration > 0.0,
                "trace.generate: rate and duration must be positive"
            ),
        }
        for p in [&self.cost_model, &self.predictor].into_iter().flatten() {
            ensure!(p.is_file(), "input file {} does not exist", p.display());
        }
        ensure!(
            self.rate_scale > 0.0 && self.rate_scale.is_finite(),
            "rate_scale must be positive"
        );
        ensure!(self.slo_scale > 0.0 && self.slo_scale.is_finite(), "slo_scale must be positive");
        if let Some(sweep) = &self.sweep {
            ensure!(
                sweep.values.iter().all(|v| v.is_finite() && *v > 0.0),
                "sweep values must be finite and positive"
            );
            if let Some(s) = &sweep.search {
                ensure!(
                    matches!(sweep.variable, SweepVar::Rate | SweepVar::SloScale),
                    "bisection is only defined for rate and slo_scale sweeps"
                );
                ensure!(s.target > 0.0 && s.target <= 1.0, "search target must lie in (0, 1]");
            } else {
                ensure!(!sweep.values.is_empty(), "sweep has no values");
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form (output directory excluded).
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        hex::encode(Sha256::digest(value.to_string().as_bytes()))
    }

    pub fn cost_params(&self) -> Result<CostParams> {
        match &self.cost_model {
            Some(p) => Ok(CostParams::load(p)?),
            None => Ok(CostParams::default()),
        }
    }

    /// The trace before rate/SLO scaling, and its nominal rate in requests/s.
    pub fn base_trace(&self) -> Result<(Trace, f64)> {
        let trace = match (&self.trace.path, &self.trace.generate) {
            (Some(p), _) => load_trace(p)?,
            (None, Some(g)) => generate_trace(&g.classes(), g.rate, g.duration, self.seed)?,
            (None, None) => bail!("trace: no source"),
        };
        let rate = match &self.trace.generate {
            Some(g) if self.trace.path.is_none() => g.rate,
            _ => trace.empirical_rate().unwrap_or(1.0),
        };
        Ok((trace, rate))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_hashes_stably() {
        let text = r#"
            seed = 7
            out = "elsewhere"
            [trace.generate]
            rate = 2.0
            duration = 60.0
            [run]
            policy = "edf"
            granularity = "layer"
            [sweep]
            variable = "rate"
            values = [1.0, 2.0]
        "#;
        let a: ExperimentConfig = toml::from_str(text).unwrap();
        assert_eq!(a.run.policy, "edf");
        assert_eq!(a.run.granularity, PreemptionGranularity::Layer);
        assert_eq!(a.sweep.as_ref().unwrap().variable, SweepVar::Rate);
        a.validate().unwrap();
        let mut b = a.clone();
        b.out = PathBuf::from("other");
        assert_eq!(a.hash(), b.hash());
        b.seed = 8;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn rejects_bad_sources_and_sweeps() {
        let mut cfg = ExperimentConfig::default();
        assert!(cfg.validate().is_err());
        cfg.trace.path = Some(PathBuf::from("/nonexistent/trace.jsonl"));
        assert!(cfg.validate().is_err());
        cfg.trace.path = None;
        cfg.trace.generate = Some(GeneratorSpec {
            profile: SloProfile::Llama3_8b,
            classes: None,
            rate: 1.0,
            duration: 10.0,
        });
        cfg.validate().unwrap();
        cfg.sweep = Some(SweepSpec {
            variable: SweepVar::Rate,
            values: vec![],
            search: None,
        });
        assert!(cfg.validate().is_err());
        cfg.sweep.as_mut().unwrap().values = vec![1.0, -2.0];
        assert!(cfg.validate().is_err());
        assert!(toml::from_str::<ExperimentConfig>("bogus = 1").is_err());
    }
}
