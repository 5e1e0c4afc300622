//! Trace-driven simulator of a disaggregated LLM prefill instance.
//!
//! Requests arrive from a trace, are ranked by a pluggable priority policy, optionally
//! batched under an SLO and token budget, and run on a single execution slot whose work
//! is expanded into an operator-level timeline. Running work can be preempted
//! cooperatively at operator, layer or chunk boundaries.
//!
//! Module map:
//! - [`workload`]: requests, traces, synthetic generation
//! - [`cost_model`]: operator timelines; [`predictor`]: polynomial TTFT fit
//! - [`scheduler`]: priority policies, batching, event-driven rounds
//! - [`engine`]: execution pool and event loop
//! - [`metrics`], [`search`]: attainment, blocking statistics, goodput searches
//! - [`audit`]: invariant checks over a finished run

pub mod audit;
pub mod config;
pub mod cost_model;
pub mod engine;
pub mod metrics;
pub mod predictor;
pub mod scheduler;
pub mod search;
pub mod workload;

pub use config::RunConfig;
pub use cost_model::{build_timeline, operator_duration, CostParams, OperatorKind, OperatorTimeline};
pub use engine::{run, run_with, PreemptionGranularity, RunOptions, SimError};
pub use metrics::{blocking_stats, slo_attainment, RunResult};
pub use predictor::{fit_ttft_poly, predict_latency, TtftPoly};
pub use scheduler::{PolicyKind, PolicyRegistry};
pub use workload::{generate_trace, load_trace, save_trace, scale_rate, scale_slo, Request, TaskClass, Trace};
