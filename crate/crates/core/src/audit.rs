//! Post-run invariant checks shared by the property tests and the acceptance harness.

use std::collections::BTreeMap;
use std::fmt;

use crate::config::RunConfig;
use crate::cost_model::CostParams;
use crate::engine::PreemptionGranularity;
use crate::metrics::RunResult;
use crate::workload::Trace;

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    MissingOutcome { id: u64 },
    DuplicateCompletion { id: u64 },
    BadTtft { id: u64, ttft: f64 },
    BlockingBound { task: u64, blocking: f64, bound: f64 },
    WorkConservation { task: u64, executed: f64, total: f64, tolerance: f64 },
    BusyTime { task: u64, busy: f64, expected: f64 },
    RoundBound { rounds: u64, bound: u64 },
    RoundsNotReducedByBatching { rounds: u64, requests: usize },
    BatchOverBudget { task: u64, aggregate: u64, budget: u64 },
    BatchOverDeadline { task: u64, predicted: f64, remaining: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Checks `result` against the structural guarantees of the engine.
///
/// Blocking is bounded only for operator granularity, where the bound is the longest
/// operator of the preempted task plus one check.
pub fn audit_run(trace: &Trace, cfg: &RunConfig, cost: &CostParams, result: &RunResult) -> Vec<Violation> {
    let mut out = Vec::new();

    let mut seen: BTreeMap<u64, usize> = BTreeMap::new();
    for task in &result.tasks {
        for &id in &task.members {
            *seen.entry(id).or_default() += 1;
        }
    }
    for req in &trace.requests {
        match seen.get(&req.id) {
            None => out.push(Violation::MissingOutcome { id: req.id }),
            Some(&n) if n > 1 => out.push(Violation::DuplicateCompletion { id: req.id }),
            _ => {}
        }
    }
    if result.outcomes.len() != trace.len() {
        for req in trace.requests.iter().skip(result.outcomes.len()) {
            out.push(Violation::MissingOutcome { id: req.id });
        }
    }
    for o in &result.outcomes {
        if !(o.ttft.is_finite() && o.ttft >= 0.0) {
            out.push(Violation::BadTtft { id: o.id, ttft: o.ttft });
        }
    }

    let by_task: BTreeMap<u64, _> = result.tasks.iter().map(|t| (t.task, t)).collect();
    if cfg.granularity == PreemptionGranularity::Operator {
        for rec in &result.blocking_log {
            if let Some(t) = by_task.get(&rec.task) {
                let bound = t.max_entry_duration + cost.c_check;
                if rec.blocking() > bound + EPS {
                    out.push(Violation::BlockingBound {
                        task: rec.task,
                        blocking: rec.blocking(),
                        bound,
                    });
                }
            }
        }
    }

    for t in &result.tasks {
        let tolerance = t.resume_count as f64 * cost.c_check + EPS * t.total_duration.max(1.0);
        if (t.executed_duration - t.total_duration).abs() > tolerance {
            out.push(Violation::WorkConservation {
                task: t.task,
                executed: t.executed_duration,
                total: t.total_duration,
                tolerance,
            });
        }
        if (t.busy_time - t.uninterrupted_wall_time).abs() > EPS * t.uninterrupted_wall_time.max(1.0) {
            out.push(Violation::BusyTime {
                task: t.task,
                busy: t.busy_time,
                expected: t.uninterrupted_wall_time,
            });
        }
    }

    let n = trace.len();
    let bound = 2 * n as u64;
    if result.rounds > bound {
        out.push(Violation::RoundBound {
            rounds: result.rounds,
            bound,
        });
    }
    let batched = result.batches.iter().any(|b| b.decision.members.len() >= 2);
    if batched && result.rounds >= bound {
        out.push(Violation::RoundsNotReducedByBatching {
            rounds: result.rounds,
            requests: n,
        });
    }

    for b in result.batches.iter().filter(|b| b.decision.members.len() >= 2) {
        let d = &b.decision;
        if d.aggregate_tokens >= b.budget_tokens {
            out.push(Violation::BatchOverBudget {
                task: b.task,
                aggregate: d.aggregate_tokens,
                budget: b.budget_tokens,
            });
        }
        let predicted = d.predicted_latency.unwrap_or(f64::INFINITY);
        if predicted >= d.time_remaining {
            out.push(Violation::BatchOverDeadline {
                task: b.task,
                predicted,
                remaining: d.time_remaining,
            });
        }
    }
    out
}
