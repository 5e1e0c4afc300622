//! Run outcomes, SLO attainment and blocking statistics.

use serde::Serialize;
use thiserror::Error;

use crate::engine::BlockingRecord;
use crate::scheduler::{BatchRecord, TaskId};
use crate::workload::RequestId;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no outcomes match {0}")]
    EmptySelection(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RequestOutcome {
    pub id: RequestId,
    pub task: String,
    pub arrival: f64,
    pub tokens: u64,
    pub prefill_end: f64,
    pub ttft: f64,
    pub slo: f64,
    pub met: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CommandCounts {
    pub submit: u64,
    pub preempt: u64,
    pub resume: u64,
}

/// Per-task accounting, used to audit work conservation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskRecord {
    pub task: TaskId,
    pub members: Vec<RequestId>,
    pub total_duration: f64,
    pub executed_duration: f64,
    pub busy_time: f64,
    pub uninterrupted_wall_time: f64,
    pub max_entry_duration: f64,
    pub resume_count: u32,
    pub finish_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommandRecord {
    pub time: f64,
    pub command: &'static str,
    pub task: TaskId,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventLogEntry {
    pub t: f64,
    pub kind: &'static str,
    /// Task id, or -1 for events not tied to a task.
    pub task: i64,
    pub detail: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    /// One outcome per trace request, in trace order.
    pub outcomes: Vec<RequestOutcome>,
    pub blocking_log: Vec<BlockingRecord>,
    pub rounds: u64,
    pub commands: CommandCounts,
    pub command_trace: Vec<CommandRecord>,
    /// Tasks in completion order.
    pub tasks: Vec<TaskRecord>,
    pub batches: Vec<BatchRecord>,
    pub event_log: Option<Vec<EventLogEntry>>,
}

impl RunResult {
    pub fn completion_order(&self) -> Vec<TaskId> {
        self.tasks.iter().map(|t| t.task).collect()
    }

    pub fn attainment(&self) -> Option<f64> {
        slo_attainment(&self.outcomes, None).ok()
    }
}

/// Fraction of outcomes meeting their SLO, optionally restricted to one task class.
pub fn slo_attainment(outcomes: &[RequestOutcome], class_filter: Option<&str>) -> Result<f64, MetricsError> {
    let mut total = 0usize;
    let mut met = 0usize;
    for o in outcomes.iter().filter(|o| class_filter.is_none_or(|c| o.task == c)) {
        total += 1;
        met += o.met as usize;
    }
    if total == 0 {
        return Err(MetricsError::EmptySelection(
            class_filter.map_or_else(|| "the run".to_string(), |c| format!("class `{c}`")),
        ));
    }
    Ok(met as f64 / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlockingStats {
    pub count: usize,
    pub mean: Option<f64>,
    pub p99: Option<f64>,
    pub max: Option<f64>,
}

/// Nearest-rank percentile over an ascending sample.
pub fn nearest_rank(sorted: &[f64], pct: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((pct / 100.0) * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

pub fn blocking_stats(log: &[BlockingRecord]) -> BlockingStats {
    let mut samples: Vec<f64> = log.iter().map(BlockingRecord::blocking).collect();
    samples.sort_by(f64::total_cmp);
    let count = samples.len();
    BlockingStats {
        count,
        mean: (count > 0).then(|| samples.iter().sum::<f64>() / count as f64),
        p99: nearest_rank(&samples, 99.0),
        max: samples.last().copied(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(id: RequestId, task: &str, met: bool) -> RequestOutcome {
        RequestOutcome {
            id,
            task: task.into(),
            arrival: 0.0,
            tokens: 1,
            prefill_end: 0.1,
            ttft: 0.1,
            slo: if met { 1.0 } else { 0.01 },
            met,
        }
    }

    #[test]
    fn attainment_fractions() {
        let all: Vec<_> = (0..4).map(|i| outcome(i, "Text", true)).collect();
        assert_eq!(slo_attainment(&all, None).unwrap(), 1.0);
        let nine: Vec<_> = (0..10).map(|i| outcome(i, "Text", i != 3)).collect();
        assert_eq!(slo_attainment(&nine, None).unwrap(), 0.9);
    }

    #[test]
    fn class_filter() {
        let mixed = vec![
            outcome(0, "Text", true),
            outcome(1, "Text", false),
            outcome(2, "File", false),
            outcome(3, "File", false),
        ];
        assert_eq!(slo_attainment(&mixed, Some("Text")).unwrap(), 0.5);
        assert_eq!(slo_attainment(&mixed, Some("File")).unwrap(), 0.0);
        assert!(matches!(
            slo_attainment(&mixed, Some("Image")),
            Err(MetricsError::EmptySelection(_))
        ));
        assert!(slo_attainment(&[], None).is_err());
    }

    #[test]
    fn blocking_summary() {
        assert_eq!(blocking_stats(&[]).count, 0);
        assert_eq!(blocking_stats(&[]).mean, None);
        let log = [
            BlockingRecord {
                task: 0,
                signal: 0.0,
                ack: 0.6,
            },
            BlockingRecord {
                task: 1,
                signal: 5.0,
                ack: 5.4,
            },
        ];
        let s = blocking_stats(&log);
        assert_eq!(s.count, 2);
        assert!((s.mean.unwrap() - 0.5).abs() < 1e-12);
        assert!((s.max.unwrap() - 0.6).abs() < 1e-12);
        assert!((s.p99.unwrap() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn nearest_rank_percentiles() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(nearest_rank(&v, 99.0), Some(99.0));
        assert_eq!(nearest_rank(&v, 50.0), Some(50.0));
        assert_eq!(nearest_rank(&[3.0], 99.0), Some(3.0));
    }
}
