//! Priority policies. Higher score means scheduled first.

use std::fmt::Debug;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::predictor::{predict_latency, TtftPoly};

#[derive(Debug, Error, PartialEq)]
pub enum PriorityError {
    #[error("deadline must be > 0, got {0}")]
    NonPositiveDeadline(f64),
}

/// What a policy may look at when ranking a waiting request or an execution task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorityInput {
    pub deadline: f64,
    pub arrival_time: f64,
    /// Aggregate tokens of the request or batch.
    pub tokens: u64,
    /// Fraction of the work already executed; zero for waiting requests.
    pub progress: f64,
}

/// `deadline - now - predicted remaining latency`.
pub fn slack(item: &PriorityInput, now: f64, predictor: &TtftPoly) -> f64 {
    let progress = item.progress.clamp(0.0, 1.0);
    let remaining = predict_latency(item.tokens, predictor) * (1.0 - progress);
    item.deadline - now - remaining
}

/// Sign with `sgn(0) = +1`, so zero slack counts as feasible.
pub(crate) fn sign_non_negative(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

pub trait PriorityPolicy: Debug + Send + Sync {
    /// Registry key, also the config/CLI spelling.
    fn name(&self) -> &'static str;

    fn score(&self, item: &PriorityInput, now: f64, predictor: &TtftPoly) -> f64;
}

/// Validated entry point over any policy.
pub fn priority(
    item: &PriorityInput,
    now: f64,
    predictor: &TtftPoly,
    policy: &dyn PriorityPolicy,
) -> Result<f64, PriorityError> {
    if item.deadline.is_nan() || item.deadline <= 0.0 {
        return Err(PriorityError::NonPositiveDeadline(item.deadline));
    }
    Ok(policy.score(item, now, predictor))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Sedf,
    Edf,
    Dedf,
    Fcfs,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [PolicyKind::Sedf, PolicyKind::Edf, PolicyKind::Dedf, PolicyKind::Fcfs];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Sedf => "sedf",
            PolicyKind::Edf => "edf",
            PolicyKind::Dedf => "dedf",
            PolicyKind::Fcfs => "fcfs",
        }
    }
}

/// Slack-aware EDF: `sgn(slack) / deadline`.
#[derive(Debug, Default, Clone, Copy)]
pub struct SlackAwareEdf;

impl PriorityPolicy for SlackAwareEdf {
    fn name(&self) -> &'static str {
        "sedf"
    }

    fn score(&self, item: &PriorityInput, now: f64, predictor: &TtftPoly) -> f64 {
        sign_non_negative(slack(item, now, predictor)) / item.deadline
    }
}

/// Plain EDF: `1 / deadline`.
#[derive(Debug, Default, Clone, Copy)]
pub struct Edf;

impl PriorityPolicy for Edf {
    fn name(&self) -> &'static str {
        "edf"
    }

    fn score(&self, item: &PriorityInput, _now: f64, _predictor: &TtftPoly) -> f64 {
        1.0 / item.deadline
    }
}

/// Deadline-aware EDF: requests already past their deadline drop to the negative class.
#[derive(Debug, Default, Clone, Copy)]
pub struct DeadlineAwareEdf;

impl PriorityPolicy for DeadlineAwareEdf {
    fn name(&self) -> &'static str {
        "dedf"
    }

    fn score(&self, item: &PriorityInput, now: f64, _predictor: &TtftPoly) -> f64 {
        sign_non_negative(item.deadline - now) / item.deadline
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct Fcfs;

impl PriorityPolicy for Fcfs {
    fn name(&self) -> &'static str {
        "fcfs"
    }

    fn score(&self, item: &PriorityInput, _now: f64, _predictor: &TtftPoly) -> f64 {
        -item.arrival_time
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Predicts `seconds` for every token count.
    fn constant(seconds: f64) -> TtftPoly {
        TtftPoly::new(vec![seconds, 0.0])
    }

    fn item(deadline: f64, tokens: u64) -> PriorityInput {
        PriorityInput {
            deadline,
            arrival_time: 0.0,
            tokens,
            progress: 0.0,
        }
    }

    #[test]
    fn slack_direct_evaluation() {
        assert_eq!(slack(&item(10.0, 1), 2.0, &constant(3.0)), 5.0);
        assert_eq!(slack(&item(10.0, 1), 9.0, &constant(3.0)), -2.0);
        let done = PriorityInput {
            progress: 1.0,
            ..item(10.0, 1)
        };
        assert_eq!(slack(&done, 2.0, &constant(3.0)), 8.0);
        let half = PriorityInput {
            progress: 0.5,
            ..item(10.0, 1)
        };
        assert_eq!(slack(&half, 2.0, &constant(3.0)), 6.5);
    }

    #[test]
    fn sedf_prefers_earliest_feasible_deadline() {
        let sedf = SlackAwareEdf;
        // slack 5 for both: deadline - now - 3 with now chosen per deadline
        let p10 = priority(&item(10.0, 1), 2.0, &constant(3.0), &sedf).unwrap();
        let p20 = priority(&item(20.0, 1), 12.0, &constant(3.0), &sedf).unwrap();
        assert!((p10 - 0.1).abs() < 1e-15);
        assert!((p20 - 0.05).abs() < 1e-15);
        assert!(p10 > p20);

        let infeasible = priority(&item(10.0, 1), 8.0, &constant(3.0), &sedf).unwrap();
        assert!((infeasible + 0.1).abs() < 1e-15);
        let late_feasible = priority(&item(1000.0, 1), 8.0, &constant(3.0), &sedf).unwrap();
        assert!(late_feasible > infeasible);
    }

    #[test]
    fn zero_slack_counts_as_feasible() {
        let p = priority(&item(10.0, 1), 7.0, &constant(3.0), &SlackAwareEdf).unwrap();
        assert!(p > 0.0);
    }

    #[test]
    fn negative_class_ranks_later_deadline_higher() {
        let sedf = SlackAwareEdf;
        let a = priority(&item(10.0, 1), 50.0, &constant(0.0), &sedf).unwrap();
        let b = priority(&item(20.0, 1), 50.0, &constant(0.0), &sedf).unwrap();
        assert!(b > a);
    }

    #[test]
    fn dedf_and_edf_and_fcfs() {
        let p = priority(&item(10.0, 1), 15.0, &constant(100.0), &DeadlineAwareEdf).unwrap();
        assert!((p + 0.1).abs() < 1e-15);
        let p = priority(&item(10.0, 1), 5.0, &constant(100.0), &DeadlineAwareEdf).unwrap();
        assert!((p - 0.1).abs() < 1e-15);
        // EDF ignores predicted infeasibility entirely
        let p = priority(&item(10.0, 1), 9.0, &constant(100.0), &Edf).unwrap();
        assert!((p - 0.1).abs() < 1e-15);
        let early = PriorityInput {
            arrival_time: 1.0,
            ..item(10.0, 1)
        };
        let late = PriorityInput {
            arrival_time: 2.0,
            ..item(3.0, 1)
        };
        assert!(Fcfs.score(&early, 5.0, &constant(0.0)) > Fcfs.score(&late, 5.0, &constant(0.0)));
    }

    #[test]
    fn non_positive_deadline_is_rejected() {
        for policy in [&SlackAwareEdf as &dyn PriorityPolicy, &Edf, &DeadlineAwareEdf, &Fcfs] {
            assert_eq!(
                priority(&item(0.0, 1), 0.0, &constant(0.0), policy),
                Err(PriorityError::NonPositiveDeadline(0.0))
            );
        }
    }
}
