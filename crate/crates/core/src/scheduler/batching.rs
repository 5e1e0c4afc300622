//! SLO-aware batching: grow the head request's batch while its predicted latency still
//! fits in the head's remaining time and the aggregate stays under the token budget.

use serde::Serialize;

use crate::predictor::{predict_latency, TtftPoly};
use crate::workload::RequestId;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchCandidate {
    pub id: RequestId,
    pub tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchDecision {
    /// Head first, then admitted candidates in admission order.
    pub members: Vec<RequestId>,
    pub member_tokens: Vec<u64>,
    pub aggregate_tokens: u64,
    /// Remaining time of the head when the batch was formed.
    pub time_remaining: f64,
    /// Prediction for the final aggregate; `None` when nothing was admitted.
    pub predicted_latency: Option<f64>,
}

/// `candidates` must already be in descending priority order and exclude the head,
/// preempted tasks and the running task.
pub fn slo_aware_batching(
    head: BatchCandidate,
    head_deadline: f64,
    candidates: &[BatchCandidate],
    budget_tokens: u64,
    predictor: &TtftPoly,
    now: f64,
) -> BatchDecision {
    let time_remaining = head_deadline - now;
    let mut members = vec![head.id];
    let mut member_tokens = vec![head.tokens];
    let mut aggregate = head.tokens;
    let mut predicted_latency = None;
    for cand in candidates {
        let n = aggregate + cand.tokens;
        let latency = predict_latency(n, predictor);
        if time_remaining > latency && n < budget_tokens {
            members.push(cand.id);
            member_tokens.push(cand.tokens);
            aggregate = n;
            predicted_latency = Some(latency);
        }
    }
    BatchDecision {
        members,
        member_tokens,
        aggregate_tokens: aggregate,
        time_remaining,
        predicted_latency,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear(per_token: f64) -> TtftPoly {
        TtftPoly::new(vec![0.0, per_token])
    }

    fn cand(id: RequestId, tokens: u64) -> BatchCandidate {
        BatchCandidate { id, tokens }
    }

    #[test]
    fn unconstrained_admission() {
        let d = slo_aware_batching(cand(0, 100), 1e12, &[cand(1, 100)], 4096, &linear(1e-3), 0.0);
        assert_eq!(d.members, vec![0, 1]);
        assert_eq!(d.aggregate_tokens, 200);
    }

    #[test]
    fn budget_is_strict() {
        let d = slo_aware_batching(cand(0, 4000), 1e12, &[cand(1, 96), cand(2, 95)], 4096, &linear(0.0), 0.0);
        // 4000 + 96 = 4096 is not < 4096; 4000 + 95 fits
        assert_eq!(d.members, vec![0, 2]);
        assert_eq!(d.aggregate_tokens, 4095);
    }

    #[test]
    fn head_remaining_time_gates_admission() {
        // predictor 0.001 s/token: L(1100) = 1.1
        let tight = slo_aware_batching(cand(0, 1000), 1.0, &[cand(1, 100)], 4096, &linear(0.001), 0.0);
        assert_eq!(tight.members, vec![0]);
        assert_eq!(tight.predicted_latency, None);
        let loose = slo_aware_batching(cand(0, 1000), 1.2, &[cand(1, 100)], 4096, &linear(0.001), 0.0);
        assert_eq!(loose.members, vec![0, 1]);
        assert!((loose.predicted_latency.unwrap() - 1.1).abs() < 1e-12);
        // T_remain measured from `now`
        let later = slo_aware_batching(cand(0, 1000), 1.2, &[cand(1, 100)], 4096, &linear(0.001), 0.5);
        assert_eq!(later.members, vec![0]);
    }

    #[test]
    fn rejected_candidates_do_not_block_later_ones() {
        let d = slo_aware_batching(
            cand(0, 100),
            1.0,
            &[cand(1, 5000), cand(2, 200), cand(3, 300)],
            4096,
            &linear(0.001),
            0.0,
        );
        assert_eq!(d.members, vec![0, 2, 3]);
        assert_eq!(d.member_tokens, vec![100, 200, 300]);
        assert_eq!(d.aggregate_tokens, 600);
    }
}
