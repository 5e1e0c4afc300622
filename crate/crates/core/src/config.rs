use serde::{Deserialize, Serialize};

use crate::engine::PreemptionGranularity;

/// Scheduling knobs for one simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Registry name of the priority policy.
    pub policy: String,
    pub granularity: PreemptionGranularity,
    /// Chunked-prefill size; `None` runs each batch as one chunk.
    pub chunk_tokens: Option<u64>,
    pub batch_budget_tokens: u64,
    pub batching: bool,
    pub predictor_degree: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            policy: "sedf".to_string(),
            granularity: PreemptionGranularity::Operator,
            chunk_tokens: None,
            batch_budget_tokens: 4096,
            batching: true,
            predictor_degree: 2,
        }
    }
}

impl RunConfig {
    pub fn with_policy(mut self, policy: &str) -> Self {
        self.policy = policy.to_string();
        self
    }

    pub fn with_granularity(mut self, granularity: PreemptionGranularity) -> Self {
        self.granularity = granularity;
        self
    }

    pub fn with_chunk_tokens(mut self, chunk_tokens: Option<u64>) -> Self {
        self.chunk_tokens = chunk_tokens;
        self
    }

    pub fn with_batch_budget(mut self, tokens: u64) -> Self {
        self.batch_budget_tokens = tokens;
        self
    }
}
