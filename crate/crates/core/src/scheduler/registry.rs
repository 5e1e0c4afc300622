use std::collections::BTreeMap;
use std::sync::Arc;

use super::policy::{DeadlineAwareEdf, Edf, Fcfs, PolicyKind, PriorityPolicy, SlackAwareEdf};

/// Name-keyed table of priority policies, looked up from config at run time.
#[derive(Debug, Clone, Default)]
pub struct PolicyRegistry {
    policies: BTreeMap<String, Arc<dyn PriorityPolicy>>,
}

impl PolicyRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry preloaded with `sedf`, `edf`, `dedf` and `fcfs`.
    pub fn builtin() -> Self {
        let mut registry = Self::new();
        for kind in PolicyKind::ALL {
            registry.register(builtin_policy(kind));
        }
        registry
    }

    /// Adds or replaces a policy under its own name.
    pub fn register(&mut self, policy: Arc<dyn PriorityPolicy>) {
        self.policies.insert(policy.name().to_string(), policy);
    }

    pub fn get(&self, name: &str) -> Option<Arc<dyn PriorityPolicy>> {
        self.policies.get(&name.to_ascii_lowercase()).cloned()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.policies.contains_key(&name.to_ascii_lowercase())
    }

    pub fn names(&self) -> Vec<&str> {
        self.policies.keys().map(String::as_str).collect()
    }
}

pub fn builtin_policy(kind: PolicyKind) -> Arc<dyn PriorityPolicy> {
    match kind {
        PolicyKind::Sedf => Arc::new(SlackAwareEdf),
        PolicyKind::Edf => Arc::new(Edf),
        PolicyKind::Dedf => Arc::new(DeadlineAwareEdf),
        PolicyKind::Fcfs => Arc::new(Fcfs),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::TtftPoly;
    use crate::scheduler::policy::PriorityInput;

    #[derive(Debug)]
    struct ShortestFirst;

    impl PriorityPolicy for ShortestFirst {
        fn name(&self) -> &'static str {
            "sjf"
        }

        fn score(&self, item: &PriorityInput, _now: f64, _predictor: &TtftPoly) -> f64 {
            -(item.tokens as f64)
        }
    }

    #[test]
    fn builtins_resolve_by_name() {
        let registry = PolicyRegistry::builtin();
        assert_eq!(registry.names(), vec!["dedf", "edf", "fcfs", "sedf"]);
        for kind in PolicyKind::ALL {
            assert_eq!(registry.get(kind.name()).unwrap().name(), kind.name());
        }
        assert!(registry.get("SEDF").is_some());
        assert!(registry.get("lottery").is_none());
    }

    #[test]
    fn custom_policies_can_be_registered() {
        let mut registry = PolicyRegistry::builtin();
        registry.register(Arc::new(ShortestFirst));
        assert!(registry.contains("sjf"));
        assert_eq!(registry.names().len(), 5);
    }
}
