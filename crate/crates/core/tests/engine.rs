use prefillsim::audit::audit_run;
use prefillsim::workload::{SloProfile, PRODUCTION_CLASS_NAMES};
use prefillsim::{run, slo_attainment, CostParams, PolicyKind, PreemptionGranularity, Request, RunConfig, Trace};
use proptest::prelude::*;

fn arb_trace() -> impl Strategy<Value = Trace> {
    prop::collection::vec((0.0f64..2.0, 0.0f64..1.0, 0usize..4, 0.5f64..3.0), 1..25).prop_map(|rows| {
        let slos = SloProfile::Llama3_8b.slos();
        let mut t = 0.0;
        let reqs = rows
            .into_iter()
            .enumerate()
            .map(|(i, (gap, size, class, slo_scale))| {
                if i > 0 {
                    t += gap;
                }
                let tokens = 2f64.powf(15.0 * size).round().max(1.0) as u64;
                Request::new(i as u64, PRODUCTION_CLASS_NAMES[class], t, tokens, slos[class] * slo_scale)
            })
            .collect();
        Trace::from_requests(reqs, "prop")
    })
}

fn arb_config() -> impl Strategy<Value = RunConfig> {
    (
        prop::sample::select(PolicyKind::ALL.to_vec()),
        prop::sample::select(vec![
            PreemptionGranularity::Operator,
            PreemptionGranularity::Layer,
            PreemptionGranularity::Chunk,
            PreemptionGranularity::None,
        ]),
        prop::option::of(256u64..8192),
        prop::bool::ANY,
        512u64..16_384,
    )
        .prop_map(|(policy, granularity, chunk, batching, budget)| {
            let chunk = if granularity == PreemptionGranularity::Chunk {
                Some(chunk.unwrap_or(2048))
            } else {
                chunk
            };
            RunConfig {
                policy: policy.name().to_string(),
                granularity,
                chunk_tokens: chunk,
                batch_budget_tokens: budget,
                batching,
                ..RunConfig::default()
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn runs_satisfy_engine_invariants(trace in arb_trace(), cfg in arb_config()) {
        let cost = CostParams::default();
        let res = run(&trace, &cfg, &cost).unwrap();
        let violations = audit_run(&trace, &cfg, &cost, &res);
        prop_assert!(violations.is_empty(), "{:?}", violations);
        prop_assert_eq!(res.outcomes.len(), trace.len());
    }

    #[test]
    fn runs_are_deterministic(trace in arb_trace(), cfg in arb_config()) {
        let cost = CostParams::default();
        prop_assert_eq!(run(&trace, &cfg, &cost).unwrap(), run(&trace, &cfg, &cost).unwrap());
    }

    #[test]
    fn slack_aware_matches_edf_when_every_slack_is_positive(trace in arb_trace()) {
        // SLOs far beyond any achievable latency keep every slack positive
        let relaxed = Trace::from_requests(
            trace.requests.iter().map(|r| Request::new(r.id, &r.task, r.arrival_time, r.num_tokens, 1e6 + r.ttft_slo)).collect(),
            "relaxed",
        );
        let cost = CostParams::default();
        let sedf = run(&relaxed, &RunConfig::default().with_policy("sedf"), &cost).unwrap();
        let edf = run(&relaxed, &RunConfig::default().with_policy("edf"), &cost).unwrap();
        prop_assert_eq!(sedf.command_trace, edf.command_trace);
        prop_assert_eq!(sedf.outcomes, edf.outcomes);
    }

    #[test]
    fn attainment_ignores_order_and_labels(trace in arb_trace()) {
        let res = run(&trace, &RunConfig::default(), &CostParams::default()).unwrap();
        let base = slo_attainment(&res.outcomes, None).unwrap();
        let mut shuffled = res.outcomes.clone();
        shuffled.reverse();
        for (i, o) in shuffled.iter_mut().enumerate() {
            o.id = 10_000 + i as u64;
        }
        prop_assert_eq!(slo_attainment(&shuffled, None).unwrap(), base);
    }
}

#[test]
fn every_policy_and_granularity_completes_a_generated_mix() {
    let mix = prefillsim::workload::production_mix(SloProfile::Llama3_8b);
    let trace = prefillsim::generate_trace(&mix, 4.0, 120.0, 3).unwrap();
    let cost = CostParams::default();
    for policy in PolicyKind::ALL {
        for (g, chunk) in [
            (PreemptionGranularity::Operator, None),
            (PreemptionGranularity::Layer, None),
            (PreemptionGranularity::Chunk, Some(2048)),
            (PreemptionGranularity::None, None),
        ] {
            let cfg = RunConfig::default()
                .with_policy(policy.name())
                .with_granularity(g)
                .with_chunk_tokens(chunk);
            let res = run(&trace, &cfg, &cost).unwrap();
            let v = audit_run(&trace, &cfg, &cost, &res);
            assert!(v.is_empty(), "{} {:?}: {v:?}", policy.name(), g);
            if g == PreemptionGranularity::None {
                assert_eq!(res.commands.preempt, 0);
            }
        }
    }
}

#[test]
fn layer_blocking_exceeds_operator_blocking() {
    let classes = vec![
        prefillsim::TaskClass::new("File", 6833.0, 5186.0, 22390.0, 0.5, 6.0),
        prefillsim::TaskClass::new("Text", 590.0, 652.0, 3040.0, 0.5, 0.25),
    ];
    let trace = prefillsim::generate_trace(&classes, 1.0, 600.0, 11).unwrap();
    let cost = CostParams::default();
    let mean = |g| {
        let res = run(&trace, &RunConfig::default().with_granularity(g), &cost).unwrap();
        prefillsim::blocking_stats(&res.blocking_log).mean.unwrap()
    };
    assert!(mean(PreemptionGranularity::Layer) > mean(PreemptionGranularity::Operator));
}
