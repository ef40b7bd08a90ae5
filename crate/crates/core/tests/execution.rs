mod common;

use common::Canned;
use confcraft::backend::{AgentQuery, Backend, BackendError, CalibrationProfile, CountingBackend, MockBackend, Purpose, Reply};
use confcraft::elicitation::{count_aux_notes, ElicitationContext, ElicitationPolicy, PolicyKind, PromptBank};
use confcraft::execution::{
    combination_name, combine, expected_calls, expected_elicitations, ExecutionError, ExecutionKind, ExecutionPolicy,
    Executor, RolloutKey, DEFAULT_AUX_CAP,
};
use confcraft::metrics::Stage;
use proptest::prelude::*;
use std::sync::Mutex;

fn ctx() -> ElicitationContext {
    ElicitationContext::new("Collect a sapling", "Time: day\n- grass at 0N 2E", Stage::Action)
}

fn mock(sample_sd: f64) -> MockBackend {
    MockBackend::new("m", CalibrationProfile::refining(0.6, 0.1, sample_sd, 0.5), 11).unwrap()
}

/// Keeps every query it forwards.
struct Recorder<B> {
    inner: B,
    seen: Mutex<Vec<AgentQuery>>,
}

impl<B: Backend> Backend for Recorder<B> {
    fn name(&self) -> &str {
        "recorder"
    }

    fn query(&self, q: &AgentQuery) -> Result<Reply, BackendError> {
        self.seen.lock().unwrap().push(q.clone());
        self.inner.query(q)
    }
}

fn recorder<B: Backend>(inner: B) -> Recorder<B> {
    Recorder { inner, seen: Mutex::new(Vec::new()) }
}

fn policy() -> impl Strategy<Value = ExecutionPolicy> {
    (0usize..4, 0usize..=15, 1usize..=3).prop_map(|(k, i, s)| {
        let kind = [
            ExecutionKind::None,
            ExecutionKind::ActionSampling,
            ExecutionKind::ScenarioReinterpretation,
            ExecutionKind::HypotheticalReasoning,
        ][k];
        ExecutionPolicy::new(kind, i, s).unwrap()
    })
}

fn elicitation() -> impl Strategy<Value = ElicitationPolicy> {
    prop_oneof![
        Just(ElicitationPolicy::of(PolicyKind::Vanilla)),
        Just(ElicitationPolicy::of(PolicyKind::Cot)),
        Just(ElicitationPolicy::of(PolicyKind::PlanSolve)),
        Just(ElicitationPolicy::of(PolicyKind::SelfIntervention)),
        (1usize..=4).prop_map(ElicitationPolicy::topk),
    ]
}

#[test]
fn aux_notes_are_capped_at_the_most_recent() {
    let b = recorder(mock(0.1));
    let p = ExecutionPolicy::new(ExecutionKind::ScenarioReinterpretation, 12, 1).unwrap();
    let set = Executor::default()
        .run(&[p], &ctx(), &ElicitationPolicy::vanilla(), &b, &RolloutKey::default())
        .unwrap();
    assert_eq!(set.aux_notes.len(), DEFAULT_AUX_CAP);
    let seen = b.seen.lock().unwrap();
    let notes: Vec<usize> = seen
        .iter()
        .filter(|q| q.purpose == Purpose::Elicit)
        .map(|q| count_aux_notes(&q.messages.last().unwrap().content))
        .collect();
    let want: Vec<usize> = (0..=12).map(|i| i.min(DEFAULT_AUX_CAP)).collect();
    assert_eq!(notes, want);
}

#[test]
fn aux_prompts_cycle_through_the_bank() {
    for (kind, bank) in [
        (ExecutionKind::ScenarioReinterpretation, PromptBank::reinterpretation()),
        (ExecutionKind::HypotheticalReasoning, PromptBank::hypothetical()),
    ] {
        let b = recorder(mock(0.1));
        let p = ExecutionPolicy::new(kind, 10, 1).unwrap();
        Executor::default()
            .run(&[p], &ctx(), &ElicitationPolicy::vanilla(), &b, &RolloutKey::default())
            .unwrap();
        let seen = b.seen.lock().unwrap();
        let aux: Vec<&AgentQuery> = seen.iter().filter(|q| q.purpose == Purpose::Aux).collect();
        assert_eq!(aux.len(), 10);
        for (it, q) in aux.iter().enumerate() {
            // the bank text up to its first slot appears verbatim
            let head = bank.pick(it).split('{').next().unwrap().trim();
            assert!(q.messages[0].content.contains(head), "{kind:?} iteration {it}");
        }
    }
}

#[test]
fn backend_failure_stops_the_loop_but_keeps_what_arrived() {
    let b = Canned::new(["Confidence: 50%", "a note", "Confidence: 70%"]);
    let p = ExecutionPolicy::new(ExecutionKind::ScenarioReinterpretation, 5, 1).unwrap();
    let set = Executor::default()
        .run(&[p], &ctx(), &ElicitationPolicy::vanilla(), &b, &RolloutKey::default())
        .unwrap();
    assert_eq!(set.failures, 1);
    assert_eq!(b.calls(), 4);
    assert_eq!(set.elicited.len(), 2);
    assert!((set.combined_confidence - 0.6).abs() < 1e-12);
}

#[test]
fn nothing_elicited_is_an_error() {
    let b = Canned::new(Vec::<String>::new());
    let err = Executor::default()
        .run(&[], &ctx(), &ElicitationPolicy::vanilla(), &b, &RolloutKey::default())
        .unwrap_err();
    assert!(matches!(err, ExecutionError::ExecutionFailed { failures: 1, missing: 0, .. }), "{err:?}");
}

#[test]
fn self_intervention_rates_the_first_answer() {
    let b = Canned::new(["move north", "Confidence: 40%"]);
    let set = Executor::default()
        .run(&[], &ctx(), &ElicitationPolicy::of(PolicyKind::SelfIntervention), &b, &RolloutKey::default())
        .unwrap();
    assert_eq!(set.base_answer(), "move north");
    assert_eq!(set.combined_confidence, 0.4);
}

#[test]
fn combination_names() {
    let ps: Vec<ExecutionPolicy> = ["as:5", "sr:10x2"].iter().map(|s| s.parse().unwrap()).collect();
    assert_eq!(combination_name(&ps), "as:5x1+sr:10x2");
    assert_eq!(combination_name(&[]), "none");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn call_budget_matches_loop_count(
        policies in prop::collection::vec(policy(), 0..=3),
        elic in elicitation(),
        seed in any::<u64>(),
    ) {
        let b = CountingBackend::new(mock(0.1));
        let key = RolloutKey { seed, ..Default::default() };
        let set = Executor::default().run(&policies, &ctx(), &elic, &b, &key).unwrap();
        let want = common::counted_calls(&elic, &policies);
        prop_assert_eq!(b.total(), want);
        prop_assert_eq!(expected_calls(&elic, &policies), want);
        prop_assert_eq!(set.calls, want);
        prop_assert_eq!(set.elicited.len(), expected_elicitations(&policies));
        prop_assert_eq!(b.count(Purpose::Reask), 0);
        let aux: usize = policies.iter().map(|p| p.iterations() * p.kind.aux_calls()).sum();
        prop_assert_eq!(b.count(Purpose::Aux), aux);
    }

    #[test]
    fn rollouts_are_reproducible(policies in prop::collection::vec(policy(), 1..=2), seed in any::<u64>()) {
        let b = mock(0.2);
        let key = RolloutKey { seed, ..Default::default() };
        let exec = Executor::default();
        let a = exec.run(&policies, &ctx(), &ElicitationPolicy::vanilla(), &b, &key).unwrap();
        let c = exec.run(&policies, &ctx(), &ElicitationPolicy::vanilla(), &b, &key).unwrap();
        prop_assert_eq!(a, c);
    }

    #[test]
    fn combine_is_mean_and_population_variance(xs in prop::collection::vec(0.0f64..=1.0, 1..50)) {
        let (m, v) = combine(&xs).unwrap();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        prop_assert!((m - mean).abs() < 1e-12 && (v - var).abs() < 1e-12);
        let lo = xs.iter().cloned().fold(1.0, f64::min);
        let hi = xs.iter().cloned().fold(0.0, f64::max);
        prop_assert!(lo <= m && m <= hi);
        let mut rev = xs.clone();
        rev.reverse();
        let (m2, v2) = combine(&rev).unwrap();
        prop_assert!((m - m2).abs() < 1e-12 && (v - v2).abs() < 1e-12);
    }

    #[test]
    fn combine_rejects_out_of_range(xs in prop::collection::vec(0.0f64..=1.0, 0..5), bad in prop_oneof![-5.0f64..-1e-9, 1.0f64 + 1e-9..5.0]) {
        let mut xs = xs;
        xs.push(bad);
        prop_assert!(matches!(combine(&xs), Err(ExecutionError::OutOfRange(_))));
    }

    #[test]
    fn policy_strings_round_trip(p in policy()) {
        prop_assert_eq!(p.to_string().parse::<ExecutionPolicy>().unwrap(), p);
    }
}
