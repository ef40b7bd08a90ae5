//! Refine one confidence estimate with each execution policy against a mock
//! backend, counting the calls it costs.

use confcraft::backend::{CalibrationProfile, CountingBackend, MockBackend, Purpose};
use confcraft::elicitation::{ElicitationContext, ElicitationPolicy};
use confcraft::execution::{expected_calls, ExecutionPolicy, Executor, RolloutKey};
use confcraft::metrics::Stage;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let backend = CountingBackend::new(MockBackend::new(
        "mock",
        CalibrationProfile::preset("mock-refining").unwrap(),
        7,
    )?);
    let ctx = ElicitationContext::new("Craft a wooden pickaxe", "Time: day\n- crafting_table at 1N 1E", Stage::Action);
    let elic = ElicitationPolicy::vanilla();
    let executor = Executor::default();

    for spec in ["none", "as:5", "sr:5", "hr:5", "as:3x2+hr:4"] {
        let plan: Vec<ExecutionPolicy> = if spec == "none" {
            Vec::new()
        } else {
            spec.split('+').map(str::parse).collect::<Result<_, _>>()?
        };
        backend.reset();
        let set = executor.run(&plan, &ctx, &elic, &backend, &RolloutKey::default())?;
        println!(
            "{spec:>12}: confidence {:.3} var {:.4} from {} samples, {} calls ({} aux), budget {}",
            set.combined_confidence,
            set.variance,
            set.elicited.len(),
            backend.total(),
            backend.count(Purpose::Aux),
            expected_calls(&elic, &plan),
        );
    }
    Ok(())
}
