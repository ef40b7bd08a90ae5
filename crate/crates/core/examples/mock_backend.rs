//! Probe mock backends with known calibration profiles and check that the
//! metrics recover them.

use confcraft::backend::{CalibrationProfile, MockBackend};
use confcraft::elicitation::ElicitationPolicy;
use confcraft::execution::Executor;
use confcraft::harness::run_probe;
use confcraft::metrics::MetricReport;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let executor = Executor::default();
    for (name, profile) in [
        ("calibrated", CalibrationProfile::new(0.6, 0.0, 0.1)),
        ("overconfident", CalibrationProfile::new(0.5, 0.2, 0.0)),
        ("skilled", CalibrationProfile::new(0.9, 0.0, 0.05)),
    ] {
        let mock = MockBackend::new(name, profile, 1)?;
        let run = run_probe(&mock, &executor, &ElicitationPolicy::vanilla(), &[], 5000, 42, 0)?;
        let m = MetricReport::compute(&run.records, 10)?;
        println!(
            "{name:>14}: ece {:.3} auroc {:.3} auprc- {:.3} ({} calls)",
            m.ece,
            m.auroc.unwrap_or(f64::NAN),
            m.auprc_neg.unwrap_or(f64::NAN),
            run.calls
        );
    }
    Ok(())
}
