//! Score a handful of confidence records and print the reliability bins.

use confcraft::metrics::{reliability_bins, ConfidenceRecord, MetricReport, Stage};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let raw = [(0.95, true), (0.9, true), (0.8, false), (0.7, true), (0.6, false), (0.3, false), (0.2, true), (0.1, false)];
    let records = raw
        .iter()
        .map(|&(c, ok)| ConfidenceRecord::new(c, ok, Stage::Action))
        .collect::<Result<Vec<_>, _>>()?;

    let report = MetricReport::compute(&records, 10)?;
    println!("{}", serde_json::to_string_pretty(&report)?);

    for (i, b) in reliability_bins(&records, 5)?.iter().enumerate() {
        if b.count > 0 {
            println!("bin {}: n={} conf={:.2} acc={:.2}", i + 1, b.count, b.mean_confidence.unwrap(), b.accuracy.unwrap());
        }
    }
    Ok(())
}
