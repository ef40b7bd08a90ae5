//! Run a small experiment matrix and print the report table.
//!
//! Pass a TOML config path to run something else.

use confcraft::harness::{render_text, Experiment, ExperimentConfig};

const SMALL: &str = r#"
preset = "table2"
tasks = [1, 2, 11]
episodes_per_task = 2
step_cap = 300
elicitation = ["vanilla", "topk:3"]
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let text = match std::env::args().nth(1) {
        Some(path) => std::fs::read_to_string(path)?,
        None => SMALL.to_string(),
    };
    let cfg = ExperimentConfig::from_toml_str(&text)?;
    let exp = Experiment::new(cfg)?;
    println!("{} cells", exp.cells.len());
    let table = exp.run(None)?;
    println!("{}", render_text(&table));
    Ok(())
}
