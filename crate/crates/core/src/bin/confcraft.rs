use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use confcraft::harness::{
    emit_report, read_traces, render_text, replay, run_experiment, ExperimentConfig, ReportFormat, ReportTable,
};
use confcraft::metrics::{ConfidenceRecord, MetricReport};
use confcraft::world::{Catalog, Difficulty};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "confcraft", version, about = "Elicit, refine and score agent confidence in a crafting gridworld")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment matrix
    Run {
        /// TOML config; may name a preset with `preset = "table2"`
        #[arg(long, conflicts_with = "preset")]
        config: Option<PathBuf>,
        /// Run a shipped preset as is
        #[arg(long)]
        preset: Option<String>,
        /// Output directory (overrides `output_dir`)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (default: all cores)
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Re-emit a finished run's report
    Report {
        /// Run directory containing report.json
        #[arg(long)]
        from: PathBuf,
        #[arg(long, default_value = "json")]
        format: ReportFormat,
        /// Where to write (default: the run directory)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a file of confidence records (JSON array or one object per line)
    Metrics {
        #[arg(long)]
        records: PathBuf,
        #[arg(long, default_value_t = 10)]
        bins: usize,
    },
    /// Inspect the task catalog
    Tasks {
        #[command(subcommand)]
        command: TasksCommand,
    },
    /// Re-simulate a trace file and check it step by step
    Replay {
        #[arg(long)]
        trace: PathBuf,
    },
}

#[derive(Subcommand)]
enum TasksCommand {
    /// List tasks
    List {
        #[arg(long)]
        difficulty: Option<String>,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run {
            config,
            preset,
            out,
            threads,
        } => {
            if let Some(n) = threads {
                rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
            }
            let mut cfg = match (config, preset) {
                (Some(path), _) => ExperimentConfig::from_file(&path)?,
                (None, Some(name)) => ExperimentConfig::preset(&name)?,
                (None, None) => bail!("pass --config <file> or --preset <name>"),
            };
            let dir = out
                .or_else(|| cfg.output_dir.clone())
                .unwrap_or_else(|| PathBuf::from("runs").join(&cfg.name));
            cfg.output_dir = Some(dir.clone());
            std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            std::fs::write(dir.join("config.toml"), cfg.to_toml())?;
            let started = std::time::Instant::now();
            let table = run_experiment(&cfg)?;
            for format in [ReportFormat::Json, ReportFormat::Csv] {
                emit_report(&table, &dir, format)?;
            }
            print!("{}", render_text(&table));
            eprintln!(
                "{} rows in {:.1}s, written to {}",
                table.rows.len(),
                started.elapsed().as_secs_f64(),
                dir.display()
            );
        }
        Command::Report { from, format, out } => {
            let path = from.join("report.json");
            let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            let table = ReportTable::from_json(&text)?;
            for p in emit_report(&table, out.as_deref().unwrap_or(&from), format)? {
                println!("{}", p.display());
            }
        }
        Command::Metrics { records, bins } => {
            let text = std::fs::read_to_string(&records).with_context(|| format!("reading {}", records.display()))?;
            let recs: Vec<ConfidenceRecord> = if text.trim_start().starts_with('[') {
                serde_json::from_str(&text)?
            } else {
                text.lines()
                    .filter(|l| !l.trim().is_empty())
                    .map(serde_json::from_str)
                    .collect::<Result<_, _>>()?
            };
            let report = MetricReport::compute(&recs, bins)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Tasks {
            command: TasksCommand::List { difficulty },
        } => {
            let filter: Option<Difficulty> = difficulty
                .map(|d| serde_json::from_value(serde_json::Value::String(d.to_ascii_lowercase())))
                .transpose()
                .context("difficulty must be easy, medium or hard")?;
            for t in &Catalog::builtin().tasks {
                if filter.is_none_or(|d| d == t.difficulty) {
                    println!("{:>2}  {:<6}  {}", t.id, t.difficulty, t.description);
                }
            }
        }
        Command::Replay { trace } => {
            let catalog = Catalog::builtin();
            let mut diverged = 0;
            for (cell, t) in read_traces(&trace)? {
                match replay(&t, catalog) {
                    Ok(_) => println!(
                        "cell {cell} task {} episode {}: {} steps, success={}, replay ok",
                        t.task_id,
                        t.episode_id,
                        t.step_count(),
                        t.success
                    ),
                    Err(e) => {
                        diverged += 1;
                        println!("cell {cell} task {} episode {}: {e}", t.task_id, t.episode_id);
                    }
                }
            }
            if diverged > 0 {
                bail!("{diverged} episodes diverged on replay");
            }
        }
    }
    Ok(())
}
