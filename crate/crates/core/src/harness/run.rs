use super::config::{CellSpec, ExperimentConfig};
use super::episode::{EpisodeRunner, EpisodeTrace};
use super::report::{aggregate, Aggregation, Granularity, ReportRow, ReportTable, RowStatus};
use super::HarnessError;
use crate::backend::{Backend, Grounding};
use crate::elicitation::{ElicitationContext, ElicitationPolicy};
use crate::execution::{ExecutionError, ExecutionPolicy, Executor, RolloutKey};
use crate::metrics::{ConfidenceRecord, Stage};
use crate::world::{mix, Catalog, Difficulty, Task};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

/// Standalone elicitations labelled by the backend's side channel.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProbeRun {
    pub records: Vec<ConfidenceRecord>,
    /// Items whose replies never yielded a confidence.
    pub missing: usize,
    /// Items the backend did not label.
    pub unlabeled: usize,
    pub failures: usize,
    pub calls: usize,
}

/// Elicits `n` independent items outside any world. Item `i` is keyed by
/// `(master_seed, i)`, so every cell sees the same items.
pub fn run_probe(
    backend: &dyn Backend,
    executor: &Executor,
    elicitation: &ElicitationPolicy,
    plan: &[ExecutionPolicy],
    n: usize,
    master_seed: u64,
    stream: u64,
) -> Result<ProbeRun, HarnessError> {
    let mut out = ProbeRun::default();
    for i in 0..n {
        let item = mix(master_seed ^ mix(i as u64));
        let key = RolloutKey {
            seed: mix(stream ^ item),
            grounding: Some(Arc::new(Grounding {
                key: item,
                ..Grounding::default()
            })),
        };
        let ctx = ElicitationContext::new(format!("Answer probe question {i}"), "", Stage::Perception);
        match executor.run(plan, &ctx, elicitation, backend, &key) {
            Ok(set) => {
                out.calls += set.calls;
                out.failures += set.failures;
                match set.label {
                    Some(correct) => {
                        let rec = ConfidenceRecord::new(set.combined_confidence, correct, Stage::Perception)
                            .expect("combined confidence is a unit value")
                            .with_origin(1, 0, i as u32);
                        out.records.push(rec);
                    }
                    None => out.unlabeled += 1,
                }
            }
            Err(ExecutionError::ExecutionFailed { failures, .. }) => {
                out.failures += failures;
                out.missing += 1;
            }
            Err(e) => return Err(HarnessError::Config(e.to_string())),
        }
    }
    Ok(out)
}

/// What one cell produced.
#[derive(Debug, Clone, PartialEq)]
pub enum CellRun {
    Episodes(Vec<EpisodeTrace>),
    Probe(ProbeRun),
    Failed(String),
}

/// A validated config with its backends built.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub cells: Vec<CellSpec>,
    pub executor: Executor,
    pub catalog: &'static Catalog,
    backends: Vec<Result<Arc<dyn Backend>, String>>,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self, HarnessError> {
        config.validate()?;
        let backends = config
            .backends
            .iter()
            .map(|b| b.build(config.master_seed).map_err(|e| e.to_string()))
            .collect();
        Ok(Experiment {
            cells: config.cells()?,
            executor: config.executor.build()?,
            catalog: Catalog::builtin(),
            backends,
            config,
        })
    }

    /// Swaps in a caller-built backend, e.g. one that counts calls.
    pub fn with_backend(mut self, index: usize, backend: Arc<dyn Backend>) -> Self {
        self.backends[index] = Ok(backend);
        self
    }

    pub fn tasks(&self) -> Vec<&'static Task> {
        self.config.selected_tasks(self.catalog).expect("validated at construction")
    }

    pub fn run_cell(&self, cell: &CellSpec) -> CellRun {
        let backend = match &self.backends[cell.backend] {
            Ok(b) => b.as_ref(),
            Err(e) => return CellRun::Failed(e.clone()),
        };
        let cfg = &self.config;
        let stream = cell.stream(cfg.master_seed);
        if let Some(n) = cfg.probe {
            return match run_probe(backend, &self.executor, &cell.elicitation, &cell.plan.0, n, cfg.master_seed, stream) {
                Ok(p) => CellRun::Probe(p),
                Err(e) => CellRun::Failed(e.to_string()),
            };
        }
        let runner = EpisodeRunner {
            catalog: self.catalog,
            backend,
            executor: &self.executor,
            elicitation: cell.elicitation,
            plan: &cell.plan.0,
            perception: cfg.stages.contains(&Stage::Perception),
            planning: cfg.stages.contains(&Stage::Action),
            step_cap: cfg.step_cap,
            world: &cfg.world,
            rule: cfg.perception_rule,
            actor: cfg.actor,
            solver_epsilon: cfg.backends[cell.backend].solver_epsilon(),
            stream,
        };
        let units: Vec<(&Task, usize)> = self
            .tasks()
            .into_iter()
            .flat_map(|t| (0..cfg.episodes_per_task).map(move |e| (t, e)))
            .collect();
        let traces = units
            .par_iter()
            .map(|(task, e)| runner.run_episode(task, *e as u32, cfg.world_seed(task.id, *e)))
            .collect();
        CellRun::Episodes(traces)
    }

    fn row(&self, cell: &CellSpec, aggregation: Aggregation, granularity: Granularity, difficulty: &str) -> ReportRow {
        ReportRow {
            cell: cell.index,
            backend: self.config.backends[cell.backend].name().to_string(),
            elicitation: cell.elicitation.to_string(),
            execution: cell.plan.to_string(),
            iterations: cell.iterations,
            aggregation,
            granularity,
            difficulty: difficulty.to_string(),
            status: RowStatus::Failed,
            reason: None,
            n: 0,
            ece: None,
            auroc: None,
            auprc_pos: None,
            auprc_neg: None,
            success_rate: None,
            episodes: 0,
            failed_episodes: 0,
            missing_confidence: 0,
            bins: Vec::new(),
        }
    }

    fn groups(&self) -> Vec<String> {
        let mut groups = vec!["all".to_string()];
        if self.config.stratify && self.config.probe.is_none() {
            let present: Vec<Difficulty> = self.tasks().iter().map(|t| t.difficulty).collect();
            groups.extend(
                Difficulty::ALL
                    .iter()
                    .filter(|d| present.contains(d))
                    .map(|d| d.as_str().to_string()),
            );
        }
        groups
    }

    /// Metric rows of one cell; every key appears even when the cell failed.
    pub fn rows(&self, cell: &CellSpec, run: &CellRun) -> Vec<ReportRow> {
        let bins = self.config.bins;
        let mut rows = Vec::new();
        match run {
            CellRun::Failed(why) => {
                for g in self.groups() {
                    for a in self.aggregations() {
                        for gran in self.granularities() {
                            let mut r = self.row(cell, a, gran, &g);
                            r.reason = Some(why.clone());
                            rows.push(r);
                        }
                    }
                }
            }
            CellRun::Probe(p) => {
                let mut r = self.row(cell, Aggregation::Temporal, Granularity::Step, "all");
                r.missing_confidence = p.missing;
                r.score(&p.records, bins);
                let mut notes = Vec::new();
                if p.unlabeled > 0 {
                    notes.push(format!("{} items unlabelled by the backend", p.unlabeled));
                }
                if p.failures > 0 {
                    notes.push(format!("{} backend failures", p.failures));
                }
                if !notes.is_empty() {
                    r.reason = Some(notes.join("; "));
                }
                rows.push(r);
            }
            CellRun::Episodes(traces) => {
                let difficulty: BTreeMap<u32, &str> =
                    self.catalog.tasks.iter().map(|t| (t.id, t.difficulty.as_str())).collect();
                for g in self.groups() {
                    let group: Vec<EpisodeTrace> = traces
                        .iter()
                        .filter(|t| g == "all" || difficulty.get(&t.task_id) == Some(&g.as_str()))
                        .cloned()
                        .collect();
                    let failed: Vec<&EpisodeTrace> = group.iter().filter(|t| t.failure.is_some()).collect();
                    let success_rate = (!group.is_empty())
                        .then(|| group.iter().filter(|t| t.success).count() as f64 / group.len() as f64);
                    for a in Aggregation::ALL {
                        let missing = group.iter().map(|t| a.missing_in(t)).sum();
                        let agg = aggregate(&group, a);
                        for gran in [Granularity::Step, Granularity::Episode] {
                            let mut r = self.row(cell, a, gran, &g);
                            r.episodes = group.len();
                            r.failed_episodes = failed.len();
                            r.success_rate = success_rate;
                            r.missing_confidence = missing;
                            match &agg {
                                Ok(x) => match gran {
                                    Granularity::Step => r.score(&x.records, bins),
                                    Granularity::Episode => r.score(&x.episode_records(a), bins),
                                },
                                Err(e) => {
                                    r.status = RowStatus::Empty;
                                    r.reason = Some(e.to_string());
                                }
                            }
                            if let Some(first) = failed.first() {
                                let note = format!(
                                    "{} episodes hit backend failures, first: {}",
                                    failed.len(),
                                    first.failure.as_deref().unwrap_or("")
                                );
                                r.reason = Some(match r.reason.take() {
                                    Some(prev) => format!("{prev}; {note}"),
                                    None => note,
                                });
                            }
                            rows.push(r);
                        }
                    }
                }
            }
        }
        rows
    }

    fn aggregations(&self) -> Vec<Aggregation> {
        if self.config.probe.is_some() {
            vec![Aggregation::Temporal]
        } else {
            Aggregation::ALL.to_vec()
        }
    }

    fn granularities(&self) -> Vec<Granularity> {
        if self.config.probe.is_some() {
            vec![Granularity::Step]
        } else {
            vec![Granularity::Step, Granularity::Episode]
        }
    }

    /// Runs every cell. With `trace_dir` set, each cell's episodes are written
    /// to `cell-NNN.ndjson` there as soon as the cell finishes.
    pub fn run(&self, trace_dir: Option<&Path>) -> Result<ReportTable, HarnessError> {
        if let Some(dir) = trace_dir {
            std::fs::create_dir_all(dir).map_err(|e| HarnessError::Io(dir.display().to_string(), e))?;
        }
        let per_cell: Vec<Result<Vec<ReportRow>, HarnessError>> = self
            .cells
            .par_iter()
            .map(|cell| {
                let run = self.run_cell(cell);
                if let (Some(dir), CellRun::Episodes(traces)) = (trace_dir, &run) {
                    write_traces(&trace_path(dir, cell.index), cell.index, traces)?;
                }
                Ok(self.rows(cell, &run))
            })
            .collect();
        let mut table = ReportTable::new(self.config.name.clone(), self.config.bins);
        for rows in per_cell {
            table.rows.extend(rows?);
        }
        table.build_series();
        Ok(table)
    }
}

impl Aggregation {
    fn missing_in(self, trace: &EpisodeTrace) -> usize {
        match self {
            Aggregation::Temporal => trace.missing_confidence(),
            Aggregation::PerceptionOnly => trace.missing_confidence_in(Stage::Perception),
            Aggregation::ReasoningOnly => trace.missing_confidence_in(Stage::Action),
        }
    }
}

/// Builds and runs the whole matrix. Traces go under `output_dir/traces`
/// when an output directory is configured.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ReportTable, HarnessError> {
    let exp = Experiment::new(cfg.clone())?;
    let dir = cfg.output_dir.as_ref().map(|d| d.join("traces"));
    exp.run(dir.as_deref())
}

pub fn trace_path(dir: &Path, cell: usize) -> PathBuf {
    dir.join(format!("cell-{cell:03}.ndjson"))
}

/// One line of a trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "line", rename_all = "snake_case")]
pub enum TraceLine {
    Episode {
        cell: usize,
        task_id: u32,
        episode_id: u32,
        seed: u64,
        step_cap: usize,
        world: crate::world::WorldParams,
    },
    Step {
        cell: usize,
        task_id: u32,
        episode_id: u32,
        record: super::episode::StepRecord,
    },
    End {
        cell: usize,
        task_id: u32,
        episode_id: u32,
        success: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        failure: Option<String>,
    },
}

pub fn trace_lines(cell: usize, t: &EpisodeTrace) -> Vec<TraceLine> {
    let mut lines = vec![TraceLine::Episode {
        cell,
        task_id: t.task_id,
        episode_id: t.episode_id,
        seed: t.seed,
        step_cap: t.step_cap,
        world: t.world.clone(),
    }];
    lines.extend(t.steps.iter().map(|s| TraceLine::Step {
        cell,
        task_id: t.task_id,
        episode_id: t.episode_id,
        record: s.clone(),
    }));
    lines.push(TraceLine::End {
        cell,
        task_id: t.task_id,
        episode_id: t.episode_id,
        success: t.success,
        failure: t.failure.clone(),
    });
    lines
}

pub fn write_traces(path: &Path, cell: usize, traces: &[EpisodeTrace]) -> Result<(), HarnessError> {
    let io = |e| HarnessError::Io(path.display().to_string(), e);
    let mut w = BufWriter::new(std::fs::File::create(path).map_err(io)?);
    for t in traces {
        for line in trace_lines(cell, t) {
            serde_json::to_writer(&mut w, &line).map_err(|e| HarnessError::Format(e.to_string()))?;
            w.write_all(b"\n").map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// Reassembles `(cell, trace)` pairs from NDJSON text.
pub fn parse_traces(reader: impl BufRead) -> Result<Vec<(usize, EpisodeTrace)>, HarnessError> {
    let mut out: Vec<(usize, EpisodeTrace)> = Vec::new();
    let mut open = false;
    for (no, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| HarnessError::Io("trace".into(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: &str| HarnessError::Format(format!("trace line {}: {m}", no + 1));
        match serde_json::from_str::<TraceLine>(&line).map_err(|e| bad(&e.to_string()))? {
            TraceLine::Episode {
                cell,
                task_id,
                episode_id,
                seed,
                step_cap,
                world,
            } => {
                if open {
                    return Err(bad("episode started before the previous one ended"));
                }
                open = true;
                out.push((
                    cell,
                    EpisodeTrace {
                        task_id,
                        episode_id,
                        seed,
                        step_cap,
                        world,
                        steps: Vec::new(),
                        success: false,
                        failure: None,
                    },
                ));
            }
            TraceLine::Step { record, .. } => match out.last_mut() {
                Some((_, t)) if open => t.steps.push(record),
                _ => return Err(bad("step outside an episode")),
            },
            TraceLine::End { success, failure, .. } => match out.last_mut() {
                Some((_, t)) if open => {
                    t.success = success;
                    t.failure = failure;
                    open = false;
                }
                _ => return Err(bad("end outside an episode")),
            },
        }
    }
    if open {
        return Err(HarnessError::Format("trace ends inside an episode".into()));
    }
    Ok(out)
}

pub fn read_traces(path: &Path) -> Result<Vec<(usize, EpisodeTrace)>, HarnessError> {
    let f = std::fs::File::open(path).map_err(|e| HarnessError::Io(path.display().to_string(), e))?;
    parse_traces(std::io::BufReader::new(f))
}
