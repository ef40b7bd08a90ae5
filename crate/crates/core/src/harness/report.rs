use super::episode::EpisodeTrace;
use super::HarnessError;
use crate::metrics::{reliability_bins, BinSummary, ConfidenceRecord, MetricReport, Stage};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

pub const SCHEMA_VERSION: &str = "1.0";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Every stage record of the episode.
    Temporal,
    PerceptionOnly,
    ReasoningOnly,
}

impl Aggregation {
    pub const ALL: [Aggregation; 3] = [Aggregation::Temporal, Aggregation::PerceptionOnly, Aggregation::ReasoningOnly];

    pub fn as_str(self) -> &'static str {
        match self {
            Aggregation::Temporal => "temporal",
            Aggregation::PerceptionOnly => "perception_only",
            Aggregation::ReasoningOnly => "reasoning_only",
        }
    }

    fn keeps(self, stage: Stage) -> bool {
        match self {
            Aggregation::Temporal => true,
            Aggregation::PerceptionOnly => stage == Stage::Perception,
            Aggregation::ReasoningOnly => stage == Stage::Action,
        }
    }
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

/// Whether metrics pair each step confidence with its own label or each
/// episode's mean confidence with the episode outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Step,
    Episode,
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            Granularity::Step => "step",
            Granularity::Episode => "episode",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeScore {
    pub task_id: u32,
    pub episode_id: u32,
    pub confidence: f64,
    pub success: bool,
    pub records: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Aggregated {
    /// One entry per episode that kept at least one record.
    pub episodes: Vec<EpisodeScore>,
    /// Step-level records after filtering.
    pub records: Vec<ConfidenceRecord>,
}

impl Aggregated {
    /// Episode scores as records labelled by episode success.
    pub fn episode_records(&self, mode: Aggregation) -> Vec<ConfidenceRecord> {
        let stage = if mode == Aggregation::PerceptionOnly {
            Stage::Perception
        } else {
            Stage::Action
        };
        self.episodes
            .iter()
            .map(|e| {
                ConfidenceRecord::new(e.confidence, e.success, stage)
                    .expect("mean of unit values is a unit value")
                    .with_origin(e.task_id, e.episode_id, 0)
            })
            .collect()
    }
}

/// Filters records by stage and averages each episode's confidences.
pub fn aggregate(traces: &[EpisodeTrace], mode: Aggregation) -> Result<Aggregated, HarnessError> {
    if traces.is_empty() {
        return Err(HarnessError::NoTraces);
    }
    let mut out = Aggregated::default();
    for t in traces {
        let kept: Vec<ConfidenceRecord> = t.records().into_iter().filter(|r| mode.keeps(r.stage)).collect();
        if kept.is_empty() {
            continue;
        }
        let mean = kept.iter().map(|r| r.confidence()).sum::<f64>() / kept.len() as f64;
        let lo = kept.iter().map(|r| r.confidence()).fold(f64::INFINITY, f64::min);
        let hi = kept.iter().map(|r| r.confidence()).fold(f64::NEG_INFINITY, f64::max);
        out.episodes.push(EpisodeScore {
            task_id: t.task_id,
            episode_id: t.episode_id,
            confidence: mean.clamp(lo, hi),
            success: t.success,
            records: kept.len(),
        });
        out.records.extend(kept);
    }
    if out.records.is_empty() {
        return Err(HarnessError::EmptyAfterFilter(mode));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    Ok,
    /// The cell ran but this row has no records.
    Empty,
    Failed,
}

/// One metric row. Rows are keyed by every field up to `difficulty`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub cell: usize,
    pub backend: String,
    pub elicitation: String,
    pub execution: String,
    pub iterations: Option<usize>,
    pub aggregation: Aggregation,
    pub granularity: Granularity,
    /// `all` or a difficulty name.
    pub difficulty: String,
    pub status: RowStatus,
    pub reason: Option<String>,
    pub n: usize,
    pub ece: Option<f64>,
    pub auroc: Option<f64>,
    pub auprc_pos: Option<f64>,
    pub auprc_neg: Option<f64>,
    pub success_rate: Option<f64>,
    pub episodes: usize,
    pub failed_episodes: usize,
    /// Stage elicitations excluded for lack of a confidence.
    pub missing_confidence: usize,
    #[serde(default)]
    pub bins: Vec<BinSummary>,
}

impl ReportRow {
    pub fn key(&self) -> (usize, Aggregation, Granularity, &str) {
        (self.cell, self.aggregation, self.granularity, self.difficulty.as_str())
    }

    /// Fills the metric columns from `records`.
    pub fn score(&mut self, records: &[ConfidenceRecord], bins: usize) {
        self.n = records.len();
        match MetricReport::compute(records, bins) {
            Ok(m) => {
                self.status = RowStatus::Ok;
                self.ece = Some(m.ece);
                self.auroc = m.auroc;
                self.auprc_pos = m.auprc_pos;
                self.auprc_neg = m.auprc_neg;
                self.bins = reliability_bins(records, bins).unwrap_or_default();
            }
            Err(e) => {
                self.status = RowStatus::Empty;
                self.reason = Some(e.to_string());
            }
        }
    }
}

/// A point of an iteration sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub iterations: usize,
    pub ece: Option<f64>,
    pub auroc: Option<f64>,
    pub auprc_pos: Option<f64>,
    pub auprc_neg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub backend: String,
    pub elicitation: String,
    /// Execution policies without iteration counts, e.g. `as+sr`.
    pub execution: String,
    pub aggregation: Aggregation,
    pub granularity: Granularity,
    pub difficulty: String,
    pub points: Vec<SeriesPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub schema_version: String,
    pub experiment: String,
    pub bins: usize,
    pub rows: Vec<ReportRow>,
    #[serde(default)]
    pub series: Vec<Series>,
}

impl ReportTable {
    pub fn new(experiment: impl Into<String>, bins: usize) -> Self {
        ReportTable {
            schema_version: SCHEMA_VERSION.into(),
            experiment: experiment.into(),
            bins,
            rows: Vec::new(),
            series: Vec::new(),
        }
    }

    pub fn find(&self, cell: usize, aggregation: Aggregation, granularity: Granularity, difficulty: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.key() == (cell, aggregation, granularity, difficulty))
    }

    /// Groups sweep rows into per-iteration series.
    pub fn build_series(&mut self) {
        let mut groups: BTreeMap<(String, String, String, Aggregation, Granularity, String), Vec<SeriesPoint>> = BTreeMap::new();
        for r in &self.rows {
            let Some(iterations) = r.iterations else { continue };
            let kinds = r
                .execution
                .split('+')
                .map(|p| p.split(':').next().unwrap_or(p))
                .collect::<Vec<_>>()
                .join("+");
            groups
                .entry((r.backend.clone(), r.elicitation.clone(), kinds, r.aggregation, r.granularity, r.difficulty.clone()))
                .or_default()
                .push(SeriesPoint {
                    iterations,
                    ece: r.ece,
                    auroc: r.auroc,
                    auprc_pos: r.auprc_pos,
                    auprc_neg: r.auprc_neg,
                });
        }
        self.series = groups
            .into_iter()
            .map(|((backend, elicitation, execution, aggregation, granularity, difficulty), mut points)| {
                points.sort_by_key(|p| p.iterations);
                Series {
                    backend,
                    elicitation,
                    execution,
                    aggregation,
                    granularity,
                    difficulty,
                    points,
                }
            })
            .collect();
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| HarnessError::Format(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            _ => Err(format!("unknown report format {s:?} (expected json or csv)")),
        }
    }
}

/// Flat CSV form of a row, without reliability bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub cell: usize,
    pub backend: String,
    pub elicitation: String,
    pub execution: String,
    pub iterations: Option<usize>,
    pub aggregation: Aggregation,
    pub granularity: Granularity,
    pub difficulty: String,
    pub status: RowStatus,
    pub reason: Option<String>,
    pub n: usize,
    pub ece: Option<f64>,
    pub auroc: Option<f64>,
    pub auprc_pos: Option<f64>,
    pub auprc_neg: Option<f64>,
    pub success_rate: Option<f64>,
    pub episodes: usize,
    pub failed_episodes: usize,
    pub missing_confidence: usize,
}

pub const CSV_HEADER: [&str; 19] = [
    "cell",
    "backend",
    "elicitation",
    "execution",
    "iterations",
    "aggregation",
    "granularity",
    "difficulty",
    "status",
    "reason",
    "n",
    "ece",
    "auroc",
    "auprc_pos",
    "auprc_neg",
    "success_rate",
    "episodes",
    "failed_episodes",
    "missing_confidence",
];

const BIN_HEADER: [&str; 9] = [
    "cell",
    "aggregation",
    "granularity",
    "difficulty",
    "bin_index",
    "count",
    "mean_confidence",
    "accuracy",
    "iterations",
];

impl From<&ReportRow> for CsvRow {
    fn from(r: &ReportRow) -> Self {
        CsvRow {
            cell: r.cell,
            backend: r.backend.clone(),
            elicitation: r.elicitation.clone(),
            execution: r.execution.clone(),
            iterations: r.iterations,
            aggregation: r.aggregation,
            granularity: r.granularity,
            difficulty: r.difficulty.clone(),
            status: r.status,
            reason: r.reason.clone(),
            n: r.n,
            ece: r.ece,
            auroc: r.auroc,
            auprc_pos: r.auprc_pos,
            auprc_neg: r.auprc_neg,
            success_rate: r.success_rate,
            episodes: r.episodes,
            failed_episodes: r.failed_episodes,
            missing_confidence: r.missing_confidence,
        }
    }
}

impl From<CsvRow> for ReportRow {
    fn from(r: CsvRow) -> Self {
        ReportRow {
            cell: r.cell,
            backend: r.backend,
            elicitation: r.elicitation,
            execution: r.execution,
            iterations: r.iterations,
            aggregation: r.aggregation,
            granularity: r.granularity,
            difficulty: r.difficulty,
            status: r.status,
            reason: r.reason,
            n: r.n,
            ece: r.ece,
            auroc: r.auroc,
            auprc_pos: r.auprc_pos,
            auprc_neg: r.auprc_neg,
            success_rate: r.success_rate,
            episodes: r.episodes,
            failed_episodes: r.failed_episodes,
            missing_confidence: r.missing_confidence,
            bins: Vec::new(),
        }
    }
}

fn csv_err(e: csv::Error) -> HarnessError {
    HarnessError::Format(e.to_string())
}

/// CSV text of the rows, header first even when there are no rows.
pub fn rows_to_csv(rows: &[ReportRow]) -> Result<String, HarnessError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in rows {
        w.serialize(CsvRow::from(r)).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Format(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn rows_from_csv(text: &str) -> Result<Vec<ReportRow>, HarnessError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(HarnessError::Format(format!("unexpected CSV header {header:?}")));
    }
    r.deserialize::<CsvRow>()
        .map(|row| row.map(ReportRow::from).map_err(csv_err))
        .collect()
}

fn bins_to_csv(rows: &[ReportRow]) -> Result<String, HarnessError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(BIN_HEADER).map_err(csv_err)?;
    for r in rows {
        for b in &r.bins {
            w.write_record([
                r.cell.to_string(),
                r.aggregation.to_string(),
                r.granularity.to_string(),
                r.difficulty.clone(),
                b.bin_index.to_string(),
                b.count.to_string(),
                b.mean_confidence.map_or(String::new(), |v| v.to_string()),
                b.accuracy.map_or(String::new(), |v| v.to_string()),
                r.iterations.map_or(String::new(), |v| v.to_string()),
            ])
            .map_err(csv_err)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Format(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn write_atomic(path: &Path, contents: &str) -> Result<(), HarnessError> {
    let io = |e| HarnessError::Io(path.display().to_string(), e);
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents).map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)
}

/// Writes the table into `dir`: `report.json`, or `report.csv` plus
/// `reliability.csv`. Returns the written paths.
pub fn emit_report(table: &ReportTable, dir: &Path, format: ReportFormat) -> Result<Vec<PathBuf>, HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::Io(dir.display().to_string(), e))?;
    let files = match format {
        ReportFormat::Json => vec![(dir.join("report.json"), table.to_json())],
        ReportFormat::Csv => vec![
            (dir.join("report.csv"), rows_to_csv(&table.rows)?),
            (dir.join("reliability.csv"), bins_to_csv(&table.rows)?),
        ],
    };
    let mut written = Vec::new();
    for (path, text) in files {
        write_atomic(&path, &text)?;
        written.push(path);
    }
    Ok(written)
}

/// Fixed-width summary for terminals.
pub fn render_text(table: &ReportTable) -> String {
    let f = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3}"));
    let mut s = format!(
        "{:<4} {:<14} {:<18} {:<16} {:<16} {:<8} {:<7} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>5}\n",
        "cell", "backend", "elicitation", "execution", "aggregation", "gran", "diff", "n", "ece", "auroc", "pr-p", "pr-n", "succ", "miss"
    );
    for r in &table.rows {
        s.push_str(&format!(
            "{:<4} {:<14} {:<18} {:<16} {:<16} {:<8} {:<7} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>5}{}\n",
            r.cell,
            r.backend,
            r.elicitation,
            r.execution,
            r.aggregation,
            r.granularity,
            r.difficulty,
            r.n,
            f(r.ece),
            f(r.auroc),
            f(r.auprc_pos),
            f(r.auprc_neg),
            f(r.success_rate),
            r.missing_confidence,
            match (&r.status, &r.reason) {
                (RowStatus::Ok, _) => String::new(),
                (st, reason) => format!("  [{st:?}: {}]", reason.as_deref().unwrap_or("")),
            }
        ));
    }
    s
}
