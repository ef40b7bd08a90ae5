use super::HarnessError;
use crate::backend::{Backend, CalibrationProfile, MockBackend, RemoteBackend, RemoteConfig, ScriptedBackend};
use crate::elicitation::{ElicitationPolicy, PromptBank, TemplateSet};
use crate::execution::{combination_name, ExecutionPolicy, Executor, DEFAULT_AUX_CAP, DEFAULT_MAX_ITERATIONS, DEFAULT_MAX_REASKS};
use crate::metrics::{Stage, DEFAULT_BINS};
use crate::world::{mix, Catalog, Difficulty, PerceptionRule, Task, WorldParams};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

const PRESETS: [(&str, &str); 4] = [
    ("table2", include_str!("../../data/presets/table2.toml")),
    ("table3", include_str!("../../data/presets/table3.toml")),
    ("fig5-sweep", include_str!("../../data/presets/fig5-sweep.toml")),
    ("appendixD-difficulty", include_str!("../../data/presets/appendixD-difficulty.toml")),
];

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

/// Execution policies applied in order, written `as:5+sr:5`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct ExecutionPlan(pub Vec<ExecutionPolicy>);

impl ExecutionPlan {
    /// The plan with every policy set to `iterations`.
    pub fn with_iterations(&self, iterations: usize) -> Result<Self, HarnessError> {
        let policies = self
            .0
            .iter()
            .map(|p| p.with_iterations(iterations))
            .collect::<Result<_, _>>()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(ExecutionPlan(policies))
    }

    /// Name without iteration counts, e.g. `as+sr`.
    pub fn kinds(&self) -> String {
        if self.0.is_empty() {
            return "none".into();
        }
        self.0.iter().map(|p| p.kind.short()).collect::<Vec<_>>().join("+")
    }
}

impl fmt::Display for ExecutionPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&combination_name(&self.0))
    }
}

impl FromStr for ExecutionPlan {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.split('+').map(str::parse).collect::<Result<_, _>>().map(ExecutionPlan)
    }
}

impl From<ExecutionPlan> for String {
    fn from(p: ExecutionPlan) -> String {
        p.to_string()
    }
}

impl TryFrom<String> for ExecutionPlan {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProfileRef {
    Preset(String),
    Inline(CalibrationProfile),
}

impl ProfileRef {
    pub fn resolve(&self) -> Result<CalibrationProfile, HarnessError> {
        match self {
            ProfileRef::Preset(name) => CalibrationProfile::preset(name)
                .ok_or_else(|| HarnessError::Config(format!("unknown calibration profile {name:?}"))),
            ProfileRef::Inline(p) => Ok(p.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendSpec {
    Mock {
        name: String,
        profile: ProfileRef,
        #[serde(default)]
        seed: Option<u64>,
    },
    Scripted {
        name: String,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
    },
    Remote {
        name: String,
        config: RemoteConfig,
    },
}

fn default_epsilon() -> f64 {
    0.1
}

impl BackendSpec {
    pub fn name(&self) -> &str {
        match self {
            BackendSpec::Mock { name, .. } | BackendSpec::Scripted { name, .. } | BackendSpec::Remote { name, .. } => name,
        }
    }

    /// Misperception rate when perception claims come from the solver.
    pub fn solver_epsilon(&self) -> Option<f64> {
        match self {
            BackendSpec::Scripted { epsilon, .. } => Some(*epsilon),
            _ => None,
        }
    }

    pub fn build(&self, master_seed: u64) -> Result<Arc<dyn Backend>, HarnessError> {
        let b: Arc<dyn Backend> = match self {
            BackendSpec::Mock { name, profile, seed } => {
                let seed = seed.unwrap_or_else(|| mix(master_seed ^ name_hash(name)));
                Arc::new(MockBackend::new(name.clone(), profile.resolve()?, seed)?)
            }
            BackendSpec::Scripted { name, epsilon } => {
                if !(0.0..=1.0).contains(epsilon) {
                    return Err(HarnessError::Config(format!("epsilon {epsilon} outside [0, 1]")));
                }
                Arc::new(ScriptedBackend::new(name.clone(), *epsilon))
            }
            BackendSpec::Remote { name, config } => Arc::new(RemoteBackend::new(name.clone(), config.clone())?),
        };
        Ok(b)
    }
}

fn name_hash(name: &str) -> u64 {
    let d = Sha256::digest(name.as_bytes());
    u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
}

/// Who picks the executed action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActorKind {
    /// Parse the action out of the action-stage answer.
    #[default]
    Reply,
    /// Always wait.
    Wait,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExecutorConfig {
    pub aux_cap: usize,
    pub max_reasks: usize,
    pub max_iterations: usize,
    pub sampling: f64,
    pub action_sampling: f64,
    /// Directory of template overrides named like the shipped files.
    pub templates_dir: Option<PathBuf>,
    pub reinterpretation_dir: Option<PathBuf>,
    pub hypothetical_dir: Option<PathBuf>,
}

impl Default for ExecutorConfig {
    fn default() -> Self {
        ExecutorConfig {
            aux_cap: DEFAULT_AUX_CAP,
            max_reasks: DEFAULT_MAX_REASKS,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            sampling: 1.0,
            action_sampling: 1.0,
            templates_dir: None,
            reinterpretation_dir: None,
            hypothetical_dir: None,
        }
    }
}

impl ExecutorConfig {
    pub fn build(&self) -> Result<Executor, HarnessError> {
        let cfg = |e: crate::elicitation::ElicitError| HarnessError::Config(e.to_string());
        let templates = match &self.templates_dir {
            Some(dir) => TemplateSet::with_overrides(dir).map_err(cfg)?,
            None => TemplateSet::builtin().clone(),
        };
        let bank = |dir: &Option<PathBuf>, default: PromptBank| match dir {
            Some(d) => PromptBank::from_dir(&default.name, d).map_err(cfg),
            None => Ok(default),
        };
        Ok(Executor {
            templates,
            reinterpretation: bank(&self.reinterpretation_dir, PromptBank::reinterpretation())?,
            hypothetical: bank(&self.hypothetical_dir, PromptBank::hypothetical())?,
            aux_cap: self.aux_cap,
            max_reasks: self.max_reasks,
            sampling: self.sampling,
            action_sampling: self.action_sampling,
        })
    }
}

/// Declarative run matrix. Unset fields fall back to the preset named in
/// `preset`, then to built-in defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(rename = "backend")]
    pub backends: Vec<BackendSpec>,
    #[serde(default = "default_elicitation")]
    pub elicitation: Vec<ElicitationPolicy>,
    #[serde(default = "default_execution")]
    pub execution: Vec<ExecutionPlan>,
    /// Iteration sweep: every plan is run once per value.
    #[serde(default)]
    pub iterations: Option<Vec<usize>>,
    #[serde(default)]
    pub tasks: Option<Vec<u32>>,
    #[serde(default)]
    pub difficulty: Option<Vec<Difficulty>>,
    #[serde(default = "default_episodes")]
    pub episodes_per_task: usize,
    #[serde(default = "default_step_cap")]
    pub step_cap: usize,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default)]
    pub master_seed: u64,
    /// Explicit world seed per episode index.
    #[serde(default)]
    pub world_seeds: Option<Vec<u64>>,
    /// Adds per-difficulty rows next to the pooled ones.
    #[serde(default)]
    pub stratify: bool,
    #[serde(default = "default_stages")]
    pub stages: Vec<Stage>,
    /// Replaces episodes with this many standalone elicitations per cell,
    /// labelled by the backend.
    #[serde(default)]
    pub probe: Option<usize>,
    #[serde(default)]
    pub actor: ActorKind,
    #[serde(default)]
    pub perception_rule: PerceptionRule,
    #[serde(default)]
    pub world: WorldParams,
    #[serde(default)]
    pub executor: ExecutorConfig,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_name() -> String {
    "experiment".into()
}
fn default_elicitation() -> Vec<ElicitationPolicy> {
    vec![ElicitationPolicy::vanilla()]
}
fn default_execution() -> Vec<ExecutionPlan> {
    vec![ExecutionPlan(vec![ExecutionPolicy::none()])]
}
fn default_episodes() -> usize {
    5
}
fn default_step_cap() -> usize {
    6000
}
fn default_bins() -> usize {
    DEFAULT_BINS
}
fn default_stages() -> Vec<Stage> {
    Stage::ALL.to_vec()
}

impl ExperimentConfig {
    pub fn preset(name: &str) -> Result<Self, HarnessError> {
        Self::from_toml_str(&format!("preset = {name:?}"))
    }

    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io(path.display().to_string(), e))?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        if let Some(preset) = table.remove("preset") {
            let name = preset
                .as_str()
                .ok_or_else(|| HarnessError::Config("preset must be a string".into()))?;
            let (_, base) = PRESETS
                .iter()
                .find(|(n, _)| *n == name)
                .ok_or_else(|| HarnessError::Config(format!("unknown preset {name:?}")))?;
            let mut merged: toml::Table = toml::from_str(base).expect("shipped preset parses");
            merged.extend(table);
            table = merged;
        }
        let cfg: ExperimentConfig = table.try_into().map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.backends.is_empty() {
            return bad("at least one backend is required".into());
        }
        if self.elicitation.is_empty() || self.execution.is_empty() {
            return bad("elicitation and execution lists must be nonempty".into());
        }
        if self.episodes_per_task == 0 {
            return bad("episodes_per_task must be >= 1".into());
        }
        if self.step_cap == 0 || self.bins == 0 {
            return bad("step_cap and bins must be >= 1".into());
        }
        if self.probe == Some(0) {
            return bad("probe needs at least one item".into());
        }
        if self.stages.is_empty() {
            return bad("stages must be nonempty".into());
        }
        let max = self.executor.max_iterations;
        let over = self
            .execution
            .iter()
            .flat_map(|p| p.0.iter().map(|e| e.iterations()))
            .chain(self.iterations.iter().flatten().copied())
            .find(|i| *i > max);
        if let Some(i) = over {
            return bad(format!("{i} iterations exceed max_iterations = {max}"));
        }
        if let Some(seeds) = &self.world_seeds {
            if seeds.len() < self.episodes_per_task {
                return bad("world_seeds must list one seed per episode".into());
            }
        }
        let mut names: Vec<&str> = self.backends.iter().map(|b| b.name()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return bad("backend names must be unique".into());
        }
        self.selected_tasks(Catalog::builtin())?;
        Ok(())
    }

    /// Tasks picked by `tasks` and `difficulty`, in catalog order.
    pub fn selected_tasks<'c>(&self, catalog: &'c Catalog) -> Result<Vec<&'c Task>, HarnessError> {
        if let Some(ids) = &self.tasks {
            for id in ids {
                catalog.task(*id).map_err(|_| HarnessError::Config(format!("unknown task id {id}")))?;
            }
        }
        let picked: Vec<&Task> = catalog
            .tasks
            .iter()
            .filter(|t| self.tasks.as_ref().is_none_or(|ids| ids.contains(&t.id)))
            .filter(|t| self.difficulty.as_ref().is_none_or(|d| d.contains(&t.difficulty)))
            .collect();
        if picked.is_empty() && self.probe.is_none() {
            return Err(HarnessError::Config("task selection is empty".into()));
        }
        Ok(picked)
    }

    /// World seed for an episode, shared by every cell.
    pub fn world_seed(&self, task_id: u32, episode: usize) -> u64 {
        match &self.world_seeds {
            Some(seeds) => seeds[episode],
            None => mix(self.master_seed ^ (u64::from(task_id) << 32) ^ episode as u64),
        }
    }

    /// Every (backend, elicitation, execution, iterations) combination.
    pub fn cells(&self) -> Result<Vec<CellSpec>, HarnessError> {
        let mut cells = Vec::new();
        for backend in 0..self.backends.len() {
            for elic in &self.elicitation {
                for plan in &self.execution {
                    let sweep: Vec<Option<usize>> = match &self.iterations {
                        Some(its) => its.iter().map(|i| Some(*i)).collect(),
                        None => vec![None],
                    };
                    for iterations in sweep {
                        let plan = match iterations {
                            Some(i) => plan.with_iterations(i)?,
                            None => plan.clone(),
                        };
                        cells.push(CellSpec {
                            index: cells.len(),
                            backend,
                            elicitation: *elic,
                            plan,
                            iterations,
                        });
                    }
                }
            }
        }
        Ok(cells)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSpec {
    pub index: usize,
    /// Position in [`ExperimentConfig::backends`].
    pub backend: usize,
    pub elicitation: ElicitationPolicy,
    pub plan: ExecutionPlan,
    /// Set in sweep mode.
    pub iterations: Option<usize>,
}

impl CellSpec {
    /// Seed stream of this cell; independent of execution order.
    pub fn stream(&self, master_seed: u64) -> u64 {
        mix(master_seed ^ mix(self.index as u64 + 1))
    }
}
