use super::{ElicitError, PolicyKind};
use crate::metrics::Stage;
use regex::Regex;
use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;

pub const PLACEHOLDERS: &[&str] = &["task", "observation", "prior_answer", "aux_notes", "k"];

/// Which message of a policy a template renders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    /// The answer-only first pass of self-intervention.
    Generate,
    /// The message that asks for confidence.
    Evaluate,
}

macro_rules! builtin {
    ($($name:literal),+ $(,)?) => {
        &[$(($name, include_str!(concat!("../../data/templates/", $name, ".txt")))),+]
    };
}

const BUILTIN_TEMPLATES: &[(&str, &str)] = builtin!(
    "vanilla_perception",
    "vanilla_action",
    "self_intervention_answer_perception",
    "self_intervention_answer_action",
    "self_intervention_perception",
    "self_intervention_action",
    "cot_perception",
    "cot_action",
    "plan_solve_perception",
    "plan_solve_action",
    "topk_perception",
    "topk_action",
);

/// File stem of the template for `(kind, stage, phase)`.
pub fn template_name(kind: PolicyKind, stage: Stage, phase: Phase) -> String {
    match phase {
        Phase::Generate => format!("{}_answer_{}", kind.as_str(), stage.as_str()),
        Phase::Evaluate => format!("{}_{}", kind.as_str(), stage.as_str()),
    }
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([a-z_]+)\}").expect("placeholder regex"))
}

/// Substitutes `{name}` slots in one pass; inserted values are not rescanned.
pub fn substitute(template: &str, values: &BTreeMap<&str, String>) -> Result<String, ElicitError> {
    let mut out = String::with_capacity(template.len() + 256);
    let mut last = 0;
    for cap in placeholder_re().captures_iter(template) {
        let whole = cap.get(0).expect("match");
        let name = &cap[1];
        let value = values
            .get(name)
            .ok_or_else(|| ElicitError::UnknownPlaceholder(name.to_string()))?;
        out.push_str(&template[last..whole.start()]);
        out.push_str(value);
        last = whole.end();
    }
    out.push_str(&template[last..]);
    Ok(out)
}

/// Template text keyed by file stem, e.g. `cot_action`.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateSet {
    templates: BTreeMap<String, String>,
}

impl TemplateSet {
    pub fn builtin() -> &'static TemplateSet {
        static SET: OnceLock<TemplateSet> = OnceLock::new();
        SET.get_or_init(|| {
            let templates = BUILTIN_TEMPLATES
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect();
            let set = TemplateSet { templates };
            set.validate().expect("shipped templates are valid");
            set
        })
    }

    /// Built-in set with any `<name>.txt` found in `dir` overriding the default.
    pub fn with_overrides(dir: &Path) -> Result<TemplateSet, ElicitError> {
        let mut set = TemplateSet::builtin().clone();
        for (name, _) in BUILTIN_TEMPLATES {
            let path = dir.join(format!("{name}.txt"));
            if path.exists() {
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| ElicitError::Template(format!("{}: {e}", path.display())))?;
                set.templates.insert(name.to_string(), text);
            }
        }
        set.validate()?;
        Ok(set)
    }

    pub fn insert(&mut self, name: &str, text: &str) -> Result<(), ElicitError> {
        if !self.templates.contains_key(name) {
            return Err(ElicitError::Template(format!("no template slot named {name}")));
        }
        self.templates.insert(name.to_string(), text.to_string());
        self.validate()
    }

    pub fn get(&self, kind: PolicyKind, stage: Stage, phase: Phase) -> Result<&str, ElicitError> {
        let name = template_name(kind, stage, phase);
        self.templates
            .get(&name)
            .map(String::as_str)
            .ok_or(ElicitError::Template(format!("missing template {name}")))
    }

    /// Every slot must be a known placeholder and carry `{task}`; perception
    /// templates that see the scene carry `{observation}` exactly once.
    pub fn validate(&self) -> Result<(), ElicitError> {
        for (name, text) in &self.templates {
            let slots: Vec<&str> = placeholder_re()
                .captures_iter(text)
                .map(|c| c.get(1).expect("group").as_str())
                .collect();
            if let Some(bad) = slots.iter().find(|s| !PLACEHOLDERS.contains(s)) {
                return Err(ElicitError::UnknownPlaceholder(format!("{bad} in {name}")));
            }
            let count = |p: &str| slots.iter().filter(|s| **s == p).count();
            if count("task") == 0 {
                return Err(ElicitError::Template(format!("{name} lacks {{task}}")));
            }
            if name.ends_with("_perception") && count("observation") > 1 {
                return Err(ElicitError::Template(format!("{name} repeats {{observation}}")));
            }
            let sees_scene = !name.starts_with("self_intervention_") || name.contains("_answer_");
            if name.ends_with("_perception") && sees_scene && count("observation") != 1 {
                return Err(ElicitError::Template(format!("{name} must show {{observation}} once")));
            }
            if name.starts_with("topk_") && count("k") == 0 {
                return Err(ElicitError::Template(format!("{name} lacks {{k}}")));
            }
            if name.starts_with("self_intervention_") && !name.contains("_answer_") && count("prior_answer") == 0 {
                return Err(ElicitError::Template(format!("{name} lacks {{prior_answer}}")));
            }
        }
        Ok(())
    }
}

/// A rotating bank of auxiliary prompts for the refinement loop.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptBank {
    pub name: String,
    pub prompts: Vec<String>,
}

const REINTERPRETATION: &[&str] = &[
    include_str!("../../data/banks/scenario_reinterpretation/1_focus_target.txt"),
    include_str!("../../data/banks/scenario_reinterpretation/2_obstacles.txt"),
    include_str!("../../data/banks/scenario_reinterpretation/3_proximity.txt"),
    include_str!("../../data/banks/scenario_reinterpretation/4_resources.txt"),
    include_str!("../../data/banks/scenario_reinterpretation/5_threats.txt"),
    include_str!("../../data/banks/scenario_reinterpretation/6_landmarks.txt"),
];

const HYPOTHETICAL: &[&str] = &[
    include_str!("../../data/banks/hypothetical_reasoning/1_path_clear.txt"),
    include_str!("../../data/banks/hypothetical_reasoning/2_target_gone.txt"),
    include_str!("../../data/banks/hypothetical_reasoning/3_tool_missing.txt"),
    include_str!("../../data/banks/hypothetical_reasoning/4_nightfall.txt"),
    include_str!("../../data/banks/hypothetical_reasoning/5_misread.txt"),
    include_str!("../../data/banks/hypothetical_reasoning/6_extra_resource.txt"),
];

impl PromptBank {
    pub fn reinterpretation() -> PromptBank {
        PromptBank {
            name: "scenario_reinterpretation".into(),
            prompts: REINTERPRETATION.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn hypothetical() -> PromptBank {
        PromptBank {
            name: "hypothetical_reasoning".into(),
            prompts: HYPOTHETICAL.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Loads every `*.txt` in `dir`, ordered by file name.
    pub fn from_dir(name: &str, dir: &Path) -> Result<PromptBank, ElicitError> {
        let read_err = |e: std::io::Error| ElicitError::Template(format!("{}: {e}", dir.display()));
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(read_err)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "txt"))
            .collect();
        paths.sort();
        let prompts = paths
            .iter()
            .map(|p| std::fs::read_to_string(p).map_err(read_err))
            .collect::<Result<Vec<_>, _>>()?;
        if prompts.is_empty() {
            return Err(ElicitError::Template(format!("empty prompt bank {}", dir.display())));
        }
        Ok(PromptBank {
            name: name.to_string(),
            prompts,
        })
    }

    /// Prompt used at `iteration`, cycling through the bank.
    pub fn pick(&self, iteration: usize) -> &str {
        &self.prompts[iteration % self.prompts.len()]
    }
}
