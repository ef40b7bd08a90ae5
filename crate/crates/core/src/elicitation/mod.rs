//! Stage-specific confidence prompts and reply parsing.

mod parse;
mod templates;

pub use parse::{answer_text, parse_confidence, parse_topk};
pub use templates::{substitute, template_name, Phase, PromptBank, TemplateSet, PLACEHOLDERS};

use crate::metrics::Stage;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

/// Structured follow-up sent when a reply carries no usable confidence.
pub const REASK: &str = "Reply with 'Confidence: NN%'";

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ElicitError {
    #[error("self-intervention evaluation needs the prior answer")]
    MissingPriorAnswer,
    #[error("no parseable confidence in reply")]
    UnparseableConfidence,
    #[error("unknown placeholder {{{0}}}")]
    UnknownPlaceholder(String),
    #[error("template: {0}")]
    Template(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Vanilla,
    SelfIntervention,
    Cot,
    PlanSolve,
    Topk,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::Vanilla,
        PolicyKind::SelfIntervention,
        PolicyKind::Cot,
        PolicyKind::PlanSolve,
        PolicyKind::Topk,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Vanilla => "vanilla",
            PolicyKind::SelfIntervention => "self_intervention",
            PolicyKind::Cot => "cot",
            PolicyKind::PlanSolve => "plan_solve",
            PolicyKind::Topk => "topk",
        }
    }
}

/// What kind of uncertainty is asked for. `k` only matters for top-k.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct ElicitationPolicy {
    pub kind: PolicyKind,
    k: usize,
}

impl ElicitationPolicy {
    pub fn new(kind: PolicyKind, k: usize) -> Self {
        let k = if kind == PolicyKind::Topk { k.max(1) } else { 1 };
        ElicitationPolicy { kind, k }
    }

    pub fn of(kind: PolicyKind) -> Self {
        Self::new(kind, 3)
    }

    pub fn vanilla() -> Self {
        Self::new(PolicyKind::Vanilla, 1)
    }

    pub fn topk(k: usize) -> Self {
        Self::new(PolicyKind::Topk, k)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Backend calls one elicitation costs: self-intervention asks twice.
    pub fn calls_per_sample(&self) -> usize {
        match self.kind {
            PolicyKind::SelfIntervention => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for ElicitationPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            PolicyKind::Topk => write!(f, "topk:{}", self.k),
            kind => f.write_str(kind.as_str()),
        }
    }
}

impl FromStr for ElicitationPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        let (name, k) = match norm.split_once(':') {
            Some((n, k)) => (n.to_string(), Some(k.parse::<usize>().map_err(|e| format!("bad k in {s:?}: {e}"))?)),
            None => (norm.clone(), None),
        };
        let kind = match name.as_str() {
            "vanilla" => PolicyKind::Vanilla,
            "self_intervention" | "si" => PolicyKind::SelfIntervention,
            "cot" | "chain_of_thought" => PolicyKind::Cot,
            "plan_solve" | "plan_and_solve" | "ps" => PolicyKind::PlanSolve,
            "topk" | "top_k" => PolicyKind::Topk,
            _ => return Err(format!("unknown elicitation policy {s:?}")),
        };
        if k == Some(0) {
            return Err("top-k needs k >= 1".into());
        }
        Ok(ElicitationPolicy::new(kind, k.unwrap_or(3)))
    }
}

impl From<ElicitationPolicy> for String {
    fn from(p: ElicitationPolicy) -> String {
        p.to_string()
    }
}

impl TryFrom<String> for ElicitationPolicy {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

/// Inputs to one elicitation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElicitationContext {
    pub task_text: String,
    pub observation_text: String,
    pub stage: Stage,
    #[serde(default)]
    pub prior_answer: Option<String>,
    #[serde(default)]
    pub auxiliary_notes: Vec<String>,
}

impl ElicitationContext {
    pub fn new(task_text: impl Into<String>, observation_text: impl Into<String>, stage: Stage) -> Self {
        ElicitationContext {
            task_text: task_text.into(),
            observation_text: observation_text.into(),
            stage,
            prior_answer: None,
            auxiliary_notes: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElicitedResult {
    pub answer_text: String,
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub candidates: Vec<(String, f64)>,
}

/// Renders the auxiliary-notes slot. Empty when there are no notes.
pub fn aux_block(notes: &[String]) -> String {
    if notes.is_empty() {
        return String::new();
    }
    let mut s = String::from("Additional scene insights:\n");
    for n in notes {
        s.push_str("- ");
        s.push_str(&n.replace('\n', " "));
        s.push('\n');
    }
    s
}

/// Number of bullet notes in a prompt's insight block.
pub fn count_aux_notes(prompt: &str) -> usize {
    let Some(at) = prompt.find("Additional scene insights:") else {
        return 0;
    };
    prompt[at..]
        .lines()
        .skip(1)
        .take_while(|l| l.starts_with("- "))
        .count()
}

fn slot_values(policy: &ElicitationPolicy, ctx: &ElicitationContext) -> BTreeMap<&'static str, String> {
    BTreeMap::from([
        ("task", ctx.task_text.clone()),
        ("observation", ctx.observation_text.clone()),
        ("prior_answer", ctx.prior_answer.clone().unwrap_or_default()),
        ("aux_notes", aux_block(&ctx.auxiliary_notes)),
        ("k", policy.k.to_string()),
    ])
}

/// Renders a single message of the policy's protocol.
pub fn render_phase(
    templates: &TemplateSet,
    policy: &ElicitationPolicy,
    ctx: &ElicitationContext,
    phase: Phase,
) -> Result<String, ElicitError> {
    let is_si = policy.kind == PolicyKind::SelfIntervention;
    if phase == Phase::Generate && !is_si {
        return Err(ElicitError::Template(format!("{} has no answer-only pass", policy.kind.as_str())));
    }
    if is_si && phase == Phase::Evaluate && ctx.prior_answer.is_none() {
        return Err(ElicitError::MissingPriorAnswer);
    }
    let template = templates.get(policy.kind, ctx.stage, phase)?;
    substitute(template, &slot_values(policy, ctx))
}

/// The full message protocol: one message, or for self-intervention the
/// generation message followed by the fresh-session evaluation message.
pub fn render_prompt_with(
    templates: &TemplateSet,
    policy: &ElicitationPolicy,
    ctx: &ElicitationContext,
) -> Result<Vec<String>, ElicitError> {
    if policy.kind == PolicyKind::SelfIntervention {
        let eval = render_phase(templates, policy, ctx, Phase::Evaluate)?;
        let gen = render_phase(templates, policy, ctx, Phase::Generate)?;
        Ok(vec![gen, eval])
    } else {
        Ok(vec![render_phase(templates, policy, ctx, Phase::Evaluate)?])
    }
}

pub fn render_prompt(policy: &ElicitationPolicy, ctx: &ElicitationContext) -> Result<Vec<String>, ElicitError> {
    render_prompt_with(TemplateSet::builtin(), policy, ctx)
}

/// Follow-up for an unparseable reply.
pub fn reask_message(policy: &ElicitationPolicy) -> String {
    match policy.kind {
        PolicyKind::Topk => format!(
            "Reply with your {} best answers, one per line, each ending with 'NN%'",
            policy.k
        ),
        _ => REASK.to_string(),
    }
}

/// Reads a reply under `policy`. Top-k takes the top candidate's probability.
pub fn parse_reply(policy: &ElicitationPolicy, reply: &str) -> Result<ElicitedResult, ElicitError> {
    if policy.kind == PolicyKind::Topk {
        let candidates = parse_topk(reply, policy.k)?;
        let (answer, p) = candidates[0].clone();
        return Ok(ElicitedResult {
            answer_text: answer,
            confidence: p,
            candidates,
        });
    }
    Ok(ElicitedResult {
        answer_text: answer_text(reply),
        confidence: parse_confidence(reply)?,
        candidates: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(stage: Stage) -> ElicitationContext {
        ElicitationContext::new("Find a pig", "Time: day\n- pig at 3N 0E", stage)
    }

    #[test]
    fn vanilla_perception_uses_table_wording() {
        let msgs = render_prompt(&ElicitationPolicy::vanilla(), &ctx(Stage::Perception)).unwrap();
        assert_eq!(msgs.len(), 1);
        assert!(msgs[0].contains("recognizing resources, locating structures"));
        assert!(msgs[0].contains("Find a pig"));
    }

    #[test]
    fn topk_action_names_k() {
        let msgs = render_prompt(&ElicitationPolicy::topk(3), &ctx(Stage::Action)).unwrap();
        assert!(msgs[0].contains("3 best plans"));
        assert!(msgs[0].contains("probability that each will succeed (0% to 100%)"));
    }

    #[test]
    fn aux_notes_are_delimited() {
        let mut c = ctx(Stage::Action);
        c.auxiliary_notes.push("n1".into());
        let msg = &render_prompt(&ElicitationPolicy::of(PolicyKind::Cot), &c).unwrap()[0];
        assert!(msg.contains("Additional scene insights:\n- n1\n"));
        assert_eq!(count_aux_notes(msg), 1);
    }

    #[test]
    fn self_intervention_needs_prior_answer() {
        let p = ElicitationPolicy::of(PolicyKind::SelfIntervention);
        let mut c = ctx(Stage::Perception);
        assert_eq!(render_prompt(&p, &c), Err(ElicitError::MissingPriorAnswer));
        assert!(render_phase(TemplateSet::builtin(), &p, &c, Phase::Generate).is_ok());
        c.prior_answer = Some("a pig to the north".into());
        let msgs = render_prompt(&p, &c).unwrap();
        assert_eq!(msgs.len(), 2);
        assert!(msgs[1].contains("Perceived Situation: a pig to the north"));
        assert!(!msgs[1].contains(&c.observation_text));
    }

    #[test]
    fn substitution_is_single_pass() {
        let mut c = ctx(Stage::Perception);
        c.task_text = "{observation}".into();
        let msg = &render_prompt(&ElicitationPolicy::vanilla(), &c).unwrap()[0];
        assert!(msg.starts_with("Task: {observation}\n"));
        let err = substitute("{task} {nope}", &BTreeMap::from([("task", "x".to_string())]));
        assert_eq!(err, Err(ElicitError::UnknownPlaceholder("nope".into())));
    }

    #[test]
    fn policy_names_round_trip() {
        for kind in PolicyKind::ALL {
            let p = ElicitationPolicy::of(kind);
            assert_eq!(p.to_string().parse::<ElicitationPolicy>().unwrap(), p);
        }
        assert_eq!(ElicitationPolicy::new(PolicyKind::Cot, 5).k(), 1);
        assert!("topk:0".parse::<ElicitationPolicy>().is_err());
    }
}
