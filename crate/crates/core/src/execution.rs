//! Refinement loops around a backend and the rollout combiner.

use crate::backend::{AgentQuery, Backend, BackendError, Grounding, Message, Purpose, Reply};
use crate::elicitation::{
    answer_text, parse_reply, reask_message, render_phase, substitute, ElicitError, ElicitationContext,
    ElicitationPolicy, ElicitedResult, Phase, PolicyKind, PromptBank, TemplateSet,
};
use crate::world::mix;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

pub const DEFAULT_MAX_ITERATIONS: usize = 15;
pub const DEFAULT_AUX_CAP: usize = 8;
pub const DEFAULT_MAX_REASKS: usize = 2;

#[derive(Debug, thiserror::Error)]
pub enum ExecutionError {
    #[error("combine needs at least one confidence")]
    EmptyInput,
    #[error("confidence {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("invalid execution policy: {0}")]
    InvalidPolicy(String),
    #[error("no confidence elicited ({failures} backend failures, {missing} unparseable)")]
    ExecutionFailed {
        failures: usize,
        missing: usize,
        last_error: Option<String>,
        /// Answer text of the first reply, if any arrived.
        answer: Option<String>,
    },
    #[error(transparent)]
    Prompt(#[from] ElicitError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutionKind {
    None,
    ActionSampling,
    ScenarioReinterpretation,
    HypotheticalReasoning,
}

impl ExecutionKind {
    pub fn short(self) -> &'static str {
        match self {
            ExecutionKind::None => "none",
            ExecutionKind::ActionSampling => "as",
            ExecutionKind::ScenarioReinterpretation => "sr",
            ExecutionKind::HypotheticalReasoning => "hr",
        }
    }

    /// Extra backend calls per iteration besides the elicitations.
    pub fn aux_calls(self) -> usize {
        match self {
            ExecutionKind::ScenarioReinterpretation | ExecutionKind::HypotheticalReasoning => 1,
            _ => 0,
        }
    }
}

/// One refinement loop. `None` never iterates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct ExecutionPolicy {
    pub kind: ExecutionKind,
    iterations: usize,
    samples_per_iteration: usize,
}

impl ExecutionPolicy {
    pub fn none() -> Self {
        ExecutionPolicy {
            kind: ExecutionKind::None,
            iterations: 0,
            samples_per_iteration: 1,
        }
    }

    pub fn new(kind: ExecutionKind, iterations: usize, samples_per_iteration: usize) -> Result<Self, ExecutionError> {
        Self::with_max(kind, iterations, samples_per_iteration, DEFAULT_MAX_ITERATIONS)
    }

    pub fn with_max(
        kind: ExecutionKind,
        iterations: usize,
        samples_per_iteration: usize,
        max_iterations: usize,
    ) -> Result<Self, ExecutionError> {
        if samples_per_iteration == 0 {
            return Err(ExecutionError::InvalidPolicy("samples_per_iteration must be >= 1".into()));
        }
        if iterations > max_iterations {
            return Err(ExecutionError::InvalidPolicy(format!(
                "{iterations} iterations exceed the maximum of {max_iterations}"
            )));
        }
        if kind == ExecutionKind::None {
            return Ok(Self::none());
        }
        Ok(ExecutionPolicy {
            kind,
            iterations,
            samples_per_iteration,
        })
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn samples_per_iteration(&self) -> usize {
        self.samples_per_iteration
    }

    /// The same policy run for a different number of iterations.
    pub fn with_iterations(&self, iterations: usize) -> Result<Self, ExecutionError> {
        Self::with_max(self.kind, iterations, self.samples_per_iteration, usize::MAX)
    }
}

impl fmt::Display for ExecutionPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ExecutionKind::None => f.write_str("none"),
            k => write!(f, "{}:{}x{}", k.short(), self.iterations, self.samples_per_iteration),
        }
    }
}

impl FromStr for ExecutionPolicy {
    type Err = String;

    /// `none`, `as`, `sr:5`, `hr:10x2` (iterations x samples).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        let (name, rest) = s.split_once(':').unwrap_or((s.as_str(), ""));
        let kind = match name {
            "none" => ExecutionKind::None,
            "as" | "action_sampling" => ExecutionKind::ActionSampling,
            "sr" | "scenario_reinterpretation" => ExecutionKind::ScenarioReinterpretation,
            "hr" | "hypothetical_reasoning" => ExecutionKind::HypotheticalReasoning,
            _ => return Err(format!("unknown execution policy {s:?}")),
        };
        let num = |t: &str| t.parse::<usize>().map_err(|e| format!("bad number in {s:?}: {e}"));
        let (iters, samples) = match rest.split_once('x') {
            _ if rest.is_empty() => (if kind == ExecutionKind::None { 0 } else { 5 }, 1),
            Some((i, n)) => (num(i)?, num(n)?),
            None => (num(rest)?, 1),
        };
        ExecutionPolicy::with_max(kind, iters, samples, usize::MAX).map_err(|e| e.to_string())
    }
}

impl From<ExecutionPolicy> for String {
    fn from(p: ExecutionPolicy) -> String {
        p.to_string()
    }
}

impl TryFrom<String> for ExecutionPolicy {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

/// Label for a sequence of policies, e.g. `as:5x1+sr:5x1`.
pub fn combination_name(policies: &[ExecutionPolicy]) -> String {
    if policies.is_empty() {
        return "none".into();
    }
    policies.iter().map(|p| p.to_string()).collect::<Vec<_>>().join("+")
}

/// Backend calls one rollout makes when every reply parses.
pub fn expected_calls(elic: &ElicitationPolicy, policies: &[ExecutionPolicy]) -> usize {
    let cps = elic.calls_per_sample();
    cps + policies
        .iter()
        .map(|p| p.iterations * (p.samples_per_iteration * cps + p.kind.aux_calls()))
        .sum::<usize>()
}

/// Elicitations one rollout records when every reply parses.
pub fn expected_elicitations(policies: &[ExecutionPolicy]) -> usize {
    1 + policies
        .iter()
        .map(|p| p.iterations * p.samples_per_iteration)
        .sum::<usize>()
}

/// Arithmetic mean and population variance.
pub fn combine(confidences: &[f64]) -> Result<(f64, f64), ExecutionError> {
    if confidences.is_empty() {
        return Err(ExecutionError::EmptyInput);
    }
    if let Some(bad) = confidences.iter().find(|c| !(0.0..=1.0).contains(*c)) {
        return Err(ExecutionError::OutOfRange(*bad));
    }
    let n = confidences.len() as f64;
    let lo = confidences.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = confidences.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = (confidences.iter().sum::<f64>() / n).clamp(lo, hi);
    let var = confidences.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutSet {
    pub elicited: Vec<ElicitedResult>,
    pub combined_confidence: f64,
    pub variance: f64,
    /// Side-channel label of the base elicitation, when the backend knows it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<bool>,
    pub aux_notes: Vec<String>,
    pub calls: usize,
    pub reasks: usize,
    /// Elicitations whose replies never yielded a confidence.
    pub missing: usize,
    /// Backend errors; the loop stops at the first one.
    pub failures: usize,
}

impl RolloutSet {
    /// Answer of the first (unrefined) elicitation.
    pub fn base_answer(&self) -> &str {
        self.elicited.first().map_or("", |e| e.answer_text.as_str())
    }
}

/// Loop settings shared by every rollout of an experiment cell.
#[derive(Debug, Clone)]
pub struct Executor {
    pub templates: TemplateSet,
    pub reinterpretation: PromptBank,
    pub hypothetical: PromptBank,
    pub aux_cap: usize,
    pub max_reasks: usize,
    /// Sampling knob for base and refinement elicitations.
    pub sampling: f64,
    /// Sampling knob for action-sampling draws.
    pub action_sampling: f64,
}

impl Default for Executor {
    fn default() -> Self {
        Executor {
            templates: TemplateSet::builtin().clone(),
            reinterpretation: PromptBank::reinterpretation(),
            hypothetical: PromptBank::hypothetical(),
            aux_cap: DEFAULT_AUX_CAP,
            max_reasks: DEFAULT_MAX_REASKS,
            sampling: 1.0,
            action_sampling: 1.0,
        }
    }
}

/// Per-rollout identity: seeds each call and grounds offline backends.
#[derive(Debug, Clone, Default)]
pub struct RolloutKey {
    pub seed: u64,
    pub grounding: Option<Arc<Grounding>>,
}

struct Run<'a, B: ?Sized> {
    exec: &'a Executor,
    backend: &'a B,
    key: &'a RolloutKey,
    elic: &'a ElicitationPolicy,
    set: RolloutSet,
    last_error: Option<String>,
    first_answer: Option<String>,
}

impl<B: Backend + ?Sized> Run<'_, B> {
    fn call(&mut self, messages: Vec<Message>, purpose: Purpose, sampling: f64) -> Result<Reply, BackendError> {
        let q = AgentQuery {
            messages,
            sampling,
            seed: Some(mix(self.key.seed.wrapping_add(self.set.calls as u64))),
            image_attachment: None,
            purpose,
            grounding: self.key.grounding.clone(),
        };
        self.set.calls += 1;
        if purpose == Purpose::Reask {
            self.set.reasks += 1;
        }
        self.backend.query(&q)
    }

    /// One elicitation with re-asks. `Ok(None)` means no confidence came back.
    fn elicit(&mut self, ctx: &ElicitationContext, sampling: f64) -> Result<Option<ElicitedResult>, ExecutionError> {
        match self.elicit_inner(ctx, sampling) {
            Ok(r) => Ok(r),
            Err(Fail::Prompt(e)) => Err(e.into()),
            Err(Fail::Backend(e)) => {
                self.set.failures += 1;
                self.last_error = Some(e.to_string());
                Ok(None)
            }
        }
    }

    fn elicit_inner(&mut self, ctx: &ElicitationContext, sampling: f64) -> Result<Option<ElicitedResult>, Fail> {
        let templates = &self.exec.templates;
        let mut label = None;
        let (mut messages, prior) = if self.elic.kind == PolicyKind::SelfIntervention {
            let gen = render_phase(templates, self.elic, ctx, Phase::Generate)?;
            let first = self.call(vec![Message::user(gen)], Purpose::Answer, sampling)?;
            label = first.label;
            let prior = answer_text(&first.text);
            let mut eval_ctx = ctx.clone();
            eval_ctx.prior_answer = Some(if prior.is_empty() { first.text.trim().to_string() } else { prior.clone() });
            let eval = render_phase(templates, self.elic, &eval_ctx, Phase::Evaluate)?;
            (vec![Message::user(eval)], Some(prior))
        } else {
            (vec![Message::user(render_phase(templates, self.elic, ctx, Phase::Evaluate)?)], None)
        };
        let mut purpose = Purpose::Elicit;
        for attempt in 0..=self.exec.max_reasks {
            if attempt > 0 {
                purpose = Purpose::Reask;
            }
            let reply = self.call(messages.clone(), purpose, sampling)?;
            label = label.or(reply.label);
            if self.first_answer.is_none() {
                self.first_answer = Some(prior.clone().unwrap_or_else(|| answer_text(&reply.text)));
            }
            if self.set.elicited.is_empty() && self.set.label.is_none() {
                self.set.label = label;
            }
            match parse_reply(self.elic, &reply.text) {
                Ok(mut r) => {
                    if let Some(p) = &prior {
                        r.answer_text = p.clone();
                    }
                    return Ok(Some(r));
                }
                Err(ElicitError::UnparseableConfidence) => {
                    messages.push(Message::assistant(reply.text));
                    messages.push(Message::user(reask_message(self.elic)));
                }
                Err(e) => return Err(e.into()),
            }
        }
        self.set.missing += 1;
        Ok(None)
    }
}

enum Fail {
    Prompt(ElicitError),
    Backend(BackendError),
}

impl From<ElicitError> for Fail {
    fn from(e: ElicitError) -> Self {
        Fail::Prompt(e)
    }
}

impl From<BackendError> for Fail {
    fn from(e: BackendError) -> Self {
        Fail::Backend(e)
    }
}

impl Executor {
    fn bank(&self, kind: ExecutionKind) -> Option<&PromptBank> {
        match kind {
            ExecutionKind::ScenarioReinterpretation => Some(&self.reinterpretation),
            ExecutionKind::HypotheticalReasoning => Some(&self.hypothetical),
            _ => None,
        }
    }

    /// Runs the base elicitation, then each policy in order, sharing one
    /// buffer of insight notes.
    pub fn run<B: Backend + ?Sized>(
        &self,
        policies: &[ExecutionPolicy],
        base_ctx: &ElicitationContext,
        elic: &ElicitationPolicy,
        backend: &B,
        key: &RolloutKey,
    ) -> Result<RolloutSet, ExecutionError> {
        let mut run = Run {
            exec: self,
            backend,
            key,
            elic,
            set: RolloutSet {
                elicited: Vec::new(),
                combined_confidence: 0.0,
                variance: 0.0,
                label: None,
                aux_notes: base_ctx.auxiliary_notes.clone(),
                calls: 0,
                reasks: 0,
                missing: 0,
                failures: 0,
            },
            last_error: None,
            first_answer: None,
        };
        let mut ctx = base_ctx.clone();
        if let Some(r) = run.elicit(&ctx, self.sampling)? {
            run.set.elicited.push(r);
        }
        'outer: for policy in policies {
            for it in 0..policy.iterations {
                if run.set.failures > 0 {
                    break 'outer;
                }
                if let Some(bank) = self.bank(policy.kind) {
                    let values = BTreeMap::from([
                        ("task", ctx.task_text.clone()),
                        ("observation", ctx.observation_text.clone()),
                        ("prior_answer", run.set.base_answer().to_string()),
                        ("aux_notes", crate::elicitation::aux_block(&ctx.auxiliary_notes)),
                        ("k", elic.k().to_string()),
                    ]);
                    let prompt = substitute(bank.pick(it), &values)?;
                    match run.call(vec![Message::user(prompt)], Purpose::Aux, self.sampling) {
                        Ok(reply) => {
                            let note = reply.text.trim().replace('\n', " ");
                            run.set.aux_notes.push(note);
                            let keep = run.set.aux_notes.len().saturating_sub(self.aux_cap);
                            run.set.aux_notes.drain(..keep);
                            ctx.auxiliary_notes = run.set.aux_notes.clone();
                        }
                        Err(e) => {
                            run.set.failures += 1;
                            run.last_error = Some(e.to_string());
                            break 'outer;
                        }
                    }
                }
                let sampling = if policy.kind == ExecutionKind::ActionSampling {
                    self.action_sampling
                } else {
                    self.sampling
                };
                for _ in 0..policy.samples_per_iteration {
                    if let Some(r) = run.elicit(&ctx, sampling)? {
                        run.set.elicited.push(r);
                    }
                    if run.set.failures > 0 {
                        break 'outer;
                    }
                }
            }
        }
        let mut set = run.set;
        if set.elicited.is_empty() {
            return Err(ExecutionError::ExecutionFailed {
                failures: set.failures,
                missing: set.missing,
                last_error: run.last_error,
                answer: run.first_answer,
            });
        }
        let confs: Vec<f64> = set.elicited.iter().map(|e| e.confidence).collect();
        (set.combined_confidence, set.variance) = combine(&confs)?;
        Ok(set)
    }
}

/// Single-policy rollout with default loop settings.
pub fn apply_execution<B: Backend + ?Sized>(
    policy: &ExecutionPolicy,
    base_ctx: &ElicitationContext,
    elic: &ElicitationPolicy,
    backend: &B,
    key: &RolloutKey,
) -> Result<RolloutSet, ExecutionError> {
    Executor::default().run(std::slice::from_ref(policy), base_ctx, elic, backend, key)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{CalibrationProfile, CountingBackend, MockBackend};
    use crate::metrics::Stage;

    fn ctx() -> ElicitationContext {
        ElicitationContext::new("Find a pig", "Time: day", Stage::Action)
    }

    #[test]
    fn combine_examples() {
        assert_eq!(combine(&[0.5]).unwrap(), (0.5, 0.0));
        let (m, v) = combine(&[0.2, 0.8]).unwrap();
        assert!((m - 0.5).abs() < 1e-15 && (v - 0.09).abs() < 1e-15);
        assert_eq!(combine(&[0.7; 9]).unwrap(), (0.7, 0.0));
        assert!(matches!(combine(&[]), Err(ExecutionError::EmptyInput)));
    }

    #[test]
    fn none_is_a_single_elicitation() {
        let m = MockBackend::new("m", CalibrationProfile::new(0.6, 0.0, 0.1), 3).unwrap();
        let set = apply_execution(&ExecutionPolicy::none(), &ctx(), &ElicitationPolicy::vanilla(), &m, &RolloutKey::default())
            .unwrap();
        assert_eq!(set.elicited.len(), 1);
        assert_eq!(set.variance, 0.0);
    }

    #[test]
    fn constant_stream_has_no_variance() {
        let m = MockBackend::new("m", CalibrationProfile::new(0.7, 0.0, 0.0), 3).unwrap();
        let p = ExecutionPolicy::new(ExecutionKind::ActionSampling, 5, 1).unwrap();
        let set = apply_execution(&p, &ctx(), &ElicitationPolicy::vanilla(), &m, &RolloutKey::default()).unwrap();
        assert_eq!(set.elicited.len(), 6);
        assert!((set.combined_confidence - 0.7).abs() < 1e-12);
        assert_eq!(set.variance, 0.0);
    }

    #[test]
    fn reinterpretation_loop_counts() {
        let m = CountingBackend::new(MockBackend::new("m", CalibrationProfile::new(0.7, 0.0, 0.0), 3).unwrap());
        let p = ExecutionPolicy::new(ExecutionKind::ScenarioReinterpretation, 2, 1).unwrap();
        let set = apply_execution(&p, &ctx(), &ElicitationPolicy::vanilla(), &m, &RolloutKey::default()).unwrap();
        assert_eq!(set.elicited.len(), 3);
        assert_eq!(m.count(Purpose::Aux), 2);
        assert_eq!(m.total(), 5);
        assert_eq!(set.aux_notes.len(), 2);
    }

    #[test]
    fn policy_strings() {
        assert_eq!("sr:10x2".parse::<ExecutionPolicy>().unwrap().to_string(), "sr:10x2");
        assert_eq!("none".parse::<ExecutionPolicy>().unwrap(), ExecutionPolicy::none());
        assert_eq!(
            ExecutionPolicy::new(ExecutionKind::None, 4, 1).unwrap().iterations(),
            0
        );
        assert!(ExecutionPolicy::new(ExecutionKind::ActionSampling, 16, 1).is_err());
        assert!("as:3x0".parse::<ExecutionPolicy>().is_err());
    }
}
