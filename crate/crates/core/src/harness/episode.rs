use super::config::ActorKind;
use super::HarnessError;
use crate::backend::{Backend, Grounding, Solver};
use crate::elicitation::{ElicitationContext, ElicitationPolicy};
use crate::execution::{ExecutionError, ExecutionPolicy, Executor, RolloutKey, RolloutSet};
use crate::metrics::{ConfidenceRecord, Stage};
use crate::world::{
    check_success, claimed_facts, generate, label_claim, mix, observe, privileged_observe, Action, Catalog, Event,
    Fact, PerceptionRule, Task, WorldParams, WorldState,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeSet;
use std::sync::Arc;

/// Result of eliciting one stage at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOutcome {
    pub answer: String,
    /// Absent when no reply yielded a confidence; such outcomes are excluded
    /// from metrics.
    pub confidence: Option<f64>,
    /// Perception: claim checked against the privileged view.
    /// Action: the episode outcome.
    pub correct: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub claim: Option<BTreeSet<Fact>>,
    pub variance: f64,
    pub samples: usize,
    pub calls: usize,
    pub reasks: usize,
    /// Elicitations inside the rollout that produced no confidence.
    pub unparsed: usize,
}

impl StageOutcome {
    fn from_set(set: &RolloutSet) -> Self {
        StageOutcome {
            answer: set.base_answer().to_string(),
            confidence: Some(set.combined_confidence),
            correct: None,
            claim: None,
            variance: set.variance,
            samples: set.elicited.len(),
            calls: set.calls,
            reasks: set.reasks,
            unparsed: set.missing,
        }
    }

    fn missing(answer: Option<String>, missing: usize) -> Self {
        StageOutcome {
            answer: answer.unwrap_or_default(),
            confidence: None,
            correct: None,
            claim: None,
            variance: 0.0,
            samples: 0,
            calls: 0,
            reasks: 0,
            unparsed: missing,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u32,
    /// SHA-256 of the observation text, hex encoded.
    pub observation_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perception: Option<StageOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planning: Option<StageOutcome>,
    /// Absent only when the backend failed before an action was chosen.
    pub action: Option<Action>,
    pub events: Vec<Event>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub task_id: u32,
    pub episode_id: u32,
    pub seed: u64,
    pub step_cap: usize,
    pub world: WorldParams,
    pub steps: Vec<StepRecord>,
    pub success: bool,
    /// Set when the backend gave up; the steps so far are kept.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl EpisodeTrace {
    pub fn step_count(&self) -> usize {
        self.steps.iter().filter(|s| s.action.is_some()).count()
    }

    fn outcomes(&self) -> impl Iterator<Item = (Stage, &StageOutcome, u32)> {
        self.steps.iter().flat_map(|s| {
            s.perception
                .iter()
                .map(move |o| (Stage::Perception, o, s.step))
                .chain(s.planning.iter().map(move |o| (Stage::Action, o, s.step)))
        })
    }

    /// Stage elicitations attempted.
    pub fn elicited_stages(&self) -> usize {
        self.outcomes().count()
    }

    /// Stage elicitations that produced no confidence.
    pub fn missing_confidence(&self) -> usize {
        self.outcomes().filter(|(_, o, _)| o.confidence.is_none()).count()
    }

    pub fn missing_confidence_in(&self, stage: Stage) -> usize {
        self.outcomes()
            .filter(|(s, o, _)| *s == stage && o.confidence.is_none())
            .count()
    }

    /// Every labelled confidence in step order.
    pub fn records(&self) -> Vec<ConfidenceRecord> {
        self.outcomes()
            .filter_map(|(stage, o, step)| {
                let c = o.confidence?;
                let correct = o.correct?;
                let rec = ConfidenceRecord::new(c, correct, stage).ok()?;
                Some(rec.with_origin(self.task_id, self.episode_id, step))
            })
            .collect()
    }
}

/// Hex SHA-256 of an observation.
pub fn observation_digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Last action mentioned in free text, trying up to four-word phrases.
pub fn parse_action(text: &str) -> Option<Action> {
    for line in text.lines().rev() {
        let lower = line.to_ascii_lowercase();
        let words: Vec<&str> = lower
            .split(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
            .filter(|w| !w.is_empty() && !matches!(*w, "a" | "an" | "the"))
            .collect();
        let mut found = None;
        for start in 0..words.len() {
            for len in (1..=4.min(words.len() - start)).rev() {
                if let Ok(a) = words[start..start + len].join(" ").parse::<Action>() {
                    found = Some(a);
                    break;
                }
            }
        }
        if found.is_some() {
            return found;
        }
    }
    None
}

/// Everything fixed for the episodes of one cell.
pub struct EpisodeRunner<'a> {
    pub catalog: &'a Catalog,
    pub backend: &'a dyn Backend,
    pub executor: &'a Executor,
    pub elicitation: ElicitationPolicy,
    pub plan: &'a [ExecutionPolicy],
    pub perception: bool,
    pub planning: bool,
    pub step_cap: usize,
    pub world: &'a WorldParams,
    pub rule: PerceptionRule,
    pub actor: ActorKind,
    /// When set, perception claims come from the solver at this misperception rate.
    pub solver_epsilon: Option<f64>,
    /// Seed stream of the cell; keys every backend call.
    pub stream: u64,
}

enum Staged {
    Done(StageOutcome),
    Failed(Option<StageOutcome>, String),
}

impl EpisodeRunner<'_> {
    fn elicit(&self, ctx: &ElicitationContext, grounding: Grounding) -> Staged {
        let key = RolloutKey {
            seed: mix(self.stream ^ grounding.key),
            grounding: Some(Arc::new(grounding)),
        };
        match self.executor.run(self.plan, ctx, &self.elicitation, self.backend, &key) {
            Ok(set) if set.failures > 0 => Staged::Failed(Some(StageOutcome::from_set(&set)), "backend failure during refinement".into()),
            Ok(set) => Staged::Done(StageOutcome::from_set(&set)),
            Err(ExecutionError::ExecutionFailed {
                failures: 0,
                missing,
                answer,
                ..
            }) => Staged::Done(StageOutcome::missing(answer, missing)),
            Err(ExecutionError::ExecutionFailed { last_error, .. }) => {
                Staged::Failed(None, last_error.unwrap_or_else(|| "backend failure".into()))
            }
            Err(e) => Staged::Failed(None, e.to_string()),
        }
    }

    /// Runs one episode until success or the step cap.
    pub fn run_episode(&self, task: &Task, episode_id: u32, seed: u64) -> EpisodeTrace {
        let mut state = generate(seed, task, self.world, self.catalog);
        let solver = Solver::new(self.catalog, self.solver_epsilon.unwrap_or(0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed ^ 0x501e));
        let item_base = mix(mix(seed) ^ u64::from(task.id) ^ (u64::from(episode_id) << 32));
        let mut trace = EpisodeTrace {
            task_id: task.id,
            episode_id,
            seed,
            step_cap: self.step_cap,
            world: self.world.clone(),
            steps: Vec::new(),
            success: false,
            failure: None,
        };
        let mut history: Vec<Event> = Vec::new();

        for step in 0..self.step_cap {
            let obs = observe(&state);
            let decision = solver.decide(&state, task, &mut rng);
            let truth = privileged_observe(&state);
            let mut record = StepRecord {
                step: step as u32,
                observation_digest: observation_digest(&obs),
                perception: None,
                planning: None,
                action: None,
                events: Vec::new(),
            };

            if self.perception {
                let grounding = Grounding {
                    stage: Some(Stage::Perception),
                    key: mix(item_base.wrapping_add(2 * step as u64)),
                    episode: None,
                    truth: truth.clone(),
                    relevant: task.relevant.clone(),
                    claim: self.solver_epsilon.map(|_| decision.claim.clone()),
                    plan: None,
                };
                let ctx = ElicitationContext::new(task.description.clone(), obs.clone(), Stage::Perception);
                let (outcome, failure) = match self.elicit(&ctx, grounding) {
                    Staged::Done(o) => (Some(o), None),
                    Staged::Failed(o, why) => (o, Some(why)),
                };
                record.perception = outcome.map(|mut o| {
                    let claim = claimed_facts(&o.answer);
                    o.correct = Some(label_claim(&claim, &truth, task, self.rule));
                    o.claim = Some(claim);
                    o
                });
                if let Some(why) = failure {
                    trace.failure = Some(why);
                    trace.steps.push(record);
                    break;
                }
            }

            let mut reply_action = None;
            if self.planning {
                let grounding = Grounding {
                    stage: Some(Stage::Action),
                    key: mix(item_base.wrapping_add(2 * step as u64 + 1)),
                    episode: Some(item_base),
                    truth,
                    relevant: task.relevant.clone(),
                    claim: None,
                    plan: Some(decision.action),
                };
                let ctx = ElicitationContext::new(task.description.clone(), obs, Stage::Action);
                match self.elicit(&ctx, grounding) {
                    Staged::Done(o) => {
                        reply_action = Some(parse_action(&o.answer).unwrap_or(Action::Wait));
                        record.planning = Some(o);
                    }
                    Staged::Failed(o, why) => {
                        record.planning = o;
                        trace.failure = Some(why);
                        trace.steps.push(record);
                        break;
                    }
                }
            }

            let action = match self.actor {
                ActorKind::Wait => Action::Wait,
                ActorKind::Reply => reply_action.unwrap_or(decision.action),
            };
            record.action = Some(action);
            record.events = state.apply(self.catalog, action);
            history.extend(record.events.iter().cloned());
            trace.steps.push(record);
            if check_success(task, &state, &history) {
                trace.success = true;
                break;
            }
        }
        // Planning confidences are judged by the episode outcome alone.
        let success = trace.success;
        for s in &mut trace.steps {
            if let Some(o) = s.planning.as_mut() {
                o.correct = Some(success);
            }
        }
        trace
    }
}

/// Replays a trace's actions on a freshly generated world and checks that
/// every event and the outcome match.
pub fn replay(trace: &EpisodeTrace, catalog: &Catalog) -> Result<WorldState, HarnessError> {
    let task = catalog
        .task(trace.task_id)
        .map_err(|_| HarnessError::Config(format!("unknown task id {}", trace.task_id)))?;
    let mut state = generate(trace.seed, task, &trace.world, catalog);
    let mut history = Vec::new();
    for s in &trace.steps {
        let Some(action) = s.action else { continue };
        let events = state.apply(catalog, action);
        let same = serde_json::to_vec(&events).expect("events serialize") == serde_json::to_vec(&s.events).expect("events serialize");
        if !same {
            return Err(HarnessError::ReplayMismatch {
                step: s.step,
                detail: format!("expected {:?}, replay produced {:?}", s.events, events),
            });
        }
        history.extend(events);
    }
    if check_success(task, &state, &history) != trace.success {
        return Err(HarnessError::ReplayMismatch {
            step: trace.steps.last().map_or(0, |s| s.step),
            detail: "episode outcome differs".into(),
        });
    }
    Ok(state)
}
