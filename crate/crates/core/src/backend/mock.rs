use super::{describe_claim, format_reply, AgentQuery, Backend, BackendError, Grounding, Purpose, Reply};
use crate::elicitation::count_aux_notes;
use crate::metrics::Stage;
use crate::world::{mix, Action, Dir, Fact};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::sync::Mutex;

/// Relationship between what the mock reports and how often it is right.
///
/// Each judged item gets a latent success probability
/// `p = clamp(skill + noise_sd * z)` and a label drawn from `Bernoulli(p)`.
/// Every reply about that item reports
/// `clamp(p + bias + sample_sd * sampling * z' / (1 + refine_decay * notes))`
/// where `notes` counts the insight bullets in the prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationProfile {
    pub skill: f64,
    #[serde(default)]
    pub bias: f64,
    #[serde(default)]
    pub noise_sd: f64,
    #[serde(default)]
    pub parse_failure_rate: f64,
    #[serde(default)]
    pub sample_sd: f64,
    #[serde(default)]
    pub refine_decay: f64,
}

impl CalibrationProfile {
    pub fn new(skill: f64, bias: f64, noise_sd: f64) -> Self {
        CalibrationProfile {
            skill,
            bias,
            noise_sd,
            parse_failure_rate: 0.0,
            sample_sd: 0.0,
            refine_decay: 0.0,
        }
    }

    /// Per-sample noise that shrinks as insight notes accumulate.
    pub fn refining(skill: f64, noise_sd: f64, sample_sd: f64, refine_decay: f64) -> Self {
        CalibrationProfile {
            sample_sd,
            refine_decay,
            ..Self::new(skill, 0.0, noise_sd)
        }
    }

    /// Named profiles: `mock-strong`, `mock-medium`, `mock-weak`,
    /// `mock-calibrated`, `mock-refining`.
    pub fn preset(name: &str) -> Option<Self> {
        let p = match name {
            "mock-strong" => CalibrationProfile {
                sample_sd: 0.08,
                refine_decay: 0.3,
                ..Self::new(0.75, 0.1, 0.15)
            },
            "mock-medium" => CalibrationProfile {
                sample_sd: 0.1,
                refine_decay: 0.3,
                parse_failure_rate: 0.02,
                ..Self::new(0.55, 0.2, 0.15)
            },
            "mock-weak" => CalibrationProfile {
                sample_sd: 0.12,
                refine_decay: 0.3,
                parse_failure_rate: 0.05,
                ..Self::new(0.35, 0.3, 0.15)
            },
            "mock-calibrated" => Self::new(0.5, 0.0, 0.05),
            "mock-refining" => Self::refining(0.6, 0.2, 0.3, 0.5),
            _ => return None,
        };
        Some(p)
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let unit = 0.0..=1.0;
        let bad = |what: &str| Err(BackendError::Config(format!("profile {what} out of range")));
        if !unit.contains(&self.skill) {
            return bad("skill");
        }
        if !(-1.0..=1.0).contains(&self.bias) {
            return bad("bias");
        }
        if !(self.noise_sd >= 0.0 && self.sample_sd >= 0.0 && self.refine_decay >= 0.0) {
            return bad("noise");
        }
        if !unit.contains(&self.parse_failure_rate) {
            return bad("parse_failure_rate");
        }
        Ok(())
    }
}

/// Seeded stand-in agent driven by a [`CalibrationProfile`].
///
/// Draws are keyed by the grounding key (latent) and the query seed
/// (per-call noise), so concurrent episodes cannot disturb each other.
/// Queries with neither fall back to an internal stream.
#[derive(Debug)]
pub struct MockBackend {
    name: String,
    pub profile: CalibrationProfile,
    seed: u64,
    fallback: Mutex<ChaCha8Rng>,
}

impl MockBackend {
    pub fn new(name: impl Into<String>, profile: CalibrationProfile, seed: u64) -> Result<Self, BackendError> {
        profile.validate()?;
        Ok(MockBackend {
            name: name.into(),
            profile,
            seed,
            fallback: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
        })
    }

    fn stream_key(&self) -> u64 {
        self.fallback.lock().expect("mock stream poisoned").random()
    }

    fn rng(&self, key: u64, salt: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(mix(self.seed ^ mix(key ^ salt)))
    }

    /// Latent success probability, label and a spare draw for one judged
    /// item. With `shared`, the probability comes from the shared key.
    pub fn latent(&self, key: u64, shared: Option<u64>) -> (f64, bool, u64) {
        let mut rng = self.rng(shared.unwrap_or(key), 0x1a7e);
        let z: f64 = StandardNormal.sample(&mut rng);
        let p = (self.profile.skill + self.profile.noise_sd * z).clamp(0.0, 1.0);
        if shared.is_some() {
            rng = self.rng(key, 0x1abe);
        }
        let correct = rng.random::<f64>() < p;
        (p, correct, rng.random())
    }
}

fn flip(claim: &mut BTreeSet<Fact>, f: Fact) {
    if !claim.remove(&f) {
        claim.insert(f);
    }
}

fn perception_answer(g: &Grounding, correct: bool, pick: u64) -> (String, Vec<String>) {
    let mut claim = g.claim.clone().unwrap_or_else(|| g.truth.clone());
    let rel = &g.relevant;
    if !correct && g.claim.is_none() {
        if rel.is_empty() {
            let all: Vec<Fact> = Fact::vocabulary();
            flip(&mut claim, all[(pick % all.len() as u64) as usize]);
        } else {
            flip(&mut claim, rel[(pick % rel.len() as u64) as usize]);
        }
    }
    let alts = rel
        .iter()
        .map(|f| {
            let mut c = claim.clone();
            flip(&mut c, *f);
            format!("I see: {}", describe_claim(&c))
        })
        .collect();
    (format!("I see: {}", describe_claim(&claim)), alts)
}

/// Proposes the grounded plan, or a detour when the item is judged a miss.
fn action_answer(g: &Grounding, correct: bool, pick: u64) -> (String, Vec<String>) {
    let plan = g.plan.unwrap_or(Action::Wait);
    let mut others: Vec<Action> = Dir::ALL
        .iter()
        .map(|d| Action::Move(*d))
        .chain([Action::Wait])
        .filter(|a| *a != plan)
        .collect();
    let chosen = if correct {
        plan
    } else {
        others.remove((pick % others.len() as u64) as usize)
    };
    let alts = others.iter().map(|a| format!("Next action: {a}")).collect();
    (format!("Next action: {chosen}"), alts)
}

impl Backend for MockBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn grounded(&self) -> bool {
        true
    }

    fn query(&self, q: &AgentQuery) -> Result<Reply, BackendError> {
        q.validate()?;
        let g = q.grounding.as_deref();
        let item_key = match (g, q.seed) {
            (Some(g), _) => g.key,
            (None, Some(s)) => s,
            (None, None) => self.stream_key(),
        };
        let call_key = q.seed.unwrap_or_else(|| self.stream_key());
        let (p, correct, pick) = self.latent(item_key, g.and_then(|g| g.episode));

        let (answer, alts) = match g.and_then(|g| g.stage.map(|s| (g, s))) {
            Some((g, Stage::Perception)) => perception_answer(g, correct, pick),
            Some((g, Stage::Action)) => action_answer(g, correct, pick),
            None => (
                format!("Answer: option {}", pick % 97),
                (1..=4).map(|i| format!("Answer: option {}", (pick + i) % 97)).collect(),
            ),
        };
        if q.purpose == Purpose::Aux {
            let focus = g
                .and_then(|g| g.relevant.first())
                .map_or("scene".to_string(), |f| f.phrase());
            return Ok(Reply {
                text: format!("Insight: the {focus} was checked again."),
                label: Some(correct),
            });
        }

        let mut rng = self.rng(call_key, 0xca11);
        let z: f64 = StandardNormal.sample(&mut rng);
        let notes = count_aux_notes(q.last_user()) as f64;
        let sd = self.profile.sample_sd * q.sampling / (1.0 + self.profile.refine_decay * notes);
        let reported = (p + self.profile.bias + sd * z).clamp(0.0, 1.0);
        let failed = rng.random::<f64>() < self.profile.parse_failure_rate;
        let confidence = (!failed).then_some(reported);
        Ok(Reply {
            text: format_reply(q, &answer, &alts, confidence),
            label: Some(correct),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::Message;
    use crate::elicitation::parse_confidence;

    fn ask(m: &MockBackend, seed: u64) -> Reply {
        let mut q = AgentQuery::new(vec![Message::user("Q")]);
        q.seed = Some(seed);
        m.query(&q).unwrap()
    }

    #[test]
    fn degenerate_profile_is_certain() {
        let m = MockBackend::new("m", CalibrationProfile::new(1.0, 0.0, 0.0), 1).unwrap();
        for s in 0..50 {
            let r = ask(&m, s);
            assert_eq!(parse_confidence(&r.text).unwrap(), 1.0);
            assert_eq!(r.label, Some(true));
        }
    }

    #[test]
    fn forced_parse_failure() {
        let p = CalibrationProfile {
            parse_failure_rate: 1.0,
            ..CalibrationProfile::new(0.5, 0.0, 0.0)
        };
        let m = MockBackend::new("m", p, 1).unwrap();
        for s in 0..50 {
            assert!(parse_confidence(&ask(&m, s).text).is_err());
        }
    }

    #[test]
    fn seeded_replies_repeat() {
        let a = MockBackend::new("m", CalibrationProfile::preset("mock-medium").unwrap(), 9).unwrap();
        let b = MockBackend::new("m", CalibrationProfile::preset("mock-medium").unwrap(), 9).unwrap();
        for s in 0..100 {
            assert_eq!(ask(&a, s), ask(&b, s));
        }
    }

    #[test]
    fn rejects_bad_profiles() {
        assert!(MockBackend::new("m", CalibrationProfile::new(1.5, 0.0, 0.0), 0).is_err());
        assert!(MockBackend::new("m", CalibrationProfile::new(0.5, -2.0, 0.0), 0).is_err());
    }
}
