//! Agent query interface and its three implementations.

mod mock;
mod remote;
mod scripted;

pub use mock::{CalibrationProfile, MockBackend};
pub use remote::{RemoteBackend, RemoteConfig};
pub use scripted::{scripted_decide, Decision, ScriptedBackend, Solver};

use crate::metrics::Stage;
use crate::world::{Action, Fact};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn user(content: impl Into<String>) -> Self {
        Message {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Message {
            role: Role::Assistant,
            content: content.into(),
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Message {
            role: Role::System,
            content: content.into(),
        }
    }
}

/// Why a query is sent. Remote providers never see this.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    /// Self-intervention first pass: answer only.
    Answer,
    /// A message that asks for confidence.
    Elicit,
    /// A reinterpretation or counterfactual prompt whose reply becomes a note.
    Aux,
    /// Structured follow-up after an unparseable reply.
    Reask,
}

/// Simulator facts handed to offline backends so they can answer about the
/// actual scene. Remote backends ignore it.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Grounding {
    pub stage: Option<Stage>,
    /// Identifies the judged item; every call about it shares latent draws.
    pub key: u64,
    /// Items sharing this key share one latent success probability; labels
    /// are still drawn per item.
    pub episode: Option<u64>,
    pub truth: BTreeSet<Fact>,
    pub relevant: Vec<Fact>,
    /// A claim already decided by a solver, used verbatim when present.
    pub claim: Option<BTreeSet<Fact>>,
    pub plan: Option<Action>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentQuery {
    pub messages: Vec<Message>,
    /// Temperature-like knob.
    pub sampling: f64,
    pub seed: Option<u64>,
    /// Opaque bytes forwarded untouched to backends that accept images.
    pub image_attachment: Option<Vec<u8>>,
    pub purpose: Purpose,
    pub grounding: Option<Arc<Grounding>>,
}

impl AgentQuery {
    pub fn new(messages: Vec<Message>) -> Self {
        AgentQuery {
            messages,
            sampling: 1.0,
            seed: None,
            image_attachment: None,
            purpose: Purpose::Elicit,
            grounding: None,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        match self.messages.first() {
            None => Err(BackendError::InvalidQuery("no messages".into())),
            Some(m) if m.role == Role::Assistant => {
                Err(BackendError::InvalidQuery("first message must be system or user".into()))
            }
            _ if !(self.sampling >= 0.0) => Err(BackendError::InvalidQuery("sampling must be >= 0".into())),
            _ => Ok(()),
        }
    }

    /// Text of the last user message.
    pub fn last_user(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map_or("", |m| m.content.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reply {
    pub text: String,
    /// Correctness label from backends that know it; never parsed from text.
    pub label: Option<bool>,
}

impl Reply {
    pub fn text(text: impl Into<String>) -> Self {
        Reply {
            text: text.into(),
            label: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("transport: {0}")]
    Transport(String),
    #[error("http {status}: {body}")]
    Http {
        status: u16,
        body: String,
        retry_after: Option<Duration>,
    },
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("config: {0}")]
    Config(String),
    #[error("gave up after {attempts} attempts: {last}")]
    Exhausted { attempts: usize, last: String },
}

pub trait Backend: Send + Sync {
    fn name(&self) -> &str;

    fn query(&self, q: &AgentQuery) -> Result<Reply, BackendError>;

    /// Whether actions should come from the simulator's solver rather than
    /// from reply text.
    fn grounded(&self) -> bool {
        false
    }
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn query(&self, q: &AgentQuery) -> Result<Reply, BackendError> {
        (**self).query(q)
    }

    fn grounded(&self) -> bool {
        (**self).grounded()
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn query(&self, q: &AgentQuery) -> Result<Reply, BackendError> {
        (**self).query(q)
    }

    fn grounded(&self) -> bool {
        (**self).grounded()
    }
}

/// Wraps a backend and counts calls by purpose.
pub struct CountingBackend<B> {
    inner: B,
    counts: [AtomicUsize; 4],
}

impl<B: Backend> CountingBackend<B> {
    pub fn new(inner: B) -> Self {
        CountingBackend {
            inner,
            counts: Default::default(),
        }
    }

    fn slot(p: Purpose) -> usize {
        match p {
            Purpose::Answer => 0,
            Purpose::Elicit => 1,
            Purpose::Aux => 2,
            Purpose::Reask => 3,
        }
    }

    pub fn count(&self, p: Purpose) -> usize {
        self.counts[Self::slot(p)].load(Ordering::SeqCst)
    }

    pub fn total(&self) -> usize {
        self.counts.iter().map(|c| c.load(Ordering::SeqCst)).sum()
    }

    pub fn reset(&self) {
        for c in &self.counts {
            c.store(0, Ordering::SeqCst);
        }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: Backend> Backend for CountingBackend<B> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn query(&self, q: &AgentQuery) -> Result<Reply, BackendError> {
        self.counts[Self::slot(q.purpose)].fetch_add(1, Ordering::SeqCst);
        self.inner.query(q)
    }

    fn grounded(&self) -> bool {
        self.inner.grounded()
    }
}

/// Fact list as used in reply text, e.g. `pig, crafting table, day`.
pub(crate) fn describe_claim(claim: &BTreeSet<Fact>) -> String {
    if claim.is_empty() {
        "nothing relevant".to_string()
    } else {
        claim.iter().map(|f| f.phrase()).collect::<Vec<_>>().join(", ")
    }
}

/// Reply text for a grounded backend given what it claims and how sure it is.
/// Top-k prompts get `k` numbered lines with geometrically decaying odds.
pub(crate) fn format_reply(
    q: &AgentQuery,
    answer: &str,
    alternatives: &[String],
    confidence: Option<f64>,
) -> String {
    let pct = |c: f64| format!("{:.1}%", (c * 100.0).clamp(0.0, 100.0));
    match (q.purpose, confidence) {
        (Purpose::Answer | Purpose::Aux, _) => answer.to_string(),
        (_, None) => format!("{answer}\nI cannot say how sure I am."),
        (_, Some(c)) => match requested_k(q.last_user()) {
            Some(k) => {
                let mut s = format!("1. {answer} \u{2014} {}\n", pct(c));
                for (i, alt) in alternatives.iter().take(k.saturating_sub(1)).enumerate() {
                    let p = c * 0.5f64.powi(i as i32 + 1);
                    s.push_str(&format!("{}. {alt} \u{2014} {}\n", i + 2, pct(p)));
                }
                s
            }
            None => format!("{answer}\nConfidence: {}", pct(c)),
        },
    }
}

/// The `k` requested in a top-k prompt, if any.
pub(crate) fn requested_k(prompt: &str) -> Option<usize> {
    static RE: std::sync::OnceLock<regex::Regex> = std::sync::OnceLock::new();
    let re = RE.get_or_init(|| regex::Regex::new(r"your (\d+) best").expect("k regex"));
    re.captures(prompt)?.get(1)?.as_str().parse().ok()
}
