#![allow(dead_code)]

use confcraft::backend::{AgentQuery, Backend, BackendError, Reply};
use confcraft::elicitation::{parse_reply, ElicitError, ElicitationContext, ElicitationPolicy};
use confcraft::elicitation::PolicyKind;
use confcraft::execution::{ExecutionError, ExecutionKind, ExecutionPolicy, Executor, RolloutKey};
use confcraft::metrics::{ConfidenceRecord, Stage};
use proptest::prelude::*;
use serde::Deserialize;
use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

// Brute-force metric oracles. They share no code with the library.

/// Right-closed bin by scanning edges `b / bins`.
pub fn oracle_bin(c: f64, bins: usize) -> usize {
    for b in 1..=bins {
        if c <= b as f64 / bins as f64 {
            return b;
        }
    }
    bins
}

pub fn oracle_ece(records: &[(f64, bool)], bins: usize) -> f64 {
    let n = records.len() as f64;
    (1..=bins)
        .map(|b| {
            let members: Vec<&(f64, bool)> = records.iter().filter(|r| oracle_bin(r.0, bins) == b).collect();
            let hits = members.iter().filter(|r| r.1).count() as f64;
            let conf: f64 = members.iter().map(|r| r.0).sum();
            (hits - conf).abs() / n
        })
        .sum()
}

/// Fraction of (correct, incorrect) pairs ordered correctly, ties count half.
pub fn oracle_auroc(records: &[(f64, bool)]) -> Option<f64> {
    let pos: Vec<f64> = records.iter().filter(|r| r.1).map(|r| r.0).collect();
    let neg: Vec<f64> = records.iter().filter(|r| !r.1).map(|r| r.0).collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut score = 0.0;
    for p in &pos {
        for q in &neg {
            if p > q {
                score += 1.0;
            } else if p == q {
                score += 0.5;
            }
        }
    }
    Some(score / (pos.len() * neg.len()) as f64)
}

/// Average precision with ranks from a stable descending order: higher
/// scores first, ties in input order.
pub fn oracle_ap(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n = scores.len();
    let rank = |i: usize| (0..n).filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i)).count() + 1;
    let ranks: Vec<usize> = (0..n).map(rank).collect();
    let pos: Vec<usize> = (0..n).filter(|&i| positive[i]).collect();
    if pos.is_empty() {
        return None;
    }
    let total: f64 = pos
        .iter()
        .map(|&i| {
            let above = pos.iter().filter(|&&j| ranks[j] <= ranks[i]).count();
            above as f64 / ranks[i] as f64
        })
        .sum();
    Some(total / pos.len() as f64)
}

pub fn oracle_auprc_pos(records: &[(f64, bool)]) -> Option<f64> {
    let s: Vec<f64> = records.iter().map(|r| r.0).collect();
    let l: Vec<bool> = records.iter().map(|r| r.1).collect();
    oracle_ap(&s, &l)
}

pub fn oracle_auprc_neg(records: &[(f64, bool)]) -> Option<f64> {
    let s: Vec<f64> = records.iter().map(|r| 1.0 - r.0).collect();
    let l: Vec<bool> = records.iter().map(|r| !r.1).collect();
    oracle_ap(&s, &l)
}

pub fn to_records(raw: &[(f64, bool)]) -> Vec<ConfidenceRecord> {
    raw.iter()
        .map(|&(c, ok)| ConfidenceRecord::new(c, ok, Stage::Perception).unwrap())
        .collect()
}

/// Confidence that often lands on bin edges and repeats, to exercise ties.
pub fn confidence() -> impl Strategy<Value = f64> {
    prop_oneof![
        (0u32..=20).prop_map(|k| k as f64 / 20.0),
        (0u32..=10).prop_map(|k| k as f64 / 10.0),
        0.0f64..=1.0,
    ]
}

pub fn record_set(max: usize) -> impl Strategy<Value = Vec<(f64, bool)>> {
    prop::collection::vec((confidence(), any::<bool>()), 1..=max)
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

pub fn close_opt(a: Option<f64>, b: Option<f64>, tol: f64) -> bool {
    match (a, b) {
        (Some(a), Some(b)) => close(a, b, tol),
        (None, None) => true,
        _ => false,
    }
}

/// Serves queued replies in order and counts every call.
pub struct Canned {
    replies: Mutex<VecDeque<String>>,
    pub calls: AtomicUsize,
}

impl Canned {
    pub fn new<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> Self {
        Canned {
            replies: Mutex::new(replies.into_iter().map(Into::into).collect()),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Backend for Canned {
    fn name(&self) -> &str {
        "canned"
    }

    fn query(&self, _q: &AgentQuery) -> Result<Reply, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let next = self.replies.lock().unwrap().pop_front();
        next.map(Reply::text)
            .ok_or_else(|| BackendError::Protocol("canned replies exhausted".into()))
    }
}

#[derive(Debug, Deserialize)]
pub struct Corpus {
    pub reply: Vec<ReplyFixture>,
    pub reask: Vec<ReaskFixture>,
}

#[derive(Debug, Deserialize)]
pub struct Candidate {
    pub answer: String,
    pub p: f64,
}

#[derive(Debug, Deserialize)]
pub struct ReplyFixture {
    pub name: String,
    pub policy: ElicitationPolicy,
    pub text: String,
    pub confidence: Option<f64>,
    pub candidates: Option<Vec<Candidate>>,
    pub error: Option<String>,
}

#[derive(Debug, Deserialize)]
pub struct ReaskFixture {
    pub name: String,
    pub policy: ElicitationPolicy,
    pub replies: Vec<String>,
    pub confidence: Option<f64>,
    #[serde(default)]
    pub missing: bool,
    pub reasks: usize,
}

pub fn corpus() -> Corpus {
    toml::from_str(include_str!("../fixtures/replies.toml")).expect("fixture corpus")
}

/// Checks one reply fixture; `Err` describes the mismatch.
pub fn check_reply(f: &ReplyFixture) -> Result<(), String> {
    let got = parse_reply(&f.policy, &f.text);
    match (&got, f.confidence, &f.candidates, &f.error) {
        (Err(ElicitError::UnparseableConfidence), None, None, Some(e)) if e == "unparseable" => Ok(()),
        (Ok(r), Some(c), None, None) if r.confidence == c => Ok(()),
        (Ok(r), None, Some(want), None) => {
            let want: Vec<(String, f64)> = want.iter().map(|c| (c.answer.clone(), c.p)).collect();
            if r.candidates == want && r.confidence == want[0].1 {
                Ok(())
            } else {
                Err(format!("{}: got {:?}", f.name, r.candidates))
            }
        }
        _ => Err(format!("{}: got {:?}", f.name, got)),
    }
}

/// Runs a re-ask fixture through the executor with a canned backend.
pub fn check_reask(f: &ReaskFixture) -> Result<(), String> {
    let backend = Canned::new(f.replies.clone());
    let ctx = ElicitationContext::new("Mine a log", "Time: day\n- tree at 1N 0E", Stage::Action);
    let out = Executor::default().run(&[ExecutionPolicy::none()], &ctx, &f.policy, &backend, &RolloutKey::default());
    let calls = backend.calls();
    if calls != f.replies.len() {
        return Err(format!("{}: {calls} calls for {} replies", f.name, f.replies.len()));
    }
    match (out, f.missing) {
        (Ok(set), false) if Some(set.combined_confidence) == f.confidence && set.reasks == f.reasks => Ok(()),
        (Err(ExecutionError::ExecutionFailed { missing: 1, failures: 0, .. }), true)
            if calls == f.reasks + f.policy.calls_per_sample() =>
        {
            Ok(())
        }
        (other, _) => Err(format!("{}: got {other:?}", f.name)),
    }
}

/// Call count by walking the loop structure, one step at a time.
pub fn counted_calls(elic: &ElicitationPolicy, policies: &[ExecutionPolicy]) -> usize {
    let per_sample = if elic.kind == PolicyKind::SelfIntervention { 2 } else { 1 };
    let mut calls = per_sample;
    for p in policies {
        if p.kind == ExecutionKind::None {
            continue;
        }
        for _ in 0..p.iterations() {
            if matches!(p.kind, ExecutionKind::ScenarioReinterpretation | ExecutionKind::HypotheticalReasoning) {
                calls += 1;
            }
            for _ in 0..p.samples_per_iteration() {
                calls += per_sample;
            }
        }
    }
    calls
}

// World helpers.

use confcraft::backend::Solver;
use confcraft::world::{check_success, generate, Action, Catalog, Dir, Event, Item, WorldParams, WorldState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

/// Small world so random walks reach ore, stations and mobs.
pub fn fuzz_params() -> WorldParams {
    WorldParams {
        width: 20,
        height: 20,
        ..WorldParams::default()
    }
}

pub fn random_action(rng: &mut ChaCha8Rng, state: &WorldState, cat: &Catalog) -> Action {
    let dir = Dir::ALL[rng.random_range(0..4)];
    match rng.random_range(0..100) {
        0..=39 => Action::Move(dir),
        40..=49 => Action::Turn(dir),
        50..=69 => Action::Mine,
        70..=81 => Action::Craft(cat.recipes[rng.random_range(0..cat.recipes.len())].output),
        82..=86 => Action::Smelt(cat.recipes[rng.random_range(0..cat.recipes.len())].output),
        87..=91 => Action::Attack,
        92..=96 => {
            let owned: Vec<Item> = state.agent.inventory.keys().copied().collect();
            if owned.is_empty() {
                Action::Wait
            } else {
                Action::Equip(owned[rng.random_range(0..owned.len())])
            }
        }
        _ => Action::Wait,
    }
}

/// Inventory implied by the previous inventory and one tick's events,
/// checking every drop and recipe against the catalog tables.
pub fn expected_inventory(
    before: &BTreeMap<Item, u32>,
    events: &[Event],
    cat: &Catalog,
) -> Result<BTreeMap<Item, u32>, String> {
    let mut inv: BTreeMap<Item, i64> = before.iter().map(|(k, v)| (*k, *v as i64)).collect();
    for e in events {
        match e {
            Event::MinedBlock { block, drop, .. } => {
                let rule = cat.mine_rule(*block).ok_or(format!("{block} mined without a rule"))?;
                if rule.drop != *drop {
                    return Err(format!("{block} dropped {drop}, table says {}", rule.drop));
                }
                *inv.entry(*drop).or_default() += 1;
            }
            Event::Harvested { entity, drop, .. } => {
                let rule = cat.harvest_rule(*entity).ok_or(format!("{entity} harvested without a rule"))?;
                if rule.drop != *drop {
                    return Err(format!("{entity} dropped {drop}"));
                }
                *inv.entry(*drop).or_default() += 1;
            }
            Event::Crafted { output, count, consumed } | Event::Smelted { output, count, consumed } => {
                let r = cat.recipe(*output).ok_or(format!("{output} crafted without a recipe"))?;
                let want: Vec<(Item, u32)> = r.inputs.iter().map(|i| (i.item, i.count)).collect();
                if *consumed != want || *count != r.count {
                    return Err(format!("{output}: consumed {consumed:?} x{count}, recipe {want:?} x{}", r.count));
                }
                for (it, n) in consumed {
                    *inv.entry(*it).or_default() -= *n as i64;
                }
                *inv.entry(*output).or_default() += *count as i64;
            }
            Event::MobKilled { kind, drop, .. } => {
                let rule = cat.mob_rule(*kind).ok_or(format!("{kind} killed without a rule"))?;
                if rule.drop != *drop {
                    return Err(format!("{kind} dropped {drop:?}"));
                }
                if let Some(d) = drop {
                    *inv.entry(*d).or_default() += 1;
                }
            }
            _ => {}
        }
    }
    if let Some((it, n)) = inv.iter().find(|(_, n)| **n < 0) {
        return Err(format!("{it} went negative ({n})"));
    }
    Ok(inv.into_iter().filter(|(_, n)| *n > 0).map(|(k, n)| (k, n as u32)).collect())
}

#[derive(Debug, Default)]
pub struct FuzzLog {
    pub actions: Vec<Action>,
    pub events: Vec<Vec<Event>>,
    pub diamonds_mined: usize,
    pub iron_pickaxes_made: usize,
    /// Diamond ore mining attempts refused for want of a good enough pickaxe.
    pub gated: usize,
    pub final_state: Option<WorldState>,
}

/// Initial fuzz world: the diamond task with a random stock of raw materials.
pub fn fuzz_world(seed: u64, cat: &Catalog) -> WorldState {
    let task = cat.task(30).unwrap();
    let mut s = generate(seed, task, &fuzz_params(), cat);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xf00d);
    let stock = [
        Item::Log,
        Item::Stone,
        Item::Coal,
        Item::IronOre,
        Item::IronIngot,
        Item::Plank,
        Item::Stick,
        Item::WoodenPickaxe,
        Item::StonePickaxe,
    ];
    for it in stock {
        let n = rng.random_range(0..6);
        if n > 0 {
            s.agent.inventory.insert(it, n);
        }
    }
    s
}

/// Random-action walk checking bounds, clock, conservation and the diamond
/// gate after every tick.
pub fn fuzz(seed: u64, steps: usize, cat: &Catalog) -> Result<FuzzLog, String> {
    let mut s = fuzz_world(seed, cat);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log = FuzzLog::default();
    let mut had_iron_pickaxe = false;
    for step in 0..steps {
        let a = random_action(&mut rng, &s, cat);
        let before = s.agent.inventory.clone();
        let clock = s.clock;
        let ev = s.apply(cat, a);
        let at = |m: String| format!("seed {seed} step {step} ({a}): {m}");
        if s.clock != clock + 1 {
            return Err(at(format!("clock {clock} -> {}", s.clock)));
        }
        if !s.in_bounds(s.agent.pos) {
            return Err(at("agent out of bounds".into()));
        }
        if let Some(e) = s.entities.iter().find(|e| !s.in_bounds(e.pos)) {
            return Err(at(format!("{e:?} out of bounds")));
        }
        let want = expected_inventory(&before, &ev, cat).map_err(at)?;
        if want != s.agent.inventory {
            return Err(at(format!("inventory {:?}, events imply {want:?}", s.agent.inventory)));
        }
        for e in &ev {
            match e {
                Event::Crafted { output: Item::IronPickaxe, .. } => {
                    had_iron_pickaxe = true;
                    log.iron_pickaxes_made += 1;
                }
                Event::MinedBlock { drop: Item::Diamond, .. } => log.diamonds_mined += 1,
                Event::IllegalAction { reason, .. } if reason.starts_with("diamond_ore needs") => log.gated += 1,
                _ => {}
            }
        }
        if s.agent.count(Item::Diamond) > 0 && !had_iron_pickaxe {
            return Err(at("diamond before any iron pickaxe".into()));
        }
        log.actions.push(a);
        log.events.push(ev);
    }
    log.final_state = Some(s);
    Ok(log)
}

/// Runs the exact-perception solver until the task succeeds or `cap` ticks pass.
pub fn solve(task_id: u32, seed: u64, cap: usize, start: Option<WorldState>) -> (bool, usize, WorldState, Vec<Event>) {
    let cat = Catalog::builtin();
    let task = cat.task(task_id).unwrap();
    let mut s = start.unwrap_or_else(|| generate(seed, task, &WorldParams::default(), cat));
    let solver = Solver::new(cat, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut history = Vec::new();
    for step in 0..cap {
        if check_success(task, &s, &history) {
            return (true, step, s, history);
        }
        let d = solver.decide(&s, task, &mut rng);
        history.extend(s.apply(cat, d.action));
    }
    let ok = check_success(task, &s, &history);
    (ok, cap, s, history)
}
