use super::catalog::{Goal, Task};
use super::state::{Event, Occupancy, WorldState};
use super::types::{Fact, Pos, Terrain, TimeOfDay, Weather};
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::sync::OnceLock;

/// How a perception claim is matched against the privileged truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerceptionRule {
    /// Presence or absence of every task-relevant fact must match.
    #[default]
    TaskRelevant,
    /// The claimed set must equal the truth set.
    ExactSet,
}

impl WorldState {
    /// Cells inside the square view window around the agent.
    pub fn view_cells(&self) -> impl Iterator<Item = Pos> + '_ {
        let r = self.params.view_radius;
        let a = self.agent.pos;
        (-r..=r)
            .flat_map(move |dy| (-r..=r).map(move |dx| Pos::new(a.x + dx, a.y + dy)))
            .filter(|p| self.in_bounds(*p))
    }

    pub fn in_view(&self, p: Pos) -> bool {
        self.in_bounds(p) && self.agent.pos.chebyshev(p) <= self.params.view_radius
    }

    /// Facts present at one cell.
    pub fn facts_at(&self, p: Pos) -> Vec<Fact> {
        let mut out = Vec::new();
        if let Some(c) = self.cell(p) {
            out.push(Fact::Terrain(c.terrain));
            if let Some(b) = c.block {
                out.push(Fact::Block(b));
            }
        }
        if let Some(e) = self.entity_at(p) {
            out.push(Fact::Entity(e.kind));
        }
        out
    }

    fn brightness(&self) -> &'static str {
        match (self.time_of_day(), self.weather) {
            (TimeOfDay::Day, Weather::Clear) => "bright",
            (TimeOfDay::Day, Weather::Rain) => "overcast",
            (TimeOfDay::Night, Weather::Clear) => "dim",
            (TimeOfDay::Night, Weather::Rain) => "dark",
        }
    }
}

/// Ground truth for the current view: every fact visible plus time and weather.
pub fn privileged_observe(state: &WorldState) -> BTreeSet<Fact> {
    let mut out: BTreeSet<Fact> = state
        .view_cells()
        .filter_map(|p| state.cell(p))
        .flat_map(|c| std::iter::once(Fact::Terrain(c.terrain)).chain(c.block.map(Fact::Block)))
        .collect();
    out.extend(state.entities.iter().filter(|e| state.in_view(e.pos)).map(|e| Fact::Entity(e.kind)));
    out.insert(Fact::Time(state.time_of_day()));
    out.insert(Fact::Weather(state.weather));
    out
}

fn offset(from: Pos, to: Pos) -> String {
    let dy = to.y - from.y;
    let dx = to.x - from.x;
    format!(
        "{}{} {}{}",
        dy.abs(),
        if dy > 0 { 'S' } else { 'N' },
        dx.abs(),
        if dx < 0 { 'W' } else { 'E' }
    )
}

/// Textual rendering of what the agent sees.
pub fn observe(state: &WorldState) -> String {
    let a = state.agent.pos;
    let mut s = String::new();
    let _ = writeln!(s, "Time: {} (tick {})", state.time_of_day(), state.clock);
    let _ = writeln!(s, "Weather: {}", state.weather);
    let _ = writeln!(s, "Brightness: {}", state.brightness());
    let _ = writeln!(s, "Facing: {}", state.agent.facing);
    if let Some(c) = state.cell(a) {
        let _ = writeln!(s, "Standing on: {}", c.terrain);
    }
    let terrains: BTreeSet<_> = state.view_cells().filter_map(|p| state.cell(p).map(|c| c.terrain)).collect();
    let names: Vec<&str> = terrains.iter().map(|t| t.name()).collect();
    let _ = writeln!(s, "Visible terrain: {}", names.join(", "));

    let mut things: Vec<(i32, Pos, String)> = Vec::new();
    let visible: Vec<_> = state.entities.iter().filter(|e| state.in_view(e.pos)).collect();
    for p in state.view_cells() {
        if p == a {
            continue;
        }
        if let Some(b) = state.cell(p).and_then(|c| c.block) {
            things.push((a.manhattan(p), p, b.name().replace('_', " ")));
        }
        if let Some(e) = visible.iter().find(|e| e.pos == p) {
            things.push((a.manhattan(p), p, e.kind.name().to_string()));
        }
    }
    things.sort();
    s.push_str("In view:\n");
    if things.is_empty() {
        s.push_str("- nothing notable\n");
    }
    for (_, p, name) in &things {
        let _ = writeln!(s, "- {name} at {}", offset(a, *p));
    }
    let inv: Vec<String> = state.agent.inventory.iter().map(|(i, n)| format!("{i} x{n}")).collect();
    let _ = writeln!(
        s,
        "Inventory: {}",
        if inv.is_empty() { "empty".to_string() } else { inv.join(", ") }
    );
    let _ = writeln!(
        s,
        "Equipped: {}",
        state.agent.equipped.map_or("nothing".to_string(), |i| i.to_string())
    );
    s
}

/// Whether a perception claim is correct against the truth set.
pub fn label_claim(claim: &BTreeSet<Fact>, truth: &BTreeSet<Fact>, task: &Task, rule: PerceptionRule) -> bool {
    match rule {
        PerceptionRule::ExactSet => claim == truth,
        PerceptionRule::TaskRelevant => task
            .relevant
            .iter()
            .all(|f| claim.contains(f) == truth.contains(f)),
    }
}

/// Facts mentioned in free text. Mentions count as presence claims.
pub fn claimed_facts(text: &str) -> BTreeSet<Fact> {
    static PATTERNS: OnceLock<Vec<(Fact, Regex)>> = OnceLock::new();
    let pats = PATTERNS.get_or_init(|| {
        Fact::vocabulary()
            .into_iter()
            .map(|f| {
                let words = regex::escape(&f.phrase()).replace(r"\ ", r"[\s_]+");
                (f, Regex::new(&format!(r"(?i)\b{words}s?\b")).expect("fact regex"))
            })
            .collect()
    });
    pats.iter().filter(|(_, re)| re.is_match(text)).map(|(f, _)| *f).collect()
}

/// Task predicate over the final state and every event of the episode.
pub fn check_success(task: &Task, state: &WorldState, events: &[Event]) -> bool {
    match &task.goal {
        Goal::Obtain { item } => state.agent.count(*item) > 0,
        Goal::Kill { mob, equipped } => events.iter().any(|e| {
            matches!(e, Event::MobKilled { kind, equipped: eq, .. }
                if kind == mob && (equipped.is_none() || eq == equipped))
        }),
        Goal::Find {
            target,
            on,
            near,
            daytime,
            equipped,
        } => {
            if *daytime && !state.is_daytime() {
                return false;
            }
            if equipped.is_some() && state.agent.equipped != *equipped {
                return false;
            }
            let occ = state.occupancy();
            state.view_cells().any(|p| find_instance(&occ, p, *target, *on, near))
        }
    }
}

/// Whether `p` holds `target` standing on `on` with every `near` fact in its 8-neighbourhood.
pub fn find_instance(occ: &Occupancy, p: Pos, target: Fact, on: Option<Terrain>, near: &[Fact]) -> bool {
    occ.has(p, target)
        && on.is_none_or(|t| occ.has(p, Fact::Terrain(t)))
        && near.iter().all(|f| {
            (-1..=1).any(|dy| (-1..=1).any(|dx| (dx, dy) != (0, 0) && occ.has(Pos::new(p.x + dx, p.y + dy), *f)))
        })
}

