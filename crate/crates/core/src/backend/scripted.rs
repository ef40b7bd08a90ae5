use super::{describe_claim, format_reply, AgentQuery, Backend, BackendError, Reply};
use crate::metrics::Stage;
use crate::world::{
    privileged_observe, Action, Block, Catalog, Dir, EntityKind, Fact, Goal, Item, Pos, Source, Station, Task,
    Occupancy, WorldState,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet, VecDeque};

/// What the solver wants to do next and what it claims to see.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub action: Action,
    pub claim: BTreeSet<Fact>,
    /// Human-readable subgoal, e.g. `mine log`.
    pub subgoal: String,
    /// False when no route to the next subgoal exists.
    pub progress: bool,
}

impl Decision {
    pub fn claim_texts(&self) -> Vec<String> {
        self.claim.iter().map(|f| f.phrase()).collect()
    }
}

/// Greedy oracle agent with full map access.
#[derive(Debug, Clone)]
pub struct Solver<'a> {
    pub catalog: &'a Catalog,
    /// Chance of flipping each task-relevant fact in the perception claim.
    pub epsilon: f64,
}

enum Step {
    Craft(Item, Station),
    Gather(Source, Option<Item>),
}

/// Ignoring misperception, the first action and claim toward `task`.
pub fn scripted_decide(state: &WorldState, task: &Task) -> (Action, Vec<String>) {
    let solver = Solver {
        catalog: Catalog::builtin(),
        epsilon: 0.0,
    };
    let d = solver.decide(state, task, &mut ChaCha8Rng::seed_from_u64(0));
    (d.action, d.claim_texts())
}

impl<'a> Solver<'a> {
    pub fn new(catalog: &'a Catalog, epsilon: f64) -> Self {
        Solver { catalog, epsilon }
    }

    pub fn decide<R: Rng + ?Sized>(&self, state: &WorldState, task: &Task, rng: &mut R) -> Decision {
        let mut claim = privileged_observe(state);
        for f in &task.relevant {
            if self.epsilon > 0.0 && rng.random::<f64>() < self.epsilon && !claim.remove(f) {
                claim.insert(*f);
            }
        }
        let (action, subgoal, progress) = self.plan(state, task);
        Decision {
            action,
            claim,
            subgoal,
            progress,
        }
    }

    /// Confidence that matches the misperception rate under the task-relevant rule.
    pub fn perception_confidence(&self, task: &Task) -> f64 {
        (1.0 - self.epsilon).powi(task.relevant.len() as i32)
    }

    fn plan(&self, state: &WorldState, task: &Task) -> (Action, String, bool) {
        match &task.goal {
            Goal::Obtain { item } => self.pursue(state, *item),
            Goal::Kill { mob, equipped } => {
                if let Some(tool) = equipped {
                    if let Some(prep) = self.equip_step(state, *tool) {
                        return prep;
                    }
                }
                self.approach(
                    state,
                    &format!("attack {mob}"),
                    |g, p| g.entity(p) == Some(*mob),
                    Action::Attack,
                )
            }
            Goal::Find { target, equipped, .. } => {
                if let Some(tool) = equipped {
                    if let Some(prep) = self.equip_step(state, *tool) {
                        return prep;
                    }
                }
                self.find(state, task, *target)
            }
        }
    }

    /// Obtain and equip `tool`, or `None` once it is equipped.
    fn equip_step(&self, state: &WorldState, tool: Item) -> Option<(Action, String, bool)> {
        if state.agent.equipped == Some(tool) {
            return None;
        }
        if state.agent.count(tool) > 0 {
            return Some((Action::Equip(tool), format!("equip {tool}"), true));
        }
        Some(self.pursue(state, tool))
    }

    fn pursue(&self, state: &WorldState, item: Item) -> (Action, String, bool) {
        let mut inv = state.agent.inventory.clone();
        match self.next_step(state, item, 1, &mut inv) {
            None => (Action::Wait, format!("hold {item}"), true),
            Some(Step::Craft(out, station)) => {
                let smelt = station == Station::Furnace;
                let act = if smelt { Action::Smelt(out) } else { Action::Craft(out) };
                let label = format!("{} {out}", if smelt { "smelt" } else { "craft" });
                match station.block() {
                    Some(b) if !state.near_station(station) => self.walk_near_block(state, b, &label),
                    _ => (act, label, true),
                }
            }
            Some(Step::Gather(src, tool)) => {
                if let Some(tool) = tool {
                    let need = self.catalog.tool_tier(tool).unwrap_or(0);
                    let have = state.agent.equipped.and_then(|i| self.catalog.tool_tier(i)).unwrap_or(0);
                    if have < need {
                        let best = state
                            .agent
                            .inventory
                            .keys()
                            .filter_map(|i| self.catalog.tool_tier(*i).map(|t| (t, *i)))
                            .filter(|(t, _)| *t >= need)
                            .max();
                        if let Some((_, i)) = best {
                            return (Action::Equip(i), format!("equip {i}"), true);
                        }
                    }
                }
                match src {
                    Source::Block(b) => self.approach(
                        state,
                        &format!("mine {b}"),
                        |g, p| g.state.cell(p).and_then(|c| c.block) == Some(b),
                        Action::Mine,
                    ),
                    Source::Entity(EntityKind::Tree) => self.approach(
                        state,
                        "mine log",
                        |g, p| g.entity(p) == Some(EntityKind::Tree),
                        Action::Mine,
                    ),
                    Source::Entity(kind) => self.approach(
                        state,
                        &format!("attack {kind}"),
                        |g, p| g.entity(p) == Some(kind),
                        Action::Attack,
                    ),
                }
            }
        }
    }

    fn holds_tool(&self, state: &WorldState, tool: Item) -> bool {
        let need = self.catalog.tool_tier(tool);
        state.agent.count(tool) > 0
            || need.is_some_and(|n| {
                state
                    .agent
                    .inventory
                    .keys()
                    .any(|i| self.catalog.tool_tier(*i).is_some_and(|t| t >= n))
            })
    }

    /// First unmet leaf of the dependency tree of `qty` × `item`, consuming
    /// the simulated inventory as inputs are accounted for.
    fn next_step(&self, state: &WorldState, item: Item, qty: u32, inv: &mut BTreeMap<Item, u32>) -> Option<Step> {
        let held = inv.get(&item).copied().unwrap_or(0);
        if held >= qty {
            inv.insert(item, held - qty);
            return None;
        }
        inv.insert(item, 0);
        let missing = qty - held;
        if let Some(r) = self.catalog.recipe(item) {
            let crafts = missing.div_ceil(r.count);
            for ing in &r.inputs {
                if let Some(s) = self.next_step(state, ing.item, crafts * ing.count, inv) {
                    return Some(s);
                }
            }
            if let Some(t) = r.tool_required {
                if !self.holds_tool(state, t) {
                    return self.next_step(state, t, 1, &mut state.agent.inventory.clone());
                }
            }
            return Some(Step::Craft(item, r.station));
        }
        let (src, tool) = self.catalog.source_of(item)?;
        if let Some(t) = tool {
            if !self.holds_tool(state, t) {
                return self.next_step(state, t, 1, inv);
            }
        }
        Some(Step::Gather(src, tool))
    }

    /// Walk until orthogonally adjacent to a cell matching `target`, face it, act.
    fn approach<F>(&self, state: &WorldState, label: &str, target: F, act: Action) -> (Action, String, bool)
    where
        F: Fn(&Occupancy, Pos) -> bool,
    {
        let grid = state.occupancy();
        let adjacent_dir = |p: Pos| Dir::ALL.iter().copied().find(|d| target(&grid, p.step(*d)));
        match bfs(&grid, |p| adjacent_dir(p).is_some()) {
            Some((path_dir, end)) => match path_dir {
                Some(d) => (Action::Move(d), label.to_string(), true),
                None => {
                    let d = adjacent_dir(end).expect("goal cell is adjacent to a target");
                    if state.agent.facing == d {
                        (act, label.to_string(), true)
                    } else {
                        (Action::Turn(d), label.to_string(), true)
                    }
                }
            },
            None => (Action::Wait, label.to_string(), false),
        }
    }

    fn walk_near_block(&self, state: &WorldState, block: Block, label: &str) -> (Action, String, bool) {
        let w = state.width();
        let mut near = vec![false; state.cells.len()];
        for (i, c) in state.cells.iter().enumerate() {
            if c.block == Some(block) {
                let (x, y) = (i as i32 % w, i as i32 / w);
                for (dx, dy) in (-1..=1).flat_map(|dy| (-1..=1).map(move |dx| (dx, dy))) {
                    let q = Pos::new(x + dx, y + dy);
                    if state.in_bounds(q) {
                        near[(q.y * w + q.x) as usize] = true;
                    }
                }
            }
        }
        match bfs(&state.occupancy(), |p| near[(p.y * w + p.x) as usize]) {
            Some((Some(d), _)) => (Action::Move(d), label.to_string(), true),
            Some((None, _)) => (Action::Wait, label.to_string(), true),
            None => (Action::Wait, label.to_string(), false),
        }
    }

    fn find(&self, state: &WorldState, task: &Task, target: Fact) -> (Action, String, bool) {
        let label = format!("find {target}");
        if crate::world::check_success(task, state, &[]) {
            return (Action::Wait, label, true);
        }
        let Goal::Find {
            on, near, equipped, ..
        } = &task.goal
        else {
            return (Action::Wait, label, false);
        };
        let grid = state.occupancy();
        let goals: Vec<Pos> = if equipped.is_some() && state.agent.equipped != *equipped {
            Vec::new()
        } else {
            (0..state.height())
                .flat_map(|y| (0..state.width()).map(move |x| Pos::new(x, y)))
                .filter(|&p| crate::world::find_instance(&grid, p, target, *on, near))
                .collect()
        };
        // Summed-area table over goal cells: is any goal within the view square of p?
        let (w, h) = (state.width(), state.height());
        let mut sum = vec![0u32; ((w + 1) * (h + 1)) as usize];
        let at = |x: i32, y: i32| (y * (w + 1) + x) as usize;
        for g in &goals {
            sum[at(g.x + 1, g.y + 1)] += 1;
        }
        for y in 1..=h {
            for x in 1..=w {
                sum[at(x, y)] += sum[at(x - 1, y)] + sum[at(x, y - 1)] - sum[at(x - 1, y - 1)];
            }
        }
        let r = state.params.view_radius;
        let in_view = |p: Pos| {
            let (x0, y0) = ((p.x - r).max(0), (p.y - r).max(0));
            let (x1, y1) = ((p.x + r + 1).min(w), (p.y + r + 1).min(h));
            x0 < x1 && y0 < y1 && sum[at(x1, y1)] + sum[at(x0, y0)] > sum[at(x0, y1)] + sum[at(x1, y0)]
        };
        match bfs(&grid, in_view) {
            Some((Some(d), _)) => (Action::Move(d), label, true),
            // In view but a clause such as daytime still fails: wait it out.
            Some((None, _)) => (Action::Wait, label, true),
            None => (Action::Wait, label, false),
        }
    }
}

/// Breadth-first search over open ground from the agent. Returns the first
/// move (`None` when already at a goal) and the goal cell reached.
fn bfs<F: Fn(Pos) -> bool>(grid: &Occupancy, goal: F) -> Option<(Option<Dir>, Pos)> {
    let state = grid.state;
    let start = state.agent.pos;
    if goal(start) {
        return Some((None, start));
    }
    let w = state.width();
    let mut first: Vec<Option<Dir>> = vec![None; (w * state.height()) as usize];
    let mut seen = vec![false; first.len()];
    let idx = |p: Pos| (p.y * w + p.x) as usize;
    seen[idx(start)] = true;
    let mut queue = VecDeque::from([start]);
    while let Some(p) = queue.pop_front() {
        for &d in Dir::ALL {
            let q = p.step(d);
            if !grid.passable(q) || seen[idx(q)] {
                continue;
            }
            seen[idx(q)] = true;
            first[idx(q)] = if p == start { Some(d) } else { first[idx(p)] };
            if goal(q) {
                return Some((first[idx(q)], q));
            }
            queue.push_back(q);
        }
    }
    None
}

/// Answers from the solver's claim and plan carried in the grounding.
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    name: String,
    /// Misperception rate the solver was configured with.
    pub epsilon: f64,
    /// Confidence stated for actions that make progress.
    pub action_confidence: f64,
}

impl ScriptedBackend {
    pub fn new(name: impl Into<String>, epsilon: f64) -> Self {
        ScriptedBackend {
            name: name.into(),
            epsilon,
            action_confidence: 0.8,
        }
    }
}

impl Backend for ScriptedBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn grounded(&self) -> bool {
        true
    }

    fn query(&self, q: &AgentQuery) -> Result<Reply, BackendError> {
        q.validate()?;
        let Some(g) = q.grounding.as_deref() else {
            return Ok(Reply::text("Next action: wait\nConfidence: 50%"));
        };
        let (answer, conf) = match g.stage {
            Some(Stage::Perception) => {
                let claim = g.claim.clone().unwrap_or_else(|| g.truth.clone());
                (
                    format!("I see: {}", describe_claim(&claim)),
                    (1.0 - self.epsilon).powi(g.relevant.len() as i32),
                )
            }
            _ => {
                let plan = g.plan.unwrap_or(Action::Wait);
                let c = if plan == Action::Wait {
                    1.0 - self.action_confidence
                } else {
                    self.action_confidence
                };
                (format!("Next action: {plan}"), c)
            }
        };
        Ok(Reply::text(format_reply(q, &answer, &[], Some(conf))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{Cell, Entity, Terrain, WorldParams};

    fn open_world() -> WorldState {
        let params = WorldParams {
            width: 15,
            height: 15,
            ..WorldParams::default()
        };
        WorldState {
            cells: vec![
                Cell {
                    terrain: Terrain::Grass,
                    block: None
                };
                225
            ],
            params,
            entities: vec![],
            agent: crate::world::AgentState {
                pos: Pos::new(7, 7),
                facing: Dir::East,
                inventory: BTreeMap::new(),
                equipped: None,
            },
            clock: 0,
            weather: crate::world::Weather::Clear,
            rng_seed: 0,
        }
    }

    #[test]
    fn walks_toward_visible_pig() {
        let c = Catalog::builtin();
        let mut w = open_world();
        w.params.view_radius = 2;
        w.entities.push(Entity {
            id: 0,
            kind: EntityKind::Pig,
            pos: Pos::new(7, 4),
        });
        let (a, claims) = scripted_decide(&w, c.task(1).unwrap());
        assert_eq!(a, Action::Move(Dir::North));
        assert!(!claims.contains(&"pig".to_string()));
    }

    #[test]
    fn crafts_plank_from_log() {
        let c = Catalog::builtin();
        let mut w = open_world();
        w.agent.inventory.insert(Item::Log, 1);
        assert_eq!(scripted_decide(&w, c.task(6).unwrap()).0, Action::Craft(Item::Plank));
    }

    #[test]
    fn diamond_starts_with_wood() {
        let c = Catalog::builtin();
        let mut w = open_world();
        w.entities.push(Entity {
            id: 0,
            kind: EntityKind::Tree,
            pos: Pos::new(7, 3),
        });
        let solver = Solver::new(c, 0.0);
        let d = solver.decide(&w, c.task(30).unwrap(), &mut rand::rng());
        assert_eq!(d.subgoal, "mine log");
        assert_eq!(d.action, Action::Move(Dir::North));
    }
}
