use super::catalog::{Catalog, Goal, Source, Task};
use super::state::{AgentState, Cell, Entity, WorldParams, WorldState};
use super::types::{Block, Dir, EntityKind, Fact, Pos, Terrain, Weather};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, VecDeque};

const ZOMBIES: usize = 6;
const SITES: usize = 14;

/// Builds a world for `task`, repairing it until the task's raw needs are
/// reachable from the spawn point.
pub fn generate(seed: u64, task: &Task, params: &WorldParams, catalog: &Catalog) -> WorldState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (u64::from(task.id) << 48));
    let (w, h) = (params.width, params.height);
    let spawn = Pos::new(w / 2, h / 2);

    let sites: Vec<(Pos, Terrain)> = (0..SITES)
        .map(|i| {
            let p = Pos::new(rng.random_range(0..w), rng.random_range(0..h));
            let t = if i == 0 {
                Terrain::Grass
            } else {
                match rng.random_range(0..100) {
                    0..=29 => Terrain::Grass,
                    30..=54 => Terrain::Forest,
                    55..=71 => Terrain::Desert,
                    72..=91 => Terrain::Mountain,
                    _ => Terrain::Water,
                }
            };
            (if i == 0 { spawn } else { p }, t)
        })
        .collect();

    let mut cells = Vec::with_capacity((w * h) as usize);
    for y in 0..h {
        for x in 0..w {
            let p = Pos::new(x, y);
            let terrain = sites
                .iter()
                .min_by_key(|(s, _)| (s.x - p.x).pow(2) + (s.y - p.y).pow(2))
                .map(|(_, t)| *t)
                .unwrap_or(Terrain::Grass);
            let roll: f64 = rng.random();
            let block = match terrain {
                Terrain::Mountain => match roll {
                    r if r < 0.008 => Some(Block::DiamondOre),
                    r if r < 0.023 => Some(Block::RedstoneOre),
                    r if r < 0.063 => Some(Block::IronOre),
                    r if r < 0.123 => Some(Block::CoalOre),
                    r if r < 0.52 => Some(Block::Stone),
                    _ => None,
                },
                Terrain::Desert if roll < 0.12 => Some(Block::Sand),
                _ => None,
            };
            cells.push(Cell { terrain, block });
        }
    }

    let mut state = WorldState {
        params: params.clone(),
        cells,
        entities: Vec::new(),
        agent: AgentState {
            pos: spawn,
            facing: Dir::North,
            inventory: BTreeMap::new(),
            equipped: None,
        },
        clock: 0,
        weather: if rng.random_bool(0.25) { Weather::Rain } else { Weather::Clear },
        rng_seed: rng.random(),
    };

    clear_area(&mut state, spawn, 2);
    let mut next_id = 0u32;
    for y in 0..h {
        for x in 0..w {
            let p = Pos::new(x, y);
            // Entities are placed in scan order, so `p` holds none yet.
            let open = state.cell(p).is_some_and(|c| c.terrain != Terrain::Water && c.block.is_none());
            if p.chebyshev(spawn) <= 2 || !open {
                continue;
            }
            let terrain = state.cell(p).map(|c| c.terrain).unwrap_or(Terrain::Water);
            let roll: f64 = rng.random();
            let kind = match terrain {
                Terrain::Forest if roll < 0.22 => Some(EntityKind::Tree),
                Terrain::Forest if roll < 0.235 => Some(EntityKind::Pig),
                Terrain::Grass if roll < 0.03 => Some(EntityKind::Tree),
                Terrain::Grass if roll < 0.045 => Some(EntityKind::Pig),
                Terrain::Grass if roll < 0.057 => Some(EntityKind::Cow),
                Terrain::Grass if roll < 0.069 => Some(EntityKind::Sheep),
                Terrain::Desert if roll < 0.012 => Some(EntityKind::Cow),
                _ => None,
            };
            if let Some(kind) = kind {
                state.entities.push(Entity { id: next_id, kind, pos: p });
                next_id += 1;
            }
        }
    }
    let mut placed = 0;
    let mut tries = 0;
    while placed < ZOMBIES && tries < 10_000 {
        tries += 1;
        let p = Pos::new(rng.random_range(0..w), rng.random_range(0..h));
        if p.chebyshev(spawn) > 6 && state.passable(p) {
            state.entities.push(Entity {
                id: next_id,
                kind: EntityKind::Zombie,
                pos: p,
            });
            next_id += 1;
            placed += 1;
        }
    }

    set_block(&mut state, Pos::new(spawn.x - 2, spawn.y - 2), Block::CraftingTable);
    set_block(&mut state, Pos::new(spawn.x + 2, spawn.y - 2), Block::Furnace);

    ensure_feasible(&mut state, task, catalog, &mut next_id);
    state
}

fn set_block(state: &mut WorldState, p: Pos, b: Block) {
    state.entities.retain(|e| e.pos != p);
    if let Some(c) = state.cell_mut(p) {
        if c.terrain == Terrain::Water {
            c.terrain = Terrain::Grass;
        }
        c.block = Some(b);
    }
}

fn clear_cell(state: &mut WorldState, p: Pos) {
    state.entities.retain(|e| e.pos != p);
    if let Some(c) = state.cell_mut(p) {
        c.block = None;
        if c.terrain == Terrain::Water {
            c.terrain = Terrain::Grass;
        }
    }
}

fn clear_area(state: &mut WorldState, center: Pos, r: i32) {
    for dy in -r..=r {
        for dx in -r..=r {
            let p = Pos::new(center.x + dx, center.y + dy);
            clear_cell(state, p);
            if let Some(c) = state.cell_mut(p) {
                c.terrain = Terrain::Grass;
            }
        }
    }
}

/// Cells the agent can walk to from its current position.
pub fn reachable(state: &WorldState) -> Vec<bool> {
    let (w, h) = (state.params.width, state.params.height);
    let mut seen = vec![false; (w * h) as usize];
    let occ = state.occupancy();
    let start = state.agent.pos;
    let mut queue = VecDeque::from([start]);
    seen[(start.y * w + start.x) as usize] = true;
    while let Some(p) = queue.pop_front() {
        for d in Dir::ALL {
            let q = p.step(*d);
            if occ.passable(q) && !seen[(q.y * w + q.x) as usize] {
                seen[(q.y * w + q.x) as usize] = true;
                queue.push_back(q);
            }
        }
    }
    seen
}

/// Positions of `fact` that touch (or are) a reachable cell.
fn accessible(state: &WorldState, reach: &[bool], fact: Fact) -> usize {
    let w = state.params.width;
    let is_reach = |p: Pos| state.in_bounds(p) && reach[(p.y * w + p.x) as usize];
    let occ = state.occupancy();
    state
        .view_all()
        .filter(|&p| occ.has(p, fact))
        .filter(|&p| is_reach(p) || Dir::ALL.iter().any(|d| is_reach(p.step(*d))))
        .count()
}

impl WorldState {
    fn view_all(&self) -> impl Iterator<Item = Pos> + '_ {
        let (w, h) = (self.params.width, self.params.height);
        (0..h).flat_map(move |y| (0..w).map(move |x| Pos::new(x, y)))
    }
}

/// Slots along a cleared shelf south of spawn, reached via a corridor.
fn shelf_slots(state: &mut WorldState) -> Vec<Pos> {
    let s = state.agent.pos;
    let half = (state.params.width / 2 - 2).min(10);
    for y in s.y..=s.y + 3 {
        clear_cell(state, Pos::new(s.x, y));
    }
    let mut slots = Vec::new();
    for dx in -half..=half {
        let walk = Pos::new(s.x + dx, s.y + 3);
        clear_cell(state, walk);
        if let Some(c) = state.cell_mut(walk) {
            c.terrain = Terrain::Grass;
        }
        let slot = Pos::new(s.x + dx, s.y + 4);
        if state.in_bounds(slot) {
            slots.push(slot);
        }
    }
    slots
}

fn ensure_feasible(state: &mut WorldState, task: &Task, catalog: &Catalog, next_id: &mut u32) {
    match &task.goal {
        Goal::Obtain { item } => {
            let needs = catalog.raw_requirements(*item, 1);
            place_sources(state, &needs, next_id);
        }
        Goal::Kill { mob, equipped } => {
            let mut needs = BTreeMap::new();
            if let Some(tool) = equipped {
                needs = catalog.raw_requirements(*tool, 1);
            }
            needs.insert(Source::Entity(*mob), 1);
            place_sources(state, &needs, next_id);
        }
        Goal::Find {
            target,
            on,
            near,
            equipped,
            ..
        } => {
            if let Some(tool) = equipped {
                let needs = catalog.raw_requirements(*tool, 1);
                place_sources(state, &needs, next_id);
            }
            if !find_satisfiable(state, task) {
                carve_find_patch(state, *target, *on, near, next_id);
            }
        }
    }
}

fn place_sources(state: &mut WorldState, needs: &BTreeMap<Source, u32>, next_id: &mut u32) {
    let reach = reachable(state);
    let missing: Vec<(Source, usize)> = needs
        .iter()
        .filter_map(|(src, &n)| {
            let fact = match src {
                Source::Block(b) => Fact::Block(*b),
                Source::Entity(e) => Fact::Entity(*e),
            };
            // Trees never deplete, one is enough.
            let want = if *src == Source::Entity(EntityKind::Tree) { 1 } else { n as usize };
            let have = accessible(state, &reach, fact);
            (have < want).then(|| (*src, want - have))
        })
        .collect();
    if missing.is_empty() {
        return;
    }
    let slots = shelf_slots(state);
    let mut it = slots.into_iter();
    for (src, n) in missing {
        for _ in 0..n {
            let Some(p) = it.next() else { return };
            match src {
                Source::Block(b) => set_block(state, p, b),
                Source::Entity(kind) => {
                    clear_cell(state, p);
                    state.entities.push(Entity { id: *next_id, kind, pos: p });
                    *next_id += 1;
                }
            }
        }
    }
}

fn find_satisfiable(state: &WorldState, task: &Task) -> bool {
    let Goal::Find { target, on, near, .. } = &task.goal else {
        return true;
    };
    let reach = reachable(state);
    let w = state.params.width;
    let r = state.params.view_radius;
    let occ = state.occupancy();
    // A satisfying cell close to some reachable cell is visible from there.
    state.view_all().any(|p| {
        super::view::find_instance(&occ, p, *target, *on, near)
            && (-r..=r).any(|dy| {
                (-r..=r).any(|dx| {
                    let q = Pos::new(p.x + dx, p.y + dy);
                    state.in_bounds(q) && reach[(q.y * w + q.x) as usize]
                })
            })
    })
}

fn carve_find_patch(state: &mut WorldState, target: Fact, on: Option<Terrain>, near: &[Fact], next_id: &mut u32) {
    let s = state.agent.pos;
    let c = Pos::new(s.x, (s.y - 7).max(2));
    for y in c.y + 2..=s.y {
        clear_cell(state, Pos::new(s.x, y));
    }
    for dy in -1..=1 {
        for dx in -1..=1 {
            let p = Pos::new(c.x + dx, c.y + dy);
            clear_cell(state, p);
            if let Some(cell) = state.cell_mut(p) {
                cell.terrain = on.unwrap_or(Terrain::Grass);
            }
        }
    }
    // Open the south neighbour so the patch stays connected to the corridor.
    clear_cell(state, Pos::new(c.x, c.y + 1));
    put_fact(state, c, target, next_id);
    let around = [Pos::new(c.x - 1, c.y), Pos::new(c.x + 1, c.y), Pos::new(c.x - 1, c.y - 1), Pos::new(c.x + 1, c.y - 1)];
    for (f, p) in near.iter().zip(around) {
        put_fact(state, p, *f, next_id);
    }
}

fn put_fact(state: &mut WorldState, p: Pos, f: Fact, next_id: &mut u32) {
    match f {
        Fact::Entity(kind) => {
            clear_cell(state, p);
            state.entities.push(Entity { id: *next_id, kind, pos: p });
            *next_id += 1;
        }
        Fact::Block(b) => set_block(state, p, b),
        Fact::Terrain(t) => {
            if let Some(cell) = state.cell_mut(p) {
                cell.terrain = t;
                if t == Terrain::Water {
                    cell.block = None;
                }
            }
        }
        Fact::Time(_) | Fact::Weather(_) => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world(seed: u64, task: u32) -> WorldState {
        let c = Catalog::builtin();
        generate(seed, c.task(task).unwrap(), &WorldParams::default(), c)
    }

    #[test]
    fn deterministic() {
        let a = serde_json::to_vec(&world(7, 30)).unwrap();
        let b = serde_json::to_vec(&world(7, 30)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, serde_json::to_vec(&world(8, 30)).unwrap());
    }

    #[test]
    fn pig_present_for_find_a_pig() {
        let w = world(7, 1);
        assert!(w.entities.iter().any(|e| e.kind == EntityKind::Pig));
    }

    #[test]
    fn diamond_task_has_reachable_tech_tree() {
        for seed in 0..20 {
            let w = world(seed, 30);
            let reach = reachable(&w);
            for fact in [
                Fact::Entity(EntityKind::Tree),
                Fact::Block(Block::Stone),
                Fact::Block(Block::IronOre),
                Fact::Block(Block::CoalOre),
                Fact::Block(Block::DiamondOre),
            ] {
                assert!(accessible(&w, &reach, fact) > 0, "seed {seed}: no reachable {fact}");
            }
        }
    }

    #[test]
    fn find_tasks_satisfiable() {
        let c = Catalog::builtin();
        for t in &c.tasks {
            if matches!(t.goal, Goal::Find { .. }) {
                for seed in 0..5 {
                    let w = generate(seed, t, &WorldParams::default(), c);
                    assert!(find_satisfiable(&w, t), "task {} seed {seed}", t.id);
                }
            }
        }
    }
}
