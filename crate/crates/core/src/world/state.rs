use super::catalog::{Catalog, Station};
use super::types::{Block, Dir, EntityKind, Fact, Item, Pos, Terrain, TimeOfDay, Weather};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldParams {
    pub width: i32,
    pub height: i32,
    pub view_radius: i32,
    pub day_length: u64,
    /// Zombies take one random step every this many ticks.
    pub zombie_period: u64,
}

impl Default for WorldParams {
    fn default() -> Self {
        WorldParams {
            width: 64,
            height: 64,
            view_radius: 5,
            day_length: 1200,
            zombie_period: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub terrain: Terrain,
    pub block: Option<Block>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub id: u32,
    pub kind: EntityKind,
    pub pos: Pos,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentState {
    pub pos: Pos,
    pub facing: Dir,
    pub inventory: BTreeMap<Item, u32>,
    pub equipped: Option<Item>,
}

impl AgentState {
    pub fn count(&self, item: Item) -> u32 {
        self.inventory.get(&item).copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub params: WorldParams,
    pub cells: Vec<Cell>,
    pub entities: Vec<Entity>,
    pub agent: AgentState,
    pub clock: u64,
    pub weather: Weather,
    pub rng_seed: u64,
}

/// Agent action space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Action {
    Move(Dir),
    Turn(Dir),
    Mine,
    Craft(Item),
    Smelt(Item),
    Attack,
    Equip(Item),
    Wait,
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Move(d) => write!(f, "move {d}"),
            Action::Turn(d) => write!(f, "turn {d}"),
            Action::Mine => f.write_str("mine"),
            Action::Craft(i) => write!(f, "craft {i}"),
            Action::Smelt(i) => write!(f, "smelt {i}"),
            Action::Attack => f.write_str("attack"),
            Action::Equip(i) => write!(f, "equip {i}"),
            Action::Wait => f.write_str("wait"),
        }
    }
}

impl FromStr for Action {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().trim_end_matches('.').to_ascii_lowercase();
        let (verb, rest) = match s.split_once(char::is_whitespace) {
            Some((v, r)) => (v, r.trim()),
            None => (s.as_str(), ""),
        };
        let item = |r: &str| r.parse::<Item>();
        match verb {
            "move" | "go" | "walk" => rest.parse().map(Action::Move),
            "turn" | "face" => rest.parse().map(Action::Turn),
            "mine" | "dig" | "collect" | "chop" if rest.is_empty() => Ok(Action::Mine),
            "mine" | "dig" | "collect" | "chop" => Ok(Action::Mine),
            "craft" => item(rest).map(Action::Craft),
            "smelt" => item(rest).map(Action::Smelt),
            "cook" => item(rest)
                .and_then(|raw| match raw {
                    Item::Beef => Ok(Item::CookedBeef),
                    Item::Mutton => Ok(Item::CookedMutton),
                    Item::CookedBeef | Item::CookedMutton => Ok(raw),
                    other => Err(format!("cannot cook {other}")),
                })
                .map(Action::Smelt),
            "attack" | "hit" | "kill" => Ok(Action::Attack),
            "equip" | "wear" | "hold" => item(rest).map(Action::Equip),
            "wait" | "noop" | "none" => Ok(Action::Wait),
            _ => Err(format!("unknown action {s:?}")),
        }
    }
}

impl From<Action> for String {
    fn from(a: Action) -> String {
        a.to_string()
    }
}

impl TryFrom<String> for Action {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

/// What a single tick produced. Illegal actions are logged, never fatal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Moved { to: Pos },
    MoveBlocked { dir: Dir },
    Turned { dir: Dir },
    MinedBlock { block: Block, at: Pos, drop: Item },
    Harvested { entity: EntityKind, at: Pos, drop: Item },
    Crafted { output: Item, count: u32, consumed: Vec<(Item, u32)> },
    Smelted { output: Item, count: u32, consumed: Vec<(Item, u32)> },
    MobKilled { kind: EntityKind, at: Pos, drop: Option<Item>, equipped: Option<Item> },
    Equipped { item: Item },
    Waited,
    ZombieMoved { id: u32, to: Pos },
    IllegalAction { action: String, reason: String },
}

impl WorldState {
    pub fn width(&self) -> i32 {
        self.params.width
    }

    pub fn height(&self) -> i32 {
        self.params.height
    }

    pub fn in_bounds(&self, p: Pos) -> bool {
        p.x >= 0 && p.y >= 0 && p.x < self.params.width && p.y < self.params.height
    }

    fn idx(&self, p: Pos) -> usize {
        (p.y * self.params.width + p.x) as usize
    }

    pub fn cell(&self, p: Pos) -> Option<&Cell> {
        self.in_bounds(p).then(|| &self.cells[self.idx(p)])
    }

    pub fn cell_mut(&mut self, p: Pos) -> Option<&mut Cell> {
        if self.in_bounds(p) {
            let i = self.idx(p);
            Some(&mut self.cells[i])
        } else {
            None
        }
    }

    pub fn entity_at(&self, p: Pos) -> Option<&Entity> {
        self.entities.iter().find(|e| e.pos == p)
    }

    /// Cell-indexed view of the entity list for repeated lookups.
    pub fn occupancy(&self) -> Occupancy<'_> {
        let mut entities = vec![None; self.cells.len()];
        for e in self.entities.iter().rev() {
            if self.in_bounds(e.pos) {
                entities[self.idx(e.pos)] = Some(e.kind);
            }
        }
        Occupancy { state: self, entities }
    }

    /// Open ground: in bounds, dry, no block, no entity.
    pub fn passable(&self, p: Pos) -> bool {
        match self.cell(p) {
            Some(c) => c.terrain != Terrain::Water && c.block.is_none() && self.entity_at(p).is_none(),
            None => false,
        }
    }

    pub fn time_of_day(&self) -> TimeOfDay {
        if self.clock % self.params.day_length < self.params.day_length / 2 {
            TimeOfDay::Day
        } else {
            TimeOfDay::Night
        }
    }

    pub fn is_daytime(&self) -> bool {
        self.time_of_day() == TimeOfDay::Day
    }

    pub fn facing_cell(&self) -> Pos {
        self.agent.pos.step(self.agent.facing)
    }

    /// Whether a station block sits within one cell (8-neighbourhood).
    pub fn near_station(&self, station: Station) -> bool {
        let Some(block) = station.block() else {
            return true;
        };
        let a = self.agent.pos;
        (-1..=1).any(|dy| {
            (-1..=1).any(|dx| self.cell(Pos::new(a.x + dx, a.y + dy)).and_then(|c| c.block) == Some(block))
        })
    }

    /// Functional form of [`WorldState::apply`].
    pub fn step(&self, catalog: &Catalog, action: Action) -> (WorldState, Vec<Event>) {
        let mut next = self.clone();
        let events = next.apply(catalog, action);
        (next, events)
    }

    /// Advances one tick. The clock moves even when the action is illegal.
    pub fn apply(&mut self, catalog: &Catalog, action: Action) -> Vec<Event> {
        let mut events = Vec::new();
        match self.act(catalog, action) {
            Ok(ev) => events.push(ev),
            Err(reason) => events.push(Event::IllegalAction {
                action: action.to_string(),
                reason,
            }),
        }
        self.clock += 1;
        if self.params.zombie_period > 0 && self.clock.is_multiple_of(self.params.zombie_period) {
            self.move_zombies(&mut events);
        }
        events
    }

    fn act(&mut self, catalog: &Catalog, action: Action) -> Result<Event, String> {
        match action {
            Action::Move(dir) => {
                self.agent.facing = dir;
                let to = self.agent.pos.step(dir);
                if self.passable(to) {
                    self.agent.pos = to;
                    Ok(Event::Moved { to })
                } else {
                    Ok(Event::MoveBlocked { dir })
                }
            }
            Action::Turn(dir) => {
                self.agent.facing = dir;
                Ok(Event::Turned { dir })
            }
            Action::Mine => self.mine(catalog),
            Action::Craft(item) => self.craft(catalog, item, false),
            Action::Smelt(item) => self.craft(catalog, item, true),
            Action::Attack => self.attack(catalog),
            Action::Equip(item) => {
                if self.agent.count(item) == 0 {
                    return Err(format!("no {item} in inventory"));
                }
                self.agent.equipped = Some(item);
                Ok(Event::Equipped { item })
            }
            Action::Wait => Ok(Event::Waited),
        }
    }

    fn add_item(&mut self, item: Item, n: u32) {
        *self.agent.inventory.entry(item).or_default() += n;
    }

    fn mine(&mut self, catalog: &Catalog) -> Result<Event, String> {
        let at = self.facing_cell();
        if let Some(e) = self.entity_at(at).copied() {
            let rule = catalog
                .harvest_rule(e.kind)
                .ok_or_else(|| format!("cannot mine a {}", e.kind))?;
            let drop = rule.drop;
            self.add_item(drop, 1);
            return Ok(Event::Harvested { entity: e.kind, at, drop });
        }
        let block = self
            .cell(at)
            .and_then(|c| c.block)
            .ok_or_else(|| "nothing to mine in front".to_string())?;
        let rule = catalog.mine_rule(block).ok_or_else(|| format!("{block} cannot be mined"))?;
        if let Some(tool) = rule.tool {
            let need = catalog.tool_tier(tool).unwrap_or(u8::MAX);
            let have = self.agent.equipped.and_then(|i| catalog.tool_tier(i)).unwrap_or(0);
            if have < need {
                return Err(format!("{block} needs {tool} or better equipped"));
            }
        }
        let drop = rule.drop;
        if let Some(c) = self.cell_mut(at) {
            c.block = None;
        }
        self.add_item(drop, 1);
        Ok(Event::MinedBlock { block, at, drop })
    }

    fn craft(&mut self, catalog: &Catalog, item: Item, smelting: bool) -> Result<Event, String> {
        let recipe = catalog.recipe(item).ok_or_else(|| format!("no recipe for {item}"))?;
        match (smelting, recipe.station) {
            (true, Station::Furnace) | (false, Station::None | Station::CraftingTable) => {}
            (true, _) => return Err(format!("{item} is crafted, not smelted")),
            (false, Station::Furnace) => return Err(format!("{item} must be smelted")),
        }
        if !self.near_station(recipe.station) {
            return Err(format!("{item} needs a nearby {:?}", recipe.station));
        }
        if let Some(tool) = recipe.tool_required {
            if self.agent.count(tool) == 0 {
                return Err(format!("{item} needs {tool}"));
            }
        }
        if let Some(missing) = recipe.inputs.iter().find(|i| self.agent.count(i.item) < i.count) {
            return Err(format!("not enough {} for {item}", missing.item));
        }
        let consumed: Vec<(Item, u32)> = recipe.inputs.iter().map(|i| (i.item, i.count)).collect();
        for &(it, n) in &consumed {
            let slot = self.agent.inventory.get_mut(&it).expect("checked above");
            *slot -= n;
            if *slot == 0 {
                self.agent.inventory.remove(&it);
                if self.agent.equipped == Some(it) {
                    self.agent.equipped = None;
                }
            }
        }
        let count = recipe.count;
        self.add_item(item, count);
        Ok(if smelting {
            Event::Smelted { output: item, count, consumed }
        } else {
            Event::Crafted { output: item, count, consumed }
        })
    }

    fn attack(&mut self, catalog: &Catalog) -> Result<Event, String> {
        let at = self.facing_cell();
        let (idx, e) = self
            .entities
            .iter()
            .enumerate()
            .find(|(_, e)| e.pos == at)
            .map(|(i, e)| (i, *e))
            .ok_or_else(|| "nothing to attack in front".to_string())?;
        let rule = catalog.mob_rule(e.kind).ok_or_else(|| format!("cannot attack a {}", e.kind))?;
        let drop = rule.drop;
        self.entities.remove(idx);
        if let Some(d) = drop {
            self.add_item(d, 1);
        }
        Ok(Event::MobKilled {
            kind: e.kind,
            at,
            drop,
            equipped: self.agent.equipped,
        })
    }

    fn move_zombies(&mut self, events: &mut Vec<Event>) {
        for i in 0..self.entities.len() {
            if self.entities[i].kind != EntityKind::Zombie {
                continue;
            }
            let e = self.entities[i];
            let r = mix(self.rng_seed ^ mix(self.clock) ^ mix(u64::from(e.id).wrapping_add(0x9e37)));
            let dir = Dir::ALL[(r % 4) as usize];
            let to = e.pos.step(dir);
            if self.passable(to) && to != self.agent.pos {
                self.entities[i].pos = to;
                events.push(Event::ZombieMoved { id: e.id, to });
            }
        }
    }
}

/// SplitMix64 finalizer, used for stateless seeded choices.
pub(crate) fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Entity kinds by cell. A snapshot: rebuild after the state changes.
pub struct Occupancy<'s> {
    pub state: &'s WorldState,
    entities: Vec<Option<EntityKind>>,
}

impl Occupancy<'_> {
    pub fn entity(&self, p: Pos) -> Option<EntityKind> {
        if self.state.in_bounds(p) {
            self.entities[self.state.idx(p)]
        } else {
            None
        }
    }

    pub fn passable(&self, p: Pos) -> bool {
        match self.state.cell(p) {
            Some(c) => c.terrain != Terrain::Water && c.block.is_none() && self.entity(p).is_none(),
            None => false,
        }
    }

    /// Whether `f` is among `WorldState::facts_at(p)`.
    pub fn has(&self, p: Pos, f: Fact) -> bool {
        let Some(c) = self.state.cell(p) else {
            return false;
        };
        match f {
            Fact::Terrain(t) => c.terrain == t,
            Fact::Block(b) => c.block == Some(b),
            Fact::Entity(k) => self.entity(p) == Some(k),
            _ => false,
        }
    }
}
