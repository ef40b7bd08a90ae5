//! Recipe, drop-table and task data, loaded from the shipped `world.toml`.

use super::types::{Block, EntityKind, Fact, Item, Terrain};
use super::WorldError;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::OnceLock;

pub const SCHEMA_MAJOR: u64 = 1;

const BUILTIN: &str = include_str!("../../data/world.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Station {
    None,
    CraftingTable,
    Furnace,
}

impl Station {
    pub fn block(self) -> Option<Block> {
        match self {
            Station::None => None,
            Station::CraftingTable => Some(Block::CraftingTable),
            Station::Furnace => Some(Block::Furnace),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ingredient {
    pub item: Item,
    pub count: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recipe {
    pub output: Item,
    pub count: u32,
    pub inputs: Vec<Ingredient>,
    pub station: Station,
    #[serde(default)]
    pub tool_required: Option<Item>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MineRule {
    pub block: Block,
    pub drop: Item,
    #[serde(default)]
    pub tool: Option<Item>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarvestRule {
    pub entity: EntityKind,
    pub drop: Item,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MobRule {
    pub entity: EntityKind,
    #[serde(default)]
    pub drop: Option<Item>,
    pub hostile: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolTier {
    pub item: Item,
    pub tier: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Medium, Difficulty::Hard];

    pub fn as_str(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Medium => "medium",
            Difficulty::Hard => "hard",
        }
    }
}

impl std::fmt::Display for Difficulty {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(self.as_str())
    }
}

/// Declarative success predicate of a task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Goal {
    /// A `target` instance is in view. `on` constrains the terrain under it,
    /// each `near` fact must occur within one cell of it.
    Find {
        target: Fact,
        #[serde(default)]
        on: Option<Terrain>,
        #[serde(default)]
        near: Vec<Fact>,
        #[serde(default)]
        daytime: bool,
        #[serde(default)]
        equipped: Option<Item>,
    },
    Obtain {
        item: Item,
    },
    Kill {
        mob: EntityKind,
        #[serde(default)]
        equipped: Option<Item>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: u32,
    pub difficulty: Difficulty,
    pub description: String,
    /// Facts whose presence a perception claim must get right.
    pub relevant: Vec<Fact>,
    pub goal: Goal,
}

/// Where a raw item comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Source {
    Block(Block),
    Entity(EntityKind),
}

#[derive(Debug, Deserialize)]
struct CatalogFile {
    schema_version: String,
    #[serde(default)]
    tool: Vec<ToolTier>,
    #[serde(default)]
    mine: Vec<MineRule>,
    #[serde(default)]
    harvest: Vec<HarvestRule>,
    #[serde(default)]
    mob: Vec<MobRule>,
    #[serde(default)]
    recipe: Vec<Recipe>,
    #[serde(default)]
    task: Vec<Task>,
}

#[derive(Debug, Clone)]
pub struct Catalog {
    pub schema_version: String,
    pub recipes: Vec<Recipe>,
    pub mine_rules: Vec<MineRule>,
    pub harvest_rules: Vec<HarvestRule>,
    pub mob_rules: Vec<MobRule>,
    pub tools: Vec<ToolTier>,
    pub tasks: Vec<Task>,
    recipe_by_output: HashMap<Item, usize>,
}

impl Catalog {
    /// The catalog shipped with the crate.
    pub fn builtin() -> &'static Catalog {
        static CATALOG: OnceLock<Catalog> = OnceLock::new();
        CATALOG.get_or_init(|| Catalog::from_toml_str(BUILTIN).expect("shipped world data is valid"))
    }

    pub fn from_toml_str(text: &str) -> Result<Catalog, WorldError> {
        let file: CatalogFile = toml::from_str(text).map_err(|e| WorldError::Data(e.to_string()))?;
        let major = file
            .schema_version
            .split('.')
            .next()
            .and_then(|m| m.parse::<u64>().ok())
            .ok_or_else(|| WorldError::Data(format!("bad schema_version {:?}", file.schema_version)))?;
        if major != SCHEMA_MAJOR {
            return Err(WorldError::Data(format!(
                "unsupported schema_version {} (expected {SCHEMA_MAJOR}.x)",
                file.schema_version
            )));
        }
        let mut recipe_by_output = HashMap::new();
        for (i, r) in file.recipe.iter().enumerate() {
            if r.inputs.is_empty() || r.count == 0 {
                return Err(WorldError::Data(format!("recipe for {} has no inputs or zero yield", r.output)));
            }
            if recipe_by_output.insert(r.output, i).is_some() {
                return Err(WorldError::Data(format!("duplicate recipe for {}", r.output)));
            }
        }
        let catalog = Catalog {
            schema_version: file.schema_version,
            recipes: file.recipe,
            mine_rules: file.mine,
            harvest_rules: file.harvest,
            mob_rules: file.mob,
            tools: file.tool,
            tasks: file.task,
            recipe_by_output,
        };
        catalog.check_acyclic()?;
        catalog.check_tasks()?;
        Ok(catalog)
    }

    fn check_tasks(&self) -> Result<(), WorldError> {
        let mut ids = BTreeSet::new();
        let mut per_level: BTreeMap<Difficulty, usize> = BTreeMap::new();
        for t in &self.tasks {
            if !ids.insert(t.id) {
                return Err(WorldError::Data(format!("duplicate task id {}", t.id)));
            }
            *per_level.entry(t.difficulty).or_default() += 1;
        }
        let counts: Vec<usize> = Difficulty::ALL.iter().map(|d| per_level.get(d).copied().unwrap_or(0)).collect();
        if counts.iter().any(|&c| c != counts[0]) {
            return Err(WorldError::Data(format!("tasks unevenly split across difficulties: {counts:?}")));
        }
        Ok(())
    }

    /// Dependency edges: recipe inputs plus the tool a raw source needs.
    fn dependencies(&self, item: Item) -> Vec<Item> {
        if let Some(r) = self.recipe(item) {
            let mut deps: Vec<Item> = r.inputs.iter().map(|i| i.item).collect();
            deps.extend(r.tool_required);
            deps
        } else {
            self.mine_rules
                .iter()
                .filter(|m| m.drop == item)
                .filter_map(|m| m.tool)
                .take(1)
                .collect()
        }
    }

    fn check_acyclic(&self) -> Result<(), WorldError> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            Open,
            Done,
        }
        fn walk(c: &Catalog, item: Item, marks: &mut HashMap<Item, Mark>) -> Result<(), WorldError> {
            match marks.get(&item) {
                Some(Mark::Done) => return Ok(()),
                Some(Mark::Open) => return Err(WorldError::Data(format!("recipe cycle through {item}"))),
                None => {}
            }
            marks.insert(item, Mark::Open);
            for dep in c.dependencies(item) {
                walk(c, dep, marks)?;
            }
            marks.insert(item, Mark::Done);
            Ok(())
        }
        let mut marks = HashMap::new();
        for &item in Item::ALL {
            walk(self, item, &mut marks)?;
        }
        Ok(())
    }

    pub fn recipe(&self, output: Item) -> Option<&Recipe> {
        self.recipe_by_output.get(&output).map(|&i| &self.recipes[i])
    }

    pub fn task(&self, id: u32) -> Result<&Task, WorldError> {
        self.tasks.iter().find(|t| t.id == id).ok_or(WorldError::UnknownTask(id))
    }

    pub fn task_by_description(&self, description: &str) -> Option<&Task> {
        let d = description.trim();
        self.tasks.iter().find(|t| t.description.eq_ignore_ascii_case(d))
    }

    pub fn tasks_of(&self, difficulty: Difficulty) -> impl Iterator<Item = &Task> {
        self.tasks.iter().filter(move |t| t.difficulty == difficulty)
    }

    pub fn mine_rule(&self, block: Block) -> Option<&MineRule> {
        self.mine_rules.iter().find(|m| m.block == block)
    }

    pub fn harvest_rule(&self, entity: EntityKind) -> Option<&HarvestRule> {
        self.harvest_rules.iter().find(|h| h.entity == entity)
    }

    pub fn mob_rule(&self, entity: EntityKind) -> Option<&MobRule> {
        self.mob_rules.iter().find(|m| m.entity == entity)
    }

    pub fn tool_tier(&self, item: Item) -> Option<u8> {
        self.tools.iter().find(|t| t.item == item).map(|t| t.tier)
    }

    /// Where a non-crafted item is obtained, and the tool it needs.
    pub fn source_of(&self, item: Item) -> Option<(Source, Option<Item>)> {
        if let Some(m) = self.mine_rules.iter().find(|m| m.drop == item) {
            return Some((Source::Block(m.block), m.tool));
        }
        if let Some(h) = self.harvest_rules.iter().find(|h| h.drop == item) {
            return Some((Source::Entity(h.entity), None));
        }
        self.mob_rules
            .iter()
            .find(|m| m.drop == Some(item))
            .map(|m| (Source::Entity(m.entity), None))
    }

    /// Ordered subgoals needed to hold `goal`, dependencies first.
    ///
    /// Inputs already held in the quantity one craft needs are skipped, as
    /// are tools already in the inventory.
    pub fn resolve_recipe_chain(&self, goal: Item, inventory: &BTreeMap<Item, u32>) -> Result<Vec<Item>, WorldError> {
        fn visit(
            c: &Catalog,
            item: Item,
            need: u32,
            inv: &BTreeMap<Item, u32>,
            seen: &mut BTreeSet<Item>,
            out: &mut Vec<Item>,
        ) -> Result<(), WorldError> {
            if seen.contains(&item) || inv.get(&item).copied().unwrap_or(0) >= need {
                return Ok(());
            }
            seen.insert(item);
            if let Some(r) = c.recipe(item) {
                for ing in &r.inputs {
                    visit(c, ing.item, ing.count, inv, seen, out)?;
                }
                if let Some(tool) = r.tool_required {
                    visit(c, tool, 1, inv, seen, out)?;
                }
            } else if let Some((_, tool)) = c.source_of(item) {
                if let Some(tool) = tool {
                    visit(c, tool, 1, inv, seen, out)?;
                }
            } else {
                return Err(WorldError::UnknownItem(item.to_string()));
            }
            out.push(item);
            Ok(())
        }
        let mut out = Vec::new();
        visit(self, goal, 1, inventory, &mut BTreeSet::new(), &mut out)?;
        Ok(out)
    }

    /// Same as [`Catalog::resolve_recipe_chain`] for an item given by name.
    pub fn resolve_recipe_chain_named(&self, goal: &str, inventory: &BTreeMap<Item, u32>) -> Result<Vec<Item>, WorldError> {
        let item: Item = goal.parse().map_err(|_| WorldError::UnknownItem(goal.to_string()))?;
        self.resolve_recipe_chain(item, inventory)
    }

    /// Raw sources (with counts) consumed when producing `qty` of `item` from
    /// nothing, including one of each tool along the way.
    pub fn raw_requirements(&self, item: Item, qty: u32) -> BTreeMap<Source, u32> {
        fn expand(c: &Catalog, item: Item, qty: u32, acc: &mut BTreeMap<Source, u32>, tools: &mut BTreeSet<Item>) {
            if let Some(r) = c.recipe(item) {
                let crafts = qty.div_ceil(r.count);
                for ing in &r.inputs {
                    expand(c, ing.item, crafts * ing.count, acc, tools);
                }
                if let Some(t) = r.tool_required {
                    if tools.insert(t) {
                        expand(c, t, 1, acc, tools);
                    }
                }
            } else if let Some((src, tool)) = c.source_of(item) {
                *acc.entry(src).or_default() += qty;
                if let Some(t) = tool {
                    if tools.insert(t) {
                        expand(c, t, 1, acc, tools);
                    }
                }
            }
        }
        let mut acc = BTreeMap::new();
        expand(self, item, qty, &mut acc, &mut BTreeSet::new());
        acc
    }

    /// Stations any recipe on the way to `item` uses.
    pub fn stations_for(&self, item: Item) -> BTreeSet<Station> {
        let mut out = BTreeSet::new();
        let mut stack = vec![item];
        let mut seen = BTreeSet::new();
        while let Some(it) = stack.pop() {
            if !seen.insert(it) {
                continue;
            }
            if let Some(r) = self.recipe(it) {
                if r.station != Station::None {
                    out.insert(r.station);
                }
            }
            stack.extend(self.dependencies(it));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inv(items: &[(Item, u32)]) -> BTreeMap<Item, u32> {
        items.iter().copied().collect()
    }

    #[test]
    fn builtin_has_thirty_tasks_evenly_split() {
        let c = Catalog::builtin();
        assert_eq!(c.tasks.len(), 30);
        for d in Difficulty::ALL {
            assert_eq!(c.tasks_of(d).count(), 10);
        }
        let ids: Vec<u32> = c.tasks.iter().map(|t| t.id).collect();
        assert_eq!(ids, (1..=30).collect::<Vec<_>>());
    }

    #[test]
    fn one_step_chains() {
        let c = Catalog::builtin();
        assert_eq!(c.resolve_recipe_chain(Item::Plank, &inv(&[(Item::Log, 1)])).unwrap(), vec![Item::Plank]);
        assert_eq!(c.resolve_recipe_chain(Item::Stick, &inv(&[(Item::Plank, 2)])).unwrap(), vec![Item::Stick]);
        assert!(c.resolve_recipe_chain(Item::Stick, &inv(&[(Item::Stick, 1)])).unwrap().is_empty());
        assert!(matches!(
            c.resolve_recipe_chain_named("obsidian", &BTreeMap::new()),
            Err(WorldError::UnknownItem(_))
        ));
    }

    #[test]
    fn rejects_cycles_and_bad_versions() {
        let cyclic = r#"
            schema_version = "1.0.0"
            [[recipe]]
            output = "plank"
            count = 1
            inputs = [{ item = "stick", count = 1 }]
            station = "none"
            [[recipe]]
            output = "stick"
            count = 1
            inputs = [{ item = "plank", count = 1 }]
            station = "none"
        "#;
        assert!(matches!(Catalog::from_toml_str(cyclic), Err(WorldError::Data(m)) if m.contains("cycle")));
        assert!(Catalog::from_toml_str("schema_version = \"2.0.0\"").is_err());
        let empty_inputs = r#"
            schema_version = "1.0.0"
            [[recipe]]
            output = "plank"
            count = 1
            inputs = []
            station = "none"
        "#;
        assert!(Catalog::from_toml_str(empty_inputs).is_err());
    }

    #[test]
    fn iron_ingot_needs_ore_and_fuel() {
        let c = Catalog::builtin();
        let raw = c.raw_requirements(Item::IronIngot, 3);
        assert_eq!(raw.get(&Source::Block(Block::IronOre)), Some(&3));
        assert_eq!(raw.get(&Source::Block(Block::CoalOre)), Some(&3));
        assert!(c.stations_for(Item::IronPickaxe).contains(&Station::Furnace));
    }
}
