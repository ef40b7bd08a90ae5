//! Deterministic crafting gridworld: data catalog, generation, transitions,
//! observation and task predicates.

mod catalog;
mod gen;
mod state;
mod types;
mod view;

pub use catalog::{
    Catalog, Difficulty, Goal, HarvestRule, Ingredient, MineRule, MobRule, Recipe, Source, Station, Task, ToolTier,
    SCHEMA_MAJOR,
};
pub use gen::{generate, reachable};
pub(crate) use state::mix;
pub use state::{Action, AgentState, Cell, Entity, Event, Occupancy, WorldParams, WorldState};
pub use types::{Block, Dir, EntityKind, Fact, Item, Pos, Terrain, TimeOfDay, Weather};
pub use view::{check_success, claimed_facts, find_instance, label_claim, observe, privileged_observe, PerceptionRule};

#[derive(Debug, thiserror::Error)]
pub enum WorldError {
    #[error("world data: {0}")]
    Data(String),
    #[error("unknown task {0}")]
    UnknownTask(u32),
    #[error("unknown item {0:?}")]
    UnknownItem(String),
}
