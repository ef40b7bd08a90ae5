use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

macro_rules! named_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn name(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                let norm = s.trim().to_ascii_lowercase().replace(' ', "_");
                $name::ALL
                    .iter()
                    .copied()
                    .find(|v| v.name() == norm)
                    .ok_or_else(|| format!("unknown {}: {s:?}", stringify!($name)))
            }
        }
    };
}

named_enum!(
    /// Inventory item.
    Item {
        Log => "log",
        Plank => "plank",
        Stick => "stick",
        Chest => "chest",
        WoodenDoor => "wooden_door",
        WoodenBoat => "wooden_boat",
        WoodenSword => "wooden_sword",
        WoodenPickaxe => "wooden_pickaxe",
        Stone => "stone",
        StonePickaxe => "stone_pickaxe",
        Coal => "coal",
        IronOre => "iron_ore",
        IronIngot => "iron_ingot",
        IronPickaxe => "iron_pickaxe",
        IronSword => "iron_sword",
        IronHelmet => "iron_helmet",
        IronDoor => "iron_door",
        Redstone => "redstone",
        Compass => "compass",
        Sand => "sand",
        Glass => "glass",
        Beef => "beef",
        CookedBeef => "cooked_beef",
        Mutton => "mutton",
        CookedMutton => "cooked_mutton",
        Porkchop => "porkchop",
        Diamond => "diamond",
    }
);

named_enum!(
    /// Solid block occupying a cell. Blocks are impassable.
    Block {
        Stone => "stone",
        CoalOre => "coal_ore",
        IronOre => "iron_ore",
        RedstoneOre => "redstone_ore",
        DiamondOre => "diamond_ore",
        Sand => "sand",
        CraftingTable => "crafting_table",
        Furnace => "furnace",
    }
);

named_enum!(
    EntityKind {
        Pig => "pig",
        Cow => "cow",
        Sheep => "sheep",
        Zombie => "zombie",
        Tree => "tree",
    }
);

named_enum!(
    /// Ground type of a cell; doubles as the biome.
    Terrain {
        Grass => "grass",
        Forest => "forest",
        Desert => "desert",
        Mountain => "mountain",
        Water => "water",
    }
);

named_enum!(
    TimeOfDay {
        Day => "day",
        Night => "night",
    }
);

named_enum!(
    Weather {
        Clear => "clear",
        Rain => "rain",
    }
);

named_enum!(
    Dir {
        North => "north",
        East => "east",
        South => "south",
        West => "west",
    }
);

impl Dir {
    /// `(dx, dy)` with y growing southwards.
    pub fn delta(self) -> (i32, i32) {
        match self {
            Dir::North => (0, -1),
            Dir::East => (1, 0),
            Dir::South => (0, 1),
            Dir::West => (-1, 0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pos {
    pub x: i32,
    pub y: i32,
}

impl Pos {
    pub fn new(x: i32, y: i32) -> Self {
        Pos { x, y }
    }

    pub fn step(self, dir: Dir) -> Pos {
        let (dx, dy) = dir.delta();
        Pos::new(self.x + dx, self.y + dy)
    }

    pub fn chebyshev(self, other: Pos) -> i32 {
        (self.x - other.x).abs().max((self.y - other.y).abs())
    }

    pub fn manhattan(self, other: Pos) -> i32 {
        (self.x - other.x).abs() + (self.y - other.y).abs()
    }

    /// The direction from `self` to an orthogonally adjacent `other`.
    pub fn dir_to(self, other: Pos) -> Option<Dir> {
        Dir::ALL.iter().copied().find(|&d| self.step(d) == other)
    }
}

/// An observable fact about the scene, the unit of perception claims.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Fact {
    Entity(EntityKind),
    Block(Block),
    Terrain(Terrain),
    Time(TimeOfDay),
    Weather(Weather),
}

impl Fact {
    pub fn name(self) -> &'static str {
        match self {
            Fact::Entity(e) => e.name(),
            Fact::Block(b) => b.name(),
            Fact::Terrain(t) => t.name(),
            Fact::Time(t) => t.name(),
            Fact::Weather(w) => w.name(),
        }
    }

    /// Every fact the vocabulary can express.
    pub fn vocabulary() -> Vec<Fact> {
        let mut v: Vec<Fact> = Vec::new();
        v.extend(EntityKind::ALL.iter().map(|&e| Fact::Entity(e)));
        v.extend(Block::ALL.iter().map(|&b| Fact::Block(b)));
        v.extend(Terrain::ALL.iter().map(|&t| Fact::Terrain(t)));
        v.extend(TimeOfDay::ALL.iter().map(|&t| Fact::Time(t)));
        v.extend(Weather::ALL.iter().map(|&w| Fact::Weather(w)));
        v
    }

    /// Phrase used in natural-language claims, e.g. `iron ore`.
    pub fn phrase(self) -> String {
        self.name().replace('_', " ")
    }
}

impl fmt::Display for Fact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Fact {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace(' ', "_");
        Fact::vocabulary()
            .into_iter()
            .find(|f| f.name() == norm)
            .ok_or_else(|| format!("unknown fact: {s:?}"))
    }
}

impl Serialize for Fact {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Fact {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fact_names_are_unique() {
        let vocab = Fact::vocabulary();
        let mut names: Vec<_> = vocab.iter().map(|f| f.name()).collect();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), vocab.len());
    }

    #[test]
    fn parses_spaced_names() {
        assert_eq!("iron ingot".parse::<Item>().unwrap(), Item::IronIngot);
        assert_eq!("Diamond_Ore".parse::<Fact>().unwrap(), Fact::Block(Block::DiamondOre));
        assert!("obsidian".parse::<Item>().is_err());
    }
}
