use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::GeneratorConfig;
use crate::dataset::TripletLabels;
use crate::error::{Error, Result};

pub const PERSON: &str = "person";

/// Static affordances of an object class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ObjectClass {
    pub name: &'static str,
    pub portable: bool,
    pub openable: bool,
    pub washable: bool,
    pub hangable: bool,
    pub container: bool,
    /// Small enough to sit inside a container.
    pub small: bool,
    /// 3x3 glyph code, row-major, bit 8 is the top-left cell.
    pub code: u16,
}

const fn class(
    name: &'static str,
    flags: [bool; 6],
    code: u16,
) -> ObjectClass {
    ObjectClass {
        name,
        portable: flags[0],
        openable: flags[1],
        washable: flags[2],
        hangable: flags[3],
        container: flags[4],
        small: flags[5],
        code,
    }
}

// flags: portable, openable, washable, hangable, container, small
pub const CATALOG: [ObjectClass; 15] = [
    class("cup", [true, false, true, true, false, true], 0b111_101_111),
    class("fork", [true, false, true, false, false, true], 0b010_111_010),
    class("spoon", [true, false, true, false, false, true], 0b110_110_001),
    class("knife", [true, false, true, false, false, true], 0b001_011_110),
    class("plate", [true, false, true, false, false, false], 0b000_111_111),
    class("bowl", [true, false, true, false, false, false], 0b101_101_111),
    class("apple", [true, false, false, false, false, true], 0b010_111_111),
    class("bottle", [true, true, false, false, false, true], 0b010_010_111),
    class("towel", [true, false, true, true, false, false], 0b111_111_000),
    class("lid", [true, true, false, false, false, false], 0b111_010_000),
    class("book", [true, true, false, false, false, false], 0b110_111_110),
    class("bag", [true, false, false, true, false, false], 0b101_111_111),
    class("basket", [false, false, false, false, true, false], 0b101_010_101),
    class("box", [false, true, false, false, true, false], 0b111_000_111),
    class("drawer", [false, true, false, false, true, false], 0b100_111_001),
];

pub fn class_index(name: &str) -> Option<usize> {
    CATALOG.iter().position(|c| c.name == name)
}

pub const ZONES: [&str; 6] = ["table", "counter", "shelf", "sink", "rack", "floor"];
pub const HANG_ZONE: usize = 4;

pub const COLORS: [(&str, [u8; 3]); 6] = [
    ("red", [220, 40, 40]),
    ("green", [40, 170, 60]),
    ("blue", [40, 80, 220]),
    ("yellow", [230, 200, 30]),
    ("magenta", [200, 50, 200]),
    ("cyan", [30, 190, 200]),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub x: usize,
    pub y: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Location {
    Cell(Cell),
    Held,
    /// Inside the container at this object index.
    Inside(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneObject {
    /// Index into [`CATALOG`].
    pub class: usize,
    pub color: usize,
    pub location: Location,
    /// `Some` only for openable classes.
    pub open: Option<bool>,
    /// `Some` only for washable classes.
    pub dirty: Option<bool>,
}

impl SceneObject {
    pub fn class(&self) -> &'static ObjectClass {
        &CATALOG[self.class]
    }

    pub fn name(&self) -> &'static str {
        CATALOG[self.class].name
    }
}

/// Transient person-object relationships left behind by an action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Contact {
    Putting,
    Hanging,
}

impl Contact {
    pub fn label(self) -> &'static str {
        match self {
            Contact::Putting => "putting",
            Contact::Hanging => "hanging",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Agent {
    pub cell: Cell,
    pub held: Option<usize>,
    pub contact: Option<(Contact, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scene {
    pub width: usize,
    pub height: usize,
    pub objects: Vec<SceneObject>,
    pub agent: Agent,
}

impl Scene {
    pub fn zone(&self, c: Cell) -> usize {
        (c.y * 2 / self.height) * 3 + c.x * 3 / self.width
    }

    pub fn zone_name(&self, c: Cell) -> &'static str {
        ZONES[self.zone(c)]
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.height).flat_map(move |y| (0..self.width).map(move |x| Cell { x, y }))
    }

    pub fn object_at(&self, c: Cell) -> Option<usize> {
        self.objects
            .iter()
            .position(|o| o.location == Location::Cell(c))
    }

    pub fn is_free(&self, c: Cell) -> bool {
        c != self.agent.cell && self.object_at(c).is_none()
    }

    pub fn contents(&self, container: usize) -> Option<usize> {
        self.objects
            .iter()
            .position(|o| o.location == Location::Inside(container))
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.objects.iter().position(|o| o.name() == name)
    }

    /// Scene graph implied by the rule table.
    pub fn scene_graph(&self) -> BTreeSet<TripletLabels> {
        let mut g = BTreeSet::new();
        if let Some(h) = self.agent.held {
            g.insert(TripletLabels::new(PERSON, "holding", self.objects[h].name()));
        }
        if let Some((contact, i)) = self.agent.contact {
            g.insert(TripletLabels::new(PERSON, contact.label(), self.objects[i].name()));
        }
        for o in &self.objects {
            match o.location {
                Location::Cell(c) => {
                    g.insert(TripletLabels::new(o.name(), "on", self.zone_name(c)));
                }
                Location::Inside(ci) => {
                    g.insert(TripletLabels::new(o.name(), "in", self.objects[ci].name()));
                }
                Location::Held => {}
            }
            if let Some(open) = o.open {
                g.insert(TripletLabels::new(o.name(), "is", if open { "open" } else { "closed" }));
            }
            if let Some(dirty) = o.dirty {
                g.insert(TripletLabels::new(o.name(), "is", if dirty { "dirty" } else { "clean" }));
            }
        }
        g
    }

    pub fn check_invariants(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for o in &self.objects {
            if let Location::Cell(c) = o.location {
                if c == self.agent.cell || !seen.insert(c) {
                    return Err(Error::Inapplicable(format!("cell {c:?} occupied twice")));
                }
            }
        }
        let held = self.objects.iter().filter(|o| o.location == Location::Held).count();
        if held > 1 || (held == 1) != self.agent.held.is_some() {
            return Err(Error::Inapplicable("agent hand inconsistent".into()));
        }
        Ok(())
    }
}

/// Deterministically builds a random scene from `seed`.
pub fn generate_scene(seed: u64, config: &GeneratorConfig) -> Result<Scene> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(config.min_objects..=config.max_objects);
    let mut classes = config.class_indices()?;
    classes.shuffle(&mut rng);
    classes.truncate(n);
    // containers first so small objects can be put inside them
    classes.sort_by_key(|&c| !CATALOG[c].container);

    let mut free: Vec<Cell> = (0..config.grid_height)
        .flat_map(|y| (0..config.grid_width).map(move |x| Cell { x, y }))
        .collect();
    free.shuffle(&mut rng);
    let agent_cell = free.pop().expect("grid has at least one cell");
    let mut agent = Agent {
        cell: agent_cell,
        held: None,
        contact: None,
    };

    let mut objects: Vec<SceneObject> = Vec::with_capacity(n);
    for class in classes {
        let spec = &CATALOG[class];
        let idx = objects.len();
        let open_container = objects.iter().enumerate().find(|(ci, o)| {
            o.class().container
                && matches!(o.location, Location::Cell(_))
                && !objects.iter().any(|x| x.location == Location::Inside(*ci))
        });
        let location = if spec.small && open_container.is_some() && rng.random_bool(0.35) {
            Location::Inside(open_container.map(|(ci, _)| ci).unwrap())
        } else if spec.portable && agent.held.is_none() && rng.random_bool(0.3) {
            agent.held = Some(idx);
            Location::Held
        } else {
            Location::Cell(free.pop().expect("capacity checked by config"))
        };
        objects.push(SceneObject {
            class,
            color: rng.random_range(0..COLORS.len()),
            location,
            open: spec.openable.then(|| rng.random_bool(0.5)),
            dirty: spec.washable.then(|| rng.random_bool(0.5)),
        });
    }
    let scene = Scene {
        width: config.grid_width,
        height: config.grid_height,
        objects,
        agent,
    };
    debug_assert!(scene.check_invariants().is_ok());
    Ok(scene)
}
