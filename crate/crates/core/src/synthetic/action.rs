use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::scene::{Cell, Contact, Location, Scene, HANG_ZONE, PERSON};
use crate::dataset::TripletLabels;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verb {
    Take,
    Put,
    Open,
    Close,
    Move,
    Wash,
    Hang,
    Remove,
}

impl Verb {
    pub const ALL: [Verb; 8] = [
        Verb::Take,
        Verb::Put,
        Verb::Open,
        Verb::Close,
        Verb::Move,
        Verb::Wash,
        Verb::Hang,
        Verb::Remove,
    ];

    pub fn lemma(self) -> &'static str {
        match self {
            Verb::Take => "take",
            Verb::Put => "put",
            Verb::Open => "open",
            Verb::Close => "close",
            Verb::Move => "move",
            Verb::Wash => "wash",
            Verb::Hang => "hang",
            Verb::Remove => "remove",
        }
    }
}

impl fmt::Display for Verb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.lemma())
    }
}

impl FromStr for Verb {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Verb::ALL
            .into_iter()
            .find(|v| v.lemma() == s)
            .ok_or_else(|| Error::config(format!("unknown verb `{s}`")))
    }
}

/// One operative action on one object.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSpec {
    pub verb: Verb,
    /// Object index in the scene.
    pub target: usize,
    /// Class name of the target.
    pub object: String,
    /// Zone or container the object starts in, when it is not held.
    pub source: Option<String>,
    /// Zone the object ends up in, for placing verbs.
    pub destination: Option<String>,
    pub to_cell: Option<Cell>,
}

fn inapplicable(a: &ActionSpec, why: &str) -> Error {
    Error::Inapplicable(format!("{} {}: {why}", a.verb, a.object))
}

impl ActionSpec {
    /// Checks every precondition of the verb against `scene`.
    pub fn check(&self, scene: &Scene) -> Result<()> {
        let obj = scene
            .objects
            .get(self.target)
            .ok_or_else(|| inapplicable(self, "no such object"))?;
        if obj.name() != self.object {
            return Err(inapplicable(self, "target index names a different object"));
        }
        let cls = obj.class();
        let need = |ok: bool, why: &str| if ok { Ok(()) } else { Err(inapplicable(self, why)) };
        let on_cell = matches!(obj.location, Location::Cell(_));
        let dest_ok = |zone_check: &dyn Fn(usize) -> bool| match self.to_cell {
            Some(c) if c.x < scene.width && c.y < scene.height => {
                need(scene.is_free(c), "destination cell is occupied")?;
                need(zone_check(scene.zone(c)), "destination zone not allowed")
            }
            _ => Err(inapplicable(self, "missing or out-of-grid destination")),
        };
        match self.verb {
            Verb::Take => {
                need(cls.portable, "object is not portable")?;
                need(on_cell, "object is not on a surface")?;
                need(scene.agent.held.is_none(), "hand is not empty")
            }
            Verb::Put => {
                need(obj.location == Location::Held, "object is not held")?;
                dest_ok(&|z| z != HANG_ZONE)
            }
            Verb::Open => {
                need(cls.openable, "object cannot be opened")?;
                need(on_cell, "object is not on a surface")?;
                need(obj.open == Some(false), "object is already open")
            }
            Verb::Close => {
                need(cls.openable, "object cannot be closed")?;
                need(on_cell, "object is not on a surface")?;
                need(obj.open == Some(true), "object is already closed")
            }
            Verb::Move => {
                need(cls.portable, "object is not portable")?;
                let Location::Cell(from) = obj.location else {
                    return Err(inapplicable(self, "object is not on a surface"));
                };
                let from_zone = scene.zone(from);
                dest_ok(&|z| z != from_zone && z != HANG_ZONE)
            }
            Verb::Wash => {
                need(cls.washable, "object cannot be washed")?;
                need(
                    on_cell || obj.location == Location::Held,
                    "object is out of reach",
                )?;
                need(obj.dirty == Some(true), "object is already clean")
            }
            Verb::Hang => {
                need(cls.hangable, "object cannot be hung")?;
                need(obj.location == Location::Held, "object is not held")?;
                dest_ok(&|z| z == HANG_ZONE)
            }
            Verb::Remove => {
                let Location::Inside(ci) = obj.location else {
                    return Err(inapplicable(self, "object is not inside a container"));
                };
                need(
                    scene.objects[ci].open != Some(false),
                    "container is closed",
                )?;
                need(scene.agent.held.is_none(), "hand is not empty")
            }
        }
    }

    /// Triplets the action removes from and adds to the scene graph,
    /// straight from the rule table.
    pub fn effects(&self, scene: &Scene) -> Result<(BTreeSet<TripletLabels>, BTreeSet<TripletLabels>)> {
        self.check(scene)?;
        let obj = &scene.objects[self.target];
        let name = obj.name();
        let mut removed = BTreeSet::new();
        let mut added = BTreeSet::new();
        let t = TripletLabels::new;
        let on = |c: Cell| t(name, "on", scene.zone_name(c));
        match self.verb {
            Verb::Take => {
                if let Location::Cell(c) = obj.location {
                    removed.insert(on(c));
                }
                added.insert(t(PERSON, "holding", name));
            }
            Verb::Put | Verb::Hang => {
                let contact = if self.verb == Verb::Put {
                    Contact::Putting
                } else {
                    Contact::Hanging
                };
                removed.insert(t(PERSON, "holding", name));
                added.insert(t(PERSON, contact.label(), name));
                added.insert(on(self.to_cell.expect("checked")));
            }
            Verb::Open => {
                removed.insert(t(name, "is", "closed"));
                added.insert(t(name, "is", "open"));
            }
            Verb::Close => {
                removed.insert(t(name, "is", "open"));
                added.insert(t(name, "is", "closed"));
            }
            Verb::Move => {
                if let Location::Cell(c) = obj.location {
                    removed.insert(on(c));
                }
                added.insert(on(self.to_cell.expect("checked")));
            }
            Verb::Wash => {
                removed.insert(t(name, "is", "dirty"));
                added.insert(t(name, "is", "clean"));
            }
            Verb::Remove => {
                if let Location::Inside(ci) = obj.location {
                    removed.insert(t(name, "in", scene.objects[ci].name()));
                }
                added.insert(t(PERSON, "holding", name));
            }
        }
        // any earlier transient contact ends with the next action
        if let Some((c, i)) = scene.agent.contact {
            let old = t(PERSON, c.label(), scene.objects[i].name());
            if !added.remove(&old) {
                removed.insert(old);
            }
        }
        Ok((removed, added))
    }

    /// Grid cells whose rendering can change under this action.
    pub fn touched_cells(&self, scene: &Scene) -> BTreeSet<Cell> {
        let mut cells = BTreeSet::new();
        let obj = &scene.objects[self.target];
        match obj.location {
            Location::Cell(c) => {
                cells.insert(c);
            }
            Location::Held => {
                cells.insert(scene.agent.cell);
            }
            Location::Inside(ci) => {
                if let Location::Cell(c) = scene.objects[ci].location {
                    cells.insert(c);
                }
            }
        }
        if let Some(c) = self.to_cell {
            cells.insert(c);
        }
        if matches!(self.verb, Verb::Take | Verb::Remove) {
            cells.insert(scene.agent.cell);
        }
        cells
    }
}

/// Returns the scene after `action`; `scene` itself is left untouched.
pub fn apply_action(scene: &Scene, action: &ActionSpec) -> Result<Scene> {
    action.check(scene)?;
    let mut next = scene.clone();
    next.agent.contact = None;
    let i = action.target;
    match action.verb {
        Verb::Take | Verb::Remove => {
            next.objects[i].location = Location::Held;
            next.agent.held = Some(i);
        }
        Verb::Put | Verb::Hang => {
            next.objects[i].location = Location::Cell(action.to_cell.expect("checked"));
            next.agent.held = None;
            let contact = if action.verb == Verb::Put {
                Contact::Putting
            } else {
                Contact::Hanging
            };
            next.agent.contact = Some((contact, i));
        }
        Verb::Open => next.objects[i].open = Some(true),
        Verb::Close => next.objects[i].open = Some(false),
        Verb::Move => next.objects[i].location = Location::Cell(action.to_cell.expect("checked")),
        Verb::Wash => next.objects[i].dirty = Some(false),
    }
    Ok(next)
}

/// Every applicable action for `verb` in `scene`, in a deterministic order.
pub fn candidate_actions(scene: &Scene, verb: Verb) -> Vec<ActionSpec> {
    let mut out = Vec::new();
    for (i, obj) in scene.objects.iter().enumerate() {
        let source = match obj.location {
            Location::Cell(c) => Some(scene.zone_name(c).to_string()),
            Location::Inside(ci) => Some(scene.objects[ci].name().to_string()),
            Location::Held => None,
        };
        let base = ActionSpec {
            verb,
            target: i,
            object: obj.name().to_string(),
            source,
            destination: None,
            to_cell: None,
        };
        if matches!(verb, Verb::Put | Verb::Move | Verb::Hang) {
            for c in scene.cells().filter(|&c| scene.is_free(c)) {
                let a = ActionSpec {
                    destination: Some(scene.zone_name(c).to_string()),
                    to_cell: Some(c),
                    ..base.clone()
                };
                if a.check(scene).is_ok() {
                    out.push(a);
                }
            }
        } else if base.check(scene).is_ok() {
            out.push(base);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::scene::{Agent, SceneObject};
    use super::super::scene::class_index;
    use super::*;

    fn obj(name: &str, location: Location) -> SceneObject {
        let class = class_index(name).unwrap();
        let c = &super::super::scene::CATALOG[class];
        SceneObject {
            class,
            color: 0,
            location,
            open: c.openable.then_some(false),
            dirty: c.washable.then_some(true),
        }
    }

    fn kitchen() -> Scene {
        Scene {
            width: 8,
            height: 8,
            objects: vec![
                obj("lid", Location::Cell(Cell { x: 1, y: 1 })),
                obj("fork", Location::Held),
                obj("basket", Location::Cell(Cell { x: 6, y: 6 })),
            ],
            agent: Agent {
                cell: Cell { x: 4, y: 4 },
                held: Some(1),
                contact: None,
            },
        }
    }

    fn spec(scene: &Scene, verb: Verb, target: usize, to: Option<Cell>) -> ActionSpec {
        ActionSpec {
            verb,
            target,
            object: scene.objects[target].name().into(),
            source: None,
            destination: to.map(|c| scene.zone_name(c).to_string()),
            to_cell: to,
        }
    }

    #[test]
    fn open_flips_single_flag() {
        let s = kitchen();
        let a = spec(&s, Verb::Open, 0, None);
        let next = apply_action(&s, &a).unwrap();
        assert_eq!(next.objects[0].open, Some(true));
        let mut expect = s.clone();
        expect.objects[0].open = Some(true);
        assert_eq!(next, expect);
        // original untouched
        assert_eq!(s.objects[0].open, Some(false));
        assert!(apply_action(&next, &a).is_err());
    }

    #[test]
    fn put_replaces_holding_with_putting() {
        let s = kitchen();
        let table = Cell { x: 0, y: 0 };
        assert_eq!(s.zone_name(table), "table");
        let a = spec(&s, Verb::Put, 1, Some(table));
        let next = apply_action(&s, &a).unwrap();
        assert_eq!(next.agent.held, None);
        assert_eq!(next.objects[1].location, Location::Cell(table));
        let before = s.scene_graph();
        let after = next.scene_graph();
        let gone: BTreeSet<_> = before.difference(&after).cloned().collect();
        let new: BTreeSet<_> = after.difference(&before).cloned().collect();
        assert_eq!(gone, BTreeSet::from([TripletLabels::new("person", "holding", "fork")]));
        assert_eq!(
            new,
            BTreeSet::from([
                TripletLabels::new("person", "putting", "fork"),
                TripletLabels::new("fork", "on", "table"),
            ])
        );
        assert_eq!(a.effects(&s).unwrap(), (gone, new));
    }

    #[test]
    fn preconditions_are_named() {
        let s = kitchen();
        let err = apply_action(&s, &spec(&s, Verb::Take, 0, None)).unwrap_err();
        assert!(err.to_string().contains("hand is not empty"), "{err}");
        let err = apply_action(&s, &spec(&s, Verb::Hang, 1, Some(Cell { x: 7, y: 7 }))).unwrap_err();
        assert!(err.to_string().contains("cannot be hung"), "{err}");
        let err = apply_action(&s, &spec(&s, Verb::Put, 1, Some(Cell { x: 1, y: 1 }))).unwrap_err();
        assert!(err.to_string().contains("occupied"), "{err}");
    }

    #[test]
    fn candidates_are_all_applicable() {
        let s = kitchen();
        for v in Verb::ALL {
            for a in candidate_actions(&s, v) {
                apply_action(&s, &a).unwrap();
            }
        }
        assert_eq!(candidate_actions(&s, Verb::Open).len(), 1);
        assert!(candidate_actions(&s, Verb::Remove).is_empty());
    }
}
