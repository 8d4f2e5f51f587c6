//! A miniature deterministic household: receptacles (some openable),
//! portable objects with cool/heat/clean state, and six goal templates.
//! Success pays reward 1 when the goal predicate holds; episodes otherwise
//! end only by agent exhaustion.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{fresh_run_id, EnvKind, Environment, Snapshot, SnapshotState, StepOutcome};
use crate::error::EnvError;
use crate::seed::{substream, substream_seed};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReceptacleSpec {
    pub name: String,
    pub openable: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub name: String,
    pub location: String,
}

/// The static layout: receptacles plus resident (decoy) objects. Goal
/// targets are placed per episode, seeded by (goal, episode seed).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyHouseWorld {
    pub receptacles: Vec<ReceptacleSpec>,
    pub objects: Vec<ObjectSpec>,
}

impl ToyHouseWorld {
    pub fn load(path: &std::path::Path) -> Result<Self, crate::Error> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), crate::Error> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        crate::memory::persist::write_atomic(path, &bytes)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalTemplate {
    Pick,
    Clean,
    Heat,
    Cool,
    Look,
    Pick2,
}

impl GoalTemplate {
    pub fn name(self) -> &'static str {
        match self {
            GoalTemplate::Pick => "pick",
            GoalTemplate::Clean => "clean",
            GoalTemplate::Heat => "heat",
            GoalTemplate::Cool => "cool",
            GoalTemplate::Look => "look",
            GoalTemplate::Pick2 => "pick2",
        }
    }

    pub const ALL: [GoalTemplate; 6] = [
        GoalTemplate::Pick,
        GoalTemplate::Clean,
        GoalTemplate::Heat,
        GoalTemplate::Cool,
        GoalTemplate::Look,
        GoalTemplate::Pick2,
    ];
}

/// A parsed household goal: what to do with which object class, and where
/// it must end up.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HouseGoal {
    pub template: GoalTemplate,
    pub object_class: String,
    pub destination_class: Option<String>,
}

impl HouseGoal {
    /// Parse a goal text against the six templates.
    pub fn parse(goal: &str) -> Option<HouseGoal> {
        let goal = goal.trim().trim_end_matches('.');
        if let Some(rest) = goal.strip_prefix("put two ") {
            let (object, destination) = rest.split_once(" in ")?;
            return Some(HouseGoal {
                template: GoalTemplate::Pick2,
                object_class: object.trim().to_string(),
                destination_class: Some(destination.trim().to_string()),
            });
        }
        if let Some(rest) = goal.strip_prefix("put a ") {
            let (object, destination) = rest.split_once(" in ")?;
            return Some(HouseGoal {
                template: GoalTemplate::Pick,
                object_class: object.trim().to_string(),
                destination_class: Some(destination.trim().to_string()),
            });
        }
        for (prefix, template) in [
            ("clean some ", GoalTemplate::Clean),
            ("heat some ", GoalTemplate::Heat),
            ("cool some ", GoalTemplate::Cool),
        ] {
            if let Some(rest) = goal.strip_prefix(prefix) {
                let (object, destination) = rest.split_once(" and put it in ")?;
                return Some(HouseGoal {
                    template,
                    object_class: object.trim().to_string(),
                    destination_class: Some(destination.trim().to_string()),
                });
            }
        }
        if let Some(rest) = goal.strip_prefix("examine the ") {
            let object = rest.strip_suffix(" with the desklamp")?;
            return Some(HouseGoal {
                template: GoalTemplate::Look,
                object_class: object.trim().to_string(),
                destination_class: None,
            });
        }
        None
    }

    pub fn render(&self) -> String {
        match self.template {
            GoalTemplate::Pick => format!(
                "put a {} in {}.",
                self.object_class,
                self.destination_class.as_deref().unwrap_or("somewhere")
            ),
            GoalTemplate::Pick2 => format!(
                "put two {} in {}.",
                self.object_class,
                self.destination_class.as_deref().unwrap_or("somewhere")
            ),
            GoalTemplate::Clean => format!(
                "clean some {} and put it in {}.",
                self.object_class,
                self.destination_class.as_deref().unwrap_or("somewhere")
            ),
            GoalTemplate::Heat => format!(
                "heat some {} and put it in {}.",
                self.object_class,
                self.destination_class.as_deref().unwrap_or("somewhere")
            ),
            GoalTemplate::Cool => format!(
                "cool some {} and put it in {}.",
                self.object_class,
                self.destination_class.as_deref().unwrap_or("somewhere")
            ),
            GoalTemplate::Look => format!("examine the {} with the desklamp.", self.object_class),
        }
    }

    pub fn template_name(&self) -> &'static str {
        self.template.name()
    }

    /// The checkable subgoals of this goal, used by history evaluation.
    pub fn subgoals(&self) -> Vec<String> {
        let object = &self.object_class;
        match self.template {
            GoalTemplate::Pick => vec![
                format!("take {object} from somewhere"),
                format!("put {object} in {}", self.destination_class.as_deref().unwrap_or("")),
            ],
            GoalTemplate::Pick2 => vec![
                format!("put {object} one in {}", self.destination_class.as_deref().unwrap_or("")),
                format!("put {object} two in {}", self.destination_class.as_deref().unwrap_or("")),
            ],
            GoalTemplate::Clean => vec![
                format!("take {object} from somewhere"),
                format!("clean {object}"),
                format!("put {object} in {}", self.destination_class.as_deref().unwrap_or("")),
            ],
            GoalTemplate::Heat => vec![
                format!("take {object} from somewhere"),
                format!("heat {object}"),
                format!("put {object} in {}", self.destination_class.as_deref().unwrap_or("")),
            ],
            GoalTemplate::Cool => vec![
                format!("take {object} from somewhere"),
                format!("cool {object}"),
                format!("put {object} in {}", self.destination_class.as_deref().unwrap_or("")),
            ],
            GoalTemplate::Look => vec![
                format!("take {object} from somewhere"),
                format!("examine {object} with the desklamp"),
            ],
        }
    }

    /// The appliance class this goal manipulates with, if any.
    pub fn appliance_class(&self) -> Option<&'static str> {
        match self.template {
            GoalTemplate::Cool => Some("fridge"),
            GoalTemplate::Heat => Some("microwave"),
            GoalTemplate::Clean => Some("sinkbasin"),
            GoalTemplate::Look => Some("desklamp"),
            GoalTemplate::Pick | GoalTemplate::Pick2 => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct ObjectState {
    name: String,
    class: String,
    /// Receptacle index, or `None` while carried.
    at: Option<usize>,
    cooled: bool,
    heated: bool,
    cleaned: bool,
    examined: bool,
}

#[derive(Debug, Clone)]
pub(crate) struct HouseState {
    goal_text: String,
    goal: HouseGoal,
    objects: Vec<ObjectState>,
    open: Vec<bool>,
    agent_at: Option<usize>,
    steps: usize,
    done: bool,
    reward: Option<f64>,
    observation: String,
}

pub struct ToyHouse {
    world: ToyHouseWorld,
    run_id: u64,
    state: Option<HouseState>,
}

/// Where each object class tends to live, most likely first. Experts and
/// world generation draw from this; the acting policy never sees it.
const CLASS_HOMES: &[(&str, &[&str])] = &[
    ("mug", &["countertop", "cabinet", "sinkbasin", "shelf"]),
    ("apple", &["diningtable", "countertop", "garbagecan", "fridge"]),
    ("potato", &["sinkbasin", "countertop", "fridge", "cabinet"]),
    ("egg", &["fridge", "countertop", "diningtable", "sinkbasin"]),
    ("bread", &["countertop", "diningtable", "cabinet", "shelf"]),
    ("soapbar", &["sinkbasin", "drawer", "garbagecan", "cabinet"]),
    ("cloth", &["drawer", "shelf", "cabinet", "sinkbasin"]),
    ("book", &["desk", "shelf", "drawer", "diningtable"]),
    ("pen", &["desk", "drawer", "shelf", "countertop"]),
    ("plate", &["cabinet", "countertop", "diningtable", "sinkbasin"]),
    ("cup", &["cabinet", "countertop", "shelf", "diningtable"]),
    ("tomato", &["countertop", "fridge", "garbagecan", "diningtable"]),
];

pub(crate) fn class_of(name: &str) -> String {
    name.split_whitespace().next().unwrap_or(name).to_string()
}

impl ToyHouse {
    pub fn from_world(world: ToyHouseWorld) -> Self {
        ToyHouse { world, run_id: 0, state: None }
    }

    /// Deterministic receptacle layout and resident decoys for `seed`.
    pub fn generate(seed: u64) -> Self {
        let mut rng = substream(seed, "house-world");
        let mut receptacles = Vec::new();
        let push = |name: String, openable: bool, receptacles: &mut Vec<ReceptacleSpec>| {
            receptacles.push(ReceptacleSpec { name, openable });
        };
        for i in 1..=rng.random_range(3..=5) {
            push(format!("cabinet {i}"), true, &mut receptacles);
        }
        for i in 1..=rng.random_range(1..=2) {
            push(format!("countertop {i}"), false, &mut receptacles);
        }
        for i in 1..=rng.random_range(1..=2) {
            push(format!("drawer {i}"), true, &mut receptacles);
        }
        push("shelf 1".into(), false, &mut receptacles);
        push("diningtable 1".into(), false, &mut receptacles);
        push("sinkbasin 1".into(), false, &mut receptacles);
        push("garbagecan 1".into(), false, &mut receptacles);
        push("fridge 1".into(), true, &mut receptacles);
        push("microwave 1".into(), true, &mut receptacles);
        push("desk 1".into(), false, &mut receptacles);

        // resident decoys; the desklamp always sits on the desk
        let mut objects = vec![ObjectSpec { name: "desklamp 1".into(), location: "desk 1".into() }];
        let decoy_classes = ["plate", "cup", "pen", "bread", "cloth"];
        for (i, class) in decoy_classes.iter().enumerate() {
            let location = home_for(class, &receptacles, &mut rng)
                .unwrap_or_else(|| receptacles[0].name.clone());
            objects.push(ObjectSpec { name: format!("{class} {}", i % 2 + 1), location });
        }
        ToyHouse::from_world(ToyHouseWorld { receptacles, objects })
    }

    pub fn world(&self) -> &ToyHouseWorld {
        &self.world
    }

    fn state(&self) -> &HouseState {
        self.state.as_ref().expect("environment not reset")
    }

    fn recep_index(&self, name: &str) -> Option<usize> {
        self.world.receptacles.iter().position(|r| r.name == name)
    }

    fn room_overview(&self) -> String {
        let names: Vec<String> =
            self.world.receptacles.iter().map(|r| format!("a {}", r.name)).collect();
        let list = match names.len() {
            0 => "nothing".to_string(),
            1 => names[0].clone(),
            _ => format!(
                "{}, and {}",
                names[..names.len() - 1].join(", "),
                names[names.len() - 1]
            ),
        };
        format!(
            "You are in the middle of a room. Looking quickly around you, you see {list}."
        )
    }

    fn contents_phrase(&self, recep: usize) -> String {
        let state = self.state();
        let here: Vec<String> = state
            .objects
            .iter()
            .filter(|o| o.at == Some(recep))
            .map(|o| format!("a {}", o.name))
            .collect();
        if here.is_empty() {
            "you see nothing".to_string()
        } else if here.len() == 1 {
            format!("you see {}", here[0])
        } else {
            format!(
                "you see {}, and {}",
                here[..here.len() - 1].join(", "),
                here[here.len() - 1]
            )
        }
    }

    fn arrival_observation(&self, recep: usize) -> String {
        let spec = &self.world.receptacles[recep];
        let state = self.state();
        if spec.openable && !state.open[recep] {
            format!("You arrive at the {}. The {} is closed.", spec.name, spec.name)
        } else {
            let preposition = if spec.openable { "In" } else { "On" };
            format!(
                "You arrive at the {}. {} the {}, {}.",
                spec.name,
                preposition,
                spec.name,
                self.contents_phrase(recep)
            )
        }
    }

    fn goal_satisfied(&self) -> bool {
        let state = self.state();
        let goal = &state.goal;
        let at_destination = |o: &ObjectState| -> bool {
            let Some(dest) = &goal.destination_class else {
                return true;
            };
            o.at.is_some_and(|r| class_of(&self.world.receptacles[r].name) == *dest)
        };
        let targets =
            state.objects.iter().filter(|o| o.class == goal.object_class);
        match goal.template {
            GoalTemplate::Pick => targets.into_iter().any(|o| at_destination(o)),
            GoalTemplate::Pick2 => {
                targets.into_iter().filter(|o| at_destination(o)).count() >= 2
            }
            GoalTemplate::Clean => targets.into_iter().any(|o| o.cleaned && at_destination(o)),
            GoalTemplate::Heat => targets.into_iter().any(|o| o.heated && at_destination(o)),
            GoalTemplate::Cool => targets.into_iter().any(|o| o.cooled && at_destination(o)),
            GoalTemplate::Look => targets.into_iter().any(|o| o.examined),
        }
    }

    /// Target object placements for the current episode (expert knowledge).
    pub(crate) fn target_placements(&self) -> Vec<(String, String)> {
        let state = self.state();
        state
            .objects
            .iter()
            .filter(|o| o.class == state.goal.object_class)
            .filter_map(|o| {
                o.at.map(|r| (o.name.clone(), self.world.receptacles[r].name.clone()))
            })
            .collect()
    }

    fn apply(&mut self, action: &str) -> Result<String, EnvError> {
        let action = action.trim();
        if action == "look" {
            return Ok(self.room_overview());
        }
        if let Some(target) = action.strip_prefix("go to ") {
            let recep = self
                .recep_index(target.trim())
                .ok_or_else(|| EnvError::InvalidAction(format!("there is no {}", target.trim())))?;
            self.state.as_mut().unwrap().agent_at = Some(recep);
            return Ok(self.arrival_observation(recep));
        }
        if let Some(target) = action.strip_prefix("open ") {
            let target = target.trim();
            let recep = self
                .recep_index(target)
                .ok_or_else(|| EnvError::InvalidAction(format!("there is no {target}")))?;
            let state = self.state.as_mut().unwrap();
            if state.agent_at != Some(recep) {
                return Err(EnvError::InvalidAction(format!("you need to go to the {target} first")));
            }
            if !self.world.receptacles[recep].openable {
                return Err(EnvError::InvalidAction(format!("the {target} cannot be opened")));
            }
            if state.open[recep] {
                return Err(EnvError::InvalidAction(format!("the {target} is already open")));
            }
            state.open[recep] = true;
            return Ok(format!(
                "You open the {target}. The {target} is open. In the {target}, {}.",
                self.contents_phrase(recep)
            ));
        }
        if let Some(target) = action.strip_prefix("close ") {
            let target = target.trim();
            let recep = self
                .recep_index(target)
                .ok_or_else(|| EnvError::InvalidAction(format!("there is no {target}")))?;
            let state = self.state.as_mut().unwrap();
            if state.agent_at != Some(recep) {
                return Err(EnvError::InvalidAction(format!("you need to go to the {target} first")));
            }
            if !self.world.receptacles[recep].openable || !state.open[recep] {
                return Err(EnvError::InvalidAction(format!("the {target} is not open")));
            }
            state.open[recep] = false;
            return Ok(format!("You close the {target}."));
        }
        if let Some(rest) = action.strip_prefix("take ") {
            let (object, recep_name) = rest
                .split_once(" from ")
                .ok_or_else(|| EnvError::InvalidAction(format!("unknown action {action}")))?;
            let (object, recep_name) = (object.trim(), recep_name.trim());
            let recep = self
                .recep_index(recep_name)
                .ok_or_else(|| EnvError::InvalidAction(format!("there is no {recep_name}")))?;
            let state = self.state.as_mut().unwrap();
            if state.agent_at != Some(recep) {
                return Err(EnvError::InvalidAction(format!(
                    "you need to go to the {recep_name} first"
                )));
            }
            if self.world.receptacles[recep].openable && !state.open[recep] {
                return Err(EnvError::InvalidAction(format!("{recep_name} is closed")));
            }
            if state.objects.iter().any(|o| o.at.is_none()) {
                return Err(EnvError::InvalidAction("your hands are full".into()));
            }
            let slot = state
                .objects
                .iter()
                .position(|o| o.name == object && o.at == Some(recep))
                .ok_or_else(|| {
                    EnvError::InvalidAction(format!("there is no {object} in the {recep_name}"))
                })?;
            state.objects[slot].at = None;
            return Ok(format!("You pick up the {object} from the {recep_name}."));
        }
        if let Some(rest) = action.strip_prefix("put ") {
            let (object, recep_name) = rest
                .split_once(" in/on ")
                .ok_or_else(|| EnvError::InvalidAction(format!("unknown action {action}")))?;
            let (object, recep_name) = (object.trim(), recep_name.trim());
            let recep = self
                .recep_index(recep_name)
                .ok_or_else(|| EnvError::InvalidAction(format!("there is no {recep_name}")))?;
            let state = self.state.as_mut().unwrap();
            if state.agent_at != Some(recep) {
                return Err(EnvError::InvalidAction(format!(
                    "you need to go to the {recep_name} first"
                )));
            }
            if self.world.receptacles[recep].openable && !state.open[recep] {
                return Err(EnvError::InvalidAction(format!("{recep_name} is closed")));
            }
            let slot = state
                .objects
                .iter()
                .position(|o| o.name == object && o.at.is_none())
                .ok_or_else(|| EnvError::InvalidAction(format!("you are not carrying {object}")))?;
            state.objects[slot].at = Some(recep);
            return Ok(format!("You put the {object} in/on the {recep_name}."));
        }
        for (verb, class, flag) in [
            ("cool ", "fridge", 0usize),
            ("heat ", "microwave", 1),
            ("clean ", "sinkbasin", 2),
        ] {
            if let Some(rest) = action.strip_prefix(verb) {
                let (object, appliance) = rest
                    .split_once(" with ")
                    .ok_or_else(|| EnvError::InvalidAction(format!("unknown action {action}")))?;
                let (object, appliance) = (object.trim(), appliance.trim());
                if class_of(appliance) != class {
                    return Err(EnvError::InvalidAction(format!(
                        "the {appliance} cannot {} anything",
                        verb.trim()
                    )));
                }
                let recep = self
                    .recep_index(appliance)
                    .ok_or_else(|| EnvError::InvalidAction(format!("there is no {appliance}")))?;
                let state = self.state.as_mut().unwrap();
                if state.agent_at != Some(recep) {
                    return Err(EnvError::InvalidAction(format!(
                        "you need to go to the {appliance} first"
                    )));
                }
                let slot = state
                    .objects
                    .iter()
                    .position(|o| o.name == object && o.at.is_none())
                    .ok_or_else(|| {
                        EnvError::InvalidAction(format!("you are not carrying {object}"))
                    })?;
                match flag {
                    0 => state.objects[slot].cooled = true,
                    1 => state.objects[slot].heated = true,
                    _ => state.objects[slot].cleaned = true,
                }
                let verb_past = match flag {
                    0 => "cool",
                    1 => "heat",
                    _ => "clean",
                };
                return Ok(format!("You {verb_past} the {object} using the {appliance}."));
            }
        }
        if let Some(rest) = action.strip_prefix("examine ") {
            let (object, lamp) = rest
                .split_once(" with ")
                .ok_or_else(|| EnvError::InvalidAction(format!("unknown action {action}")))?;
            let (object, lamp) = (object.trim(), lamp.trim());
            if class_of(lamp) != "desklamp" {
                return Err(EnvError::InvalidAction(format!("you cannot examine with {lamp}")));
            }
            let state = self.state.as_mut().unwrap();
            let lamp_at = state
                .objects
                .iter()
                .find(|o| o.name == lamp)
                .and_then(|o| o.at)
                .ok_or_else(|| EnvError::InvalidAction(format!("there is no {lamp}")))?;
            if state.agent_at != Some(lamp_at) {
                return Err(EnvError::InvalidAction("there is no desklamp here".into()));
            }
            let slot = state
                .objects
                .iter()
                .position(|o| o.name == object && o.at.is_none())
                .ok_or_else(|| EnvError::InvalidAction(format!("you are not carrying {object}")))?;
            state.objects[slot].examined = true;
            return Ok(format!("You examine the {object} under the {lamp}."));
        }
        Err(EnvError::InvalidAction(format!("unknown action {action}")))
    }
}

fn home_for(class: &str, receptacles: &[ReceptacleSpec], rng: &mut ChaCha8Rng) -> Option<String> {
    let homes = CLASS_HOMES.iter().find(|(c, _)| *c == class).map(|(_, h)| *h)?;
    // weight 4,3,2,1 over the class's home list, restricted to what exists
    let mut candidates = Vec::new();
    for (i, home_class) in homes.iter().enumerate() {
        let instances: Vec<&ReceptacleSpec> = receptacles
            .iter()
            .filter(|r| class_of(&r.name) == *home_class)
            .collect();
        for instance in instances {
            for _ in 0..(homes.len() - i) {
                candidates.push(instance.name.clone());
            }
        }
    }
    if candidates.is_empty() {
        return None;
    }
    Some(candidates[rng.random_range(0..candidates.len())].clone())
}

impl Environment for ToyHouse {
    fn kind(&self) -> EnvKind {
        EnvKind::Toyhouse
    }

    fn reset(&mut self, goal: &str, seed: u64) -> Result<String, EnvError> {
        let parsed =
            HouseGoal::parse(goal).ok_or_else(|| EnvError::UnparseableGoal(goal.to_string()))?;
        if let Some(dest) = &parsed.destination_class {
            if !self.world.receptacles.iter().any(|r| class_of(&r.name) == *dest) {
                return Err(EnvError::UnparseableGoal(format!(
                    "no {dest} in this world for goal {goal}"
                )));
            }
        }
        self.run_id = fresh_run_id();

        let mut rng =
            ChaCha8Rng::seed_from_u64(substream_seed(seed, &format!("house-episode:{goal}")));

        // resident decoys, minus any accidental goal targets
        let mut objects: Vec<ObjectState> = self
            .world
            .objects
            .iter()
            .filter(|o| class_of(&o.name) != parsed.object_class)
            .filter_map(|o| {
                self.recep_index(&o.location).map(|at| ObjectState {
                    name: o.name.clone(),
                    class: class_of(&o.name),
                    at: Some(at),
                    cooled: false,
                    heated: false,
                    cleaned: false,
                    examined: false,
                })
            })
            .collect();

        // place goal targets away from the destination class
        let target_count = if parsed.template == GoalTemplate::Pick2 { 2 } else { 1 };
        let mut placed = 0;
        let mut attempt = 0;
        while placed < target_count {
            attempt += 1;
            if attempt > 64 {
                return Err(EnvError::UnparseableGoal(format!(
                    "could not place {} for goal {goal}",
                    parsed.object_class
                )));
            }
            let location = home_for(&parsed.object_class, &self.world.receptacles, &mut rng)
                .unwrap_or_else(|| {
                    let surfaces: Vec<&ReceptacleSpec> =
                        self.world.receptacles.iter().filter(|r| !r.openable).collect();
                    surfaces[rng.random_range(0..surfaces.len())].name.clone()
                });
            if let Some(dest) = &parsed.destination_class {
                if class_of(&location) == *dest {
                    continue;
                }
            }
            placed += 1;
            objects.push(ObjectState {
                name: format!("{} {placed}", parsed.object_class),
                class: parsed.object_class.clone(),
                at: self.recep_index(&location),
                cooled: false,
                heated: false,
                cleaned: false,
                examined: false,
            });
        }

        self.state = Some(HouseState {
            goal_text: goal.to_string(),
            goal: parsed,
            objects,
            open: vec![false; self.world.receptacles.len()],
            agent_at: None,
            steps: 0,
            done: false,
            reward: None,
            observation: String::new(),
        });
        let overview = self.room_overview();
        self.state.as_mut().unwrap().observation = overview.clone();
        Ok(overview)
    }

    fn goal(&self) -> &str {
        &self.state().goal_text
    }

    fn observation(&self) -> &str {
        &self.state().observation
    }

    fn done(&self) -> bool {
        self.state().done
    }

    fn reward(&self) -> Option<f64> {
        self.state().reward
    }

    fn step_count(&self) -> usize {
        self.state().steps
    }

    fn step(&mut self, action: &str) -> Result<StepOutcome, EnvError> {
        if self.state().done {
            return Err(EnvError::EpisodeOver);
        }
        let observation = self.apply(action)?;
        {
            let state = self.state.as_mut().unwrap();
            state.steps += 1;
            state.observation = observation.clone();
        }
        if self.goal_satisfied() {
            let state = self.state.as_mut().unwrap();
            state.done = true;
            state.reward = Some(1.0);
        }
        let state = self.state();
        Ok(StepOutcome { observation, done: state.done, reward: state.reward })
    }

    fn admissible_actions(&self) -> Vec<String> {
        let state = self.state();
        if state.done {
            return Vec::new();
        }
        let mut out = vec!["look".to_string()];
        for recep in &self.world.receptacles {
            if state.agent_at != self.recep_index(&recep.name) {
                out.push(format!("go to {}", recep.name));
            }
        }
        let Some(here) = state.agent_at else {
            return out;
        };
        let here_spec = &self.world.receptacles[here];
        if here_spec.openable {
            if state.open[here] {
                out.push(format!("close {}", here_spec.name));
            } else {
                out.push(format!("open {}", here_spec.name));
            }
        }
        let carrying = state.objects.iter().find(|o| o.at.is_none());
        let here_visible = !here_spec.openable || state.open[here];
        if here_visible {
            if carrying.is_none() {
                for object in state.objects.iter().filter(|o| o.at == Some(here)) {
                    out.push(format!("take {} from {}", object.name, here_spec.name));
                }
            } else if let Some(carried) = carrying {
                out.push(format!("put {} in/on {}", carried.name, here_spec.name));
            }
        }
        if let Some(carried) = carrying {
            match class_of(&here_spec.name).as_str() {
                "fridge" => out.push(format!("cool {} with {}", carried.name, here_spec.name)),
                "microwave" => out.push(format!("heat {} with {}", carried.name, here_spec.name)),
                "sinkbasin" => out.push(format!("clean {} with {}", carried.name, here_spec.name)),
                _ => {}
            }
            let lamp_here = state
                .objects
                .iter()
                .any(|o| o.class == "desklamp" && o.at == Some(here));
            if lamp_here {
                out.push(format!("examine {} with desklamp 1", carried.name));
            }
        }
        out
    }

    fn snapshot(&self) -> Snapshot {
        Snapshot {
            run_id: self.run_id,
            state: SnapshotState::House(self.state().clone()),
        }
    }

    fn restore(&mut self, snapshot: &Snapshot) -> Result<(), EnvError> {
        if snapshot.run_id != self.run_id {
            return Err(EnvError::StaleHandle);
        }
        let SnapshotState::House(state) = &snapshot.state else {
            return Err(EnvError::StaleHandle);
        };
        self.state = Some(state.clone());
        Ok(())
    }
}
