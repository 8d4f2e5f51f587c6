//! Scripted expert policies that solve sampled goals optimally, standing in
//! for human demonstration data. Every expert trajectory ends in reward 1;
//! a noise probability inserts one recoverable detour per trajectory to
//! mimic the imperfection of real demonstrations.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::toyhouse::{class_of, GoalTemplate, HouseGoal, ToyHouse};
use super::toyshop::{search_query_for_goal, ToyShop};
use super::{EnvKind, Environment};
use crate::memory::{Trajectory, TrajectoryStep};
use crate::seed::{substream, substream_indexed};

/// Slice of the environment family's deterministic goal pool. Named
/// offsets keep training, refinement, and evaluation goals disjoint.
pub fn goal_pool(kind: EnvKind, env_seed: u64, offset: usize, count: usize) -> Vec<String> {
    match kind {
        EnvKind::Toyshop => {
            let shop = ToyShop::generate(env_seed);
            shop.goal_pool().iter().skip(offset).take(count).cloned().collect()
        }
        EnvKind::Toyhouse => {
            let house = ToyHouse::generate(env_seed);
            sample_house_goals(&house, env_seed, offset, count)
        }
    }
}

/// First `count` goals of the pool — the demonstration slice.
pub fn sample_goals(kind: EnvKind, env_seed: u64, count: usize) -> Vec<String> {
    goal_pool(kind, env_seed, 0, count)
}

fn sample_house_goals(house: &ToyHouse, env_seed: u64, offset: usize, count: usize) -> Vec<String> {
    const TARGET_CLASSES: &[&str] =
        &["mug", "apple", "potato", "egg", "bread", "soapbar", "cloth", "book", "tomato"];
    const DESTINATIONS: &[&str] =
        &["cabinet", "countertop", "shelf", "diningtable", "drawer", "garbagecan"];
    let mut rng = substream(env_seed, "house-goals");
    let mut out = Vec::with_capacity(count);
    let exists = |class: &str| house.world().receptacles.iter().any(|r| class_of(&r.name) == class);
    let mut produced = 0;
    while out.len() < count {
        let template = GoalTemplate::ALL[rng.random_range(0..GoalTemplate::ALL.len())];
        let object_class = TARGET_CLASSES[rng.random_range(0..TARGET_CLASSES.len())].to_string();
        let destination = loop {
            let d = DESTINATIONS[rng.random_range(0..DESTINATIONS.len())];
            if exists(d) {
                break d.to_string();
            }
        };
        let goal = HouseGoal {
            template,
            object_class,
            destination_class: if template == GoalTemplate::Look {
                None
            } else {
                Some(destination)
            },
        };
        produced += 1;
        if produced > offset {
            out.push(goal.render());
        }
    }
    out
}

/// Generate expert trajectories for the family seeded by `seed`.
/// Deterministic in (kind, count, seed, noise).
pub fn generate_expert_trajectories(
    kind: EnvKind,
    count: usize,
    seed: u64,
    noise: f64,
) -> Vec<Trajectory> {
    assert!(count >= 1, "trajectory count must be at least 1");
    let goals = sample_goals(kind, seed, count);
    let mut out = Vec::with_capacity(count);
    match kind {
        EnvKind::Toyshop => {
            let mut env = ToyShop::generate(seed);
            for (i, goal) in goals.iter().enumerate() {
                let mut rng = substream_indexed(seed, "expert-episode", i as u64);
                let episode_seed = rng.random();
                let detour = rng.random_range(0.0..1.0) < noise;
                env.reset(goal, episode_seed).expect("expert goal must parse");
                let steps = solve_shop(&mut env, goal, detour);
                assert_eq!(env.reward(), Some(1.0), "shop expert failed goal {goal:?}");
                out.push(Trajectory { id: format!("demo-{}", i + 1), goal: goal.clone(), steps });
            }
        }
        EnvKind::Toyhouse => {
            let mut env = ToyHouse::generate(seed);
            for (i, goal) in goals.iter().enumerate() {
                let mut rng = substream_indexed(seed, "expert-episode", i as u64);
                let episode_seed = rng.random();
                let detour = rng.random_range(0.0..1.0) < noise;
                env.reset(goal, episode_seed).expect("expert goal must parse");
                let steps = solve_house(&mut env, detour, &mut rng);
                assert_eq!(env.reward(), Some(1.0), "house expert failed goal {goal:?}");
                out.push(Trajectory { id: format!("demo-{}", i + 1), goal: goal.clone(), steps });
            }
        }
    }
    out
}

fn record(env: &mut dyn Environment, steps: &mut Vec<TrajectoryStep>, action: &str) {
    let observation = env.observation().to_string();
    env.step(action)
        .unwrap_or_else(|e| panic!("expert action {action:?} rejected: {e}"));
    steps.push(TrajectoryStep { observation, action: action.to_string() });
}

fn solve_shop(env: &mut ToyShop, goal: &str, detour: bool) -> Vec<TrajectoryStep> {
    let mut steps = Vec::new();
    record(env, &mut steps, &format!("search[{}]", search_query_for_goal(goal)));

    // the goal was derived from a product, so a full-reward purchase exists
    let (code, option_values, pages_in) = find_full_reward_product(env);
    for _ in 0..pages_in {
        record(env, &mut steps, "click[Next >]");
    }
    if detour {
        let other = env.admissible_actions().into_iter().find(|a| {
            a.starts_with("click[B0") && !a.eq_ignore_ascii_case(&format!("click[{code}]"))
        });
        if let Some(other) = other {
            record(env, &mut steps, &other);
            record(env, &mut steps, "click[< Prev]");
        }
    }
    record(env, &mut steps, &format!("click[{code}]"));
    for value in option_values {
        record(env, &mut steps, &format!("click[{value}]"));
    }
    record(env, &mut steps, "click[Buy Now]");
    steps
}

/// Probe the result pages via snapshots for the product that yields the
/// full reward, returning (code, required option values, page index). The
/// environment is left on results page 0.
fn find_full_reward_product(env: &mut ToyShop) -> (String, Vec<String>, usize) {
    let results = env.snapshot();
    let mut page = 0;
    loop {
        let actions = env.admissible_actions();
        let codes: Vec<String> = actions
            .iter()
            .filter_map(|a| a.strip_prefix("click["))
            .filter_map(|a| a.strip_suffix(']'))
            .filter(|a| *a != "Next >" && *a != "< Prev")
            .map(str::to_string)
            .collect();
        for code in &codes {
            let before_click = env.snapshot();
            env.step(&format!("click[{code}]")).expect("expert click");
            let values = required_option_values(env);
            for value in &values {
                env.step(&format!("click[{value}]")).expect("expert option");
            }
            let outcome = env.step("click[Buy Now]").expect("expert buy");
            if outcome.reward == Some(1.0) {
                env.restore(&results).expect("snapshot valid");
                return (code.clone(), values, page);
            }
            env.restore(&before_click).expect("snapshot valid");
        }
        if actions.iter().any(|a| a == "click[Next >]") {
            env.step("click[Next >]").expect("expert page");
            page += 1;
        } else {
            panic!("no full-reward product for goal {:?}", env.goal());
        }
    }
}

/// Option values the instruction requires, read from the goal text's
/// `with ...` clause matched against the visible options.
fn required_option_values(env: &ToyShop) -> Vec<String> {
    let mut values = Vec::new();
    for segment in env.goal().to_string().split(", ") {
        if let Some(value) = segment.strip_prefix("with ") {
            let value = value.trim_end_matches('.').trim();
            if env.observation().contains(&format!("[{value}]")) {
                values.push(value.to_string());
            }
        }
    }
    values
}

fn solve_house(env: &mut ToyHouse, detour: bool, rng: &mut ChaCha8Rng) -> Vec<TrajectoryStep> {
    let mut steps = Vec::new();
    let goal = HouseGoal::parse(env.goal()).expect("expert goal parses");
    let mut placements = env.target_placements();
    placements.sort();
    let receptacles: Vec<String> =
        env.world().receptacles.iter().map(|r| r.name.clone()).collect();
    let openable: Vec<String> = env
        .world()
        .receptacles
        .iter()
        .filter(|r| r.openable)
        .map(|r| r.name.clone())
        .collect();
    let lamp_location = env
        .world()
        .objects
        .iter()
        .find(|o| o.name == "desklamp 1")
        .map(|o| o.location.clone())
        .unwrap_or_else(|| "desk 1".to_string());

    let mut opened: Vec<String> = Vec::new();
    let mut open_if_needed = |env: &mut ToyHouse, steps: &mut Vec<TrajectoryStep>, recep: &str| {
        if openable.iter().any(|r| r == recep) && !opened.iter().any(|r| r == recep) {
            record(env, steps, &format!("open {recep}"));
            opened.push(recep.to_string());
        }
    };

    if detour && !receptacles.is_empty() {
        let victim = &receptacles[rng.random_range(0..receptacles.len())];
        record(env, &mut steps, &format!("go to {victim}"));
    }

    let instances = if goal.template == GoalTemplate::Pick2 { 2 } else { 1 };
    for round in 0..instances {
        let (object, location) = placements
            .get(round)
            .cloned()
            .unwrap_or_else(|| panic!("missing target {round} for {:?}", env.goal()));
        record(env, &mut steps, &format!("go to {location}"));
        open_if_needed(env, &mut steps, &location);
        record(env, &mut steps, &format!("take {object} from {location}"));
        match goal.template {
            GoalTemplate::Cool => {
                record(env, &mut steps, "go to fridge 1");
                record(env, &mut steps, &format!("cool {object} with fridge 1"));
            }
            GoalTemplate::Heat => {
                record(env, &mut steps, "go to microwave 1");
                record(env, &mut steps, &format!("heat {object} with microwave 1"));
            }
            GoalTemplate::Clean => {
                record(env, &mut steps, "go to sinkbasin 1");
                record(env, &mut steps, &format!("clean {object} with sinkbasin 1"));
            }
            GoalTemplate::Look => {
                record(env, &mut steps, &format!("go to {lamp_location}"));
                record(env, &mut steps, &format!("examine {object} with desklamp 1"));
                return steps;
            }
            GoalTemplate::Pick | GoalTemplate::Pick2 => {}
        }
        let destination = goal.destination_class.as_deref().expect("non-look goals have one");
        let dest_instance = receptacles
            .iter()
            .find(|r| class_of(r) == destination)
            .cloned()
            .unwrap_or_else(|| format!("{destination} 1"));
        record(env, &mut steps, &format!("go to {dest_instance}"));
        open_if_needed(env, &mut steps, &dest_instance);
        record(env, &mut steps, &format!("put {object} in/on {dest_instance}"));
    }
    steps
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn house_experts_always_succeed() {
        let trajectories = generate_expert_trajectories(EnvKind::Toyhouse, 12, 7, 0.0);
        assert_eq!(trajectories.len(), 12);
        for t in &trajectories {
            assert!(!t.steps.is_empty());
        }
    }

    #[test]
    fn shop_experts_always_succeed() {
        let trajectories = generate_expert_trajectories(EnvKind::Toyshop, 8, 7, 0.0);
        assert_eq!(trajectories.len(), 8);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_expert_trajectories(EnvKind::Toyhouse, 6, 11, 0.5);
        let b = generate_expert_trajectories(EnvKind::Toyhouse, 6, 11, 0.5);
        assert_eq!(a, b);
    }

    #[test]
    fn full_noise_inserts_detours_without_breaking_success() {
        let noisy = generate_expert_trajectories(EnvKind::Toyhouse, 6, 11, 1.0);
        let clean = generate_expert_trajectories(EnvKind::Toyhouse, 6, 11, 0.0);
        for (n, c) in noisy.iter().zip(&clean) {
            assert!(n.steps.len() > c.steps.len(), "noise must add a detour");
        }
    }
}
