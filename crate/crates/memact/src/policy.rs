//! The deterministic acting policy behind the scripted backend's rule-based
//! fallback. It imitates the retrieved examples when one applies to the
//! current observation and otherwise falls back to desk-scale heuristics,
//! so a full agent run needs no live model. Pure functions of the payload.

use crate::env::toyhouse::{GoalTemplate, HouseGoal};
use crate::env::toyshop::search_query_for_goal;
use crate::llm::prompts::{CurrentBlock, ExampleBlock};
use crate::llm::rulebased::{actions_from_summary, click_argument, looks_like_code_click};

pub use crate::env::toyhouse::HouseGoal as ParsedHouseGoal;

/// Parse a goal against the household grammar.
pub fn house_goal(goal: &str) -> Option<HouseGoal> {
    HouseGoal::parse(goal)
}

/// The single next action for the Action prompt.
pub fn decide(examples: &[ExampleBlock], current: &CurrentBlock) -> Option<String> {
    let state = State::read(examples, current);
    if state.house.is_some() {
        decide_house(&state)
    } else {
        decide_shop(&state)
    }
}

/// Candidate next actions with confidences for the TreeExploration prompt.
pub fn propose(examples: &[ExampleBlock], current: &CurrentBlock) -> Vec<(String, f64)> {
    let state = State::read(examples, current);
    let weighted = if state.house.is_some() {
        propose_house(&state)
    } else {
        propose_shop(&state)
    };
    let total: f64 = weighted.iter().map(|(_, w)| *w).sum();
    if total <= 0.0 {
        return Vec::new();
    }
    weighted.into_iter().map(|(a, w)| (a, w / total)).collect()
}

struct State<'a> {
    examples: &'a [ExampleBlock],
    goal: &'a str,
    observation: &'a str,
    house: Option<HouseGoal>,
    /// Actions already taken this episode, recovered from the summary.
    taken: Vec<String>,
    /// Actions the environment rejected for this step.
    banned: Vec<String>,
}

impl<'a> State<'a> {
    fn read(examples: &'a [ExampleBlock], current: &'a CurrentBlock) -> Self {
        State {
            examples,
            goal: &current.goal,
            observation: &current.observation,
            house: HouseGoal::parse(&current.goal),
            taken: actions_from_summary(&current.past),
            banned: current.rejected.iter().map(|(a, _)| a.clone()).collect(),
        }
    }

    fn blocked(&self, action: &str) -> bool {
        self.banned.iter().any(|b| b == action)
    }

    fn took(&self, action: &str) -> bool {
        self.taken.iter().any(|t| t == action)
    }

    fn count_taken(&self, action: &str) -> usize {
        self.taken.iter().filter(|t| *t == action).count()
    }
}

fn tokens(text: &str) -> Vec<String> {
    let mut out: Vec<String> = text
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_ascii_lowercase())
        .collect();
    out.sort();
    out.dedup();
    out
}

fn overlap(a: &str, b_tokens: &[String]) -> usize {
    tokens(a).iter().filter(|t| b_tokens.contains(*t)).count()
}

// ---------------------------------------------------------------------------
// Shop
// ---------------------------------------------------------------------------

#[derive(PartialEq)]
enum ShopPage {
    Search,
    Results,
    Detail,
    Done,
}

fn shop_page(observation: &str) -> ShopPage {
    if observation.contains("[Buy Now]") {
        ShopPage::Detail
    } else if observation.contains("Total results:") {
        ShopPage::Results
    } else if observation.contains("Thank you for your purchase") {
        ShopPage::Done
    } else {
        ShopPage::Search
    }
}

/// Products visible on a results page, as (code, title) in page order.
fn visible_products(observation: &str) -> Vec<(String, String)> {
    let mut out = Vec::new();
    let mut lines = observation.lines().peekable();
    while let Some(line) = lines.next() {
        let line = line.trim();
        if let Some(code) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            let code_like = code.len() >= 4
                && code.bytes().all(|b| b.is_ascii_alphanumeric())
                && code.bytes().any(|b| b.is_ascii_digit())
                && code.bytes().any(|b| b.is_ascii_alphabetic());
            if code_like {
                let title = lines.peek().map(|t| t.trim().to_string()).unwrap_or_default();
                out.push((code.to_string(), title));
            }
        }
    }
    out
}

/// Option values the instruction requires (its `with ...` clauses).
fn required_values(goal: &str) -> Vec<String> {
    goal.split(", ")
        .filter_map(|segment| segment.strip_prefix("with "))
        .map(|v| v.trim_end_matches('.').trim().to_string())
        .collect()
}

fn value_visible(observation: &str, value: &str) -> bool {
    observation.contains(&format!("[{value}]"))
}

fn value_clicked(observation: &str, value: &str) -> bool {
    observation.contains(&format!("You have clicked {value}."))
}

fn decide_shop(state: &State) -> Option<String> {
    match shop_page(state.observation) {
        ShopPage::Search => {
            Some(format!("search[{}]", search_query_for_goal(state.goal)))
        }
        ShopPage::Results => {
            // imitate the newest example whose clicked code is on this page
            for example in state.examples {
                if looks_like_code_click(&example.action) {
                    let code = click_argument(&example.action).unwrap_or_default();
                    let action = format!("click[{code}]");
                    if value_visible(state.observation, code)
                        && !state.took(&action)
                        && !state.blocked(&action)
                    {
                        return Some(action);
                    }
                }
            }
            // otherwise the best-matching visible product not yet tried
            let goal_tokens = tokens(state.goal);
            let mut best: Option<(usize, String)> = None;
            for (code, title) in visible_products(state.observation) {
                let action = format!("click[{code}]");
                if state.took(&action) || state.blocked(&action) {
                    continue;
                }
                let score = overlap(&title, &goal_tokens);
                if best.as_ref().is_none_or(|(s, _)| score > *s) {
                    best = Some((score, action));
                }
            }
            if let Some((_, action)) = best {
                return Some(action);
            }
            let next = "click[Next >]".to_string();
            if value_visible(state.observation, "Next >")
                && state.count_taken(&next) < 3
                && !state.blocked(&next)
            {
                return Some(next);
            }
            let prev = "click[< Prev]".to_string();
            if value_visible(state.observation, "< Prev") && !state.blocked(&prev) {
                return Some(prev);
            }
            Some("click[Back to Search]".to_string())
        }
        ShopPage::Detail => {
            let required = required_values(state.goal);
            let mut missing = false;
            for value in &required {
                if value_clicked(state.observation, value) {
                    continue;
                }
                if value_visible(state.observation, value) {
                    let action = format!("click[{value}]");
                    if !state.blocked(&action) {
                        return Some(action);
                    }
                } else {
                    missing = true;
                }
            }
            if missing && !state.blocked("click[< Prev]") {
                // a required option does not exist here; look elsewhere
                return Some("click[< Prev]".to_string());
            }
            Some("click[Buy Now]".to_string())
        }
        ShopPage::Done => None,
    }
}

fn propose_shop(state: &State) -> Vec<(String, f64)> {
    match shop_page(state.observation) {
        ShopPage::Search => {
            vec![(format!("search[{}]", search_query_for_goal(state.goal)), 1.0)]
        }
        ShopPage::Results => {
            let goal_tokens = tokens(state.goal);
            let mut out: Vec<(String, f64)> = Vec::new();
            for (code, title) in visible_products(state.observation) {
                let action = format!("click[{code}]");
                if state.took(&action) {
                    continue;
                }
                out.push((action, 1.0 + overlap(&title, &goal_tokens) as f64));
            }
            if value_visible(state.observation, "Next >") {
                out.push(("click[Next >]".to_string(), 1.0));
            }
            if out.is_empty() {
                out.extend(decide_shop(state).map(|a| (a, 1.0)));
            }
            out
        }
        ShopPage::Detail => {
            let mut out: Vec<(String, f64)> = Vec::new();
            for value in required_values(state.goal) {
                if value_visible(state.observation, &value)
                    && !value_clicked(state.observation, &value)
                {
                    out.push((format!("click[{value}]"), 3.0));
                }
            }
            out.push(("click[Buy Now]".to_string(), 2.0));
            out.push(("click[< Prev]".to_string(), 1.0));
            out
        }
        ShopPage::Done => Vec::new(),
    }
}

// ---------------------------------------------------------------------------
// House
// ---------------------------------------------------------------------------

/// Where the agent is, read from the observation text.
fn location_of(observation: &str) -> Option<String> {
    for (prefix, stop) in [
        ("You arrive at the ", "."),
        ("You open the ", "."),
        ("You close the ", "."),
    ] {
        if let Some(rest) = observation.strip_prefix(prefix) {
            return rest.split(stop).next().map(|s| s.trim().to_string());
        }
    }
    if let Some(rest) = observation.strip_prefix("You pick up the ") {
        return rest.split(" from the ").nth(1).map(|s| s.trim_end_matches('.').to_string());
    }
    if let Some(rest) = observation.strip_prefix("You put the ") {
        return rest.split(" in/on the ").nth(1).map(|s| s.trim_end_matches('.').to_string());
    }
    for marker in [" using the "] {
        if observation.starts_with("You cool")
            || observation.starts_with("You heat")
            || observation.starts_with("You clean")
        {
            if let Some(pos) = observation.find(marker) {
                return Some(
                    observation[pos + marker.len()..].trim_end_matches('.').trim().to_string(),
                );
            }
        }
    }
    None
}

/// Object instances visible in the observation ("you see a x 1, a y 2").
fn visible_objects(observation: &str) -> Vec<String> {
    let Some(pos) = observation.find("you see ") else {
        return Vec::new();
    };
    let rest = observation[pos + "you see ".len()..].trim_end_matches('.');
    if rest.starts_with("nothing") {
        return Vec::new();
    }
    rest.split(", ")
        .flat_map(|part| part.split(" and "))
        .map(|part| part.trim().trim_start_matches("a ").trim_start_matches("an ").to_string())
        .filter(|part| !part.is_empty())
        .collect()
}

fn instance_class(instance: &str) -> &str {
    instance.split_whitespace().next().unwrap_or(instance)
}

struct HouseFacts {
    carrying: Option<String>,
    manipulated: bool,
    placed: Vec<String>,
    visited: Vec<String>,
    location: Option<String>,
    closed_here: bool,
}

fn house_facts(state: &State, goal: &HouseGoal) -> HouseFacts {
    let mut carrying: Option<String> = None;
    let mut placed: Vec<String> = Vec::new();
    let mut visited: Vec<String> = Vec::new();
    for action in &state.taken {
        if let Some(rest) = action.strip_prefix("take ") {
            if let Some((object, _)) = rest.split_once(" from ") {
                carrying = Some(object.trim().to_string());
            }
        } else if let Some(rest) = action.strip_prefix("put ") {
            if let Some((object, recep)) = rest.split_once(" in/on ") {
                let object = object.trim().to_string();
                if carrying.as_deref() == Some(object.as_str()) {
                    carrying = None;
                }
                if let Some(dest) = &goal.destination_class {
                    if instance_class(recep.trim()) == dest {
                        placed.push(object);
                    }
                }
            }
        } else if let Some(rest) = action.strip_prefix("go to ") {
            visited.push(rest.trim().to_string());
        }
    }
    let manip_verb = match goal.template {
        GoalTemplate::Cool => Some("cool "),
        GoalTemplate::Heat => Some("heat "),
        GoalTemplate::Clean => Some("clean "),
        GoalTemplate::Look => Some("examine "),
        GoalTemplate::Pick | GoalTemplate::Pick2 => None,
    };
    let manipulated = match (&carrying, manip_verb) {
        (Some(object), Some(verb)) => {
            let marker = format!("{verb}{object} with ");
            state.taken.iter().any(|a| a.starts_with(&marker))
        }
        _ => false,
    };
    HouseFacts {
        carrying,
        manipulated,
        placed,
        visited,
        location: location_of(state.observation),
        closed_here: state.observation.contains("is closed"),
    }
}

/// Receptacle instances where the examples saw or took the object class,
/// most frequent first.
fn evidence_places(examples: &[ExampleBlock], class: &str) -> Vec<String> {
    let mut counts: Vec<(String, usize)> = Vec::new();
    let mut bump = |place: String| match counts.iter_mut().find(|(p, _)| *p == place) {
        Some((_, n)) => *n += 1,
        None => counts.push((place, 1)),
    };
    for example in examples {
        let mentions_class = visible_objects(&example.observation)
            .iter()
            .any(|o| instance_class(o) == class);
        if mentions_class {
            if let Some(place) = location_of(&example.observation) {
                bump(place);
            }
        }
        if let Some(rest) = example.action.strip_prefix("take ") {
            if let Some((object, recep)) = rest.split_once(" from ") {
                if instance_class(object.trim()) == class {
                    bump(recep.trim().to_string());
                }
            }
        }
    }
    counts.sort_by(|a, b| b.1.cmp(&a.1));
    counts.into_iter().map(|(p, _)| p).collect()
}

/// Blind sweep order used when the examples offer no evidence.
const SWEEP_ORDER: &[&str] = &[
    "cabinet 1",
    "countertop 1",
    "cabinet 2",
    "drawer 1",
    "shelf 1",
    "diningtable 1",
    "sinkbasin 1",
    "countertop 2",
    "fridge 1",
    "cabinet 3",
    "drawer 2",
    "garbagecan 1",
    "desk 1",
    "microwave 1",
    "cabinet 4",
    "cabinet 5",
];

fn decide_house(state: &State) -> Option<String> {
    let goal = state.house.clone()?;
    let facts = house_facts(state, &goal);

    if let Some(carried) = &facts.carrying {
        // manipulate first when the goal asks for it
        if goal.appliance_class().is_some() && !facts.manipulated {
            match goal.template {
                GoalTemplate::Look => {
                    let lamp_visible = visible_objects(state.observation)
                        .iter()
                        .any(|o| instance_class(o) == "desklamp");
                    if lamp_visible {
                        let action = format!("examine {carried} with desklamp 1");
                        if !state.blocked(&action) {
                            return Some(action);
                        }
                    }
                    let mut candidates = evidence_places(state.examples, "desklamp");
                    candidates.push("desk 1".to_string());
                    return go_to_first(state, &facts, &candidates);
                }
                _ => {
                    let appliance = format!("{} 1", goal.appliance_class().unwrap());
                    if facts.location.as_deref() == Some(appliance.as_str()) {
                        let verb = match goal.template {
                            GoalTemplate::Cool => "cool",
                            GoalTemplate::Heat => "heat",
                            _ => "clean",
                        };
                        let action = format!("{verb} {carried} with {appliance}");
                        if !state.blocked(&action) {
                            return Some(action);
                        }
                    }
                    let action = format!("go to {appliance}");
                    if !state.blocked(&action) {
                        return Some(action);
                    }
                }
            }
        }
        // deliver
        let destination = goal.destination_class.as_deref().unwrap_or("shelf");
        if let Some(here) = &facts.location {
            if instance_class(here) == destination {
                if facts.closed_here {
                    let action = format!("open {here}");
                    if !state.blocked(&action) {
                        return Some(action);
                    }
                }
                let action = format!("put {carried} in/on {here}");
                if !state.blocked(&action) {
                    return Some(action);
                }
            }
        }
        let candidates: Vec<String> = (1..=4).map(|i| format!("{destination} {i}")).collect();
        return go_to_first(state, &facts, &candidates);
    }

    // hands free: take a target if one is visible here
    let visible = visible_objects(state.observation);
    if let Some(here) = &facts.location {
        let takeable = visible.iter().find(|o| {
            instance_class(o) == goal.object_class && !facts.placed.iter().any(|p| p == *o)
        });
        if let Some(object) = takeable {
            let action = format!("take {object} from {here}");
            if !state.blocked(&action) {
                return Some(action);
            }
        }
        if facts.closed_here {
            let action = format!("open {here}");
            if !state.blocked(&action) {
                return Some(action);
            }
        }
    }

    // search: example evidence first, then a blind sweep
    let mut candidates = evidence_places(state.examples, &goal.object_class);
    candidates.extend(SWEEP_ORDER.iter().map(|s| s.to_string()));
    go_to_first(state, &facts, &candidates)
}

fn go_to_first(state: &State, facts: &HouseFacts, candidates: &[String]) -> Option<String> {
    for candidate in candidates {
        let action = format!("go to {candidate}");
        if facts.visited.iter().any(|v| v == candidate.as_str()) || state.blocked(&action) {
            continue;
        }
        if facts.location.as_deref() == Some(candidate.as_str()) {
            continue;
        }
        return Some(action);
    }
    // everything visited: allow revisits in candidate order
    for candidate in candidates {
        let action = format!("go to {candidate}");
        if !state.blocked(&action) && facts.location.as_deref() != Some(candidate.as_str()) {
            return Some(action);
        }
    }
    Some("look".to_string())
}

fn propose_house(state: &State) -> Vec<(String, f64)> {
    let Some(goal) = state.house.clone() else {
        return Vec::new();
    };
    let facts = house_facts(state, &goal);
    let primary = decide_house(state);
    let mut out: Vec<(String, f64)> = Vec::new();
    if let Some(primary) = primary {
        out.push((primary, 3.0));
    }
    // searching with free hands: offer alternative places to look
    if facts.carrying.is_none() {
        let mut candidates = evidence_places(state.examples, &goal.object_class);
        candidates.extend(SWEEP_ORDER.iter().map(|s| s.to_string()));
        let mut weight = 2.0;
        for candidate in candidates {
            if out.len() >= 4 {
                break;
            }
            let action = format!("go to {candidate}");
            if facts.visited.iter().any(|v| v == candidate.as_str())
                || out.iter().any(|(a, _)| *a == action)
                || facts.location.as_deref() == Some(candidate.as_str())
            {
                continue;
            }
            out.push((action, weight));
            weight = (weight - 1.0).max(1.0);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn current(goal: &str, past: &str, observation: &str) -> CurrentBlock {
        CurrentBlock {
            goal: goal.into(),
            past: past.into(),
            evaluation: "-".into(),
            observation: observation.into(),
            rejected: Vec::new(),
        }
    }

    fn example(observation: &str, action: &str) -> ExampleBlock {
        ExampleBlock {
            past: "No past actions.".into(),
            evaluation: "-".into(),
            observation: observation.into(),
            action: action.into(),
        }
    }

    const SHOP_GOAL: &str =
        "i need khaki steel toe shoes, with 11 women, and price lower than 70.00 dollars.";

    #[test]
    fn shop_search_page_issues_canonical_query() {
        let got = decide(&[], &current(SHOP_GOAL, "No past actions.", "[Search]")).unwrap();
        assert_eq!(got, "search[khaki steel toe shoes 11 women]");
    }

    #[test]
    fn shop_results_imitate_newest_applicable_example() {
        let results = "[Back to Search]\nPage 1 (Total results: 2)\n[B0AAAA11]\nKhaki Steel Toe Shoes\n59.99\n[B0BBBB22]\nBlack Work Shoes\n49.99";
        let examples = vec![
            example("irrelevant results page", "click[B0BBBB22]"),
            example("other page", "click[B0CCCC33]"),
        ];
        let got = decide(
            &examples,
            &current(SHOP_GOAL, "Did: search[khaki steel toe shoes 11 women].", results),
        )
        .unwrap();
        assert_eq!(got, "click[B0BBBB22]", "example code visible on this page wins");
    }

    #[test]
    fn shop_results_fall_back_to_best_overlap() {
        let results = "[Back to Search]\nPage 1 (Total results: 2)\n[B0AAAA11]\nKhaki Steel Toe Shoes\n59.99\n[B0BBBB22]\nFleece Jacket\n49.99";
        let got = decide(&[], &current(SHOP_GOAL, "Did: search[x].", results)).unwrap();
        assert_eq!(got, "click[B0AAAA11]");
    }

    #[test]
    fn shop_detail_clicks_required_option_then_buys() {
        let detail = "[Back to Search]\n[< Prev]\nsize [11 women] [10.5 women]\nKhaki Steel Toe Shoes\nPrice: 59.99\nRating: N.A.\n[Description]\n[Features]\n[Reviews]\n[Buy Now]";
        let got = decide(&[], &current(SHOP_GOAL, "Did: click[B0AAAA11].", detail)).unwrap();
        assert_eq!(got, "click[11 women]");
        let after = format!("{detail}\nYou have clicked 11 women.");
        let got = decide(&[], &current(SHOP_GOAL, "Did: click[B0AAAA11].", &after)).unwrap();
        assert_eq!(got, "click[Buy Now]");
    }

    #[test]
    fn shop_detail_escapes_when_required_option_missing() {
        let detail = "[Back to Search]\n[< Prev]\nsize [10.5 women] [9 men]\nKhaki Steel Toe Shoes\nPrice: 59.99\nRating: N.A.\n[Buy Now]";
        let got = decide(&[], &current(SHOP_GOAL, "Did: click[B0AAAA11].", detail)).unwrap();
        assert_eq!(got, "click[< Prev]");
    }

    const HOUSE_GOAL: &str = "cool some mug and put it in cabinet.";

    #[test]
    fn house_takes_visible_target() {
        let obs = "You arrive at the countertop 1. On the countertop 1, you see a mug 1, and a pen 2.";
        let got = decide(&[], &current(HOUSE_GOAL, "Did: go to countertop 1.", obs)).unwrap();
        assert_eq!(got, "take mug 1 from countertop 1");
    }

    #[test]
    fn house_carries_to_appliance_then_cools() {
        let obs = "You pick up the mug 1 from the countertop 1.";
        let got = decide(
            &[],
            &current(HOUSE_GOAL, "Did: go to countertop 1; take mug 1 from countertop 1.", obs),
        )
        .unwrap();
        assert_eq!(got, "go to fridge 1");
        let at_fridge = "You arrive at the fridge 1. The fridge 1 is closed.";
        let got = decide(
            &[],
            &current(
                HOUSE_GOAL,
                "Did: go to countertop 1; take mug 1 from countertop 1; go to fridge 1.",
                at_fridge,
            ),
        )
        .unwrap();
        assert_eq!(got, "cool mug 1 with fridge 1");
    }

    #[test]
    fn house_delivers_after_manipulation() {
        let obs = "You cool the mug 1 using the fridge 1.";
        let past = "Did: go to countertop 1; take mug 1 from countertop 1; go to fridge 1; cool mug 1 with fridge 1.";
        let got = decide(&[], &current(HOUSE_GOAL, past, obs)).unwrap();
        assert_eq!(got, "go to cabinet 1");
        let at_cabinet = "You arrive at the cabinet 1. The cabinet 1 is closed.";
        let past2 = format!("{} go to cabinet 1.", past.trim_end_matches('.'));
        let past2 = past2.replace(". go to", "; go to");
        let got = decide(&[], &current(HOUSE_GOAL, &past2, at_cabinet)).unwrap();
        assert_eq!(got, "open cabinet 1");
    }

    #[test]
    fn house_searches_evidence_places_before_sweeping() {
        let examples = vec![
            example(
                "You arrive at the shelf 1. On the shelf 1, you see a mug 2.",
                "take mug 2 from shelf 1",
            ),
        ];
        let obs = "You are in the middle of a room. Looking quickly around you, you see a cabinet 1, and a shelf 1.";
        let got = decide(&examples, &current(HOUSE_GOAL, "No past actions.", obs)).unwrap();
        assert_eq!(got, "go to shelf 1", "example evidence outranks the blind sweep");
    }

    #[test]
    fn rejected_actions_are_skipped() {
        let obs = "You are in the middle of a room. Looking quickly around you, you see a cabinet 1.";
        let mut block = current(HOUSE_GOAL, "No past actions.", obs);
        block.rejected.push(("go to cabinet 1".into(), "there is no cabinet 1".into()));
        let got = decide(&[], &block).unwrap();
        assert_ne!(got, "go to cabinet 1");
    }

    #[test]
    fn proposals_are_normalized_and_ordered() {
        let results = "[Back to Search]\nPage 1 (Total results: 4)\n[Next >]\n[B0AAAA11]\nKhaki Steel Toe Shoes\n59.99\n[B0BBBB22]\nFleece Jacket\n49.99";
        let got = propose(&[], &current(SHOP_GOAL, "Did: search[x].", results));
        assert!(got.len() >= 3);
        let sum: f64 = got.iter().map(|(_, c)| c).sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert_eq!(got[0].0, "click[B0AAAA11]");
    }
}
