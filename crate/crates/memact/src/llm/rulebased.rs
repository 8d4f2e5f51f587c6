//! Deterministic rule-based responses for every prompt kind: a pure
//! function of (kind, payload) standing in for a live model so whole
//! pipelines run offline. Desk-scale heuristics only; fixtures override it
//! entry by entry.

use super::prompts::{
    read_action_payload, read_compare_payload, read_goal_line, read_numbered_items,
};
use super::PromptKind;

pub fn respond(kind: PromptKind, payload: &str) -> String {
    match kind {
        PromptKind::Summarization => summarize(payload),
        PromptKind::Evaluation => evaluate(payload),
        PromptKind::ClusterGoals => cluster(payload, goal_key),
        PromptKind::ClusterObservations => cluster(payload, observation_key),
        PromptKind::IndexGoal => classify(payload, goal_key),
        PromptKind::IndexObservation => classify(payload, observation_key),
        PromptKind::Action => act(payload),
        PromptKind::TreeExploration => propose(payload),
        PromptKind::Compare => compare(payload),
        PromptKind::FinalChoice => "[1]: first candidate".to_string(),
    }
}

// ---------------------------------------------------------------------------
// Summarization / evaluation
// ---------------------------------------------------------------------------

fn summarize(payload: &str) -> String {
    let actions: Vec<&str> = payload
        .lines()
        .filter_map(|l| l.strip_prefix("Action: "))
        .map(str::trim)
        .filter(|a| !a.is_empty())
        .collect();
    if actions.is_empty() {
        return "Summary: No past actions.".to_string();
    }
    format!("Summary: Did: {}.", actions.join("; "))
}

/// Actions recorded by [`summarize`], recovered from a rendered summary.
pub fn actions_from_summary(summary: &str) -> Vec<String> {
    let Some(rest) = summary.trim().strip_prefix("Did: ") else {
        return Vec::new();
    };
    rest.trim_end_matches('.')
        .split("; ")
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

fn evaluate(payload: &str) -> String {
    let goal = read_goal_line(payload).unwrap_or_default();
    let actions: Vec<String> = payload
        .lines()
        .skip_while(|l| !l.starts_with("Past actions:"))
        .skip(1)
        .map(|l| l.trim().to_string())
        .filter(|l| !l.is_empty())
        .collect();
    let subgoals = goal_subgoals(&goal);
    let mut out = Vec::new();
    for (i, subgoal) in subgoals.iter().enumerate() {
        let done = subgoal_complete(subgoal, &actions);
        let status = if done { "Complete" } else { "Incomplete" };
        out.push(format!("Subgoal {}: {} -{}", i + 1, subgoal, status));
    }
    out.join("\n")
}

/// Break a goal into checkable subgoals.
fn goal_subgoals(goal: &str) -> Vec<String> {
    if let Some(parsed) = house_goal(goal) {
        return parsed.subgoals();
    }
    vec![
        "find a matching product".to_string(),
        "select the required options".to_string(),
        "purchase the product".to_string(),
    ]
}

fn subgoal_complete(subgoal: &str, actions: &[String]) -> bool {
    if subgoal.starts_with("find a matching product") {
        return actions.iter().any(|a| looks_like_code_click(a));
    }
    if subgoal.starts_with("select the required options") {
        return actions
            .iter()
            .any(|a| a.starts_with("click[") && !looks_like_code_click(a) && !is_nav_click(a));
    }
    if subgoal.starts_with("purchase") {
        return actions.iter().any(|a| a.eq_ignore_ascii_case("click[buy now]"));
    }
    // house-style subgoals start with their verb phrase
    let mut words = subgoal.split_whitespace();
    let (Some(verb), Some(noun)) = (words.next(), words.next()) else {
        return false;
    };
    actions.iter().any(|a| a.starts_with(verb) && a.contains(noun))
}

// ---------------------------------------------------------------------------
// Clustering and classification keys
// ---------------------------------------------------------------------------

fn cluster(payload: &str, key: fn(&str) -> String) -> String {
    let items = read_numbered_items(payload);
    let mut types: Vec<(String, Vec<usize>)> = Vec::new();
    for (i, item) in items.iter().enumerate() {
        let k = key(item);
        match types.iter_mut().find(|(name, _)| *name == k) {
            Some((_, members)) => members.push(i + 1),
            None => types.push((k, vec![i + 1])),
        }
    }
    types
        .iter()
        .enumerate()
        .map(|(i, (name, members))| {
            let members: String = members.iter().map(|m| format!("[{m}]")).collect();
            format!("High-level Type{}: {} {}", i + 1, name, members)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn classify(payload: &str, key: fn(&str) -> String) -> String {
    let new_item = payload
        .lines()
        .find_map(|l| l.strip_prefix("New goal: ").or_else(|| l.strip_prefix("New observation: ")))
        .unwrap_or_default();
    let types: Vec<(u32, String)> = payload
        .lines()
        .filter_map(|l| {
            let digits = l.bytes().take_while(|b| b.is_ascii_digit()).count();
            if digits == 0 {
                return None;
            }
            let rest = l[digits..].strip_prefix(". ")?;
            let name = rest.split(". Examples:").next().unwrap_or(rest).trim();
            Some((l[..digits].parse().ok()?, name.to_string()))
        })
        .collect();
    if types.is_empty() {
        return "[1]: no listed types".to_string();
    }
    let wanted = key(new_item);
    if let Some((id, _)) = types.iter().find(|(_, name)| *name == wanted) {
        return format!("[{id}]: same kind");
    }
    // fall back to naive token overlap against the type names
    let item_tokens = tokens(new_item);
    let best = types
        .iter()
        .map(|(id, name)| {
            let overlap = tokens(name).iter().filter(|t| item_tokens.contains(*t)).count();
            (std::cmp::Reverse(overlap), *id)
        })
        .min()
        .map(|(_, id)| id)
        .unwrap_or(1);
    format!("[{best}]: closest listed type")
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

fn goal_key(goal: &str) -> String {
    if let Some(parsed) = house_goal(goal) {
        return format!("{} tasks", parsed.template_name());
    }
    // shop instructions end in "... {category}, with ..."; key on the word
    // before the first comma
    let head = goal.split(',').next().unwrap_or(goal);
    let category = head.split_whitespace().last().unwrap_or("shopping");
    format!("{category} shopping")
}

fn observation_key(obs: &str) -> String {
    let obs = obs.trim();
    if obs.contains("[Buy Now]") {
        return "product detail pages".into();
    }
    if obs.contains("Total results:") {
        return "search result pages".into();
    }
    if obs.contains("[Search]") {
        return "search entry pages".into();
    }
    if obs.contains("Thank you for your purchase") {
        return "purchase confirmations".into();
    }
    if obs.starts_with("You are in the middle of a room") {
        return "room overview".into();
    }
    if let Some(rest) = obs.strip_prefix("You arrive at the ") {
        let place = rest.split([' ', '.']).next().unwrap_or("somewhere");
        return format!("{place} area");
    }
    if obs.starts_with("You open") || obs.starts_with("You close") {
        return "container handling".into();
    }
    if obs.starts_with("You pick up") {
        return "object in hand".into();
    }
    if obs.starts_with("You put") {
        return "object placed".into();
    }
    if obs.starts_with("You cool") || obs.starts_with("You heat") || obs.starts_with("You clean") {
        return "appliance use".into();
    }
    if obs.starts_with("You examine") {
        return "inspection".into();
    }
    "miscellaneous".into()
}

// ---------------------------------------------------------------------------
// Acting
// ---------------------------------------------------------------------------

fn act(payload: &str) -> String {
    let Some((examples, current)) = read_action_payload(payload) else {
        return "look".to_string();
    };
    crate::policy::decide(&examples, &current).unwrap_or_else(|| "look".to_string())
}

fn propose(payload: &str) -> String {
    let Some((examples, current)) = read_action_payload(payload) else {
        return "look | 1.0".to_string();
    };
    let proposals = crate::policy::propose(&examples, &current);
    if proposals.is_empty() {
        return "look | 1.0".to_string();
    }
    crate::llm::parse::render_proposals(&proposals)
}

fn compare(payload: &str) -> String {
    let Some((first, second)) = read_compare_payload(payload) else {
        return "1: could not read the processes".to_string();
    };
    let mut step = first.len().min(second.len()) + 1;
    for (i, (a, b)) in first.iter().zip(second.iter()).enumerate() {
        if a != b {
            step = i + 1;
            break;
        }
    }
    format!("{step}: the processes first differ at step {step}")
}

// ---------------------------------------------------------------------------
// Shared helpers for action text
// ---------------------------------------------------------------------------

pub(crate) fn looks_like_code_click(action: &str) -> bool {
    let Some(inner) = click_argument(action) else {
        return false;
    };
    inner.len() >= 4
        && inner.bytes().all(|b| b.is_ascii_alphanumeric())
        && inner.bytes().any(|b| b.is_ascii_digit())
        && inner.bytes().any(|b| b.is_ascii_alphabetic())
}

pub(crate) fn is_nav_click(action: &str) -> bool {
    matches!(
        click_argument(action).map(|s| s.to_ascii_lowercase()).as_deref(),
        Some("buy now") | Some("< prev") | Some("next >") | Some("back to search")
    )
}

pub(crate) fn click_argument(action: &str) -> Option<&str> {
    let rest = action.strip_prefix("click[")?;
    rest.strip_suffix(']')
}

pub(crate) use crate::policy::house_goal;
