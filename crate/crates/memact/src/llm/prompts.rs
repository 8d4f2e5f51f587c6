//! Instruction templates for every prompt kind, the payload builders that
//! go with them, and the payload readers used by the rule-based scripted
//! policy. Builders and readers live together so the two sides of each
//! format cannot drift apart.

use super::PromptKind;
use crate::llm::parse::Completion;

const EVALUATION: &str = "I will give you a task goal and agent past action process.\n\
You should partition the goal into some subgoal and judge the past actions whether complete these subgoals.\n\
The desired format is:\n\
subgoal 1:goal - complete or in complete\n\
etc.\n\
Do not give me explanation.";

const SUMMARIZATION: &str = "I will give you the past process and you should summarize the past process.\n\
The desired format must be:\n\
Summary:\n\
Do not give me explanation.";

const CLUSTER_GOALS: &str = "I will give you a few numbered task goals.\n\
You need to help me classify these goals into some types. The number of each category should be almost average. The category must be high-level type.\n\
The desired format is:\n\
High-level Type1: type name [number]\n\
High-level Type2: type name [number]\n\
High-level Type3: type name [number]\n\
etc.";

const CLUSTER_OBSERVATIONS: &str = "I will give you a few numbered observations.\n\
You need to help me classify these observations into some types. The number of each category should be almost average. The category must be high-level type.\n\
The desired format is:\n\
High-level Type1: type name [number]\n\
High-level Type2: type name [number]\n\
High-level Type3: type name [number]\n\
etc.";

const INDEX_GOAL: &str = "I will give you some numbered goal types and examples of this type.\n\
You should judge the new goal belongs to which type.\n\
The desired format is:\n\
[Type number]: reason\n\
Do not give me other information.";

const INDEX_OBSERVATION: &str = "I will give you some observation numbered types and examples of this type.\n\
You should judge the new observation belongs to which type.\n\
The desired format is:\n\
[Type number]: reason\n\
Do not give me other information.";

const ACTION: &str = "I give some numbered examples and a new observation.\n\
You should imitate the actions in the example and give me the next action.";

const TREE_EXPLORATION: &str = "I give some numbered examples and a new observation.\n\
You should imitate the actions in the example and give me some possible next actions and the confidence of each action. All confidence should sum equal 1.";

const COMPARE: &str = "I will give you two decision process. Each process have some numbered step.\n\
The first process is better than the second, Can you tell me the first number that two process different.\n\
The desired format is:\n\
Number: Reason.\n\
Do not give any other information and strictly follow the format.";

// No counterpart exists in the original prompt set; this template is ours.
const FINAL_CHOICE: &str = "I will give you a task goal and some numbered decision processes.\n\
You should choose the process that best accomplishes the goal.\n\
The desired format is:\n\
[Process number]: reason\n\
Do not give me other information.";

pub fn template(kind: PromptKind) -> &'static str {
    match kind {
        PromptKind::Evaluation => EVALUATION,
        PromptKind::Summarization => SUMMARIZATION,
        PromptKind::ClusterGoals => CLUSTER_GOALS,
        PromptKind::ClusterObservations => CLUSTER_OBSERVATIONS,
        PromptKind::IndexGoal => INDEX_GOAL,
        PromptKind::IndexObservation => INDEX_OBSERVATION,
        PromptKind::Action => ACTION,
        PromptKind::TreeExploration => TREE_EXPLORATION,
        PromptKind::Compare => COMPARE,
        PromptKind::FinalChoice => FINAL_CHOICE,
    }
}

/// Collapse newlines so an item fits on one line of a numbered list.
pub fn flatten(text: &str) -> String {
    text.split('\n').map(str::trim_end).collect::<Vec<_>>().join(" ")
}

/// Inline `Subgoal k: text -Status` rendering for a single Evaluation line.
pub fn evaluation_line(subgoals: &[(String, Completion)]) -> String {
    if subgoals.is_empty() {
        return "-".to_string();
    }
    subgoals
        .iter()
        .enumerate()
        .map(|(i, (text, status))| {
            let status = match status {
                Completion::Complete => "Complete",
                Completion::Incomplete => "Incomplete",
            };
            format!("Subgoal {}: {} -{}", i + 1, text, status)
        })
        .collect::<Vec<_>>()
        .join(" ")
}

// ---------------------------------------------------------------------------
// Builders
// ---------------------------------------------------------------------------

pub fn summarization_payload(goal: &str, pairs: &[(String, String)]) -> String {
    let mut out = format!("Goal: {goal}\nPast process:\n");
    for (observation, action) in pairs {
        out.push_str("Observation: ");
        out.push_str(observation);
        out.push_str("\nAction: ");
        out.push_str(action);
        out.push('\n');
    }
    out
}

pub fn evaluation_payload(goal: &str, actions: &[&str]) -> String {
    let mut out = format!("Goal: {goal}\nPast actions:\n");
    for action in actions {
        out.push_str(action);
        out.push('\n');
    }
    out
}

pub fn cluster_goals_payload(goals: &[String]) -> String {
    let mut out = String::from("Goals:\n");
    for (i, goal) in goals.iter().enumerate() {
        out.push_str(&format!("{}. {}\n", i + 1, flatten(goal)));
    }
    out
}

pub fn cluster_observations_payload(goal_type: &str, observations: &[String]) -> String {
    let mut out = format!("Goal type: {goal_type}\nObservations:\n");
    for (i, obs) in observations.iter().enumerate() {
        out.push_str(&format!("{}. {}\n", i + 1, flatten(obs)));
    }
    out
}

pub fn index_goal_payload(types: &[(u32, String, Vec<String>)], goal: &str) -> String {
    let mut out = String::from("Goal types:\n");
    for (id, name, examples) in types {
        let examples = examples.iter().map(|e| flatten(e)).collect::<Vec<_>>().join(" / ");
        out.push_str(&format!("{id}. {name}. Examples: {examples}\n"));
    }
    out.push_str(&format!("New goal: {}\n", flatten(goal)));
    out
}

pub fn index_observation_payload(
    goal_type: &str,
    types: &[(u32, String)],
    observation: &str,
) -> String {
    let mut out = format!("Goal type: {goal_type}\nObservation types:\n");
    for (id, name) in types {
        out.push_str(&format!("{id}. {name}\n"));
    }
    out.push_str(&format!("New observation: {}\n", flatten(observation)));
    out
}

pub const CURRENT_BLOCK_MARKER: &str = "New observation:";

/// Context examples followed by the current state block. Used for both the
/// Action and TreeExploration prompt kinds.
pub fn action_payload(
    rendered_examples: &str,
    goal: &str,
    past_summary: &str,
    subgoals: &[(String, Completion)],
    observation: &str,
) -> String {
    format!(
        "{rendered_examples}\n{CURRENT_BLOCK_MARKER}\nGoal: {goal}\nPast: {past_summary}\nEvaluation: {}\nObservation: {observation}\nAction:",
        evaluation_line(subgoals)
    )
}

/// Record a rejected action on an Action payload so the next attempt can
/// avoid it.
pub fn append_rejection(payload: &str, action: &str, message: &str) -> String {
    format!("{payload}\nRejected action: {action} ({message})")
}

pub fn compare_payload(goal: &str, first_actions: &[&str], second_actions: &[&str]) -> String {
    let mut out = format!("Goal: {goal}\nFirst process:\n");
    for (i, action) in first_actions.iter().enumerate() {
        out.push_str(&format!("{}. {}\n", i + 1, action));
    }
    out.push_str("Second process:\n");
    for (i, action) in second_actions.iter().enumerate() {
        out.push_str(&format!("{}. {}\n", i + 1, action));
    }
    out
}

pub fn final_choice_payload(goal: &str, processes: &[Vec<&str>]) -> String {
    let mut out = format!("Goal: {goal}\n");
    for (i, actions) in processes.iter().enumerate() {
        out.push_str(&format!("Process {}:\n", i + 1));
        for (j, action) in actions.iter().enumerate() {
            out.push_str(&format!("{}. {}\n", j + 1, action));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Readers (used by the rule-based policy)
// ---------------------------------------------------------------------------

/// One rendered context example, as laid out by the retrieval module.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExampleBlock {
    pub past: String,
    pub evaluation: String,
    pub observation: String,
    pub action: String,
}

/// The current state block of an Action/TreeExploration payload.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CurrentBlock {
    pub goal: String,
    pub past: String,
    pub evaluation: String,
    pub observation: String,
    /// Actions the environment already rejected for this step, with the
    /// rejection message.
    pub rejected: Vec<(String, String)>,
}

/// Split an Action/TreeExploration payload back into example blocks and the
/// current block. Returns `None` when the payload does not carry the
/// expected markers.
pub fn read_action_payload(payload: &str) -> Option<(Vec<ExampleBlock>, CurrentBlock)> {
    let marker = format!("\n{CURRENT_BLOCK_MARKER}\n");
    let split = payload.find(&marker)?;
    let examples_part = &payload[..split];
    let current_part = &payload[split + marker.len()..];

    let mut current = CurrentBlock::default();
    let rest = current_part;
    current.goal = line_after(rest, "Goal: ")?;
    current.past = line_after(rest, "Past: ")?;
    current.evaluation = line_after(rest, "Evaluation: ")?;
    let obs_start = rest.find("Observation: ")? + "Observation: ".len();
    let obs_end = rest[obs_start..].find("\nAction:")? + obs_start;
    current.observation = rest[obs_start..obs_end].to_string();
    for line in rest[obs_end..].lines() {
        if let Some(rejected) = line.strip_prefix("Rejected action: ") {
            if let Some(open) = rejected.rfind(" (") {
                let action = rejected[..open].to_string();
                let message = rejected[open + 2..].trim_end_matches(')').to_string();
                current.rejected.push((action, message));
            }
        }
    }

    let mut examples = Vec::new();
    for block in split_numbered_blocks(examples_part) {
        let past = block.strip_prefix("Past: ").map(first_line).unwrap_or_default();
        let evaluation = line_after(&block, "Evaluation: ").unwrap_or_default();
        let obs_start = block.find("Observation: ").map(|p| p + "Observation: ".len());
        let action_pos = block.rfind("\nAction: ");
        if let (Some(obs_start), Some(action_pos)) = (obs_start, action_pos) {
            if obs_start <= action_pos {
                examples.push(ExampleBlock {
                    past,
                    evaluation,
                    observation: block[obs_start..action_pos].to_string(),
                    action: first_line(&block[action_pos + "\nAction: ".len()..]),
                });
            }
        }
    }
    Some((examples, current))
}

fn first_line(text: &str) -> String {
    text.lines().next().unwrap_or_default().trim().to_string()
}

fn line_after(text: &str, prefix: &str) -> Option<String> {
    text.lines()
        .find_map(|l| l.strip_prefix(prefix))
        .map(|l| l.trim().to_string())
}

/// Items of a `1. item` numbered list, flattened one per entry. Multiline
/// items run until the next `N. ` line.
pub fn read_numbered_items(text: &str) -> Vec<String> {
    split_numbered_blocks(text)
        .into_iter()
        .map(|block| block.trim().to_string())
        .collect()
}

fn split_numbered_blocks(text: &str) -> Vec<String> {
    let mut blocks: Vec<String> = Vec::new();
    let mut active = false;
    for line in text.lines() {
        if let Some(rest) = strip_item_number(line) {
            blocks.push(rest.to_string());
            active = true;
        } else if active {
            let block = blocks.last_mut().unwrap();
            block.push('\n');
            block.push_str(line);
        }
    }
    blocks
}

/// Strip a leading `N. ` item number; price-like text (`19.99`) does not
/// count because the dot must be followed by a space.
fn strip_item_number(line: &str) -> Option<&str> {
    let digits = line.bytes().take_while(|b| b.is_ascii_digit()).count();
    if digits == 0 {
        return None;
    }
    let rest = &line[digits..];
    rest.strip_prefix(". ")
}

/// Read the two numbered action lists of a Compare payload.
pub fn read_compare_payload(payload: &str) -> Option<(Vec<String>, Vec<String>)> {
    let first_start = payload.find("First process:\n")?;
    let second_start = payload.find("Second process:\n")?;
    let first = read_numbered_items(&payload[first_start..second_start]);
    let second = read_numbered_items(&payload[second_start..]);
    Some((first, second))
}

/// Read the goal line of any payload that carries one.
pub fn read_goal_line(payload: &str) -> Option<String> {
    line_after(payload, "Goal: ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn action_payload_round_trips() {
        let examples = "1. Past: Searched for lounge pants.\nEvaluation: -\nObservation: [Back to Search]\nPage 1 (Total results: 3)\n[CODE1]\nLounge Pants\n14.99\nAction: click[CODE1]\n";
        let payload = action_payload(
            examples,
            "i need lounge pants",
            "No past actions.",
            &[],
            "[Search]",
        );
        let (blocks, current) = read_action_payload(&payload).unwrap();
        assert_eq!(blocks.len(), 1);
        assert_eq!(blocks[0].action, "click[CODE1]");
        assert!(blocks[0].observation.contains("Page 1 (Total results: 3)"));
        assert_eq!(current.goal, "i need lounge pants");
        assert_eq!(current.observation, "[Search]");
        assert!(current.rejected.is_empty());
    }

    #[test]
    fn rejections_are_readable() {
        let payload = action_payload("", "g", "No past actions.", &[], "obs");
        let payload = append_rejection(&payload, "go to shelf 9", "there is no shelf 9");
        let (_, current) = read_action_payload(&payload).unwrap();
        assert_eq!(
            current.rejected,
            vec![("go to shelf 9".to_string(), "there is no shelf 9".to_string())]
        );
    }

    #[test]
    fn numbered_items_ignore_price_lines() {
        let items = read_numbered_items("1. first item\n19.99\n2. second item\n");
        assert_eq!(items.len(), 2);
        assert!(items[0].contains("19.99"));
        assert_eq!(items[1], "second item");
    }

    #[test]
    fn compare_payload_round_trips() {
        let payload = compare_payload("g", &["a", "b"], &["a", "c"]);
        let (first, second) = read_compare_payload(&payload).unwrap();
        assert_eq!(first, vec!["a", "b"]);
        assert_eq!(second, vec!["a", "c"]);
    }
}
