//! The episode loop: summarize history, retrieve context, generate the
//! next action, and step the environment until it terminates or a budget
//! runs out; plus the cross-batch final choice.

use serde::{Deserialize, Serialize};

use crate::env::Environment;
use crate::error::{EnvError, Error};
use crate::formation::{summarize_history, FormationConfig};
use crate::llm::parse::parse_classification;
use crate::llm::{prompts, LlmBackend, LlmRequest, PromptKind, STRICT_FORMAT_SUFFIX};
use crate::memory::{BatchMemory, HistoryInfo};
use crate::retrieval::{retrieve_context, ContextPrompt};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AgentConfig {
    pub max_steps: usize,
    pub invalid_action_retries: usize,
    pub retrieval_k: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig { max_steps: 50, invalid_action_retries: 3, retrieval_k: 5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GoalReached,
    StepLimit,
    InvalidActionLimit,
}

/// One executed step with the history the agent acted under.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessStep {
    pub observation: String,
    pub action: String,
    pub history: HistoryInfo,
}

/// A complete decision process: the goal, the executed steps, and the
/// terminal reward when the environment emitted one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionProcess {
    pub goal: String,
    pub steps: Vec<ProcessStep>,
    pub reward: Option<f64>,
    pub batch_id: u32,
    pub terminated: Termination,
}

impl DecisionProcess {
    pub fn actions(&self) -> Vec<&str> {
        self.steps.iter().map(|s| s.action.as_str()).collect()
    }

    pub fn reward_or_zero(&self) -> f64 {
        self.reward.unwrap_or(0.0)
    }
}

/// Ask the backend for the next action given the rendered context and the
/// current state block. Whitespace-only responses are an error.
pub fn next_action(
    backend: &dyn LlmBackend,
    payload: &str,
) -> Result<String, Error> {
    let response = backend.complete(&LlmRequest::new(PromptKind::Action, payload))?;
    let text = response.raw.trim();
    let text = text.strip_prefix("Action:").map(str::trim).unwrap_or(text);
    let first_line = text.lines().next().unwrap_or("").trim();
    if first_line.is_empty() {
        return Err(Error::EmptyAction);
    }
    Ok(first_line.to_string())
}

pub(crate) fn action_payload_for(
    context: &ContextPrompt,
    goal: &str,
    history: &HistoryInfo,
    observation: &str,
) -> String {
    prompts::action_payload(
        &context.rendered,
        goal,
        &history.summary,
        &history.subgoals,
        observation,
    )
}

/// Run one full episode on an already-reset environment against one batch
/// memory. Invalid actions are re-prompted with the rejection message
/// appended, up to the configured budget; exhausting it terminates the
/// episode with the final rejected action recorded.
pub fn run_episode(
    backend: &dyn LlmBackend,
    env: &mut dyn Environment,
    memory: &BatchMemory,
    formation: &FormationConfig,
    config: &AgentConfig,
) -> Result<DecisionProcess, Error> {
    assert!(config.max_steps >= 1);
    let goal = env.goal().to_string();
    let mut steps: Vec<ProcessStep> = Vec::new();
    let mut prefix: Vec<(String, String)> = Vec::new();

    loop {
        let observation = env.observation().to_string();
        let history = summarize_history(backend, &goal, &prefix, formation.summary_max_steps)?;
        let context = retrieve_context(backend, memory, &goal, &observation, config.retrieval_k)?;
        let mut payload = action_payload_for(&context, &goal, &history, &observation);
        let mut action = next_action(backend, &payload)?;

        let mut accepted = None;
        for attempt in 0..=config.invalid_action_retries {
            match env.step(&action) {
                Ok(outcome) => {
                    accepted = Some(outcome);
                    break;
                }
                Err(EnvError::InvalidAction(message)) => {
                    if attempt == config.invalid_action_retries {
                        break;
                    }
                    payload = prompts::append_rejection(&payload, &action, &message);
                    action = next_action(backend, &payload)?;
                }
                Err(other) => return Err(other.into()),
            }
        }

        let Some(outcome) = accepted else {
            // budget exhausted: record the final rejected action
            steps.push(ProcessStep { observation, action, history });
            return Ok(DecisionProcess {
                goal,
                steps,
                reward: Some(env.reward().unwrap_or(0.0)),
                batch_id: memory.batch_id,
                terminated: Termination::InvalidActionLimit,
            });
        };

        steps.push(ProcessStep {
            observation: observation.clone(),
            action: action.clone(),
            history,
        });
        prefix.push((observation, action));

        if outcome.done {
            return Ok(DecisionProcess {
                goal,
                steps,
                reward: outcome.reward,
                batch_id: memory.batch_id,
                terminated: Termination::GoalReached,
            });
        }
        if steps.len() >= config.max_steps {
            return Ok(DecisionProcess {
                goal,
                steps,
                reward: Some(env.reward().unwrap_or(0.0)),
                batch_id: memory.batch_id,
                terminated: Termination::StepLimit,
            });
        }
    }
}

/// Choose the final process across batches. Known rewards short-circuit to
/// the maximum (ties to the lowest batch id); otherwise the backend picks
/// via the final-choice prompt, with a deterministic fallback on invalid
/// answers (most steps, then lowest batch id).
pub fn choose_final(
    backend: &dyn LlmBackend,
    processes: &[DecisionProcess],
) -> Result<DecisionProcess, Error> {
    if processes.is_empty() {
        return Err(Error::EmptyInput);
    }
    if processes.len() == 1 {
        return Ok(processes[0].clone());
    }
    if processes.iter().all(|p| p.reward.is_some()) {
        let best = processes
            .iter()
            .max_by(|a, b| {
                a.reward_or_zero()
                    .partial_cmp(&b.reward_or_zero())
                    .expect("rewards are finite")
                    .then_with(|| b.batch_id.cmp(&a.batch_id))
            })
            .expect("nonempty");
        return Ok(best.clone());
    }

    let goal = &processes[0].goal;
    let listed: Vec<Vec<&str>> = processes.iter().map(|p| p.actions()).collect();
    let payload = prompts::final_choice_payload(goal, &listed);
    for attempt in 0..2 {
        let payload = if attempt == 0 {
            payload.clone()
        } else {
            format!("{payload}{STRICT_FORMAT_SUFFIX}")
        };
        let response = backend.complete(&LlmRequest::new(PromptKind::FinalChoice, payload))?;
        if let Ok(index) = parse_classification(&response.raw) {
            if let Some(process) = processes.get(index as usize - 1) {
                return Ok(process.clone());
            }
        }
    }
    // deterministic fallback: among the longest processes, the lowest batch
    let most_steps = processes.iter().map(|p| p.steps.len()).max().unwrap_or(0);
    let fallback = processes
        .iter()
        .filter(|p| p.steps.len() == most_steps)
        .min_by_key(|p| p.batch_id)
        .expect("nonempty");
    Ok(fallback.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{FallbackPolicy, FixtureEntry, ScriptedBackend};

    fn process(batch_id: u32, reward: Option<f64>, actions: &[&str]) -> DecisionProcess {
        DecisionProcess {
            goal: "g".into(),
            steps: actions
                .iter()
                .map(|a| ProcessStep {
                    observation: "o".into(),
                    action: a.to_string(),
                    history: HistoryInfo::sentinel(),
                })
                .collect(),
            reward,
            batch_id,
            terminated: Termination::GoalReached,
        }
    }

    #[test]
    fn single_process_is_returned_as_is() {
        let backend = ScriptedBackend::new(Vec::new(), FallbackPolicy::Error);
        let only = process(3, Some(0.5), &["a"]);
        assert_eq!(choose_final(&backend, &[only.clone()]).unwrap(), only);
    }

    #[test]
    fn known_rewards_pick_argmax() {
        let backend = ScriptedBackend::new(Vec::new(), FallbackPolicy::Error);
        let processes = vec![
            process(1, Some(0.5), &["a"]),
            process(2, Some(1.0), &["b"]),
            process(3, Some(0.75), &["c"]),
        ];
        assert_eq!(choose_final(&backend, &processes).unwrap().batch_id, 2);
    }

    #[test]
    fn reward_ties_break_to_lowest_batch() {
        let backend = ScriptedBackend::new(Vec::new(), FallbackPolicy::Error);
        let processes = vec![process(2, Some(0.75), &["a"]), process(1, Some(0.75), &["b"])];
        assert_eq!(choose_final(&backend, &processes).unwrap().batch_id, 1);
    }

    #[test]
    fn unknown_rewards_use_the_backend() {
        let backend = ScriptedBackend::new(
            vec![FixtureEntry {
                kind: crate::llm::PromptKind::FinalChoice,
                pattern: "".into(),
                response: "[2]: second looks right".into(),
            }],
            FallbackPolicy::Error,
        );
        let processes = vec![process(1, None, &["a"]), process(2, None, &["b", "c"])];
        assert_eq!(choose_final(&backend, &processes).unwrap().batch_id, 2);
    }

    #[test]
    fn invalid_choice_falls_back_to_longest_then_lowest_batch() {
        let backend = ScriptedBackend::new(
            vec![FixtureEntry {
                kind: crate::llm::PromptKind::FinalChoice,
                pattern: "".into(),
                response: "[9]: bogus".into(),
            }],
            FallbackPolicy::Error,
        );
        let processes = vec![
            process(1, None, &["a"]),
            process(2, None, &["b", "c"]),
            process(3, None, &["d", "e"]),
        ];
        assert_eq!(choose_final(&backend, &processes).unwrap().batch_id, 2);
    }

    #[test]
    fn empty_input_is_an_error() {
        let backend = ScriptedBackend::new(Vec::new(), FallbackPolicy::Error);
        assert!(matches!(choose_final(&backend, &[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn whitespace_action_is_rejected() {
        let backend = ScriptedBackend::new(
            vec![FixtureEntry {
                kind: crate::llm::PromptKind::Action,
                pattern: "".into(),
                response: "   \n  ".into(),
            }],
            FallbackPolicy::Error,
        );
        assert!(matches!(next_action(&backend, "payload"), Err(Error::EmptyAction)));
    }
}
