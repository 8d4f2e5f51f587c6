//! Memory formation: demonstration trajectories become state-action tuples
//! with summarized histories, and each batch gets its goal/observation
//! index from backend-driven clustering.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::llm::parse::{parse_cluster, parse_evaluation, parse_summary, ClusterEntry};
use crate::llm::{complete_parsed, prompts, LlmBackend, LlmRequest, PromptKind, STRICT_FORMAT_SUFFIX};
use crate::memory::{
    BatchMemory, CapacityMeta, GoalTypeId, HistoryInfo, ObsTypeSel, StateActionTuple, Trajectory,
    TupleSource,
};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FormationConfig {
    pub batch_size: usize,
    pub retrieval_k: usize,
    /// Histories summarize at most this many most-recent steps.
    pub summary_max_steps: usize,
    /// Goal types list at most this many member goals as examples.
    pub max_examples_per_type: usize,
}

impl Default for FormationConfig {
    fn default() -> Self {
        FormationConfig {
            batch_size: 50,
            retrieval_k: 5,
            summary_max_steps: 20,
            max_examples_per_type: 5,
        }
    }
}

/// Name of the catch-all type that absorbs items left unassigned after the
/// coverage reprompt.
pub const CATCH_ALL_TYPE: &str = "Other";

/// Summarize an episode prefix into history information. The empty prefix
/// short-circuits to the sentinel without touching the backend; otherwise
/// one Summarization and one Evaluation prompt are issued (each retried
/// once on a format violation).
pub fn summarize_history(
    backend: &dyn LlmBackend,
    goal: &str,
    prefix: &[(String, String)],
    summary_max_steps: usize,
) -> Result<HistoryInfo, Error> {
    if prefix.is_empty() {
        return Ok(HistoryInfo::sentinel());
    }
    let window_start = prefix.len().saturating_sub(summary_max_steps);
    let window = &prefix[window_start..];
    let summary = complete_parsed(
        backend,
        PromptKind::Summarization,
        &prompts::summarization_payload(goal, window),
        parse_summary,
    )?;
    let actions: Vec<&str> = window.iter().map(|(_, a)| a.as_str()).collect();
    let subgoals = complete_parsed(
        backend,
        PromptKind::Evaluation,
        &prompts::evaluation_payload(goal, &actions),
        parse_evaluation,
    )?;
    Ok(HistoryInfo { summary, subgoals })
}

/// Divide a trajectory into one tuple per step. Tuple τ carries the
/// history of the strict prefix 1..τ-1, the step's observation, and its
/// action.
pub fn tuples_from_trajectory(
    backend: &dyn LlmBackend,
    trajectory: &Trajectory,
    config: &FormationConfig,
) -> Result<Vec<StateActionTuple>, Error> {
    let mut prefix: Vec<(String, String)> = Vec::with_capacity(trajectory.len());
    let mut tuples = Vec::with_capacity(trajectory.len());
    for (i, step) in trajectory.steps.iter().enumerate() {
        let history = summarize_history(backend, &trajectory.goal, &prefix, config.summary_max_steps)?;
        tuples.push(StateActionTuple {
            goal: trajectory.goal.clone(),
            history,
            observation: step.observation.clone(),
            action: step.action.clone(),
            source: TupleSource::Demonstration,
            origin_trajectory: trajectory.id.clone(),
            step_index: i + 1,
        });
        prefix.push((step.observation.clone(), step.action.clone()));
    }
    Ok(tuples)
}

/// A validated cluster assignment: every input item belongs to exactly one
/// named type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterLayer {
    /// (type name, member indices into the input list, 0-based).
    pub types: Vec<(String, Vec<usize>)>,
}

/// Cluster numbered items via the backend and repair the result to full
/// coverage: a parse failure or unassigned items trigger one reprompt;
/// whatever is still unassigned lands in the catch-all type. Member ids
/// outside the input range are dropped.
fn cluster_with_repair(
    backend: &dyn LlmBackend,
    kind: PromptKind,
    payload: &str,
    item_count: usize,
) -> Result<ClusterLayer, Error> {
    let first = request_cluster(backend, kind, payload)?;
    let (mut types, mut leftover) = apply_entries(first.as_deref(), item_count);
    if !leftover.is_empty() {
        let retry_payload = format!("{payload}{STRICT_FORMAT_SUFFIX}");
        let second = request_cluster(backend, kind, &retry_payload)?;
        let (retried, retried_leftover) = apply_entries(second.as_deref(), item_count);
        // keep the reprompt only when it covers strictly more
        if retried_leftover.len() < leftover.len() {
            types = retried;
            leftover = retried_leftover;
        }
    }
    if !leftover.is_empty() {
        match types.iter_mut().find(|(name, _)| name == CATCH_ALL_TYPE) {
            Some((_, members)) => members.extend(leftover),
            None => types.push((CATCH_ALL_TYPE.to_string(), leftover)),
        }
    }
    types.retain(|(_, members)| !members.is_empty());
    if types.is_empty() {
        types.push((CATCH_ALL_TYPE.to_string(), (0..item_count).collect()));
    }
    Ok(ClusterLayer { types })
}

fn request_cluster(
    backend: &dyn LlmBackend,
    kind: PromptKind,
    payload: &str,
) -> Result<Option<Vec<ClusterEntry>>, Error> {
    let response = backend.complete(&LlmRequest::new(kind, payload))?;
    Ok(parse_cluster(&response.raw).ok())
}

/// Turn parsed entries into a coverage-checked layer plus leftover items.
fn apply_entries(
    entries: Option<&[ClusterEntry]>,
    item_count: usize,
) -> (Vec<(String, Vec<usize>)>, Vec<usize>) {
    let mut assigned = vec![false; item_count];
    let mut types = Vec::new();
    if let Some(entries) = entries {
        for entry in entries {
            let members: Vec<usize> = entry
                .members
                .iter()
                .filter_map(|&id| {
                    let idx = id as usize - 1;
                    (idx < item_count).then_some(idx)
                })
                .collect();
            for &idx in &members {
                assigned[idx] = true;
            }
            if !members.is_empty() {
                types.push((entry.name.clone(), members));
            }
        }
    }
    let leftover: Vec<usize> =
        assigned.iter().enumerate().filter(|(_, &a)| !a).map(|(i, _)| i).collect();
    (types, leftover)
}

/// Cluster task goals into high-level types (the goal index layer).
pub fn cluster_goals(backend: &dyn LlmBackend, goals: &[String]) -> Result<ClusterLayer, Error> {
    assert!(!goals.is_empty(), "at least one goal required");
    cluster_with_repair(
        backend,
        PromptKind::ClusterGoals,
        &prompts::cluster_goals_payload(goals),
        goals.len(),
    )
}

/// Cluster the distinct observations of one goal type (the observation
/// index layer).
pub fn cluster_observations(
    backend: &dyn LlmBackend,
    goal_type: &str,
    observations: &[String],
) -> Result<ClusterLayer, Error> {
    assert!(!observations.is_empty(), "at least one observation required");
    cluster_with_repair(
        backend,
        PromptKind::ClusterObservations,
        &prompts::cluster_observations_payload(goal_type, observations),
        observations.len(),
    )
}

/// Build one batch memory: extract tuples per trajectory, cluster the batch
/// goals, cluster each goal type's distinct observations, and index every
/// tuple into its cell.
pub fn build_batch_memory(
    backend: &dyn LlmBackend,
    batch: &[Trajectory],
    config: &FormationConfig,
    batch_id: u32,
    capacity: CapacityMeta,
) -> Result<BatchMemory, Error> {
    assert!(!batch.is_empty(), "batch must be nonempty");
    let per_trajectory: Vec<Vec<StateActionTuple>> = batch
        .iter()
        .map(|t| tuples_from_trajectory(backend, t, config))
        .collect::<Result<_, _>>()?;

    let goals: Vec<String> = batch.iter().map(|t| t.goal.clone()).collect();
    let goal_layer = cluster_goals(backend, &goals)?;

    let mut memory = BatchMemory::new(batch_id, capacity);
    for (name, members) in &goal_layer.types {
        let examples: Vec<String> = members
            .iter()
            .take(config.max_examples_per_type)
            .map(|&i| goals[i].clone())
            .collect();
        memory.index_mut().add_goal_type(name, examples);
    }

    for (type_pos, (name, members)) in goal_layer.types.iter().enumerate() {
        let goal_type = (type_pos + 1) as GoalTypeId;
        // distinct observations of this goal type, first occurrence order
        let mut distinct: Vec<String> = Vec::new();
        for &traj_idx in members {
            for tuple in &per_trajectory[traj_idx] {
                if !distinct.contains(&tuple.observation) {
                    distinct.push(tuple.observation.clone());
                }
            }
        }
        let obs_layer = cluster_observations(backend, name, &distinct)?;
        let mut obs_type_of = vec![0u32; distinct.len()];
        for (obs_pos, (obs_name, obs_members)) in obs_layer.types.iter().enumerate() {
            let obs_type = memory.index_mut().add_obs_type(goal_type, obs_name)?;
            debug_assert_eq!(obs_type, (obs_pos + 1) as u32);
            for &obs_idx in obs_members {
                obs_type_of[obs_idx] = obs_type;
            }
        }
        for &traj_idx in members {
            for tuple in &per_trajectory[traj_idx] {
                let obs_idx = distinct
                    .iter()
                    .position(|o| *o == tuple.observation)
                    .expect("observation collected above");
                memory.insert_tuple(
                    tuple.clone(),
                    goal_type,
                    ObsTypeSel::Existing(obs_type_of[obs_idx]),
                )?;
            }
        }
    }
    Ok(memory)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{FallbackPolicy, FixtureEntry, ScriptedBackend};
    use crate::memory::TrajectoryStep;

    fn fixture(kind: PromptKind, pattern: &str, response: &str) -> FixtureEntry {
        FixtureEntry { kind, pattern: pattern.into(), response: response.into() }
    }

    #[test]
    fn empty_prefix_returns_sentinel_without_backend() {
        let backend = ScriptedBackend::new(Vec::new(), FallbackPolicy::Error);
        let info = summarize_history(&backend, "cool some apple and put it in countertop.", &[], 20)
            .unwrap();
        assert_eq!(info.summary, "No past actions.");
        assert!(info.subgoals.iter().all(|(_, s)| *s == crate::llm::parse::Completion::Incomplete));
    }

    #[test]
    fn prefix_is_summarized_through_fixtures() {
        let backend = ScriptedBackend::new(
            vec![
                fixture(
                    PromptKind::Summarization,
                    "go to sinkbasin 1",
                    "Summary: Looked and went to sink basin 1.",
                ),
                fixture(
                    PromptKind::Evaluation,
                    "",
                    "Subgoal 1: take apple from somewhere -Incomplete Subgoal 2: cool apple -Incomplete",
                ),
            ],
            FallbackPolicy::Error,
        );
        let prefix = vec![
            ("You are in the middle of a room.".to_string(), "look".to_string()),
            ("You see nothing.".to_string(), "go to sinkbasin 1".to_string()),
        ];
        let info =
            summarize_history(&backend, "cool some apple and put it in countertop.", &prefix, 20)
                .unwrap();
        assert_eq!(info.summary, "Looked and went to sink basin 1.");
        assert_eq!(info.subgoals.len(), 2);
    }

    #[test]
    fn evaluation_marks_completed_subgoal() {
        let backend = ScriptedBackend::new(
            vec![
                fixture(PromptKind::Summarization, "", "Summary: Cooled the apple."),
                fixture(
                    PromptKind::Evaluation,
                    "cool apple 1 with fridge 1",
                    "Subgoal 1: take apple from somewhere -Complete Subgoal 2: cool apple -complete",
                ),
            ],
            FallbackPolicy::Error,
        );
        let prefix = vec![(
            "The fridge 1 is closed.".to_string(),
            "cool apple 1 with fridge 1".to_string(),
        )];
        let info =
            summarize_history(&backend, "cool some apple and put it in countertop.", &prefix, 20)
                .unwrap();
        assert_eq!(info.subgoals[1], ("cool apple".to_string(), crate::llm::parse::Completion::Complete));
    }

    fn demo_trajectory(len: usize) -> Trajectory {
        Trajectory {
            id: "t1".into(),
            goal: "cool some apple and put it in countertop.".into(),
            steps: (0..len)
                .map(|i| TrajectoryStep {
                    observation: format!("observation {i}"),
                    action: format!("action {i}"),
                })
                .collect(),
        }
    }

    #[test]
    fn one_tuple_per_step_with_prefix_histories() {
        let backend = ScriptedBackend::rule_based();
        let config = FormationConfig::default();
        let tuples = tuples_from_trajectory(&backend, &demo_trajectory(5), &config).unwrap();
        assert_eq!(tuples.len(), 5);
        assert_eq!(tuples[0].history.summary, "No past actions.");
        assert_eq!(tuples[0].step_index, 1);
        assert!(tuples[1].history.summary.contains("action 0"));
        // histories never contain the current observation
        for tuple in &tuples {
            assert!(!tuple.history.summary.contains(&tuple.observation));
        }
    }

    #[test]
    fn goal_clustering_covers_every_goal() {
        let backend = ScriptedBackend::new(
            vec![fixture(
                PromptKind::ClusterGoals,
                "",
                "High-level Type1: Footwear [1][3]\nHigh-level Type2: Clothing [2][4]",
            )],
            FallbackPolicy::Error,
        );
        let goals: Vec<String> = vec![
            "i need running shoes.".into(),
            "i need a fleece jacket.".into(),
            "i need hiking boots.".into(),
            "i need lounge pants.".into(),
        ];
        let layer = cluster_goals(&backend, &goals).unwrap();
        assert_eq!(
            layer.types,
            vec![
                ("Footwear".to_string(), vec![0, 2]),
                ("Clothing".to_string(), vec![1, 3]),
            ]
        );
    }

    #[test]
    fn single_goal_forces_single_type() {
        let backend = ScriptedBackend::rule_based();
        let layer = cluster_goals(&backend, &["put a mug in shelf.".to_string()]).unwrap();
        assert_eq!(layer.types.len(), 1);
        assert_eq!(layer.types[0].1, vec![0]);
    }

    #[test]
    fn unassigned_goal_lands_in_catch_all_after_reprompt() {
        // fixture keeps omitting goal 4 even on the reprompt
        let backend = ScriptedBackend::new(
            vec![fixture(
                PromptKind::ClusterGoals,
                "",
                "High-level Type1: Footwear [1][3]\nHigh-level Type2: Clothing [2]",
            )],
            FallbackPolicy::Error,
        );
        let goals: Vec<String> = (1..=4).map(|i| format!("goal number {i}")).collect();
        let layer = cluster_goals(&backend, &goals).unwrap();
        assert_eq!(layer.types.last().unwrap(), &(CATCH_ALL_TYPE.to_string(), vec![3]));
    }

    #[test]
    fn observation_clustering_bookkeeping_matches_input() {
        let backend = ScriptedBackend::new(
            vec![fixture(
                PromptKind::ClusterObservations,
                "",
                "High-level Type1: kitchen room [1][2]\nHigh-level Type2: bathroom [3]",
            )],
            FallbackPolicy::Error,
        );
        let observations: Vec<String> = vec![
            "On the countertop 1, you see a mug 1.".into(),
            "The fridge 1 is closed.".into(),
            "On the sinkbasin 1, you see a soapbar 2.".into(),
        ];
        let layer = cluster_observations(&backend, "cool tasks", &observations).unwrap();
        let assigned: usize = layer.types.iter().map(|(_, m)| m.len()).sum();
        assert_eq!(assigned, observations.len());
    }

    #[test]
    fn batch_memory_conserves_tuples_and_indexes_all() {
        let backend = ScriptedBackend::rule_based();
        let config = FormationConfig::default();
        let batch = vec![
            Trajectory {
                id: "t1".into(),
                goal: "cool some apple and put it in countertop.".into(),
                steps: (0..3)
                    .map(|i| TrajectoryStep {
                        observation: format!("You arrive at the cabinet {i}. You see nothing."),
                        action: format!("go to cabinet {}", i + 1),
                    })
                    .collect(),
            },
            Trajectory {
                id: "t2".into(),
                goal: "heat some bread and put it in diningtable.".into(),
                steps: (0..4)
                    .map(|i| TrajectoryStep {
                        observation: format!("You arrive at the drawer {i}. You see nothing."),
                        action: format!("go to drawer {}", i + 1),
                    })
                    .collect(),
            },
        ];
        let capacity = CapacityMeta { total_trajectories: 2, batch_size: 2, batch_count: 1 };
        let memory = build_batch_memory(&backend, &batch, &config, 1, capacity).unwrap();
        assert_eq!(memory.len(), 7);
        let indexed: usize = memory.index().cells().values().map(|c| c.len()).sum();
        assert_eq!(indexed, 7);
        // every goal type's total matches its cells
        for goal_type in &memory.index().goal_types {
            let cell_sum: usize = memory
                .index()
                .cells()
                .iter()
                .filter(|((g, _), _)| *g == goal_type.id)
                .map(|(_, c)| c.len())
                .sum();
            assert_eq!(memory.index().goal_type_total(goal_type.id), cell_sum);
        }
    }

    #[test]
    fn building_twice_yields_identical_memories() {
        let backend = ScriptedBackend::rule_based();
        let config = FormationConfig::default();
        let batch = vec![demo_trajectory(3)];
        let capacity = CapacityMeta { total_trajectories: 1, batch_size: 1, batch_count: 1 };
        let a = build_batch_memory(&backend, &batch, &config, 1, capacity).unwrap();
        let b = build_batch_memory(&backend, &batch, &config, 1, capacity).unwrap();
        assert_eq!(a.index(), b.index());
        assert_eq!(a.tuples().collect::<Vec<_>>(), b.tuples().collect::<Vec<_>>());
    }
}
