//! Memory refinement: tree exploration over action proposals scored by
//! confidence, beam-style pruning to the top-n paths, comparison of the
//! best found process against the ground process to locate the key step,
//! and insertion of the valuable suffix back into the batch memory.

use serde::{Deserialize, Serialize};

use crate::agent::{DecisionProcess, ProcessStep, Termination};
use crate::env::{Environment, Snapshot};
use crate::error::{Error, ParseError};
use crate::formation::{summarize_history, FormationConfig};
use crate::llm::parse::{parse_key_step, parse_proposals};
use crate::llm::{prompts, LlmBackend, LlmRequest, PromptKind, STRICT_FORMAT_SUFFIX};
use crate::memory::{BatchMemory, ObsTypeSel, StateActionTuple, TupleSource};
use crate::retrieval::{classify_goal, classify_observation, retrieve_context, ContextPrompt};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ExplorerConfig {
    /// Paths kept per depth (the paper's n).
    pub top_n: usize,
    /// Concentration threshold θ: a retrieved-action frequency at or above
    /// it selects the majority action instead of branching.
    pub concentration_threshold: f64,
    pub max_depth: usize,
    /// Children kept per branch (highest confidence first).
    pub max_children: usize,
}

impl Default for ExplorerConfig {
    fn default() -> Self {
        ExplorerConfig {
            top_n: 4,
            concentration_threshold: 0.7,
            max_depth: 16,
            max_children: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionProposal {
    pub action: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeDecision {
    /// The retrieved tuples concentrate on one action; take it with
    /// implicit confidence 1.
    MajorityAction(String),
    /// Branch over backend proposals (already truncated and renormalized).
    Branch(Vec<ActionProposal>),
}

/// One in-flight exploration path: a partial process, the per-node
/// confidences, and the snapshot to resume from.
#[derive(Debug, Clone)]
pub struct ExplorationPath {
    pub steps: Vec<ProcessStep>,
    pub node_confidences: Vec<f64>,
    pub confidence: f64,
    pub snapshot: Snapshot,
    pub done: bool,
    pub reward: Option<f64>,
    trace_node: usize,
}

impl ExplorationPath {
    fn actions(&self) -> Vec<String> {
        self.steps.iter().map(|s| s.action.clone()).collect()
    }
}

/// Frequency of each distinct action among retrieved tuples, summing to 1.
/// Exact-text matching, deterministic order.
pub fn action_distribution(tuples: &[StateActionTuple]) -> Result<Vec<(String, f64)>, Error> {
    if tuples.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut counts: Vec<(String, usize)> = Vec::new();
    for tuple in tuples {
        match counts.iter_mut().find(|(a, _)| *a == tuple.action) {
            Some((_, n)) => *n += 1,
            None => counts.push((tuple.action.clone(), 1)),
        }
    }
    let total = tuples.len() as f64;
    Ok(counts.into_iter().map(|(a, n)| (a, n as f64 / total)).collect())
}

/// The most frequent action; frequency ties break to the lexicographically
/// smallest action text.
fn majority_action(distribution: &[(String, f64)]) -> (String, f64) {
    distribution
        .iter()
        .map(|(a, f)| (std::cmp::Reverse(ordered(*f)), a.clone()))
        .min()
        .map(|(freq, action)| (action, freq.0 .0))
        .expect("distribution nonempty")
}

#[derive(PartialEq, PartialOrd)]
struct OrderedF64(f64);
impl Eq for OrderedF64 {}
#[allow(clippy::derive_ord_xor_partial_ord)]
impl Ord for OrderedF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.partial_cmp(other).expect("finite")
    }
}
fn ordered(f: f64) -> OrderedF64 {
    OrderedF64(f)
}

/// Decide how to expand one node: select the majority action when the
/// retrieved distribution is concentrated, otherwise ask for proposals and
/// branch. An all-zero proposal set is rescued to the majority action.
pub fn select_or_branch(
    backend: &dyn LlmBackend,
    goal: &str,
    history: &crate::memory::HistoryInfo,
    observation: &str,
    context: &ContextPrompt,
    config: &ExplorerConfig,
) -> Result<NodeDecision, Error> {
    let distribution = if context.tuples.is_empty() {
        Vec::new()
    } else {
        let distribution = action_distribution(&context.tuples)?;
        let (action, frequency) = majority_action(&distribution);
        if frequency >= config.concentration_threshold {
            return Ok(NodeDecision::MajorityAction(action));
        }
        distribution
    };

    let payload = prompts::action_payload(
        &context.rendered,
        goal,
        &history.summary,
        &history.subgoals,
        observation,
    );
    let mut proposals = None;
    for attempt in 0..2 {
        let payload = if attempt == 0 {
            payload.clone()
        } else {
            format!("{payload}{STRICT_FORMAT_SUFFIX}")
        };
        let response = backend.complete(&LlmRequest::new(PromptKind::TreeExploration, payload))?;
        match parse_proposals(&response.raw) {
            Ok(parsed) => {
                proposals = Some(parsed);
                break;
            }
            Err(ParseError::NoValidProposal) => {
                // deterministic rescue: fall back to the strongest tuple action
                return if distribution.is_empty() {
                    Err(ParseError::NoValidProposal.into())
                } else {
                    Ok(NodeDecision::MajorityAction(majority_action(&distribution).0))
                };
            }
            Err(err) => {
                if attempt == 1 {
                    return Err(err.into());
                }
            }
        }
    }
    let proposals = proposals.expect("set on success");

    // keep the max_children highest-confidence proposals, stable on ties,
    // then renormalize
    let mut order: Vec<usize> = (0..proposals.len()).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(ordered(proposals[i].1)), i));
    order.truncate(config.max_children);
    order.sort_unstable();
    let kept: Vec<(String, f64)> = order.into_iter().map(|i| proposals[i].clone()).collect();
    let sum: f64 = kept.iter().map(|(_, c)| c).sum();
    Ok(NodeDecision::Branch(
        kept.into_iter()
            .map(|(action, confidence)| ActionProposal { action, confidence: confidence / sum })
            .collect(),
    ))
}

/// The product of per-node confidences; the empty product is 1.
pub fn path_confidence(node_confidences: &[f64]) -> f64 {
    node_confidences.iter().product()
}

/// Keep the `top_n` highest-confidence live paths (ties break to the
/// lexicographically smaller action sequence). Completed paths are exempt
/// and always carried over.
pub fn prune_frontier(paths: Vec<ExplorationPath>, top_n: usize) -> Vec<ExplorationPath> {
    prune_frontier_traced(paths, top_n).0
}

/// As [`prune_frontier`], also returning the pruned paths for tracing.
fn prune_frontier_traced(
    paths: Vec<ExplorationPath>,
    top_n: usize,
) -> (Vec<ExplorationPath>, Vec<ExplorationPath>) {
    let (done, mut live): (Vec<_>, Vec<_>) = paths.into_iter().partition(|p| p.done);
    live.sort_by(|a, b| {
        b.confidence
            .partial_cmp(&a.confidence)
            .expect("confidences are finite")
            .then_with(|| a.actions().cmp(&b.actions()))
    });
    let pruned = live.split_off(top_n.min(live.len()));
    let mut kept = done;
    kept.extend(live);
    (kept, pruned)
}

/// A node of the emitted exploration trace.
#[derive(Debug, Clone, Serialize)]
pub struct TraceNode {
    pub action: String,
    pub confidence: f64,
    pub path_confidence: f64,
    pub pruned: bool,
    pub children: Vec<TraceNode>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExplorationOutcome {
    #[serde(skip)]
    pub processes: Vec<DecisionProcess>,
    pub tree: Vec<TraceNode>,
}

// internal arena node, flattened into TraceNode at the end
struct ArenaNode {
    action: String,
    confidence: f64,
    path_confidence: f64,
    pruned: bool,
    parent: Option<usize>,
    children: Vec<usize>,
}

/// Breadth-first exploration from the environment's current state. Each
/// live path expands via [`select_or_branch`]; the frontier is pruned to
/// `top_n` after every depth. Returns up to `top_n` finished processes
/// (highest reward first) plus the exploration tree.
pub fn explore(
    backend: &dyn LlmBackend,
    env: &mut dyn Environment,
    memory: &BatchMemory,
    formation: &FormationConfig,
    config: &ExplorerConfig,
    retrieval_k: usize,
) -> Result<ExplorationOutcome, Error> {
    let goal = env.goal().to_string();
    let mut arena: Vec<ArenaNode> = Vec::new();

    let root = ExplorationPath {
        steps: Vec::new(),
        node_confidences: Vec::new(),
        confidence: 1.0,
        snapshot: env.snapshot(),
        done: env.done(),
        reward: env.reward(),
        trace_node: usize::MAX,
    };
    let mut frontier = vec![root];

    for _depth in 0..config.max_depth {
        if frontier.iter().all(|p| p.done) {
            break;
        }
        let mut next: Vec<ExplorationPath> = Vec::new();
        for path in frontier {
            if path.done {
                next.push(path);
                continue;
            }
            env.restore(&path.snapshot)?;
            let observation = env.observation().to_string();
            let prefix: Vec<(String, String)> =
                path.steps.iter().map(|s| (s.observation.clone(), s.action.clone())).collect();
            let history = summarize_history(backend, &goal, &prefix, formation.summary_max_steps)?;
            let context = retrieve_context(backend, memory, &goal, &observation, retrieval_k)?;
            let children = match select_or_branch(
                backend,
                &goal,
                &history,
                &observation,
                &context,
                config,
            )? {
                NodeDecision::MajorityAction(action) => {
                    vec![ActionProposal { action, confidence: 1.0 }]
                }
                NodeDecision::Branch(proposals) => proposals,
            };
            for proposal in children {
                env.restore(&path.snapshot)?;
                let outcome = match env.step(&proposal.action) {
                    Ok(outcome) => outcome,
                    Err(crate::error::EnvError::InvalidAction(_)) => continue,
                    Err(other) => return Err(other.into()),
                };
                let mut node_confidences = path.node_confidences.clone();
                node_confidences.push(proposal.confidence);
                let confidence = path_confidence(&node_confidences);
                let node_index = arena.len();
                arena.push(ArenaNode {
                    action: proposal.action.clone(),
                    confidence: proposal.confidence,
                    path_confidence: confidence,
                    pruned: false,
                    parent: (path.trace_node != usize::MAX).then_some(path.trace_node),
                    children: Vec::new(),
                });
                if let Some(parent) = arena[node_index].parent {
                    arena[parent].children.push(node_index);
                }
                let mut steps = path.steps.clone();
                steps.push(ProcessStep {
                    observation: observation.clone(),
                    action: proposal.action,
                    history: history.clone(),
                });
                next.push(ExplorationPath {
                    steps,
                    node_confidences,
                    confidence,
                    snapshot: env.snapshot(),
                    done: outcome.done,
                    reward: outcome.reward,
                    trace_node: node_index,
                });
            }
        }
        let (kept, pruned) = prune_frontier_traced(next, config.top_n);
        for victim in &pruned {
            if victim.trace_node != usize::MAX {
                arena[victim.trace_node].pruned = true;
            }
        }
        frontier = kept;
    }

    // finalize processes: finished paths keep their terminal reward;
    // unfinished ones are cut off at the depth limit
    let mut processes: Vec<(DecisionProcess, f64, Vec<String>)> = Vec::new();
    for path in frontier {
        if path.steps.is_empty() {
            continue;
        }
        let (reward, terminated) = if path.done {
            (path.reward, Termination::GoalReached)
        } else {
            env.restore(&path.snapshot)?;
            (Some(env.reward().unwrap_or(0.0)), Termination::StepLimit)
        };
        let actions = path.actions();
        processes.push((
            DecisionProcess {
                goal: goal.clone(),
                steps: path.steps,
                reward: reward.or(Some(0.0)),
                batch_id: memory.batch_id,
                terminated,
            },
            path.confidence,
            actions,
        ));
    }
    processes.sort_by(|a, b| {
        b.0.reward_or_zero()
            .partial_cmp(&a.0.reward_or_zero())
            .expect("rewards are finite")
            .then_with(|| b.1.partial_cmp(&a.1).expect("confidences are finite"))
            .then_with(|| a.2.cmp(&b.2))
    });
    processes.truncate(config.top_n);

    let tree = arena_to_tree(&arena);
    Ok(ExplorationOutcome { processes: processes.into_iter().map(|(p, _, _)| p).collect(), tree })
}

fn arena_to_tree(arena: &[ArenaNode]) -> Vec<TraceNode> {
    fn build(arena: &[ArenaNode], index: usize) -> TraceNode {
        let node = &arena[index];
        TraceNode {
            action: node.action.clone(),
            confidence: node.confidence,
            path_confidence: node.path_confidence,
            pruned: node.pruned,
            children: node.children.iter().map(|&c| build(arena, c)).collect(),
        }
    }
    arena
        .iter()
        .enumerate()
        .filter(|(_, n)| n.parent.is_none())
        .map(|(i, _)| build(arena, i))
        .collect()
}

/// Locate the key decision step of `best` by comparing it against `ground`
/// via the backend; out-of-range and unparseable answers fall back to the
/// first index where the action sequences differ. Total by construction.
pub fn find_key_step(
    backend: &dyn LlmBackend,
    best: &DecisionProcess,
    ground: &DecisionProcess,
) -> usize {
    debug_assert!(best.reward_or_zero() > ground.reward_or_zero());
    let payload = prompts::compare_payload(&best.goal, &best.actions(), &ground.actions());
    for attempt in 0..2 {
        let payload = if attempt == 0 {
            payload.clone()
        } else {
            format!("{payload}{STRICT_FORMAT_SUFFIX}")
        };
        let Ok(response) = backend.complete(&LlmRequest::new(PromptKind::Compare, payload)) else {
            break;
        };
        if let Ok(step) = parse_key_step(&response.raw) {
            if step >= 1 && step <= best.steps.len() {
                return step;
            }
        }
    }
    divergence_step(best, ground)
}

/// First step at which the two action sequences differ (1-based), clamped
/// into the best process.
fn divergence_step(best: &DecisionProcess, ground: &DecisionProcess) -> usize {
    let best_actions = best.actions();
    let ground_actions = ground.actions();
    for (i, (a, b)) in best_actions.iter().zip(ground_actions.iter()).enumerate() {
        if a != b {
            return i + 1;
        }
    }
    let after_common = best_actions.len().min(ground_actions.len()) + 1;
    after_common.clamp(1, best.steps.len().max(1))
}

/// Insert the suffix of `best` from the key step onward into the batch
/// memory as exploration tuples, classifying each against the existing
/// index. No-op unless `best` is strictly better than `ground`. Returns
/// the number of tuples actually added (duplicates are skipped).
pub fn enhance_memory(
    backend: &dyn LlmBackend,
    memory: &mut BatchMemory,
    best: &DecisionProcess,
    ground: &DecisionProcess,
    key_step: usize,
) -> Result<usize, Error> {
    assert!(key_step >= 1 && key_step <= best.steps.len(), "key step within the best process");
    if best.reward_or_zero() <= ground.reward_or_zero() {
        return Ok(0);
    }
    let goal_type = classify_goal(backend, memory, &best.goal)?;
    let mut added = 0;
    for (offset, step) in best.steps[key_step - 1..].iter().enumerate() {
        let has_obs_types = memory
            .index()
            .goal_type(goal_type)
            .is_some_and(|g| !g.obs_types.is_empty());
        let obs_type = if has_obs_types {
            ObsTypeSel::Existing(classify_observation(
                backend,
                memory,
                goal_type,
                &step.observation,
            )?)
        } else {
            ObsTypeSel::NewType
        };
        let tuple = StateActionTuple {
            goal: best.goal.clone(),
            history: step.history.clone(),
            observation: step.observation.clone(),
            action: step.action.clone(),
            source: TupleSource::Exploration,
            origin_trajectory: format!("explore:{}", best.goal),
            step_index: key_step + offset,
        };
        if let crate::memory::InsertOutcome::Inserted(_) =
            memory.insert_tuple(tuple, goal_type, obs_type)?
        {
            added += 1;
        }
    }
    Ok(added)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::Termination;
    use crate::llm::{FallbackPolicy, FixtureEntry, ScriptedBackend};
    use crate::memory::HistoryInfo;

    fn tuple_with_action(action: &str) -> StateActionTuple {
        StateActionTuple {
            goal: "g".into(),
            history: HistoryInfo::sentinel(),
            observation: "o".into(),
            action: action.into(),
            source: TupleSource::Demonstration,
            origin_trajectory: "t".into(),
            step_index: 1,
        }
    }

    #[test]
    fn distribution_counts_exact_text() {
        let tuples: Vec<_> = ["a", "a", "a", "b"].iter().map(|a| tuple_with_action(a)).collect();
        let dist = action_distribution(&tuples).unwrap();
        assert_eq!(dist, vec![("a".to_string(), 0.75), ("b".to_string(), 0.25)]);
        let single = action_distribution(&[tuple_with_action("a")]).unwrap();
        assert_eq!(single, vec![("a".to_string(), 1.0)]);
        assert!(matches!(action_distribution(&[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn empty_product_is_one() {
        assert_eq!(path_confidence(&[]), 1.0);
        assert_eq!(path_confidence(&[0.6, 0.5]), 0.3);
        assert_eq!(path_confidence(&[1.0, 1.0, 0.4]), 0.4);
    }

    fn path(confidence_parts: &[f64], actions: &[&str], done: bool) -> ExplorationPath {
        let mut env = crate::env::build(crate::env::EnvKind::Toyhouse, 1);
        let goal = crate::env::expert::sample_goals(crate::env::EnvKind::Toyhouse, 1, 1)[0].clone();
        env.reset(&goal, 1).unwrap();
        ExplorationPath {
            steps: actions
                .iter()
                .map(|a| ProcessStep {
                    observation: "o".into(),
                    action: a.to_string(),
                    history: HistoryInfo::sentinel(),
                })
                .collect(),
            node_confidences: confidence_parts.to_vec(),
            confidence: path_confidence(confidence_parts),
            snapshot: env.snapshot(),
            done,
            reward: done.then_some(1.0),
            trace_node: usize::MAX,
        }
    }

    #[test]
    fn pruning_keeps_top_n_by_confidence() {
        let confidences = [0.3, 0.25, 0.2, 0.1, 0.1, 0.05];
        let paths: Vec<_> = confidences
            .iter()
            .enumerate()
            .map(|(i, &c)| path(&[c], &[&format!("a{i}")], false))
            .collect();
        let kept = prune_frontier(paths, 4);
        assert_eq!(kept.len(), 4);
        let kept_conf: Vec<f64> = kept.iter().map(|p| p.confidence).collect();
        assert_eq!(kept_conf, vec![0.3, 0.25, 0.2, 0.1]);
    }

    #[test]
    fn pruning_keeps_everything_when_under_n() {
        let paths = vec![path(&[0.5], &["a"], false), path(&[0.5], &["b"], false)];
        assert_eq!(prune_frontier(paths, 4).len(), 2);
    }

    #[test]
    fn confidence_ties_break_lexicographically() {
        let paths = vec![
            path(&[0.2], &["a", "b"], false),
            path(&[0.2], &["a", "a"], false),
        ];
        let kept = prune_frontier(paths, 1);
        assert_eq!(kept[0].actions(), vec!["a", "a"]);
    }

    #[test]
    fn done_paths_survive_pruning() {
        let paths = vec![
            path(&[0.9], &["x"], false),
            path(&[0.01], &["done"], true),
        ];
        let kept = prune_frontier(paths, 1);
        assert_eq!(kept.len(), 2);
        assert!(kept.iter().any(|p| p.done));
    }

    fn process(reward: f64, actions: &[&str]) -> DecisionProcess {
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
            reward: Some(reward),
            batch_id: 1,
            terminated: Termination::GoalReached,
        }
    }

    #[test]
    fn key_step_uses_scripted_answer_when_valid() {
        let backend = ScriptedBackend::new(
            vec![FixtureEntry {
                kind: PromptKind::Compare,
                pattern: "".into(),
                response: "3: The first process clicks Prev to find another product.".into(),
            }],
            FallbackPolicy::Error,
        );
        let best = process(1.0, &["a", "b", "c", "d"]);
        let ground = process(0.5, &["a", "b", "x"]);
        assert_eq!(find_key_step(&backend, &best, &ground), 3);
    }

    #[test]
    fn out_of_range_answer_falls_back_to_divergence() {
        let backend = ScriptedBackend::new(
            vec![FixtureEntry {
                kind: PromptKind::Compare,
                pattern: "".into(),
                response: "99: way off".into(),
            }],
            FallbackPolicy::Error,
        );
        let best = process(1.0, &["a", "b", "c", "d", "e"]);
        let ground = process(0.5, &["a", "b", "x"]);
        assert_eq!(find_key_step(&backend, &best, &ground), 3);
    }

    #[test]
    fn ground_prefix_diverges_after_its_end() {
        let backend = ScriptedBackend::new(
            vec![FixtureEntry {
                kind: PromptKind::Compare,
                pattern: "".into(),
                response: "not a number".into(),
            }],
            FallbackPolicy::Error,
        );
        let best = process(1.0, &["a", "b", "c"]);
        let ground = process(0.5, &["a", "b"]);
        assert_eq!(find_key_step(&backend, &best, &ground), 3);
    }

    fn seeded_memory() -> BatchMemory {
        let capacity =
            crate::memory::CapacityMeta { total_trajectories: 1, batch_size: 1, batch_count: 1 };
        let mut memory = BatchMemory::new(1, capacity);
        let g = memory.index_mut().add_goal_type("tasks", vec!["g".into()]);
        let o = memory.index_mut().add_obs_type(g, "places").unwrap();
        memory.insert_tuple(tuple_with_action("seed"), g, ObsTypeSel::Existing(o)).unwrap();
        memory
    }

    #[test]
    fn enhancement_adds_suffix_tuples() {
        let backend = ScriptedBackend::rule_based();
        let mut memory = seeded_memory();
        let best = process(1.0, &["a", "b", "c", "d", "e", "f", "g"]);
        let ground = process(0.75, &["a", "b", "x"]);
        let added = enhance_memory(&backend, &mut memory, &best, &ground, 3).unwrap();
        assert_eq!(added, 5);
        // rerunning with the identical process adds nothing
        let again = enhance_memory(&backend, &mut memory, &best, &ground, 3).unwrap();
        assert_eq!(again, 0);
    }

    #[test]
    fn equal_rewards_add_nothing() {
        let backend = ScriptedBackend::rule_based();
        let mut memory = seeded_memory();
        let before = memory.len();
        let best = process(0.75, &["a", "b"]);
        let ground = process(0.75, &["a", "x"]);
        let added = enhance_memory(&backend, &mut memory, &best, &ground, 1).unwrap();
        assert_eq!(added, 0);
        assert_eq!(memory.len(), before);
    }
}
