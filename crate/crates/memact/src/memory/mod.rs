//! State-action tuple memory: trajectories in, indexed batch memories out.
//!
//! One memory record pairs a situation (goal, summarized history, current
//! observation) with the action taken in it. Records live in batch
//! memories, each with a two-level index: goal types at the top, observation
//! types under each goal type, and a cell of tuple ids per (goal type,
//! observation type) pair.

pub mod persist;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::MemoryError;
use crate::llm::parse::Completion;

pub type TupleId = u64;
pub type GoalTypeId = u32;
pub type ObsTypeId = u32;

/// A demonstration trajectory: a goal and the ordered observation/action
/// steps a solver took for it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: String,
    pub goal: String,
    pub steps: Vec<TrajectoryStep>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub observation: String,
    pub action: String,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Summarized history for one step: the prefix summary plus subgoal
/// completion status. The step-1 sentinel summary is [`NO_PAST_ACTIONS`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HistoryInfo {
    pub summary: String,
    pub subgoals: Vec<(String, Completion)>,
}

pub const NO_PAST_ACTIONS: &str = "No past actions.";

impl HistoryInfo {
    pub fn sentinel() -> Self {
        HistoryInfo { summary: NO_PAST_ACTIONS.to_string(), subgoals: Vec::new() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TupleSource {
    Demonstration,
    Exploration,
}

/// One memory record: goal, history, observation, and the action taken.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StateActionTuple {
    pub goal: String,
    pub history: HistoryInfo,
    pub observation: String,
    pub action: String,
    pub source: TupleSource,
    pub origin_trajectory: String,
    /// 1-based step within the origin trajectory or process.
    pub step_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObsType {
    pub id: ObsTypeId,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoalType {
    pub id: GoalTypeId,
    pub name: String,
    pub examples: Vec<String>,
    pub obs_types: Vec<ObsType>,
}

/// Two-level index over tuple ids. Every stored tuple id appears in exactly
/// one cell; per-goal-type totals are kept alongside and always equal the
/// sum of that goal type's cells.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MemoryIndex {
    pub goal_types: Vec<GoalType>,
    cells: BTreeMap<(GoalTypeId, ObsTypeId), Vec<TupleId>>,
    totals: BTreeMap<GoalTypeId, usize>,
}

impl MemoryIndex {
    pub fn add_goal_type(&mut self, name: &str, examples: Vec<String>) -> GoalTypeId {
        let id = self.goal_types.iter().map(|g| g.id).max().unwrap_or(0) + 1;
        self.goal_types.push(GoalType {
            id,
            name: name.to_string(),
            examples,
            obs_types: Vec::new(),
        });
        self.totals.insert(id, 0);
        id
    }

    pub fn add_obs_type(&mut self, goal_type: GoalTypeId, name: &str) -> Result<ObsTypeId, MemoryError> {
        let entry = self
            .goal_types
            .iter_mut()
            .find(|g| g.id == goal_type)
            .ok_or(MemoryError::UnknownGoalType(goal_type))?;
        let id = entry.obs_types.iter().map(|o| o.id).max().unwrap_or(0) + 1;
        entry.obs_types.push(ObsType { id, name: name.to_string() });
        self.cells.insert((goal_type, id), Vec::new());
        Ok(id)
    }

    pub fn goal_type(&self, id: GoalTypeId) -> Option<&GoalType> {
        self.goal_types.iter().find(|g| g.id == id)
    }

    pub fn cells(&self) -> &BTreeMap<(GoalTypeId, ObsTypeId), Vec<TupleId>> {
        &self.cells
    }

    /// Total observations stored under a goal type (the per-goal-type cell
    /// sum).
    pub fn goal_type_total(&self, id: GoalTypeId) -> usize {
        self.totals.get(&id).copied().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.goal_types.is_empty()
    }

    fn index_tuple(
        &mut self,
        goal_type: GoalTypeId,
        obs_type: ObsTypeId,
        tuple: TupleId,
    ) -> Result<(), MemoryError> {
        if self.goal_type(goal_type).is_none() {
            return Err(MemoryError::UnknownGoalType(goal_type));
        }
        let cell = self
            .cells
            .get_mut(&(goal_type, obs_type))
            .ok_or(MemoryError::UnknownObsType { goal_type, obs_type })?;
        cell.push(tuple);
        *self.totals.entry(goal_type).or_insert(0) += 1;
        Ok(())
    }
}

/// Bookkeeping for how the trajectory set was partitioned: N trajectories
/// into n batches of size B (the final batch may be smaller).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapacityMeta {
    pub total_trajectories: usize,
    pub batch_size: usize,
    pub batch_count: usize,
}

/// Where a tuple should be indexed: an existing observation type, or a
/// fresh one created under the goal type on insert.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObsTypeSel {
    Existing(ObsTypeId),
    NewType,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsertOutcome {
    Inserted(TupleId),
    /// A content-identical tuple already exists; the insert was a no-op.
    Duplicate(TupleId),
}

/// One of the n independent batch memories. Tuples are id-addressed in
/// insertion order and never removed.
#[derive(Debug, Clone)]
pub struct BatchMemory {
    pub batch_id: u32,
    pub capacity: CapacityMeta,
    tuples: Vec<StateActionTuple>,
    index: MemoryIndex,
    dedup: HashMap<StateActionTuple, TupleId>,
}

impl BatchMemory {
    pub fn new(batch_id: u32, capacity: CapacityMeta) -> Self {
        BatchMemory {
            batch_id,
            capacity,
            tuples: Vec::new(),
            index: MemoryIndex::default(),
            dedup: HashMap::new(),
        }
    }

    pub fn index(&self) -> &MemoryIndex {
        &self.index
    }

    pub fn index_mut(&mut self) -> &mut MemoryIndex {
        &mut self.index
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn tuple(&self, id: TupleId) -> Option<&StateActionTuple> {
        id.checked_sub(1).and_then(|i| self.tuples.get(i as usize))
    }

    pub fn tuples(&self) -> impl Iterator<Item = (TupleId, &StateActionTuple)> {
        self.tuples.iter().enumerate().map(|(i, t)| (i as TupleId + 1, t))
    }

    /// Store and index a tuple. Content-identical re-inserts are no-ops so
    /// repeated refinement keeps the memory bounded.
    pub fn insert_tuple(
        &mut self,
        tuple: StateActionTuple,
        goal_type: GoalTypeId,
        obs_type: ObsTypeSel,
    ) -> Result<InsertOutcome, MemoryError> {
        if self.index.goal_type(goal_type).is_none() {
            return Err(MemoryError::UnknownGoalType(goal_type));
        }
        if let Some(&existing) = self.dedup.get(&tuple) {
            return Ok(InsertOutcome::Duplicate(existing));
        }
        let obs_type = match obs_type {
            ObsTypeSel::Existing(id) => id,
            ObsTypeSel::NewType => {
                let name = new_type_name(&tuple.observation);
                self.index.add_obs_type(goal_type, &name)?
            }
        };
        let id = self.tuples.len() as TupleId + 1;
        self.index.index_tuple(goal_type, obs_type, id)?;
        self.dedup.insert(tuple.clone(), id);
        self.tuples.push(tuple);
        Ok(InsertOutcome::Inserted(id))
    }

    /// Up to `k` tuples from the (goal type, obs type) cell, most recently
    /// inserted first, so refinement tuples shadow older demonstrations.
    /// An empty or unknown cell falls back to the goal type's whole pool
    /// with the same ordering.
    pub fn lookup(
        &self,
        goal_type: GoalTypeId,
        obs_type: ObsTypeId,
        k: usize,
    ) -> Result<Vec<&StateActionTuple>, MemoryError> {
        if self.index.goal_type(goal_type).is_none() {
            return Err(MemoryError::UnknownGoalType(goal_type));
        }
        let cell_ids = self.index.cells.get(&(goal_type, obs_type));
        let picked: Vec<TupleId> = match cell_ids {
            Some(ids) if !ids.is_empty() => ids.iter().rev().take(k).copied().collect(),
            _ => {
                let mut pool: Vec<TupleId> = self
                    .index
                    .cells
                    .range((goal_type, 0)..=(goal_type, ObsTypeId::MAX))
                    .flat_map(|(_, ids)| ids.iter().copied())
                    .collect();
                pool.sort_unstable_by(|a, b| b.cmp(a));
                pool.truncate(k);
                pool
            }
        };
        Ok(picked.into_iter().filter_map(|id| self.tuple(id)).collect())
    }
}

/// A fresh observation type is named after the observation that created it.
fn new_type_name(observation: &str) -> String {
    let flat = observation.split_whitespace().collect::<Vec<_>>().join(" ");
    let mut name: String = flat.chars().take(48).collect();
    if flat.chars().count() > 48 {
        name.push_str("...");
    }
    name
}

/// The full memory: one [`BatchMemory`] per batch, ids unique.
#[derive(Debug, Clone, Default)]
pub struct MemorySet {
    pub batches: Vec<BatchMemory>,
}

impl MemorySet {
    pub fn total_tuples(&self) -> usize {
        self.batches.iter().map(|b| b.len()).sum()
    }
}

/// Split trajectories into order-preserving batches of `batch_size`; the
/// final batch may be smaller when the count does not divide evenly.
pub fn partition_trajectories(
    trajectories: Vec<Trajectory>,
    batch_size: usize,
) -> Result<Vec<Vec<Trajectory>>, MemoryError> {
    assert!(batch_size >= 1, "batch size must be at least 1");
    if trajectories.is_empty() {
        return Err(MemoryError::EmptyInput);
    }
    let mut batches = Vec::with_capacity(trajectories.len().div_ceil(batch_size));
    let mut current = Vec::with_capacity(batch_size);
    for trajectory in trajectories {
        current.push(trajectory);
        if current.len() == batch_size {
            batches.push(std::mem::replace(&mut current, Vec::with_capacity(batch_size)));
        }
    }
    if !current.is_empty() {
        batches.push(current);
    }
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tuple(text: &str, step: usize) -> StateActionTuple {
        StateActionTuple {
            goal: "g".into(),
            history: HistoryInfo::sentinel(),
            observation: format!("obs {text}"),
            action: format!("act {text}"),
            source: TupleSource::Demonstration,
            origin_trajectory: "t1".into(),
            step_index: step,
        }
    }

    fn traj(id: usize) -> Trajectory {
        Trajectory {
            id: format!("t{id}"),
            goal: "g".into(),
            steps: vec![TrajectoryStep { observation: "o".into(), action: "a".into() }],
        }
    }

    fn memory_with_cell() -> (BatchMemory, GoalTypeId, ObsTypeId) {
        let meta = CapacityMeta { total_trajectories: 1, batch_size: 1, batch_count: 1 };
        let mut memory = BatchMemory::new(1, meta);
        let g = memory.index_mut().add_goal_type("tasks", vec!["g".into()]);
        let o = memory.index_mut().add_obs_type(g, "places").unwrap();
        (memory, g, o)
    }

    #[test]
    fn partition_sizes() {
        let batches = partition_trajectories((0..500).map(traj).collect(), 100).unwrap();
        assert_eq!(batches.len(), 5);
        assert!(batches.iter().all(|b| b.len() == 100));

        let batches = partition_trajectories((0..7).map(traj).collect(), 3).unwrap();
        let sizes: Vec<usize> = batches.iter().map(|b| b.len()).collect();
        assert_eq!(sizes, vec![3, 3, 1]);
    }

    #[test]
    fn partition_preserves_order_and_rejects_empty() {
        let batches = partition_trajectories((0..7).map(traj).collect(), 3).unwrap();
        let flat: Vec<String> =
            batches.into_iter().flatten().map(|t| t.id).collect();
        assert_eq!(flat, (0..7).map(|i| format!("t{i}")).collect::<Vec<_>>());
        assert!(matches!(
            partition_trajectories(Vec::new(), 3),
            Err(MemoryError::EmptyInput)
        ));
    }

    #[test]
    fn insert_indexes_into_one_cell() {
        let (mut memory, g, o) = memory_with_cell();
        let outcome = memory.insert_tuple(tuple("a", 1), g, ObsTypeSel::Existing(o)).unwrap();
        assert_eq!(outcome, InsertOutcome::Inserted(1));
        assert_eq!(memory.len(), 1);
        assert_eq!(memory.index().cells()[&(g, o)], vec![1]);
        assert_eq!(memory.index().goal_type_total(g), 1);
    }

    #[test]
    fn insert_new_type_creates_fresh_obs_type() {
        let (mut memory, g, _) = memory_with_cell();
        memory.index_mut().add_obs_type(g, "second").unwrap();
        memory.insert_tuple(tuple("a", 1), g, ObsTypeSel::NewType).unwrap();
        assert_eq!(memory.index().goal_type(g).unwrap().obs_types.len(), 3);
        assert_eq!(memory.index().cells()[&(g, 3)], vec![1]);
    }

    #[test]
    fn insert_unknown_goal_type_fails() {
        let (mut memory, _, o) = memory_with_cell();
        let err = memory.insert_tuple(tuple("a", 1), 99, ObsTypeSel::Existing(o)).unwrap_err();
        assert!(matches!(err, MemoryError::UnknownGoalType(99)));
    }

    #[test]
    fn duplicate_insert_is_a_noop() {
        let (mut memory, g, o) = memory_with_cell();
        memory.insert_tuple(tuple("a", 1), g, ObsTypeSel::Existing(o)).unwrap();
        let outcome = memory.insert_tuple(tuple("a", 1), g, ObsTypeSel::Existing(o)).unwrap();
        assert_eq!(outcome, InsertOutcome::Duplicate(1));
        assert_eq!(memory.len(), 1);
    }

    #[test]
    fn lookup_returns_newest_first() {
        let (mut memory, g, o) = memory_with_cell();
        for i in 0..7 {
            memory.insert_tuple(tuple(&i.to_string(), i + 1), g, ObsTypeSel::Existing(o)).unwrap();
        }
        let got = memory.lookup(g, o, 5).unwrap();
        assert_eq!(got.len(), 5);
        assert_eq!(got[0].action, "act 6");
        assert_eq!(got[4].action, "act 2");
    }

    #[test]
    fn lookup_small_cell_returns_all() {
        let (mut memory, g, o) = memory_with_cell();
        memory.insert_tuple(tuple("x", 1), g, ObsTypeSel::Existing(o)).unwrap();
        memory.insert_tuple(tuple("y", 2), g, ObsTypeSel::Existing(o)).unwrap();
        assert_eq!(memory.lookup(g, o, 5).unwrap().len(), 2);
    }

    #[test]
    fn lookup_empty_cell_falls_back_to_goal_pool() {
        let (mut memory, g, o) = memory_with_cell();
        let o2 = memory.index_mut().add_obs_type(g, "other").unwrap();
        for i in 0..3 {
            memory.insert_tuple(tuple(&i.to_string(), i + 1), g, ObsTypeSel::Existing(o)).unwrap();
        }
        let got = memory.lookup(g, o2, 5).unwrap();
        assert_eq!(got.len(), 3);
        assert_eq!(got[0].action, "act 2");
        assert!(matches!(memory.lookup(42, o, 5), Err(MemoryError::UnknownGoalType(42))));
    }
}
