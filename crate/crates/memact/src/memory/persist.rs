//! Memory persistence: JSON Lines for tuples, one JSON index document per
//! batch, and a manifest tying the set together. Serialization is
//! canonical — field order is fixed and cells are emitted in key order —
//! so identical memories produce identical bytes.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    BatchMemory, CapacityMeta, GoalType, GoalTypeId, MemoryError, MemorySet, ObsTypeId,
    StateActionTuple, TupleId, TupleSource,
};
use crate::llm::parse::Completion;
use crate::memory::HistoryInfo;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    schema_version: u32,
    capacity: CapacityMeta,
    batches: Vec<u32>,
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexDoc {
    schema_version: u32,
    batch_id: u32,
    goal_types: Vec<GoalType>,
    cells: Vec<CellDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CellDoc {
    goal_type: GoalTypeId,
    obs_type: ObsTypeId,
    tuples: Vec<TupleId>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SubgoalDoc {
    text: String,
    status: Completion,
}

#[derive(Debug, Serialize, Deserialize)]
struct TupleDoc {
    id: TupleId,
    batch_id: u32,
    goal: String,
    summary: String,
    subgoals: Vec<SubgoalDoc>,
    observation: String,
    action: String,
    source: TupleSource,
    origin: String,
    step: usize,
    goal_type: GoalTypeId,
    obs_type: ObsTypeId,
}

fn tuples_path(dir: &Path, batch_id: u32) -> PathBuf {
    dir.join(format!("batch-{batch_id}.tuples.jsonl"))
}

fn index_path(dir: &Path, batch_id: u32) -> PathBuf {
    dir.join(format!("batch-{batch_id}.index.json"))
}

fn manifest_path(dir: &Path) -> PathBuf {
    dir.join("manifest.json")
}

/// Write bytes to `path` atomically (temp file in the same directory, then
/// rename).
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), MemoryError> {
    let tmp = path.with_extension("tmp");
    {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Persist a memory set under `dir` (created if missing).
pub fn save_memory(set: &MemorySet, dir: &Path) -> Result<(), MemoryError> {
    fs::create_dir_all(dir)?;
    let capacity = set
        .batches
        .first()
        .map(|b| b.capacity)
        .unwrap_or(CapacityMeta { total_trajectories: 0, batch_size: 1, batch_count: 0 });
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        capacity,
        batches: set.batches.iter().map(|b| b.batch_id).collect(),
    };
    let mut manifest_bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    manifest_bytes.push(b'\n');
    write_atomic(&manifest_path(dir), &manifest_bytes)?;

    for batch in &set.batches {
        let mut lines = Vec::new();
        // invert the cells once so each tuple line carries its cell
        let mut cell_of = std::collections::HashMap::new();
        for (&(g, o), ids) in batch.index().cells() {
            for &id in ids {
                cell_of.insert(id, (g, o));
            }
        }
        for (id, tuple) in batch.tuples() {
            let &(goal_type, obs_type) = cell_of.get(&id).ok_or_else(|| {
                MemoryError::Corrupt(format!("tuple {id} in batch {} not indexed", batch.batch_id))
            })?;
            let doc = TupleDoc {
                id,
                batch_id: batch.batch_id,
                goal: tuple.goal.clone(),
                summary: tuple.history.summary.clone(),
                subgoals: tuple
                    .history
                    .subgoals
                    .iter()
                    .map(|(text, status)| SubgoalDoc { text: text.clone(), status: *status })
                    .collect(),
                observation: tuple.observation.clone(),
                action: tuple.action.clone(),
                source: tuple.source,
                origin: tuple.origin_trajectory.clone(),
                step: tuple.step_index,
                goal_type,
                obs_type,
            };
            lines.extend(serde_json::to_vec(&doc).expect("tuple serializes"));
            lines.push(b'\n');
        }
        write_atomic(&tuples_path(dir, batch.batch_id), &lines)?;

        let index = IndexDoc {
            schema_version: SCHEMA_VERSION,
            batch_id: batch.batch_id,
            goal_types: batch.index().goal_types.clone(),
            cells: batch
                .index()
                .cells()
                .iter()
                .map(|(&(goal_type, obs_type), tuples)| CellDoc {
                    goal_type,
                    obs_type,
                    tuples: tuples.clone(),
                })
                .collect(),
        };
        let mut index_bytes = serde_json::to_vec_pretty(&index).expect("index serializes");
        index_bytes.push(b'\n');
        write_atomic(&index_path(dir, batch.batch_id), &index_bytes)?;
    }
    Ok(())
}

/// Load a memory set previously written by [`save_memory`]. Insertion
/// order, indexing, and dedup state are reconstructed exactly.
pub fn load_memory(dir: &Path) -> Result<MemorySet, MemoryError> {
    let manifest_text = fs::read_to_string(manifest_path(dir))?;
    let manifest: Manifest = serde_json::from_str(&manifest_text)
        .map_err(|e| MemoryError::Corrupt(format!("manifest: {e}")))?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(MemoryError::SchemaVersionMismatch {
            found: manifest.schema_version,
            expected: SCHEMA_VERSION,
        });
    }

    let mut set = MemorySet::default();
    for batch_id in manifest.batches {
        let index_text = fs::read_to_string(index_path(dir, batch_id))?;
        let index: IndexDoc = serde_json::from_str(&index_text)
            .map_err(|e| MemoryError::Corrupt(format!("batch {batch_id} index: {e}")))?;
        if index.schema_version != SCHEMA_VERSION {
            return Err(MemoryError::SchemaVersionMismatch {
                found: index.schema_version,
                expected: SCHEMA_VERSION,
            });
        }

        let mut memory = BatchMemory::new(batch_id, manifest.capacity);
        for goal_type in &index.goal_types {
            let id = memory.index_mut().add_goal_type(&goal_type.name, goal_type.examples.clone());
            if id != goal_type.id {
                return Err(MemoryError::Corrupt(format!(
                    "batch {batch_id}: goal type ids not contiguous (found {}, expected {id})",
                    goal_type.id
                )));
            }
            for obs_type in &goal_type.obs_types {
                let oid = memory.index_mut().add_obs_type(id, &obs_type.name)?;
                if oid != obs_type.id {
                    return Err(MemoryError::Corrupt(format!(
                        "batch {batch_id}: obs type ids not contiguous under goal type {id}"
                    )));
                }
            }
        }

        let file = fs::File::open(tuples_path(dir, batch_id))?;
        let mut docs = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let doc: TupleDoc = serde_json::from_str(&line)
                .map_err(|e| MemoryError::Corrupt(format!("batch {batch_id} tuple: {e}")))?;
            docs.push(doc);
        }
        docs.sort_by_key(|d| d.id);
        for (position, doc) in docs.into_iter().enumerate() {
            if doc.id != position as TupleId + 1 {
                return Err(MemoryError::Corrupt(format!(
                    "batch {batch_id}: tuple ids not contiguous at {}",
                    doc.id
                )));
            }
            let tuple = StateActionTuple {
                goal: doc.goal,
                history: HistoryInfo {
                    summary: doc.summary,
                    subgoals: doc.subgoals.into_iter().map(|s| (s.text, s.status)).collect(),
                },
                observation: doc.observation,
                action: doc.action,
                source: doc.source,
                origin_trajectory: doc.origin,
                step_index: doc.step,
            };
            use super::{InsertOutcome, ObsTypeSel};
            match memory.insert_tuple(tuple, doc.goal_type, ObsTypeSel::Existing(doc.obs_type))? {
                InsertOutcome::Inserted(id) if id == doc.id => {}
                _ => {
                    return Err(MemoryError::Corrupt(format!(
                        "batch {batch_id}: tuple {} could not be re-indexed",
                        doc.id
                    )))
                }
            }
        }

        // the rebuilt cells must agree with the stored index document
        for cell in &index.cells {
            let rebuilt = memory
                .index()
                .cells()
                .get(&(cell.goal_type, cell.obs_type))
                .cloned()
                .unwrap_or_default();
            if rebuilt != cell.tuples {
                return Err(MemoryError::Corrupt(format!(
                    "batch {batch_id}: cell ({}, {}) does not match its tuples",
                    cell.goal_type, cell.obs_type
                )));
            }
        }
        set.batches.push(memory);
    }
    Ok(set)
}

/// Read trajectories from a JSON Lines file, one object per line.
pub fn read_trajectories(path: &Path) -> Result<Vec<super::Trajectory>, MemoryError> {
    let file = fs::File::open(path)?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let trajectory: super::Trajectory = serde_json::from_str(&line)
            .map_err(|e| MemoryError::Corrupt(format!("trajectory line: {e}")))?;
        out.push(trajectory);
    }
    Ok(out)
}

/// Write trajectories as JSON Lines, atomically.
pub fn write_trajectories(trajectories: &[super::Trajectory], path: &Path) -> Result<(), MemoryError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut bytes = Vec::new();
    for trajectory in trajectories {
        bytes.extend(serde_json::to_vec(trajectory).expect("trajectory serializes"));
        bytes.push(b'\n');
    }
    write_atomic(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::super::{ObsTypeSel, TrajectoryStep};
    use super::*;

    fn sample_set() -> MemorySet {
        let meta = CapacityMeta { total_trajectories: 2, batch_size: 1, batch_count: 2 };
        let mut batches = Vec::new();
        for batch_id in 1..=2 {
            let mut memory = BatchMemory::new(batch_id, meta);
            let g = memory.index_mut().add_goal_type("cool tasks", vec!["cool it".into()]);
            let o = memory.index_mut().add_obs_type(g, "room overview").unwrap();
            for step in 1..=3 {
                memory
                    .insert_tuple(
                        StateActionTuple {
                            goal: "cool it".into(),
                            history: HistoryInfo {
                                summary: format!("step {step}"),
                                subgoals: vec![("cool".into(), Completion::Incomplete)],
                            },
                            observation: format!("obs {step} of batch {batch_id}"),
                            action: format!("act {step}"),
                            source: TupleSource::Demonstration,
                            origin_trajectory: format!("t{batch_id}"),
                            step_index: step,
                        },
                        g,
                        ObsTypeSel::Existing(o),
                    )
                    .unwrap();
            }
            batches.push(memory);
        }
        MemorySet { batches }
    }

    fn assert_structurally_equal(a: &MemorySet, b: &MemorySet) {
        assert_eq!(a.batches.len(), b.batches.len());
        for (x, y) in a.batches.iter().zip(&b.batches) {
            assert_eq!(x.batch_id, y.batch_id);
            assert_eq!(x.capacity, y.capacity);
            assert_eq!(x.index(), y.index());
            let xs: Vec<_> = x.tuples().collect();
            let ys: Vec<_> = y.tuples().collect();
            assert_eq!(xs, ys);
        }
    }

    #[test]
    fn round_trip_preserves_structure_and_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let set = sample_set();
        save_memory(&set, dir.path()).unwrap();
        let loaded = load_memory(dir.path()).unwrap();
        assert_structurally_equal(&set, &loaded);

        // canonical serialization: saving the loaded set reproduces the bytes
        let dir2 = tempfile::tempdir().unwrap();
        save_memory(&loaded, dir2.path()).unwrap();
        for name in ["manifest.json", "batch-1.tuples.jsonl", "batch-1.index.json"] {
            let a = std::fs::read(dir.path().join(name)).unwrap();
            let b = std::fs::read(dir2.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs");
        }
    }

    #[test]
    fn empty_set_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        save_memory(&MemorySet::default(), dir.path()).unwrap();
        let loaded = load_memory(dir.path()).unwrap();
        assert!(loaded.batches.is_empty());
    }

    #[test]
    fn unknown_schema_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_memory(&sample_set(), dir.path()).unwrap();
        let path = dir.path().join("manifest.json");
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, text.replace("\"schema_version\": 1", "\"schema_version\": 99")).unwrap();
        let err = load_memory(dir.path()).unwrap_err();
        assert!(matches!(err, MemoryError::SchemaVersionMismatch { found: 99, expected: 1 }));
    }

    #[test]
    fn trajectories_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let trajectories = vec![super::super::Trajectory {
            id: "t1".into(),
            goal: "cool it".into(),
            steps: vec![TrajectoryStep { observation: "o".into(), action: "a".into() }],
        }];
        write_trajectories(&trajectories, &path).unwrap();
        assert_eq!(read_trajectories(&path).unwrap(), trajectories);
    }
}
