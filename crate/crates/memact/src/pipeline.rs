//! Operator pipeline: ingest demonstrations, form memory, refine it, and
//! evaluate on held-out goals. Every command is a library function so the
//! CLI stays thin and tests drive the same code paths.

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::agent::{choose_final, run_episode, AgentConfig, DecisionProcess};
use crate::env::{expert, EnvKind};
use crate::error::Error;
use crate::explorer::{enhance_memory, explore, find_key_step, ExplorerConfig, TraceNode};
use crate::formation::{build_batch_memory, FormationConfig};
use crate::llm::{FallbackPolicy, LlmBackend, ScriptedBackend};
use crate::memory::persist::{
    load_memory, read_trajectories, save_memory, write_atomic, write_trajectories,
};
use crate::memory::{partition_trajectories, CapacityMeta, MemorySet};
use crate::seed::substream_seed;

/// Offsets into the deterministic goal pool; training, refinement, and
/// evaluation draw from disjoint ranges.
pub const INGEST_GOAL_OFFSET: usize = 0;
pub const REFINE_GOAL_OFFSET: usize = 600;
pub const EVAL_GOAL_OFFSET: usize = 800;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Scripted,
    Http,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunPaths {
    #[serde(default)]
    pub fixtures: Option<PathBuf>,
    pub memory_dir: PathBuf,
    pub trajectories: PathBuf,
    pub output_dir: PathBuf,
}

impl Default for RunPaths {
    fn default() -> Self {
        RunPaths {
            fixtures: None,
            memory_dir: PathBuf::from("out/memory"),
            trajectories: PathBuf::from("out/trajectories.jsonl"),
            output_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct IngestConfig {
    pub count: usize,
    pub noise: f64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig { count: 100, noise: 0.1 }
    }
}

fn default_workers() -> usize {
    1
}

fn default_eval_goal_count() -> usize {
    20
}

fn default_refine_goal_count() -> usize {
    10
}

fn default_refine_rounds() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub environment: EnvKind,
    pub backend: BackendKind,
    #[serde(default)]
    pub paths: RunPaths,
    #[serde(default)]
    pub formation: FormationConfig,
    #[serde(default)]
    pub explorer: ExplorerConfig,
    #[serde(default)]
    pub agent: AgentConfig,
    #[serde(default)]
    pub ingest: IngestConfig,
    #[serde(default = "default_eval_goal_count")]
    pub eval_goal_count: usize,
    #[serde(default = "default_refine_goal_count")]
    pub refine_goal_count: usize,
    #[serde(default = "default_refine_rounds")]
    pub refine_rounds: usize,
    #[serde(default = "default_workers")]
    pub workers: usize,
    pub seed: u64,
    #[cfg(feature = "http-backend")]
    #[serde(default)]
    pub http: Option<crate::llm::HttpBackendConfig>,
}

impl RunConfig {
    pub fn from_file(path: &std::path::Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("bad config: {e}")))
    }

    /// Agent config with `max_steps == 0` resolved to the per-environment
    /// default: 15 for the shop, 50 for the house.
    pub fn effective_agent(&self) -> AgentConfig {
        let mut agent = self.agent;
        if agent.max_steps == 0 {
            agent.max_steps = match self.environment {
                EnvKind::Toyshop => 15,
                EnvKind::Toyhouse => 50,
            };
        }
        agent
    }

    pub fn build_backend(&self) -> Result<Box<dyn LlmBackend>, Error> {
        match self.backend {
            BackendKind::Scripted => match &self.paths.fixtures {
                Some(path) => {
                    Ok(Box::new(ScriptedBackend::from_file(path, FallbackPolicy::RuleBased)?))
                }
                None => Ok(Box::new(ScriptedBackend::rule_based())),
            },
            BackendKind::Http => {
                #[cfg(feature = "http-backend")]
                {
                    let http = self.http.clone().ok_or_else(|| {
                        Error::Config("backend \"http\" requires an http section".into())
                    })?;
                    Ok(Box::new(crate::llm::HttpBackend::new(http)?))
                }
                #[cfg(not(feature = "http-backend"))]
                Err(Error::Config("built without the http-backend feature".into()))
            }
        }
    }

    fn episode_seed(&self, purpose: &str, index: usize) -> u64 {
        substream_seed(self.seed, &format!("{purpose}-episode-{index}"))
    }
}

/// Order-preserving bounded-parallel map. Results arrive in input order
/// regardless of scheduling, so parallel runs stay byte-deterministic.
pub fn parallel_map<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    if workers <= 1 || items.len() <= 1 {
        return items.iter().enumerate().map(|(i, item)| f(i, item)).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers.min(items.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let result = f(i, &items[i]);
                *slots[i].lock().unwrap() = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| slot.into_inner().unwrap().expect("worker filled every slot"))
        .collect()
}

// ---------------------------------------------------------------------------
// ingest
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
pub struct IngestReport {
    pub seed: u64,
    pub environment: EnvKind,
    pub count: usize,
    pub path: PathBuf,
}

pub fn cmd_ingest(config: &RunConfig) -> Result<IngestReport, Error> {
    let trajectories = expert::generate_expert_trajectories(
        config.environment,
        config.ingest.count,
        config.seed,
        config.ingest.noise,
    );
    write_trajectories(&trajectories, &config.paths.trajectories)?;
    Ok(IngestReport {
        seed: config.seed,
        environment: config.environment,
        count: trajectories.len(),
        path: config.paths.trajectories.clone(),
    })
}

// ---------------------------------------------------------------------------
// form-memory
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
pub struct FormReport {
    pub seed: u64,
    pub batch_count: usize,
    pub tuple_counts: Vec<usize>,
}

pub fn cmd_form(config: &RunConfig) -> Result<FormReport, Error> {
    let backend = config.build_backend()?;
    let trajectories = read_trajectories(&config.paths.trajectories)?;
    let total = trajectories.len();
    let batches = partition_trajectories(trajectories, config.formation.batch_size)?;
    let capacity = CapacityMeta {
        total_trajectories: total,
        batch_size: config.formation.batch_size,
        batch_count: batches.len(),
    };
    let mut set = MemorySet::default();
    for (i, batch) in batches.iter().enumerate() {
        let memory =
            build_batch_memory(backend.as_ref(), batch, &config.formation, i as u32 + 1, capacity)?;
        set.batches.push(memory);
    }
    save_memory(&set, &config.paths.memory_dir)?;
    Ok(FormReport {
        seed: config.seed,
        batch_count: set.batches.len(),
        tuple_counts: set.batches.iter().map(|b| b.len()).collect(),
    })
}

// ---------------------------------------------------------------------------
// refine
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct RefineEntry {
    pub goal: String,
    pub batch_id: u32,
    pub ground_reward: f64,
    pub best_reward: f64,
    pub key_step: Option<usize>,
    pub tuples_added: usize,
}

#[derive(Debug, Serialize)]
pub struct RefineReport {
    pub seed: u64,
    pub rounds: usize,
    pub entries: Vec<RefineEntry>,
    pub tuples_added: usize,
}

/// Exploration trace emitted per (round, goal, batch).
#[derive(Debug, Serialize)]
struct RefineTrace<'a> {
    goal: &'a str,
    batch_id: u32,
    round: usize,
    tree: &'a [TraceNode],
    ground_reward: f64,
    best_reward: f64,
    key_step: Option<usize>,
    tuples_added: usize,
}

pub fn cmd_refine(
    config: &RunConfig,
    rounds: usize,
    goals: &[String],
) -> Result<RefineReport, Error> {
    let backend = config.build_backend()?;
    let agent_config = config.effective_agent();
    let mut set = load_memory(&config.paths.memory_dir)?;
    if set.batches.is_empty() {
        return Err(crate::error::MemoryError::EmptyInput.into());
    }
    let trace_dir = config.paths.output_dir.join("refine");
    std::fs::create_dir_all(&trace_dir)?;

    let mut entries = Vec::new();
    for round in 1..=rounds {
        for (goal_index, goal) in goals.iter().enumerate() {
            for batch_index in 0..set.batches.len() {
                let memory = &mut set.batches[batch_index];
                let episode_seed =
                    config.episode_seed("refine", (round << 16) ^ (goal_index << 4) ^ batch_index);
                let mut env = crate::env::build(config.environment, config.seed);

                env.reset(goal, episode_seed)?;
                let ground = run_episode(
                    backend.as_ref(),
                    env.as_mut(),
                    memory,
                    &config.formation,
                    &agent_config,
                )?;

                env.reset(goal, episode_seed)?;
                let outcome = explore(
                    backend.as_ref(),
                    env.as_mut(),
                    memory,
                    &config.formation,
                    &config.explorer,
                    agent_config.retrieval_k,
                )?;
                let best = outcome.processes.first().cloned();

                let (best_reward, key_step, added) = match best {
                    Some(best) if best.reward_or_zero() > ground.reward_or_zero() => {
                        let key = find_key_step(backend.as_ref(), &best, &ground);
                        let added = enhance_memory(backend.as_ref(), memory, &best, &ground, key)?;
                        (best.reward_or_zero(), Some(key), added)
                    }
                    Some(best) => (best.reward_or_zero(), None, 0),
                    None => (0.0, None, 0),
                };

                let entry = RefineEntry {
                    goal: goal.clone(),
                    batch_id: memory.batch_id,
                    ground_reward: ground.reward_or_zero(),
                    best_reward,
                    key_step,
                    tuples_added: added,
                };
                let trace = RefineTrace {
                    goal,
                    batch_id: memory.batch_id,
                    round,
                    tree: &outcome.tree,
                    ground_reward: entry.ground_reward,
                    best_reward: entry.best_reward,
                    key_step: entry.key_step,
                    tuples_added: entry.tuples_added,
                };
                let mut bytes = serde_json::to_vec_pretty(&trace)?;
                bytes.push(b'\n');
                write_atomic(
                    &trace_dir.join(format!(
                        "trace-r{round}-g{goal_index}-b{}.json",
                        memory.batch_id
                    )),
                    &bytes,
                )?;
                entries.push(entry);
            }
        }
    }
    save_memory(&set, &config.paths.memory_dir)?;

    let report = RefineReport {
        seed: config.seed,
        rounds,
        tuples_added: entries.iter().map(|e| e.tuples_added).sum(),
        entries,
    };
    let mut bytes = serde_json::to_vec_pretty(&report)?;
    bytes.push(b'\n');
    write_atomic(&config.paths.output_dir.join("refine_report.json"), &bytes)?;
    write_atomic(
        &config.paths.output_dir.join("refine_report.txt"),
        render_refine_table(&report).as_bytes(),
    )?;
    Ok(report)
}

pub fn render_refine_table(report: &RefineReport) -> String {
    let mut out = String::from("Goal | Batch | Ground | Best | Added\n");
    for entry in &report.entries {
        out.push_str(&format!(
            "{} | {} | {:.2} | {:.2} | {}\n",
            entry.goal, entry.batch_id, entry.ground_reward, entry.best_reward, entry.tuples_added
        ));
    }
    out.push_str(&format!("total tuples added: {}\n", report.tuples_added));
    out
}

/// Refinement goals from the pool when none are supplied.
pub fn default_refine_goals(config: &RunConfig) -> Vec<String> {
    expert::goal_pool(
        config.environment,
        config.seed,
        REFINE_GOAL_OFFSET,
        config.refine_goal_count,
    )
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct EvalGoalResult {
    pub goal: String,
    pub batch_rewards: Vec<f64>,
    pub final_reward: f64,
    pub final_batch_id: u32,
}

#[derive(Debug, Serialize)]
pub struct EvalReport {
    pub method: String,
    pub environment: EnvKind,
    pub seed: u64,
    pub goals: Vec<EvalGoalResult>,
    /// Mean final reward × 100.
    pub score: f64,
    /// Percentage of goals with final reward 1.
    pub success_rate: f64,
    /// Per-template success rates for the household environment.
    pub per_template: Option<Vec<(String, f64)>>,
}

#[derive(Debug, Serialize)]
struct EpisodeTrace<'a> {
    goal: &'a str,
    batch_id: u32,
    steps: Vec<EpisodeTraceStep<'a>>,
    reward: Option<f64>,
    terminated: crate::agent::Termination,
}

#[derive(Debug, Serialize)]
struct EpisodeTraceStep<'a> {
    observation: &'a str,
    action: &'a str,
    summary: &'a str,
}

fn write_episode_trace(
    dir: &std::path::Path,
    goal_index: usize,
    process: &DecisionProcess,
) -> Result<(), Error> {
    let trace = EpisodeTrace {
        goal: &process.goal,
        batch_id: process.batch_id,
        steps: process
            .steps
            .iter()
            .map(|s| EpisodeTraceStep {
                observation: &s.observation,
                action: &s.action,
                summary: &s.history.summary,
            })
            .collect(),
        reward: process.reward,
        terminated: process.terminated,
    };
    let mut bytes = serde_json::to_vec_pretty(&trace)?;
    bytes.push(b'\n');
    write_atomic(
        &dir.join(format!("trace-g{goal_index}-b{}.json", process.batch_id)),
        &bytes,
    )?;
    Ok(())
}

pub fn cmd_eval(config: &RunConfig, goals: &[String]) -> Result<EvalReport, Error> {
    if goals.is_empty() {
        return Err(Error::EmptyInput);
    }
    let backend = config.build_backend()?;
    let agent_config = config.effective_agent();
    let set = load_memory(&config.paths.memory_dir)?;
    if set.batches.is_empty() {
        return Err(crate::error::MemoryError::EmptyInput.into());
    }
    let trace_dir = config.paths.output_dir.join("eval");
    std::fs::create_dir_all(&trace_dir)?;

    let per_goal: Vec<Result<Vec<DecisionProcess>, Error>> =
        parallel_map(goals, config.workers, |goal_index, goal| {
            let mut processes = Vec::with_capacity(set.batches.len());
            for memory in &set.batches {
                let mut env = crate::env::build(config.environment, config.seed);
                env.reset(goal, config.episode_seed("eval", goal_index))?;
                let process = run_episode(
                    backend.as_ref(),
                    env.as_mut(),
                    memory,
                    &config.formation,
                    &agent_config,
                )?;
                processes.push(process);
            }
            Ok(processes)
        });

    let mut results = Vec::with_capacity(goals.len());
    for (goal_index, processes) in per_goal.into_iter().enumerate() {
        let processes = processes?;
        for process in &processes {
            write_episode_trace(&trace_dir, goal_index, process)?;
        }
        let chosen = choose_final(backend.as_ref(), &processes)?;
        results.push(EvalGoalResult {
            goal: goals[goal_index].clone(),
            batch_rewards: processes.iter().map(|p| p.reward_or_zero()).collect(),
            final_reward: chosen.reward_or_zero(),
            final_batch_id: chosen.batch_id,
        });
    }

    let score =
        results.iter().map(|r| r.final_reward).sum::<f64>() / results.len() as f64 * 100.0;
    let success_rate = results.iter().filter(|r| r.final_reward == 1.0).count() as f64
        / results.len() as f64
        * 100.0;
    let per_template = (config.environment == EnvKind::Toyhouse).then(|| {
        let mut rows: Vec<(String, Vec<f64>)> = Vec::new();
        for result in &results {
            let template = crate::env::toyhouse::HouseGoal::parse(&result.goal)
                .map(|g| g.template_name().to_string())
                .unwrap_or_else(|| "other".to_string());
            match rows.iter_mut().find(|(t, _)| *t == template) {
                Some((_, rewards)) => rewards.push(result.final_reward),
                None => rows.push((template, vec![result.final_reward])),
            }
        }
        rows.into_iter()
            .map(|(template, rewards)| {
                let sr = rewards.iter().filter(|&&r| r == 1.0).count() as f64
                    / rewards.len() as f64
                    * 100.0;
                (template, sr)
            })
            .collect()
    });

    let report = EvalReport {
        method: format!("memact-{}", backend.id()),
        environment: config.environment,
        seed: config.seed,
        goals: results,
        score,
        success_rate,
        per_template,
    };
    let mut bytes = serde_json::to_vec_pretty(&report)?;
    bytes.push(b'\n');
    write_atomic(&config.paths.output_dir.join("eval_report.json"), &bytes)?;
    write_atomic(
        &config.paths.output_dir.join("eval_report.txt"),
        render_eval_table(&report).as_bytes(),
    )?;
    Ok(report)
}

/// Render the score/SR table, plus per-task columns for the household.
pub fn render_eval_table(report: &EvalReport) -> String {
    let mut out = String::from("Method | Score | SR\n");
    out.push_str(&format!(
        "{} | {:.2} | {:.1}\n",
        report.method, report.score, report.success_rate
    ));
    if let Some(per_template) = &report.per_template {
        let order = ["pick", "clean", "heat", "cool", "look", "pick2"];
        out.push_str("\nMethod | Pick | Clean | Heat | Cool | Look | Pick2 | All\n");
        out.push_str(&report.method);
        for name in order {
            match per_template.iter().find(|(t, _)| t == name) {
                Some((_, sr)) => out.push_str(&format!(" | {sr:.0}")),
                None => out.push_str(" | -"),
            }
        }
        out.push_str(&format!(" | {:.0}\n", report.success_rate));
    }
    out
}

/// Evaluation goals from the pool when none are supplied.
pub fn default_eval_goals(config: &RunConfig) -> Vec<String> {
    expert::goal_pool(config.environment, config.seed, EVAL_GOAL_OFFSET, config.eval_goal_count)
}

// ---------------------------------------------------------------------------
// run (full pipeline)
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
pub struct RunReport {
    pub ingest: IngestReport,
    pub form: FormReport,
    pub refine: RefineReport,
    pub eval: EvalReport,
}

pub fn cmd_run(config: &RunConfig) -> Result<RunReport, Error> {
    let ingest = cmd_ingest(config)?;
    let form = cmd_form(config)?;
    let refine_goals = default_refine_goals(config);
    let refine = cmd_refine(config, config.refine_rounds, &refine_goals)?;
    let eval_goals = default_eval_goals(config);
    let eval = cmd_eval(config, &eval_goals)?;
    Ok(RunReport { ingest, form, refine, eval })
}
