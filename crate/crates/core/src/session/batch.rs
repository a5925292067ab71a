//! Batch execution over (claim, pair, group, run) cells with JSONL persistence.
//!
//! Layout under the plan's output directory:
//!
//! ```text
//! manifest.json
//! r0/sessions.jsonl  r0/judgments.jsonl  r0/errors.jsonl
//! r1/...
//! ```
//!
//! Records are appended in cell order. A rerun reads back the completed cell
//! ids and only executes what is missing; failed sessions resume from the
//! checkpoint stored in `errors.jsonl`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::thread;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{build_groups, GroupConfig, JudgmentRecord, Session, SessionError, SessionRunner};
use crate::corpus::{Claim, PersuasionPair};
use crate::gateway::{Backend, ChatBackend, ChatTurn, GatewayError, GenerationConfig};
use crate::persona::Demographic;
use crate::plan::{ExperimentPlan, PlanError};

pub const SESSIONS_FILE: &str = "sessions.jsonl";
pub const JUDGMENTS_FILE: &str = "judgments.jsonl";
pub const ERRORS_FILE: &str = "errors.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, thiserror::Error)]
pub enum BatchError {
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
}

#[derive(Debug, Clone, Default)]
pub struct BatchOptions {
    /// Stop after executing this many cells (simulates an interruption).
    pub stop_after: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct BatchSummary {
    pub total_cells: usize,
    pub complete_cells: usize,
    pub executed_cells: usize,
    pub failed_cells: usize,
    pub backend_calls: u64,
    pub run_dirs: Vec<PathBuf>,
}

impl BatchSummary {
    pub fn is_complete(&self) -> bool {
        self.complete_cells == self.total_cells
    }
}

/// One line of `errors.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub cell: String,
    pub error: String,
    pub transient: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<Session>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStatus {
    pub run: u32,
    pub cells: usize,
    pub complete: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendEntry {
    pub name: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub status: String,
    pub plan: serde_json::Value,
    pub plan_sha256: String,
    pub seed: u64,
    /// How per-agent seeds are derived from `seed`.
    pub agent_seed_rule: String,
    pub templates: BTreeMap<String, String>,
    pub corpus: BTreeMap<String, String>,
    pub backends: Vec<BackendEntry>,
    pub runs: Vec<RunStatus>,
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Self, BatchError> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|source| BatchError::Io { path: path.clone(), source })?;
        serde_json::from_str(&text).map_err(|e| BatchError::Corrupt {
            path,
            line: e.line(),
            message: e.to_string(),
        })
    }
}

#[derive(Debug, Clone)]
enum CellKind {
    Session { pair: usize, group: GroupConfig },
    Judgment { pair: Option<usize>, demographic: Demographic },
}

#[derive(Debug, Clone)]
struct Cell {
    id: String,
    backend: usize,
    claim: usize,
    kind: CellKind,
}

enum Outcome {
    Session(Box<Session>),
    Judgment(JudgmentRecord),
}

struct Counting<'a> {
    inner: Backend,
    calls: &'a AtomicU64,
}

impl ChatBackend for Counting<'_> {
    fn complete(&self, config: &GenerationConfig, turns: &[ChatTurn]) -> Result<String, GatewayError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.complete(config, turns)
    }

    fn describe(&self) -> String {
        self.inner.describe()
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn agent_seed(seed: u64, run: u32, cell: &str, agent: usize) -> u64 {
    let digest = Sha256::digest(format!("{seed}|{run}|{cell}|{agent}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

const AGENT_SEED_RULE: &str = "first 8 bytes (LE) of sha256(\"{seed}|{run}|{cell}|{agent}\")";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BatchError + '_ {
    move |source| BatchError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn plan_cells(plan: &ExperimentPlan, backends: &[(String, Backend)], claims: &[(Claim, Vec<PersuasionPair>)]) -> Vec<Cell> {
    let groups = build_groups(&plan.demographics, plan.group_mode);
    let mut cells = Vec::new();
    for (b, (name, _)) in backends.iter().enumerate() {
        for (c, (claim, pairs)) in claims.iter().enumerate() {
            if plan.multi_agent {
                for p in 0..pairs.len() {
                    for g in &groups {
                        cells.push(Cell {
                            id: format!("{name}/{}/p{p}/{}", claim.id, g.label()),
                            backend: b,
                            claim: c,
                            kind: CellKind::Session { pair: p, group: *g },
                        });
                    }
                }
            }
            if plan.single_agent {
                let mut conditions: Vec<Option<usize>> = (0..pairs.len()).map(Some).collect();
                if plan.control {
                    conditions.push(None);
                }
                for cond in conditions {
                    let tag = cond.map_or_else(|| "nop".to_string(), |p| format!("p{p}"));
                    for d in &plan.demographics {
                        cells.push(Cell {
                            id: format!("{name}/{}/{tag}/{d}", claim.id),
                            backend: b,
                            claim: c,
                            kind: CellKind::Judgment {
                                pair: cond,
                                demographic: *d,
                            },
                        });
                    }
                }
            }
        }
    }
    cells
}

/// Drops a torn final line left by a crash mid-write.
fn repair_tail(path: &Path) -> Result<(), BatchError> {
    let Ok(bytes) = fs::read(path) else { return Ok(()) };
    if bytes.is_empty() || bytes.ends_with(b"\n") {
        return Ok(());
    }
    let keep = bytes.iter().rposition(|b| *b == b'\n').map_or(0, |i| i + 1);
    log::warn!("{}: discarding torn trailing record", path.display());
    fs::write(path, &bytes[..keep]).map_err(io_err(path))
}

fn read_lines(path: &Path) -> Result<Vec<String>, BatchError> {
    match fs::read_to_string(path) {
        Ok(text) => Ok(text.lines().filter(|l| !l.trim().is_empty()).map(str::to_string).collect()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Vec::new()),
        Err(e) => Err(io_err(path)(e)),
    }
}

#[derive(Deserialize)]
struct SessionId {
    session_id: String,
}

#[derive(Deserialize)]
struct JudgmentId {
    id: Option<String>,
}

fn line_ids(path: &Path, lines: &[String], key: fn(&str) -> Result<Option<String>, serde_json::Error>) -> Result<Vec<String>, BatchError> {
    lines
        .iter()
        .enumerate()
        .map(|(i, l)| {
            key(l)
                .map_err(|e| BatchError::Corrupt {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: e.to_string(),
                })?
                .ok_or_else(|| BatchError::Corrupt {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: "record has no id".into(),
                })
        })
        .collect()
}

fn session_key(l: &str) -> Result<Option<String>, serde_json::Error> {
    serde_json::from_str::<SessionId>(l).map(|s| Some(s.session_id))
}

fn judgment_key(l: &str) -> Result<Option<String>, serde_json::Error> {
    serde_json::from_str::<JudgmentId>(l).map(|j| j.id)
}

fn append(path: &Path, lines: &[String]) -> Result<(), BatchError> {
    if lines.is_empty() {
        return Ok(());
    }
    let mut file = OpenOptions::new().create(true).append(true).open(path).map_err(io_err(path))?;
    let mut buf = String::new();
    for l in lines {
        buf.push_str(l);
        buf.push('\n');
    }
    file.write_all(buf.as_bytes()).map_err(io_err(path))
}

/// Rewrites a record file in cell order; records for unknown cells keep their relative order at the end.
fn compact(path: &Path, order: &HashMap<&str, usize>, key: fn(&str) -> Result<Option<String>, serde_json::Error>) -> Result<(), BatchError> {
    let lines = read_lines(path)?;
    let ids = line_ids(path, &lines, key)?;
    let mut indexed: Vec<(usize, usize, &String)> = lines
        .iter()
        .zip(&ids)
        .enumerate()
        .map(|(i, (l, id))| (order.get(id.as_str()).copied().unwrap_or(usize::MAX), i, l))
        .collect();
    indexed.sort();
    let mut out = String::new();
    for (_, _, l) in indexed {
        out.push_str(l);
        out.push('\n');
    }
    fs::write(path, out).map_err(io_err(path))
}

fn manifest_plan(plan: &ExperimentPlan) -> serde_json::Value {
    let mut value = serde_json::to_value(plan).expect("plan serializes");
    if let Some(obj) = value.as_object_mut() {
        // Paths are machine-specific; checksums identify the inputs instead.
        obj.remove("output");
        obj.remove("templates");
        if let Some(corpus) = obj.get_mut("corpus").and_then(|c| c.as_object_mut()) {
            for key in ["claims", "stances"] {
                if let Some(v) = corpus.get_mut(key) {
                    if let Some(name) = v.as_str().and_then(|p| Path::new(p).file_name()).and_then(|n| n.to_str()) {
                        *v = serde_json::Value::String(name.to_string());
                    }
                }
            }
        }
        if let Some(backends) = obj.get_mut("backends").and_then(|b| b.as_array_mut()) {
            for b in backends.iter_mut().filter_map(|b| b.as_object_mut()) {
                b.remove("config");
            }
        }
    }
    value
}

fn file_checksum(path: &Path) -> Result<String, BatchError> {
    fs::read(path).map(|b| sha256_hex(&b)).map_err(io_err(path))
}

/// Builds the plan's backends and runs every cell.
pub fn run_batch(plan: &ExperimentPlan, options: &BatchOptions) -> Result<BatchSummary, BatchError> {
    let backends = plan
        .backends
        .iter()
        .map(|spec| Ok((spec.name.clone(), spec.build(plan.seed)?)))
        .collect::<Result<Vec<_>, PlanError>>()?;
    run_batch_with(plan, &backends, options)
}

/// Runs every cell against caller-supplied backends, named as in the plan.
pub fn run_batch_with(
    plan: &ExperimentPlan,
    backends: &[(String, Backend)],
    options: &BatchOptions,
) -> Result<BatchSummary, BatchError> {
    plan.validate()?;
    let templates = plan.template_set()?;
    let claims = plan.persuasion_pairs()?;
    let cells = plan_cells(plan, backends, &claims);
    let runner = SessionRunner::new(&templates, &plan.generation);
    let calls = AtomicU64::new(0);
    let order: HashMap<&str, usize> = cells.iter().enumerate().map(|(i, c)| (c.id.as_str(), i)).collect();

    fs::create_dir_all(&plan.output).map_err(io_err(&plan.output))?;
    let mut summary = BatchSummary {
        total_cells: cells.len() * plan.runs as usize,
        ..BatchSummary::default()
    };
    let mut statuses = Vec::new();
    let mut budget = options.stop_after;

    for run in 0..plan.runs {
        let dir = plan.output.join(format!("r{run}"));
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let (sessions_path, judgments_path, errors_path) =
            (dir.join(SESSIONS_FILE), dir.join(JUDGMENTS_FILE), dir.join(ERRORS_FILE));
        for p in [&sessions_path, &judgments_path, &errors_path] {
            repair_tail(p)?;
            OpenOptions::new().create(true).append(true).open(p).map_err(io_err(p))?;
        }

        let mut done: HashSet<String> = HashSet::new();
        done.extend(line_ids(&sessions_path, &read_lines(&sessions_path)?, session_key)?);
        done.extend(line_ids(&judgments_path, &read_lines(&judgments_path)?, judgment_key)?);
        let mut checkpoints: HashMap<String, Session> = HashMap::new();
        for (i, line) in read_lines(&errors_path)?.iter().enumerate() {
            let failure: CellFailure = serde_json::from_str(line).map_err(|e| BatchError::Corrupt {
                path: errors_path.clone(),
                line: i + 1,
                message: e.to_string(),
            })?;
            match failure.checkpoint {
                Some(cp) => {
                    checkpoints.insert(failure.cell, cp);
                }
                None => {
                    checkpoints.remove(&failure.cell);
                }
            }
        }

        let pending: Vec<&Cell> = cells.iter().filter(|c| !done.contains(&c.id)).collect();
        let mut failed = 0;
        let mut stopped = false;
        for chunk in pending.chunks(plan.concurrency) {
            let chunk = match budget {
                Some(0) => {
                    stopped = true;
                    break;
                }
                Some(n) if n < chunk.len() => &chunk[..n],
                _ => chunk,
            };
            let results: Vec<Result<Outcome, CellFailure>> = thread::scope(|scope| {
                let handles: Vec<_> = chunk
                    .iter()
                    .map(|cell| {
                        let (name, backend) = &backends[cell.backend];
                        let (claim, pairs) = &claims[cell.claim];
                        let checkpoint = checkpoints.get(&cell.id).cloned();
                        let runner = &runner;
                        let calls = &calls;
                        scope.spawn(move || {
                            let agent = |i: usize| Counting {
                                inner: backend.for_agent(agent_seed(plan.seed, run, &cell.id, i)),
                                calls,
                            };
                            execute(runner, cell, run, name, claim, pairs, checkpoint, agent)
                        })
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("cell thread panicked")).collect()
            });
            let (mut s_lines, mut j_lines, mut e_lines) = (Vec::new(), Vec::new(), Vec::new());
            for r in results {
                match r {
                    Ok(Outcome::Session(s)) => s_lines.push(serde_json::to_string(&s).expect("session serializes")),
                    Ok(Outcome::Judgment(j)) => j_lines.push(serde_json::to_string(&j).expect("record serializes")),
                    Err(f) => {
                        log::warn!("cell {} failed: {}", f.cell, f.error);
                        failed += 1;
                        e_lines.push(serde_json::to_string(&f).expect("failure serializes"));
                    }
                }
            }
            summary.executed_cells += chunk.len();
            append(&sessions_path, &s_lines)?;
            append(&judgments_path, &j_lines)?;
            append(&errors_path, &e_lines)?;
            done.extend(chunk.iter().map(|c| c.id.clone()));
            if let Some(n) = budget.as_mut() {
                *n -= chunk.len();
            }
        }

        let complete = line_ids(&sessions_path, &read_lines(&sessions_path)?, session_key)?.len()
            + line_ids(&judgments_path, &read_lines(&judgments_path)?, judgment_key)?.len();
        if complete == cells.len() {
            compact(&sessions_path, &order, session_key)?;
            compact(&judgments_path, &order, judgment_key)?;
        }
        summary.complete_cells += complete;
        summary.failed_cells += failed;
        summary.run_dirs.push(dir);
        statuses.push(RunStatus {
            run,
            cells: cells.len(),
            complete,
            failed,
        });
        if stopped {
            break;
        }
    }
    for run in statuses.len() as u32..plan.runs {
        statuses.push(RunStatus {
            run,
            cells: cells.len(),
            complete: 0,
            failed: 0,
        });
    }
    summary.backend_calls = calls.load(Ordering::Relaxed);

    let plan_value = manifest_plan(plan);
    let mut corpus = BTreeMap::new();
    corpus.insert("claims".to_string(), file_checksum(&plan.corpus.claims)?);
    if let Some(s) = &plan.corpus.stances {
        corpus.insert("stances".to_string(), file_checksum(s)?);
    }
    let manifest = Manifest {
        status: if summary.is_complete() { "complete" } else { "partial" }.to_string(),
        plan_sha256: sha256_hex(plan_value.to_string().as_bytes()),
        plan: plan_value,
        seed: plan.seed,
        agent_seed_rule: AGENT_SEED_RULE.to_string(),
        templates: templates.checksums(),
        corpus,
        backends: backends
            .iter()
            .map(|(name, b)| BackendEntry {
                name: name.clone(),
                description: b.describe(),
            })
            .collect(),
        runs: statuses,
    };
    let path = plan.output.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(&path, text).map_err(io_err(&path))?;
    Ok(summary)
}

#[allow(clippy::too_many_arguments)]
fn execute<'a>(
    runner: &SessionRunner<'_>,
    cell: &Cell,
    run: u32,
    backend_name: &str,
    claim: &Claim,
    pairs: &[PersuasionPair],
    checkpoint: Option<Session>,
    agent: impl Fn(usize) -> Counting<'a>,
) -> Result<Outcome, CellFailure> {
    let fail = |error: String, transient: bool, checkpoint: Option<Session>| CellFailure {
        cell: cell.id.clone(),
        error,
        transient,
        checkpoint,
    };
    match &cell.kind {
        CellKind::Session { pair, group } => {
            let agents: Vec<Counting<'a>> = (0..group.members().len()).map(&agent).collect();
            let refs: Vec<&dyn ChatBackend> = agents.iter().map(|a| a as &dyn ChatBackend).collect();
            let result = match checkpoint {
                Some(cp) if cp.claim.id == claim.id && cp.group == *group => runner.resume(&refs, cp),
                _ => runner.run_session(&refs, claim, &pairs[*pair], *group, run),
            };
            match result {
                Ok(mut s) => {
                    s.session_id = cell.id.clone();
                    s.backend = backend_name.to_string();
                    s.run_index = run;
                    Ok(Outcome::Session(Box::new(s)))
                }
                Err(SessionError::Backend {
                    checkpoint, source, ..
                }) => Err(fail(source.to_string(), source.is_transient(), Some(*checkpoint))),
                Err(e) => Err(fail(e.to_string(), false, None)),
            }
        }
        CellKind::Judgment { pair, demographic } => {
            let backend = agent(0);
            match runner.run_single_agent(&backend, *demographic, claim, pair.map(|p| &pairs[p])) {
                Ok(mut rec) => {
                    rec.id = Some(cell.id.clone());
                    rec.run_index = Some(run);
                    rec.backend = Some(backend_name.to_string());
                    Ok(Outcome::Judgment(rec))
                }
                Err(SessionError::Judgment(source)) => Err(fail(source.to_string(), source.is_transient(), None)),
                Err(e) => Err(fail(e.to_string(), false, None)),
            }
        }
    }
}
