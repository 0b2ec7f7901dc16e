use std::collections::{HashMap, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::graph::{build_task_graph, PipelineParams, Queue, TaskGraph, TaskKind, TaskNode};
use super::manifest::Session;
use super::sync::{gate_session, sync_frames, GateDecision};
use super::tasks::{run_task, TaskContext};
use crate::error::{Error, Result};
use crate::io::{read_bytes, write_atomic};

pub const REPORT_FILE: &str = "run_report.json";
pub const ARTIFACT_DIR: &str = "artifacts";

/// Hook for simulating failures. Returning an error fails that attempt.
pub trait FaultInjector: Send + Sync {
    fn before_attempt(&self, node: &TaskNode, attempt: u32) -> Result<()>;
}

#[derive(Clone)]
pub struct ExecOptions {
    pub cpu_workers: usize,
    pub accelerator_workers: usize,
    /// Delay before the first retry; doubled on each further retry.
    pub backoff: Duration,
    pub injector: Option<Arc<dyn FaultInjector>>,
}

impl ExecOptions {
    /// `workers` CPU threads and half as many (at least one) accelerator threads.
    pub fn with_workers(workers: usize) -> Self {
        ExecOptions {
            cpu_workers: workers.max(1),
            accelerator_workers: workers.div_ceil(2).max(1),
            ..Default::default()
        }
    }
}

impl Default for ExecOptions {
    fn default() -> Self {
        ExecOptions {
            cpu_workers: 4,
            accelerator_workers: 2,
            backoff: Duration::from_millis(50),
            injector: None,
        }
    }
}

impl std::fmt::Debug for ExecOptions {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExecOptions")
            .field("cpu_workers", &self.cpu_workers)
            .field("accelerator_workers", &self.accelerator_workers)
            .field("backoff", &self.backoff)
            .field("injector", &self.injector.is_some())
            .finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskStatus {
    Done,
    /// Output already present with matching fingerprints.
    Cached,
    Failed,
    /// Skipped because an upstream task failed.
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub id: String,
    pub kind: TaskKind,
    pub status: TaskStatus,
    pub attempts: u32,
    pub output: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fingerprint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub clusters: usize,
    pub wall_ms: f64,
    pub tasks: Vec<TaskRecord>,
}

impl RunReport {
    pub fn count(&self, status: TaskStatus) -> usize {
        self.tasks.iter().filter(|t| t.status == status).count()
    }

    pub fn succeeded(&self) -> bool {
        self.count(TaskStatus::Failed) == 0 && self.count(TaskStatus::Aborted) == 0
    }

    pub fn load(out_dir: &Path) -> Option<RunReport> {
        let bytes = std::fs::read(out_dir.join(REPORT_FILE)).ok()?;
        serde_json::from_slice(&bytes).ok()
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

/// Hash of the task definition, the parameters and the content of every
/// input file.
fn fingerprint(node: &TaskNode, graph: &TaskGraph, params: &PipelineParams, artifacts: &Path) -> Result<String> {
    let mut h = Sha256::new();
    h.update(format!("{:?}\n{:?}\n", node.spec, params).as_bytes());
    let inputs = node
        .external_inputs
        .iter()
        .cloned()
        .chain(node.deps.iter().map(|&d| artifacts.join(&graph.nodes[d].output)));
    for path in inputs {
        let bytes = read_bytes(&path)?;
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(Sha256::digest(&bytes));
    }
    Ok(hex(&h.finalize()))
}

struct Schedule {
    ready: [VecDeque<usize>; 2],
    waiting_on: Vec<usize>,
    records: Vec<Option<TaskRecord>>,
    finished: usize,
}

fn pool(q: Queue) -> usize {
    match q {
        Queue::Cpu => 0,
        Queue::Accelerator => 1,
    }
}

struct Runner<'a> {
    ctx: TaskContext<'a>,
    opts: &'a ExecOptions,
    previous: HashMap<String, TaskRecord>,
    dependents: Vec<Vec<usize>>,
    state: Mutex<Schedule>,
    wake: Condvar,
}

impl Runner<'_> {
    fn worker(&self, queue: usize) {
        loop {
            let next = {
                let mut s = self.state.lock().expect("scheduler lock");
                loop {
                    if let Some(i) = s.ready[queue].pop_front() {
                        break Some(i);
                    }
                    if s.finished == s.records.len() {
                        break None;
                    }
                    s = self.wake.wait(s).expect("scheduler lock");
                }
            };
            let Some(i) = next else { return };
            let record = self.execute(i);
            let mut s = self.state.lock().expect("scheduler lock");
            let ok = matches!(record.status, TaskStatus::Done | TaskStatus::Cached);
            s.records[i] = Some(record);
            s.finished += 1;
            if ok {
                for &d in &self.dependents[i] {
                    s.waiting_on[d] -= 1;
                    if s.waiting_on[d] == 0 && s.records[d].is_none() {
                        let q = pool(self.ctx.graph.nodes[d].queue);
                        s.ready[q].push_back(d);
                    }
                }
            } else {
                self.abort_downstream(&mut s, i);
            }
            self.wake.notify_all();
        }
    }

    fn abort_downstream(&self, s: &mut Schedule, failed: usize) {
        let mut stack = self.dependents[failed].clone();
        while let Some(d) = stack.pop() {
            if s.records[d].is_some() {
                continue;
            }
            let node = &self.ctx.graph.nodes[d];
            s.records[d] = Some(TaskRecord {
                id: node.id.clone(),
                kind: node.kind,
                status: TaskStatus::Aborted,
                attempts: 0,
                output: node.output.clone(),
                fingerprint: None,
                output_sha256: None,
                error: Some(format!("upstream {} failed", self.ctx.graph.nodes[failed].id)),
                wall_ms: 0.0,
            });
            s.finished += 1;
            stack.extend(self.dependents[d].iter().copied());
        }
    }

    fn execute(&self, i: usize) -> TaskRecord {
        let node = &self.ctx.graph.nodes[i];
        let start = Instant::now();
        let mut record = TaskRecord {
            id: node.id.clone(),
            kind: node.kind,
            status: TaskStatus::Failed,
            attempts: 0,
            output: node.output.clone(),
            fingerprint: None,
            output_sha256: None,
            error: None,
            wall_ms: 0.0,
        };
        let out_path = self.ctx.artifacts.join(&node.output);
        for attempt in 0..=node.max_retries {
            record.attempts = attempt + 1;
            match self.attempt(node, attempt, &out_path) {
                Ok((status, fp, sha)) => {
                    record.status = status;
                    record.fingerprint = Some(fp);
                    record.output_sha256 = Some(sha);
                    record.error = None;
                    break;
                }
                Err(e) => {
                    log::warn!("{} attempt {} failed: {e}", node.id, attempt + 1);
                    record.error = Some(e.to_string());
                    if attempt < node.max_retries {
                        std::thread::sleep(self.opts.backoff * 2u32.pow(attempt));
                    }
                }
            }
        }
        if record.status == TaskStatus::Failed {
            log::error!("{} failed after {} attempts", node.id, record.attempts);
        }
        record.wall_ms = start.elapsed().as_secs_f64() * 1e3;
        record
    }

    fn attempt(&self, node: &TaskNode, attempt: u32, out_path: &Path) -> Result<(TaskStatus, String, String)> {
        if let Some(inj) = &self.opts.injector {
            inj.before_attempt(node, attempt)?;
        }
        let fp = fingerprint(node, self.ctx.graph, self.ctx.params, self.ctx.artifacts)?;
        if let Some(prev) = self.previous.get(&node.id) {
            if prev.fingerprint.as_deref() == Some(fp.as_str()) {
                if let (Some(want), Ok(bytes)) = (&prev.output_sha256, std::fs::read(out_path)) {
                    if *want == sha256_hex(&bytes) {
                        return Ok((TaskStatus::Cached, fp, want.clone()));
                    }
                }
            }
        }
        let bytes = run_task(&self.ctx, node)?;
        write_atomic(out_path, &bytes)?;
        Ok((TaskStatus::Done, fp, sha256_hex(&bytes)))
    }
}

/// Runs a graph under `out_dir/artifacts`, skipping tasks whose fingerprint
/// and output match the report of the previous run, and writes the new
/// report to `out_dir/run_report.json`.
pub fn execute_graph(
    session: &Session,
    graph: &TaskGraph,
    params: &PipelineParams,
    out_dir: &Path,
    opts: &ExecOptions,
) -> Result<RunReport> {
    let start = Instant::now();
    let artifacts = out_dir.join(ARTIFACT_DIR);
    std::fs::create_dir_all(&artifacts).map_err(|e| Error::io(&artifacts, e))?;
    let previous = RunReport::load(out_dir)
        .map(|r| r.tasks.into_iter().map(|t| (t.id.clone(), t)).collect())
        .unwrap_or_default();
    let n = graph.nodes.len();
    let mut ready = [VecDeque::new(), VecDeque::new()];
    for (i, node) in graph.nodes.iter().enumerate() {
        if node.deps.is_empty() {
            ready[pool(node.queue)].push_back(i);
        }
    }
    let runner = Runner {
        ctx: TaskContext {
            session,
            artifacts: &artifacts,
            params,
            graph,
        },
        opts,
        previous,
        dependents: graph.dependents(),
        state: Mutex::new(Schedule {
            ready,
            waiting_on: graph.nodes.iter().map(|n| n.deps.len()).collect(),
            records: vec![None; n],
            finished: 0,
        }),
        wake: Condvar::new(),
    };
    std::thread::scope(|scope| {
        for _ in 0..opts.cpu_workers.max(1) {
            scope.spawn(|| runner.worker(0));
        }
        for _ in 0..opts.accelerator_workers.max(1) {
            scope.spawn(|| runner.worker(1));
        }
    });
    let state = runner.state.into_inner().expect("scheduler lock");
    let report = RunReport {
        clusters: graph.clusters.len(),
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
        tasks: state.records.into_iter().map(|r| r.expect("every task finishes")).collect(),
    };
    let mut bytes = serde_json::to_vec_pretty(&report)?;
    bytes.push(b'\n');
    write_atomic(&out_dir.join(REPORT_FILE), &bytes)?;
    Ok(report)
}

/// Gate, cluster, build and execute. A rejected session is an error.
pub fn run_pipeline(session: &Session, params: &PipelineParams, out_dir: &Path, opts: &ExecOptions) -> Result<RunReport> {
    if let GateDecision::Reject { detail, .. } = gate_session(&session.manifest, &params.sync, &params.gate) {
        return Err(Error::GateRejected(detail));
    }
    let clusters = sync_frames(&session.manifest, &params.sync);
    let graph = build_task_graph(session, &clusters, params)?;
    log::info!("{} clusters, {} tasks", clusters.len(), graph.nodes.len());
    execute_graph(session, &graph, params, out_dir, opts)
}
