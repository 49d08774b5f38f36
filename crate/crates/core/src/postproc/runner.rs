use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};

use super::{
    RunStatus, TaskExecutor, TaskGraph, TaskManifest, TaskOutcome, TaskRunLog, TaskSpec,
    MISSING_INPUT,
};
use crate::catalog::{Catalog, GenericId};
use crate::error::{Error, Result};

/// Wall-clock timestamps that never go backwards within one run.
#[derive(Debug, Clone, Copy)]
struct RunClock {
    wall: DateTime<Utc>,
    start: Instant,
}

impl RunClock {
    fn new() -> Self {
        RunClock {
            wall: Utc::now(),
            start: Instant::now(),
        }
    }

    fn now(&self) -> DateTime<Utc> {
        self.wall + chrono::Duration::from_std(self.start.elapsed()).unwrap_or_default()
    }
}

/// Task registry and scheduler on top of a catalog.
#[derive(Debug, Clone)]
pub struct PostProc {
    catalog: Arc<Catalog>,
    poll_interval: Duration,
}

struct Finished {
    name: String,
    started_at: DateTime<Utc>,
    ended_at: DateTime<Utc>,
    outcome: TaskOutcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Waiting,
    Running,
    Done(RunStatus),
}

impl PostProc {
    pub fn new(catalog: Arc<Catalog>) -> Self {
        PostProc {
            catalog,
            poll_interval: Duration::from_millis(100),
        }
    }

    /// How often the scheduler rechecks waiting tasks while others run.
    pub fn with_poll_interval(mut self, poll_interval: Duration) -> Self {
        self.poll_interval = poll_interval;
        self
    }

    pub fn catalog(&self) -> &Arc<Catalog> {
        &self.catalog
    }

    pub fn graph(&self) -> Result<TaskGraph> {
        Ok(TaskGraph::from_trusted(self.catalog.tasks()?))
    }

    /// Validates `spec` against the stored tasks and stores it; returns the new graph.
    pub fn add_task(&self, spec: TaskSpec) -> Result<TaskGraph> {
        for id in spec.inputs.iter().chain(&spec.outputs) {
            self.catalog.get_generic(*id)?;
        }
        let tasks = self.catalog.insert_task(&spec, |existing| {
            TaskGraph::from_trusted(existing.to_vec()).check_addition(&spec)
        })?;
        Ok(TaskGraph::from_trusted(tasks))
    }

    pub fn add_manifest(&self, manifest: &TaskManifest) -> Result<TaskGraph> {
        self.add_task(manifest.resolve(&self.catalog)?)
    }

    fn latest_inputs(&self, task: &TaskSpec, record: i64) -> Result<BTreeMap<GenericId, i64>> {
        let mut out = BTreeMap::new();
        for id in &task.inputs {
            if let Some(rev) = self.catalog.latest_revision(*id, record)? {
                out.insert(*id, rev);
            }
        }
        Ok(out)
    }

    /// Names of the tasks that would run for `record`.
    pub fn check_freshness(&self, record_number: i64) -> Result<BTreeSet<String>> {
        let record = self.catalog.resolve_record(record_number)?;
        self.stale(&self.graph()?, record)
    }

    fn stale(&self, graph: &TaskGraph, record: i64) -> Result<BTreeSet<String>> {
        let mut direct = BTreeSet::new();
        for task in graph.tasks() {
            let is_stale = match self.catalog.last_ok_run(&task.name, record)? {
                None => true,
                Some(log) => self
                    .latest_inputs(task, record)?
                    .iter()
                    .any(|(id, rev)| log.input_revisions.get(id).is_none_or(|used| rev > used)),
            };
            if is_stale {
                direct.insert(task.name.clone());
            }
        }
        Ok(graph.downstream_closure(&direct))
    }

    /// Runs every stale task for `record_number` with up to `parallelism`
    /// tasks at once and returns the logs in the order they were written.
    pub fn run(
        &self,
        record_number: i64,
        parallelism: usize,
        executor: &dyn TaskExecutor,
    ) -> Result<Vec<TaskRunLog>> {
        if parallelism == 0 {
            return Err(Error::InvalidArgument(
                "parallelism must be at least 1".into(),
            ));
        }
        let record = self.catalog.resolve_record(record_number)?;
        let graph = self.graph()?;
        let stale = self.stale(&graph, record)?;
        let clock = RunClock::new();
        let mut logs = Vec::new();

        let mut state: BTreeMap<String, State> = BTreeMap::new();
        let mut used_inputs: BTreeMap<String, BTreeMap<GenericId, i64>> = BTreeMap::new();
        for task in graph.tasks() {
            if stale.contains(&task.name) {
                state.insert(task.name.clone(), State::Waiting);
            } else {
                let now = clock.now();
                let last = self.catalog.last_ok_run(&task.name, record)?;
                logs.push(
                    self.catalog.append_task_run(&TaskRunLog {
                        id: 0,
                        task_name: task.name.clone(),
                        record_number: record,
                        started_at: now,
                        ended_at: now,
                        status: RunStatus::SkippedFresh,
                        reason: None,
                        input_revisions: last
                            .as_ref()
                            .map(|l| l.input_revisions.clone())
                            .unwrap_or_default(),
                        output_revisions: last.map(|l| l.output_revisions).unwrap_or_default(),
                    })?,
                );
                state.insert(task.name.clone(), State::Done(RunStatus::SkippedFresh));
            }
        }
        let preds: BTreeMap<String, BTreeSet<String>> = graph
            .tasks()
            .iter()
            .map(|t| (t.name.clone(), graph.predecessors(t)))
            .collect();

        let (job_tx, job_rx) = mpsc::channel::<TaskSpec>();
        let job_rx = Mutex::new(job_rx);
        let (done_tx, done_rx) = mpsc::channel::<Finished>();

        std::thread::scope(|scope| -> Result<()> {
            for _ in 0..parallelism.min(state.len().max(1)) {
                let done_tx = done_tx.clone();
                let job_rx = &job_rx;
                scope.spawn(move || loop {
                    let job = job_rx
                        .lock()
                        .map_err(|_| ())
                        .and_then(|rx| rx.recv().map_err(|_| ()));
                    let Ok(task) = job else { break };
                    let started_at = clock.now();
                    let outcome = executor.execute(&task, record);
                    let ended_at = clock.now();
                    let finished = Finished {
                        name: task.name.clone(),
                        started_at,
                        ended_at,
                        outcome,
                    };
                    if done_tx.send(finished).is_err() {
                        break;
                    }
                });
            }
            drop(done_tx);

            let mut running = 0usize;
            loop {
                // Settle everything that can be decided without running anything.
                let mut ready: VecDeque<&TaskSpec> = VecDeque::new();
                for task in graph.tasks() {
                    if state[&task.name] != State::Waiting {
                        continue;
                    }
                    let p = &preds[&task.name];
                    if p.iter()
                        .any(|n| matches!(state[n], State::Done(s) if s.is_failure()))
                    {
                        let now = clock.now();
                        logs.push(self.catalog.append_task_run(&TaskRunLog {
                            id: 0,
                            task_name: task.name.clone(),
                            record_number: record,
                            started_at: now,
                            ended_at: now,
                            status: RunStatus::Failed,
                            reason: Some(MISSING_INPUT.into()),
                            input_revisions: self.latest_inputs(task, record)?,
                            output_revisions: BTreeMap::new(),
                        })?);
                        state.insert(task.name.clone(), State::Done(RunStatus::Failed));
                        continue;
                    }
                    if !p.iter().all(|n| matches!(state[n], State::Done(_))) {
                        continue;
                    }
                    if self.latest_inputs(task, record)?.len() == task.inputs.len() {
                        ready.push_back(task);
                    }
                }
                for task in ready {
                    used_inputs.insert(task.name.clone(), self.latest_inputs(task, record)?);
                    state.insert(task.name.clone(), State::Running);
                    running += 1;
                    job_tx
                        .send(task.clone())
                        .map_err(|_| Error::Storage("post-processing workers stopped".into()))?;
                }
                if running == 0 {
                    // Nothing in flight can still produce the missing inputs.
                    let stuck: Vec<&TaskSpec> = graph
                        .tasks()
                        .iter()
                        .filter(|t| state[&t.name] == State::Waiting)
                        .collect();
                    if stuck.is_empty() {
                        break;
                    }
                    for task in stuck {
                        let now = clock.now();
                        logs.push(self.catalog.append_task_run(&TaskRunLog {
                            id: 0,
                            task_name: task.name.clone(),
                            record_number: record,
                            started_at: now,
                            ended_at: now,
                            status: RunStatus::Failed,
                            reason: Some(MISSING_INPUT.into()),
                            input_revisions: self.latest_inputs(task, record)?,
                            output_revisions: BTreeMap::new(),
                        })?);
                        state.insert(task.name.clone(), State::Done(RunStatus::Failed));
                    }
                    continue;
                }
                let finished = match done_rx.recv_timeout(self.poll_interval) {
                    Ok(f) => f,
                    Err(RecvTimeoutError::Timeout) => continue,
                    Err(RecvTimeoutError::Disconnected) => {
                        return Err(Error::Storage("post-processing workers stopped".into()))
                    }
                };
                running -= 1;
                let task = graph
                    .task(&finished.name)
                    .expect("finished task is in the graph");
                let mut output_revisions = BTreeMap::new();
                for id in &task.outputs {
                    if let Some(rev) = self.catalog.latest_revision(*id, record)? {
                        output_revisions.insert(*id, rev);
                    }
                }
                let status = finished.outcome.status;
                logs.push(self.catalog.append_task_run(&TaskRunLog {
                    id: 0,
                    task_name: finished.name.clone(),
                    record_number: record,
                    started_at: finished.started_at,
                    ended_at: finished.ended_at,
                    status,
                    reason: finished.outcome.reason,
                    input_revisions: used_inputs.remove(&finished.name).unwrap_or_default(),
                    output_revisions,
                })?);
                log::info!(
                    "task {} for record {record}: {}",
                    finished.name,
                    status.as_str()
                );
                state.insert(finished.name, State::Done(status));
            }
            drop(job_tx);
            Ok(())
        })?;
        Ok(logs)
    }
}
