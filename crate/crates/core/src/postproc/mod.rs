//! Dependency-driven post-processing.
//!
//! Tasks declare input and output generic signals. Together they form a
//! bipartite graph (signal -> task -> signal) that must stay acyclic, with
//! every signal produced by at most one task. For a record, [`PostProc::run`]
//! executes every stale task once all of its inputs exist, in parallel where
//! the dependencies allow, and logs one [`TaskRunLog`] per task.

mod exec;
mod graph;
mod manifest;
mod runner;

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::catalog::GenericId;

pub use exec::{CommandExecutor, FnExecutor, TaskExecutor, TaskOutcome};
pub use graph::{plan, TaskGraph};
pub use manifest::TaskManifest;
pub use runner::PostProc;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub inputs: BTreeSet<GenericId>,
    pub outputs: BTreeSet<GenericId>,
    /// argv template; `{record}` is replaced by the record number.
    pub command: Vec<String>,
    pub timeout_s: f64,
}

impl TaskSpec {
    pub fn new(
        name: impl Into<String>,
        inputs: impl IntoIterator<Item = GenericId>,
        outputs: impl IntoIterator<Item = GenericId>,
    ) -> Self {
        TaskSpec {
            name: name.into(),
            inputs: inputs.into_iter().collect(),
            outputs: outputs.into_iter().collect(),
            command: Vec::new(),
            timeout_s: 60.0,
        }
    }

    pub fn command<S: Into<String>>(mut self, argv: impl IntoIterator<Item = S>) -> Self {
        self.command = argv.into_iter().map(Into::into).collect();
        self
    }

    pub fn timeout_s(mut self, timeout_s: f64) -> Self {
        self.timeout_s = timeout_s;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RunStatus {
    Ok,
    Failed,
    SkippedFresh,
    Timeout,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Ok => "OK",
            RunStatus::Failed => "FAILED",
            RunStatus::SkippedFresh => "SKIPPED_FRESH",
            RunStatus::Timeout => "TIMEOUT",
        }
    }

    pub fn parse(s: &str) -> Option<RunStatus> {
        match s {
            "OK" => Some(RunStatus::Ok),
            "FAILED" => Some(RunStatus::Failed),
            "SKIPPED_FRESH" => Some(RunStatus::SkippedFresh),
            "TIMEOUT" => Some(RunStatus::Timeout),
            _ => None,
        }
    }

    pub fn is_failure(self) -> bool {
        matches!(self, RunStatus::Failed | RunStatus::Timeout)
    }
}

/// Reason recorded for tasks whose inputs never became available.
pub const MISSING_INPUT: &str = "MissingInput";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRunLog {
    pub id: i64,
    pub task_name: String,
    pub record_number: i64,
    pub started_at: DateTime<Utc>,
    pub ended_at: DateTime<Utc>,
    pub status: RunStatus,
    pub reason: Option<String>,
    pub input_revisions: BTreeMap<GenericId, i64>,
    pub output_revisions: BTreeMap<GenericId, i64>,
}
