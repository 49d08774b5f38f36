use std::collections::BTreeMap;
use std::io::Read;
use std::os::unix::process::CommandExt;
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use super::{RunStatus, TaskSpec};

/// Result of running one task body.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskOutcome {
    pub status: RunStatus,
    pub reason: Option<String>,
}

impl TaskOutcome {
    pub fn ok() -> Self {
        TaskOutcome {
            status: RunStatus::Ok,
            reason: None,
        }
    }

    pub fn failed(reason: impl Into<String>) -> Self {
        TaskOutcome {
            status: RunStatus::Failed,
            reason: Some(reason.into()),
        }
    }

    pub fn timeout(reason: impl Into<String>) -> Self {
        TaskOutcome {
            status: RunStatus::Timeout,
            reason: Some(reason.into()),
        }
    }
}

/// Runs task bodies. Called from worker threads.
pub trait TaskExecutor: Send + Sync {
    fn execute(&self, task: &TaskSpec, record_number: i64) -> TaskOutcome;
}

/// Runs each task's argv as a child process.
///
/// `{record}` in any argument is replaced by the record number, and the
/// child sees `CDB_RECORD` plus any extra variables given here. A child still
/// running after the task's timeout is killed.
#[derive(Debug, Clone)]
pub struct CommandExecutor {
    env: BTreeMap<String, String>,
    poll: Duration,
}

impl Default for CommandExecutor {
    fn default() -> Self {
        CommandExecutor {
            env: BTreeMap::new(),
            poll: Duration::from_millis(10),
        }
    }
}

impl CommandExecutor {
    pub fn new() -> Self {
        CommandExecutor::default()
    }

    pub fn env(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.env.insert(key.into(), value.into());
        self
    }
}

fn tail(bytes: &[u8], max: usize) -> String {
    let text = String::from_utf8_lossy(bytes);
    let text = text.trim();
    let start = text.len().saturating_sub(max);
    let start = (start..text.len())
        .find(|&i| text.is_char_boundary(i))
        .unwrap_or(text.len());
    text[start..].to_string()
}

/// Kills the child and anything it spawned; it leads its own process group.
fn kill_group(child: &mut Child) {
    if let Ok(pid) = libc::pid_t::try_from(child.id()) {
        // SAFETY: plain syscall on a process group we created.
        unsafe {
            libc::kill(-pid, libc::SIGKILL);
        }
    }
    let _ = child.kill();
    let _ = child.wait();
}

impl TaskExecutor for CommandExecutor {
    fn execute(&self, task: &TaskSpec, record_number: i64) -> TaskOutcome {
        let record = record_number.to_string();
        let argv: Vec<String> = task
            .command
            .iter()
            .map(|a| a.replace("{record}", &record))
            .collect();
        let Some((program, args)) = argv.split_first() else {
            return TaskOutcome::failed("empty command");
        };
        let mut child = match Command::new(program)
            .args(args)
            .env("CDB_RECORD", &record)
            .envs(&self.env)
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::piped())
            .process_group(0)
            .spawn()
        {
            Ok(c) => c,
            Err(e) => return TaskOutcome::failed(format!("spawn {program}: {e}")),
        };
        // Drain stderr on a side thread so a chatty child cannot block on a full pipe.
        let mut stderr = child.stderr.take();
        let reader = std::thread::spawn(move || {
            let mut buf = Vec::new();
            if let Some(s) = stderr.as_mut() {
                let _ = s.read_to_end(&mut buf);
            }
            buf
        });
        let deadline = Instant::now() + Duration::from_secs_f64(task.timeout_s);
        let status = loop {
            match child.try_wait() {
                Ok(Some(status)) => break Some(status),
                Ok(None) if Instant::now() >= deadline => {
                    kill_group(&mut child);
                    break None;
                }
                Ok(None) => std::thread::sleep(self.poll),
                Err(e) => {
                    kill_group(&mut child);
                    return TaskOutcome::failed(format!("wait: {e}"));
                }
            }
        };
        let err = reader.join().unwrap_or_default();
        match status {
            None => TaskOutcome::timeout(format!("killed after {} s", task.timeout_s)),
            Some(s) if s.success() => TaskOutcome::ok(),
            Some(s) => {
                let msg = tail(&err, 500);
                if msg.is_empty() {
                    TaskOutcome::failed(format!("exit status {s}"))
                } else {
                    TaskOutcome::failed(format!("exit status {s}: {msg}"))
                }
            }
        }
    }
}

/// Runs an in-process closure per task; handy for tests and embedding.
pub struct FnExecutor<F>(pub F);

impl<F> TaskExecutor for FnExecutor<F>
where
    F: Fn(&TaskSpec, i64) -> TaskOutcome + Send + Sync,
{
    fn execute(&self, task: &TaskSpec, record_number: i64) -> TaskOutcome {
        (self.0)(task, record_number)
    }
}
