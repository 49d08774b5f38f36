use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::TaskSpec;
use crate::catalog::GenericId;
use crate::error::{Error, Result};

/// The set of registered tasks. Always acyclic with one producer per signal.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TaskGraph {
    tasks: Vec<TaskSpec>,
}

impl TaskGraph {
    pub fn new() -> Self {
        TaskGraph::default()
    }

    /// Builds a graph from tasks that were validated when they were stored.
    pub(crate) fn from_trusted(tasks: Vec<TaskSpec>) -> Self {
        TaskGraph { tasks }
    }

    /// Builds a graph by adding `tasks` one at a time.
    pub fn from_tasks(tasks: impl IntoIterator<Item = TaskSpec>) -> Result<Self> {
        let mut g = TaskGraph::new();
        for t in tasks {
            g.add_task(t)?;
        }
        Ok(g)
    }

    pub fn tasks(&self) -> &[TaskSpec] {
        &self.tasks
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn task(&self, name: &str) -> Option<&TaskSpec> {
        self.tasks.iter().find(|t| t.name == name)
    }

    pub fn producer_of(&self, signal: GenericId) -> Option<&TaskSpec> {
        self.tasks.iter().find(|t| t.outputs.contains(&signal))
    }

    /// Tasks producing any input of `task`.
    pub fn predecessors(&self, task: &TaskSpec) -> BTreeSet<String> {
        task.inputs
            .iter()
            .filter_map(|s| self.producer_of(*s))
            .map(|p| p.name.clone())
            .collect()
    }

    fn consumers_of(&self, signal: GenericId) -> impl Iterator<Item = &TaskSpec> {
        self.tasks
            .iter()
            .filter(move |t| t.inputs.contains(&signal))
    }

    pub fn add_task(&mut self, spec: TaskSpec) -> Result<()> {
        self.check_addition(&spec)?;
        self.tasks.push(spec);
        Ok(())
    }

    /// Would adding `spec` keep the graph valid?
    pub fn check_addition(&self, spec: &TaskSpec) -> Result<()> {
        if spec.name.is_empty() {
            return Err(Error::InvalidTask("task name is empty".into()));
        }
        if self.task(&spec.name).is_some() {
            return Err(Error::DuplicateTask(spec.name.clone()));
        }
        if spec.outputs.is_empty() {
            return Err(Error::InvalidTask(format!(
                "task {:?} has no outputs",
                spec.name
            )));
        }
        if !(spec.timeout_s.is_finite() && spec.timeout_s > 0.0) {
            return Err(Error::InvalidTask(format!(
                "task {:?} needs a positive timeout",
                spec.name
            )));
        }
        if spec.inputs.intersection(&spec.outputs).next().is_some() {
            return Err(Error::CycleDetected(vec![spec.name.clone()]));
        }
        for out in &spec.outputs {
            if let Some(p) = self.producer_of(*out) {
                return Err(Error::DuplicateProducer {
                    task: p.name.clone(),
                    signal: out.0,
                });
            }
        }
        if let Some(cycle) = self.cycle_through(spec) {
            return Err(Error::CycleDetected(cycle));
        }
        Ok(())
    }

    /// Shortest cycle through `spec`, if adding it closes one. The existing
    /// graph is acyclic, so any new cycle must pass through `spec`.
    fn cycle_through(&self, spec: &TaskSpec) -> Option<Vec<String>> {
        let mut parent: BTreeMap<&str, &str> = BTreeMap::new();
        let mut queue: VecDeque<&TaskSpec> = VecDeque::new();
        for out in &spec.outputs {
            for c in self.consumers_of(*out) {
                if !parent.contains_key(c.name.as_str()) {
                    parent.insert(&c.name, &spec.name);
                    queue.push_back(c);
                }
            }
        }
        while let Some(t) = queue.pop_front() {
            if t.outputs.iter().any(|o| spec.inputs.contains(o)) {
                let mut path = vec![t.name.clone()];
                let mut cur = t.name.as_str();
                while let Some(&p) = parent.get(cur) {
                    if p == spec.name {
                        break;
                    }
                    path.push(p.to_string());
                    cur = p;
                }
                path.push(spec.name.clone());
                path.reverse();
                return Some(self.rotate_to_oldest(path));
            }
            for out in &t.outputs {
                for c in self.consumers_of(*out) {
                    if !parent.contains_key(c.name.as_str()) {
                        parent.insert(&c.name, &t.name);
                        queue.push_back(c);
                    }
                }
            }
        }
        None
    }

    /// Starts the cycle listing at the earliest registered task.
    fn rotate_to_oldest(&self, mut cycle: Vec<String>) -> Vec<String> {
        let rank = |n: &String| {
            self.tasks
                .iter()
                .position(|t| &t.name == n)
                .unwrap_or(usize::MAX)
        };
        if let Some(start) = (0..cycle.len()).min_by_key(|&i| rank(&cycle[i])) {
            cycle.rotate_left(start);
        }
        cycle
    }

    /// Every task reachable from `start` (inclusive) along signal edges.
    pub fn downstream_closure(&self, start: &BTreeSet<String>) -> BTreeSet<String> {
        let mut seen: BTreeSet<String> = start
            .iter()
            .filter(|n| self.task(n).is_some())
            .cloned()
            .collect();
        let mut queue: VecDeque<String> = seen.iter().cloned().collect();
        while let Some(name) = queue.pop_front() {
            let Some(t) = self.task(&name) else { continue };
            for out in &t.outputs {
                for c in self.consumers_of(*out) {
                    if seen.insert(c.name.clone()) {
                        queue.push_back(c.name.clone());
                    }
                }
            }
        }
        seen
    }

    /// Tasks that (transitively) depend on `signal`.
    pub fn downstream_of_signal(&self, signal: GenericId) -> BTreeSet<String> {
        let direct: BTreeSet<String> = self.consumers_of(signal).map(|t| t.name.clone()).collect();
        self.downstream_closure(&direct)
    }
}

/// Layers tasks into waves: wave `k` holds the tasks whose producing
/// predecessors all sit in waves `< k`.
pub fn plan(graph: &TaskGraph) -> Vec<BTreeSet<String>> {
    let preds: BTreeMap<&str, BTreeSet<String>> = graph
        .tasks()
        .iter()
        .map(|t| (t.name.as_str(), graph.predecessors(t)))
        .collect();
    let mut placed: BTreeSet<String> = BTreeSet::new();
    let mut waves = Vec::new();
    while placed.len() < graph.len() {
        let wave: BTreeSet<String> = preds
            .iter()
            .filter(|(name, p)| !placed.contains(**name) && p.iter().all(|x| placed.contains(x)))
            .map(|(name, _)| name.to_string())
            .collect();
        if wave.is_empty() {
            // unreachable for validated graphs
            break;
        }
        placed.extend(wave.iter().cloned());
        waves.push(wave);
    }
    waves
}
