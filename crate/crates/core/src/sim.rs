//! Discrete-event model of a quantum data center.
//!
//! Every node owns a strict FIFO queue. A task placed on a node starts when both the
//! task has arrived and the node's previous task has completed; its execution time is
//! `depth * shots / d1cps`. Because that model is deterministic, start and completion
//! times are fixed the moment a placement is accepted. The future `Start`/`Complete`
//! events are still queued and only enter the event log once the clock passes them, so
//! the log is always in `(time, sequence)` order.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, VecDeque};
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::workload::BackendRegistry;

/// Static capabilities of one quantum backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QNodeSpec {
    pub id: usize,
    pub name: String,
    pub qubits: u32,
    pub quantum_volume: u32,
    /// Depth-1 circuit layers executed per second.
    pub d1cps: f64,
    pub gate_set: BTreeSet<String>,
    pub topology: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Pending,
    Running,
    Completed,
    FailedPermanent,
}

impl TaskStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, TaskStatus::Completed | TaskStatus::FailedPermanent)
    }
}

/// One gate-based circuit job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTask {
    pub id: usize,
    #[serde(default)]
    pub app: String,
    pub qubits: u32,
    /// Depth before any node-specific transpilation overhead.
    pub base_depth: u32,
    pub gates: BTreeSet<String>,
    pub shots: u32,
    pub topology: String,
    pub arrival: f64,
    #[serde(default = "pending")]
    pub status: TaskStatus,
    #[serde(default)]
    pub replacement_count: u32,
}

fn pending() -> TaskStatus {
    TaskStatus::Pending
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectionReason {
    InsufficientQubits,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub node_id: usize,
    pub start_time: f64,
    pub exec_time: f64,
    pub completion_time: f64,
    /// Queueing wait plus execution, measured from arrival.
    pub total_time: f64,
}

impl Placement {
    pub fn wait_time(&self, arrival: f64) -> f64 {
        self.start_time - arrival
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PlacementOutcome {
    Accepted(Placement),
    Rejected(RejectionReason),
}

impl PlacementOutcome {
    pub fn is_accepted(&self) -> bool {
        matches!(self, PlacementOutcome::Accepted(_))
    }

    pub fn placement(&self) -> Option<&Placement> {
        match self {
            PlacementOutcome::Accepted(p) => Some(p),
            PlacementOutcome::Rejected(_) => None,
        }
    }
}

/// Execution time of `task` on `node` once transpiled to `effective_depth` layers.
pub fn estimate_execution_time(task: &QTask, node: &QNodeSpec, effective_depth: u64) -> f64 {
    // depth * shots is exact in u64, so the only rounding is the final division.
    let layers = effective_depth * u64::from(task.shots);
    layers as f64 / node.d1cps
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Arrival,
    Placed,
    Rejected,
    Failed,
    Start,
    Complete,
}

/// One entry of the event log. Serialized as one JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub kind: EventKind,
    pub task_id: usize,
    pub node_id: Option<usize>,
    pub detail: String,
}

#[derive(Debug, Clone)]
struct Scheduled {
    t: f64,
    seq: u64,
    event: Event,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    // Reversed: BinaryHeap is a max-heap and we want the earliest (t, seq) on top.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .t
            .total_cmp(&self.t)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

#[derive(Debug, Clone, Default)]
pub struct NodeState {
    pub free_at: f64,
    pub queue: VecDeque<usize>,
}

/// Per-task summary row, available once an episode has run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: usize,
    pub app: String,
    pub qubits: u32,
    pub arrival: f64,
    pub status: TaskStatus,
    pub replacement_count: u32,
    pub node_id: Option<usize>,
    pub start_time: Option<f64>,
    pub exec_time: Option<f64>,
    pub completion_time: Option<f64>,
    pub total_time: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CompletionTotals {
    /// Sum of total times over completed tasks.
    pub total_completion_time: f64,
    pub completed: usize,
    pub failed: usize,
}

/// Sums total completion time over an episode's tasks.
///
/// Permanently failed tasks are counted separately rather than dropped.
pub fn episode_total_completion(records: &[TaskRecord]) -> Result<CompletionTotals> {
    let mut totals = CompletionTotals::default();
    for r in records {
        match r.status {
            TaskStatus::Completed => {
                let t = r.total_time.ok_or_else(|| {
                    Error::usage(format!("completed task {} has no total time", r.task_id))
                })?;
                totals.total_completion_time += t;
                totals.completed += 1;
            }
            TaskStatus::FailedPermanent => totals.failed += 1,
            s => {
                return Err(Error::usage(format!(
                    "task {} is not terminal ({s:?})",
                    r.task_id
                )))
            }
        }
    }
    Ok(totals)
}

/// Simulator state for one episode: the clock, node queues and all task lifecycles.
#[derive(Debug, Clone)]
pub struct DataCenter {
    registry: Arc<BackendRegistry>,
    clock: f64,
    nodes: Vec<NodeState>,
    tasks: Vec<QTask>,
    placements: Vec<Option<Placement>>,
    scheduled: BinaryHeap<Scheduled>,
    log: Vec<Event>,
    seq: u64,
}

impl DataCenter {
    /// Builds a data center with every task's arrival pre-scheduled. Tasks must be indexed
    /// by id (`tasks[i].id == i`).
    pub fn new(registry: Arc<BackendRegistry>, tasks: Vec<QTask>) -> Result<Self> {
        for (i, t) in tasks.iter().enumerate() {
            if t.id != i {
                return Err(Error::usage(format!("task at index {i} has id {}", t.id)));
            }
            if t.shots == 0 || t.base_depth == 0 || t.qubits == 0 {
                return Err(Error::usage(format!("task {i} has a zero-sized attribute")));
            }
            if !(t.arrival.is_finite() && t.arrival >= 0.0) {
                return Err(Error::usage(format!(
                    "task {i} has invalid arrival {}",
                    t.arrival
                )));
            }
        }
        let mut dc = DataCenter {
            nodes: vec![NodeState::default(); registry.len()],
            placements: vec![None; tasks.len()],
            registry,
            clock: 0.0,
            tasks,
            scheduled: BinaryHeap::new(),
            log: Vec::new(),
            seq: 0,
        };
        for i in 0..dc.tasks.len() {
            let t = dc.tasks[i].arrival;
            dc.schedule(t, EventKind::Arrival, i, None, String::new());
        }
        Ok(dc)
    }

    pub fn registry(&self) -> &BackendRegistry {
        &self.registry
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn nodes(&self) -> &[NodeState] {
        &self.nodes
    }

    pub fn tasks(&self) -> &[QTask] {
        &self.tasks
    }

    pub fn task(&self, id: usize) -> Result<&QTask> {
        self.tasks
            .get(id)
            .ok_or_else(|| Error::usage(format!("unknown task id {id}")))
    }

    pub fn placement(&self, task_id: usize) -> Option<&Placement> {
        self.placements.get(task_id).and_then(Option::as_ref)
    }

    pub fn events(&self) -> &[Event] {
        &self.log
    }

    /// Remaining backlog of a node at the current clock.
    pub fn backlog(&self, node_id: usize) -> f64 {
        (self.nodes[node_id].free_at - self.clock).max(0.0)
    }

    fn next_seq(&mut self) -> u64 {
        let s = self.seq;
        self.seq += 1;
        s
    }

    fn schedule(
        &mut self,
        t: f64,
        kind: EventKind,
        task_id: usize,
        node_id: Option<usize>,
        detail: String,
    ) {
        let seq = self.next_seq();
        self.scheduled.push(Scheduled {
            t,
            seq,
            event: Event {
                t,
                kind,
                task_id,
                node_id,
                detail,
            },
        });
    }

    fn record_now(
        &mut self,
        kind: EventKind,
        task_id: usize,
        node_id: Option<usize>,
        detail: String,
    ) {
        // Immediate events still take a sequence number so they interleave
        // deterministically with anything scheduled at the same instant.
        self.advance_to(self.clock);
        self.next_seq();
        self.log.push(Event {
            t: self.clock,
            kind,
            task_id,
            node_id,
            detail,
        });
    }

    /// Processes every scheduled event with time `<= t` and moves the clock to `t`.
    pub fn advance_to(&mut self, t: f64) {
        while let Some(top) = self.scheduled.peek() {
            if top.t > t {
                break;
            }
            let Scheduled { event, .. } = self.scheduled.pop().expect("peeked");
            if event.kind == EventKind::Complete {
                let node = event.node_id.expect("completion carries a node");
                let head = self.nodes[node].queue.pop_front();
                debug_assert_eq!(head, Some(event.task_id), "FIFO order violated");
                self.tasks[event.task_id].status = TaskStatus::Completed;
            }
            self.log.push(event);
        }
        if t > self.clock {
            self.clock = t;
        }
    }

    /// Attempts to place a pending task on a node at time `now`.
    ///
    /// A rejection leaves the task pending and consumes no simulated time; bumping the
    /// replacement count is the caller's job.
    pub fn try_place(
        &mut self,
        task_id: usize,
        node_id: usize,
        now: f64,
    ) -> Result<PlacementOutcome> {
        let task = self.task(task_id)?;
        let node = self
            .registry
            .nodes
            .get(node_id)
            .ok_or_else(|| Error::usage(format!("unknown node id {node_id}")))?;
        if task.status != TaskStatus::Pending {
            return Err(Error::usage(format!(
                "task {task_id} is {:?}, only pending tasks can be placed",
                task.status
            )));
        }
        if now < task.arrival {
            return Err(Error::usage(format!(
                "task {task_id} placed at {now} before its arrival {}",
                task.arrival
            )));
        }
        if now < self.clock {
            return Err(Error::usage(format!(
                "placement time {now} is behind the clock {}",
                self.clock
            )));
        }

        if task.qubits > node.qubits {
            let detail = format!("needs {} qubits, node has {}", task.qubits, node.qubits);
            self.advance_to(now);
            self.record_now(EventKind::Rejected, task_id, Some(node_id), detail);
            return Ok(PlacementOutcome::Rejected(
                RejectionReason::InsufficientQubits,
            ));
        }

        let depth = self.registry.effective_depth(task.base_depth, node_id);
        let exec_time = estimate_execution_time(task, node, depth);
        let arrival = task.arrival;

        self.advance_to(now);
        let start_time = now.max(self.nodes[node_id].free_at);
        let completion_time = start_time + exec_time;
        let placement = Placement {
            node_id,
            start_time,
            exec_time,
            completion_time,
            total_time: completion_time - arrival,
        };

        self.nodes[node_id].free_at = completion_time;
        self.nodes[node_id].queue.push_back(task_id);
        self.tasks[task_id].status = TaskStatus::Running;
        self.placements[task_id] = Some(placement);
        self.record_now(
            EventKind::Placed,
            task_id,
            Some(node_id),
            format!("depth={depth} exec={exec_time}"),
        );
        self.schedule(
            start_time,
            EventKind::Start,
            task_id,
            Some(node_id),
            String::new(),
        );
        self.schedule(
            completion_time,
            EventKind::Complete,
            task_id,
            Some(node_id),
            String::new(),
        );
        Ok(PlacementOutcome::Accepted(placement))
    }

    /// Increments and returns the task's replacement count.
    pub fn bump_replacement(&mut self, task_id: usize) -> Result<u32> {
        let task = self
            .tasks
            .get_mut(task_id)
            .ok_or_else(|| Error::usage(format!("unknown task id {task_id}")))?;
        task.replacement_count += 1;
        Ok(task.replacement_count)
    }

    /// Gives up on a pending task.
    pub fn fail_permanently(&mut self, task_id: usize) -> Result<()> {
        let task = self.task(task_id)?;
        if task.status != TaskStatus::Pending {
            return Err(Error::usage(format!("task {task_id} is not pending")));
        }
        let detail = format!("kappa={}", task.replacement_count);
        self.tasks[task_id].status = TaskStatus::FailedPermanent;
        self.record_now(EventKind::Failed, task_id, None, detail);
        Ok(())
    }

    /// Runs the clock forward until no scheduled events remain.
    pub fn drain(&mut self) {
        let last = self
            .scheduled
            .iter()
            .map(|s| s.t)
            .fold(self.clock, f64::max);
        self.advance_to(last);
    }

    pub fn task_records(&self) -> Vec<TaskRecord> {
        self.tasks
            .iter()
            .zip(&self.placements)
            .map(|(t, p)| TaskRecord {
                task_id: t.id,
                app: t.app.clone(),
                qubits: t.qubits,
                arrival: t.arrival,
                status: t.status,
                replacement_count: t.replacement_count,
                node_id: p.map(|p| p.node_id),
                start_time: p.map(|p| p.start_time),
                exec_time: p.map(|p| p.exec_time),
                completion_time: p.map(|p| p.completion_time),
                total_time: p.map(|p| p.total_time),
            })
            .collect()
    }

    /// Writes the event log as JSON lines.
    pub fn write_event_log<W: Write>(&self, mut w: W) -> Result<()> {
        for e in &self.log {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")
                .map_err(|e| Error::io("<event log>", e))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::test_registry;

    fn task(id: usize, qubits: u32, depth: u32, shots: u32, arrival: f64) -> QTask {
        QTask {
            id,
            app: "t".into(),
            qubits,
            base_depth: depth,
            gates: BTreeSet::new(),
            shots,
            topology: String::new(),
            arrival,
            status: TaskStatus::Pending,
            replacement_count: 0,
        }
    }

    fn node(qubits: u32, d1cps: f64) -> QNodeSpec {
        QNodeSpec {
            id: 0,
            name: "n".into(),
            qubits,
            quantum_volume: 32,
            d1cps,
            gate_set: BTreeSet::new(),
            topology: String::new(),
        }
    }

    #[test]
    fn execution_time_examples() {
        assert_eq!(
            estimate_execution_time(&task(0, 1, 1, 1024, 0.0), &node(5, 10000.0), 100),
            10.24
        );
        assert_eq!(
            estimate_execution_time(&task(0, 1, 1, 1, 0.0), &node(5, 1.0), 1),
            1.0
        );
    }

    #[test]
    fn execution_time_is_monotone() {
        let n = node(5, 5000.0);
        let t = task(0, 1, 1, 100, 0.0);
        assert!(estimate_execution_time(&t, &n, 11) > estimate_execution_time(&t, &n, 10));
        let more_shots = task(0, 1, 1, 101, 0.0);
        assert!(estimate_execution_time(&more_shots, &n, 10) > estimate_execution_time(&t, &n, 10));
        let faster = node(5, 5001.0);
        assert!(estimate_execution_time(&t, &faster, 10) < estimate_execution_time(&t, &n, 10));
    }

    #[test]
    fn waits_behind_busy_node() {
        // Node 0 runs at 1 layer/s, so depth 5 * 1 shot = 5 s of work.
        let reg = Arc::new(test_registry(&[(10, 1.0)]));
        let mut dc =
            DataCenter::new(reg, vec![task(0, 2, 5, 1, 0.0), task(1, 2, 3, 1, 2.0)]).unwrap();
        dc.try_place(0, 0, 0.0).unwrap();
        let out = dc.try_place(1, 0, 2.0).unwrap();
        let p = out.placement().unwrap();
        assert_eq!(p.start_time, 5.0);
        assert_eq!(p.wait_time(2.0), 3.0);
        assert_eq!(p.total_time, 6.0);
    }

    #[test]
    fn rejects_oversized_task() {
        let reg = Arc::new(test_registry(&[(16, 1.0)]));
        let mut dc = DataCenter::new(reg, vec![task(0, 27, 5, 1, 0.0)]).unwrap();
        let out = dc.try_place(0, 0, 0.0).unwrap();
        assert_eq!(
            out,
            PlacementOutcome::Rejected(RejectionReason::InsufficientQubits)
        );
        assert_eq!(dc.task(0).unwrap().status, TaskStatus::Pending);
        assert_eq!(dc.clock(), 0.0);
    }

    #[test]
    fn usage_errors() {
        let reg = Arc::new(test_registry(&[(16, 1.0)]));
        let mut dc = DataCenter::new(reg, vec![task(0, 2, 5, 1, 1.0)]).unwrap();
        assert!(matches!(dc.try_place(3, 0, 1.0), Err(Error::Usage(_))));
        assert!(matches!(dc.try_place(0, 7, 1.0), Err(Error::Usage(_))));
        assert!(matches!(dc.try_place(0, 0, 0.5), Err(Error::Usage(_))));
        dc.try_place(0, 0, 1.0).unwrap();
        assert!(matches!(dc.try_place(0, 0, 1.0), Err(Error::Usage(_))));
    }

    #[test]
    fn total_completion_examples() {
        let rec = |id, status, total| TaskRecord {
            task_id: id,
            app: String::new(),
            qubits: 1,
            arrival: 0.0,
            status,
            replacement_count: 0,
            node_id: None,
            start_time: None,
            exec_time: None,
            completion_time: None,
            total_time: total,
        };
        let totals = episode_total_completion(&[
            rec(0, TaskStatus::Completed, Some(6.0)),
            rec(1, TaskStatus::Completed, Some(10.24)),
            rec(2, TaskStatus::FailedPermanent, None),
        ])
        .unwrap();
        assert!((totals.total_completion_time - 16.24).abs() < 1e-12);
        assert_eq!((totals.completed, totals.failed), (2, 1));
        assert_eq!(
            episode_total_completion(&[]).unwrap().total_completion_time,
            0.0
        );
        assert!(episode_total_completion(&[rec(0, TaskStatus::Running, Some(1.0))]).is_err());
    }

    #[test]
    fn log_is_time_ordered_and_drains() {
        let reg = Arc::new(test_registry(&[(10, 1.0), (10, 2.0)]));
        let tasks = vec![
            task(0, 2, 4, 1, 0.0),
            task(1, 2, 4, 1, 0.5),
            task(2, 2, 2, 1, 1.0),
        ];
        let mut dc = DataCenter::new(reg, tasks).unwrap();
        dc.try_place(0, 0, 0.0).unwrap();
        dc.try_place(1, 1, 0.5).unwrap();
        dc.try_place(2, 0, 1.0).unwrap();
        dc.drain();
        let times: Vec<f64> = dc.events().iter().map(|e| e.t).collect();
        assert!(times.windows(2).all(|w| w[0] <= w[1]));
        assert!(dc.tasks().iter().all(|t| t.status == TaskStatus::Completed));
        assert!(dc.nodes().iter().all(|n| n.queue.is_empty()));

        let mut buf = Vec::new();
        dc.write_event_log(&mut buf).unwrap();
        let lines = String::from_utf8(buf).unwrap();
        let first: Event = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
        assert_eq!(first.kind, EventKind::Arrival);
        assert_eq!(lines.lines().count(), dc.events().len());
    }
}
