//! The execution pool: runs at most one task and keeps preempted tasks' progress.
//!
//! Preemption is cooperative. A signal does not stop the running task; the task keeps
//! executing until the next boundary that carries a preemption check under the configured
//! granularity, and the acknowledgement happens there. Boundary times are derived from the
//! timeline's cumulative offsets, so no per-entry events are needed.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost_model::OperatorTimeline;
use crate::scheduler::TaskId;
use crate::workload::RequestId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PreemptionGranularity {
    Operator,
    Layer,
    Chunk,
    None,
}

impl PreemptionGranularity {
    pub fn name(self) -> &'static str {
        match self {
            PreemptionGranularity::Operator => "operator",
            PreemptionGranularity::Layer => "layer",
            PreemptionGranularity::Chunk => "chunk",
            PreemptionGranularity::None => "none",
        }
    }

    /// Whether the boundary after `timeline.entries[idx]` carries a preemption check.
    pub fn checks_after(self, timeline: &OperatorTimeline, idx: usize) -> bool {
        match self {
            PreemptionGranularity::Operator => true,
            PreemptionGranularity::Layer => timeline.ends_layer(idx),
            PreemptionGranularity::Chunk => timeline.ends_chunk(idx),
            PreemptionGranularity::None => false,
        }
    }
}

impl std::str::FromStr for PreemptionGranularity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "operator" => Ok(Self::Operator),
            "layer" => Ok(Self::Layer),
            "chunk" => Ok(Self::Chunk),
            "none" => Ok(Self::None),
            other => Err(format!("unknown granularity `{other}` (expected operator, layer, chunk or none)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskState {
    Pending,
    Running,
    Preempted,
    Done,
}

impl fmt::Display for TaskState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error("execution pool already runs task {0}")]
    PoolOccupied(TaskId),
    #[error("execution pool is idle")]
    PoolEmpty,
    #[error("task {task} is {actual}, expected {expected}")]
    WrongState {
        task: TaskId,
        expected: TaskState,
        actual: TaskState,
    },
    #[error("unknown task {0}")]
    UnknownTask(TaskId),
    #[error("task {0} is already registered")]
    DuplicateTask(TaskId),
    #[error("a preemption signal is already pending")]
    DoubleSignal,
    #[error("no preemption signal is pending")]
    NoPendingSignal,
    #[error("preemption is disabled under granularity `none`")]
    PreemptionDisabled,
    #[error("tensor-parallel lanes are not at the same iteration: {0:?}")]
    LanesDiverged(Vec<u64>),
    #[error("timeline of task {0} has no entries")]
    EmptyTimeline(TaskId),
}

/// True iff every tensor-parallel lane has reached the same iteration counter.
pub fn tp_sync_check(lane_counters: &[u64]) -> bool {
    lane_counters.windows(2).all(|w| w[0] == w[1])
}

#[derive(Debug, Clone)]
pub struct ExecutionTask {
    pub task_id: TaskId,
    pub member_requests: Vec<RequestId>,
    pub timeline: OperatorTimeline,
    pub cursor: usize,
    pub state: TaskState,
    pub resume_count: u32,
    pub head_deadline: f64,
    /// Sum of entry durations executed so far.
    pub executed: f64,
    /// Wall time spent occupying the pool, preemption checks included.
    pub busy_time: f64,
    /// `offsets[p]` is the wall time from the task's start to the boundary after `p` entries.
    offsets: Vec<f64>,
    check_after: Vec<bool>,
}

impl ExecutionTask {
    pub fn new(
        task_id: TaskId,
        member_requests: Vec<RequestId>,
        timeline: OperatorTimeline,
        head_deadline: f64,
        granularity: PreemptionGranularity,
        c_check: f64,
    ) -> Self {
        let check_after: Vec<bool> = (0..timeline.len())
            .map(|i| granularity.checks_after(&timeline, i))
            .collect();
        let mut offsets = Vec::with_capacity(timeline.len() + 1);
        offsets.push(0.0);
        let mut acc = 0.0;
        for (entry, &check) in timeline.entries.iter().zip(&check_after) {
            acc += entry.duration;
            if check {
                acc += c_check;
            }
            offsets.push(acc);
        }
        Self {
            task_id,
            member_requests,
            timeline,
            cursor: 0,
            state: TaskState::Pending,
            resume_count: 0,
            head_deadline,
            executed: 0.0,
            busy_time: 0.0,
            offsets,
            check_after,
        }
    }

    pub fn len(&self) -> usize {
        self.timeline.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timeline.is_empty()
    }

    /// Wall time of the uninterrupted run, checks included.
    pub fn uninterrupted_wall_time(&self) -> f64 {
        self.offsets[self.len()]
    }

    pub fn progress(&self) -> f64 {
        if self.timeline.total_duration > 0.0 {
            (self.executed / self.timeline.total_duration).min(1.0)
        } else {
            self.cursor as f64 / self.len().max(1) as f64
        }
    }

    fn executed_between(&self, from: usize, to: usize) -> f64 {
        self.timeline.entries[from..to].iter().map(|e| e.duration).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockingRecord {
    pub task: TaskId,
    pub signal: f64,
    pub ack: f64,
}

impl BlockingRecord {
    pub fn blocking(&self) -> f64 {
        self.ack - self.signal
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ack {
    pub time: f64,
    /// Boundary index the task will stop at.
    pub position: usize,
    /// The acknowledging boundary is the end of the timeline, so the task finishes instead.
    pub completes: bool,
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    task: TaskId,
    start_time: f64,
    start_cursor: usize,
}

#[derive(Debug, Clone, Copy)]
struct PendingSignal {
    signal_time: f64,
    ack: Ack,
}

#[derive(Debug)]
pub struct ExecutionPool {
    granularity: PreemptionGranularity,
    c_check: f64,
    tp_lanes: usize,
    tasks: BTreeMap<TaskId, ExecutionTask>,
    current: Option<Segment>,
    preempted: BTreeSet<TaskId>,
    pending: Option<PendingSignal>,
    lane_counters: Vec<u64>,
    blocking_log: Vec<BlockingRecord>,
}

impl ExecutionPool {
    pub fn new(granularity: PreemptionGranularity, c_check: f64, tp_degree: u32) -> Self {
        let tp_lanes = tp_degree.max(1) as usize;
        Self {
            granularity,
            c_check,
            tp_lanes,
            tasks: BTreeMap::new(),
            current: None,
            preempted: BTreeSet::new(),
            pending: None,
            lane_counters: vec![0; tp_lanes],
            blocking_log: Vec::new(),
        }
    }

    pub fn granularity(&self) -> PreemptionGranularity {
        self.granularity
    }

    pub fn c_check(&self) -> f64 {
        self.c_check
    }

    pub fn current(&self) -> Option<TaskId> {
        self.current.map(|s| s.task)
    }

    pub fn preempted(&self) -> &BTreeSet<TaskId> {
        &self.preempted
    }

    pub fn pending_signal(&self) -> bool {
        self.pending.is_some()
    }

    pub fn blocking_log(&self) -> &[BlockingRecord] {
        &self.blocking_log
    }

    pub fn task(&self, id: TaskId) -> Option<&ExecutionTask> {
        self.tasks.get(&id)
    }

    pub fn tasks(&self) -> impl Iterator<Item = &ExecutionTask> {
        self.tasks.values()
    }

    pub fn into_parts(self) -> (BTreeMap<TaskId, ExecutionTask>, Vec<BlockingRecord>) {
        (self.tasks, self.blocking_log)
    }

    fn task_mut(&mut self, id: TaskId) -> Result<&mut ExecutionTask, EngineError> {
        self.tasks.get_mut(&id).ok_or(EngineError::UnknownTask(id))
    }

    fn start_segment(&mut self, id: TaskId, now: f64) -> Result<f64, EngineError> {
        let lanes = self.tp_lanes;
        let task = self.task_mut(id)?;
        task.state = TaskState::Running;
        let cursor = task.cursor;
        let completion = now + (task.offsets[task.len()] - task.offsets[cursor]);
        self.lane_counters = vec![cursor as u64; lanes];
        self.current = Some(Segment {
            task: id,
            start_time: now,
            start_cursor: cursor,
        });
        Ok(completion)
    }

    /// Starts a fresh task and returns its completion time.
    pub fn submit(&mut self, task: ExecutionTask, now: f64) -> Result<f64, EngineError> {
        if let Some(seg) = self.current {
            return Err(EngineError::PoolOccupied(seg.task));
        }
        if task.state != TaskState::Pending {
            return Err(EngineError::WrongState {
                task: task.task_id,
                expected: TaskState::Pending,
                actual: task.state,
            });
        }
        if task.is_empty() {
            return Err(EngineError::EmptyTimeline(task.task_id));
        }
        let id = task.task_id;
        if self.tasks.contains_key(&id) {
            return Err(EngineError::DuplicateTask(id));
        }
        self.tasks.insert(id, task);
        self.start_segment(id, now)
    }

    /// Continues a preempted task from its frozen cursor and returns its completion time.
    pub fn resume(&mut self, id: TaskId, now: f64) -> Result<f64, EngineError> {
        if let Some(seg) = self.current {
            return Err(EngineError::PoolOccupied(seg.task));
        }
        let task = self.tasks.get(&id).ok_or(EngineError::UnknownTask(id))?;
        if task.state != TaskState::Preempted {
            return Err(EngineError::WrongState {
                task: id,
                expected: TaskState::Preempted,
                actual: task.state,
            });
        }
        self.preempted.remove(&id);
        self.task_mut(id)?.resume_count += 1;
        self.start_segment(id, now)
    }

    fn boundary_time(seg: &Segment, task: &ExecutionTask, position: usize) -> f64 {
        seg.start_time + (task.offsets[position] - task.offsets[seg.start_cursor])
    }

    /// Raises the preemption signal and returns where the running task will acknowledge it:
    /// the first check-carrying boundary at or after `now`.
    pub fn signal_preempt(&mut self, now: f64) -> Result<Ack, EngineError> {
        let seg = self.current.ok_or(EngineError::PoolEmpty)?;
        if self.pending.is_some() {
            return Err(EngineError::DoubleSignal);
        }
        if self.granularity == PreemptionGranularity::None {
            return Err(EngineError::PreemptionDisabled);
        }
        let task = &self.tasks[&seg.task];
        let len = task.len();
        // First boundary position whose time is >= now.
        let (mut lo, mut hi) = (seg.start_cursor, len);
        while lo < hi {
            let mid = (lo + hi) / 2;
            if Self::boundary_time(&seg, task, mid) >= now {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        let mut position = lo;
        while position < len && position != seg.start_cursor && !task.check_after[position - 1] {
            position += 1;
        }
        let ack = Ack {
            time: Self::boundary_time(&seg, task, position).max(now),
            position,
            completes: position == len,
        };
        self.pending = Some(PendingSignal { signal_time: now, ack });
        Ok(ack)
    }

    /// Completes a pending preemption at its boundary. The task moves to the preempted set.
    pub fn acknowledge(&mut self, now: f64) -> Result<TaskId, EngineError> {
        let pending = self.pending.ok_or(EngineError::NoPendingSignal)?;
        let seg = self.current.ok_or(EngineError::PoolEmpty)?;
        let position = pending.ack.position;
        let lanes = vec![position as u64; self.tp_lanes];
        if !tp_sync_check(&lanes) {
            return Err(EngineError::LanesDiverged(lanes));
        }
        self.lane_counters = lanes;
        let task = self.task_mut(seg.task)?;
        let work = task.executed_between(seg.start_cursor, position);
        task.executed += work;
        task.busy_time += now - seg.start_time;
        task.cursor = position;
        task.state = TaskState::Preempted;
        self.preempted.insert(seg.task);
        self.blocking_log.push(BlockingRecord {
            task: seg.task,
            signal: pending.signal_time,
            ack: now,
        });
        self.pending = None;
        self.current = None;
        Ok(seg.task)
    }

    /// Finishes the running task. A signal still pending is acknowledged by the completion.
    pub fn complete(&mut self, now: f64) -> Result<TaskId, EngineError> {
        let seg = self.current.ok_or(EngineError::PoolEmpty)?;
        if let Some(pending) = self.pending.take() {
            self.blocking_log.push(BlockingRecord {
                task: seg.task,
                signal: pending.signal_time,
                ack: now,
            });
        }
        let task = self.task_mut(seg.task)?;
        let len = task.len();
        let work = task.executed_between(seg.start_cursor, len);
        task.executed += work;
        task.busy_time += now - seg.start_time;
        task.cursor = len;
        task.state = TaskState::Done;
        self.lane_counters = vec![len as u64; self.tp_lanes];
        self.current = None;
        Ok(seg.task)
    }

    /// Executed fraction of a task at `now`, counting partial progress of the running one.
    pub fn progress(&self, id: TaskId, now: f64) -> f64 {
        let Some(task) = self.tasks.get(&id) else {
            return 0.0;
        };
        match self.current {
            Some(seg) if seg.task == id && task.timeline.total_duration > 0.0 => {
                let elapsed = (now - seg.start_time).max(0.0);
                ((task.executed + elapsed) / task.timeline.total_duration).min(1.0)
            }
            _ => task.progress(),
        }
    }
}
