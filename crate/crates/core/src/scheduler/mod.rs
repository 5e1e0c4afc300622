//! Event-driven scheduling over a waiting queue, a preempted-task set and one running task.
//!
//! A round runs only on a request arrival or a task completion. It ranks every waiting
//! request and every execution task by the configured [`PriorityPolicy`], and if the top
//! item is not the running task it emits at most one `Preempt` followed by one
//! `Submit` (fresh batch) or `Resume` (preempted task).

pub mod batching;
pub mod policy;
pub mod registry;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::Serialize;

use crate::predictor::TtftPoly;
use crate::workload::{Request, RequestId};
use batching::{slo_aware_batching, BatchCandidate, BatchDecision};
use policy::{PriorityInput, PriorityPolicy};

pub use policy::{slack, PolicyKind, PriorityError};
pub use registry::PolicyRegistry;

pub type TaskId = u64;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Command {
    Preempt {
        task: TaskId,
    },
    Submit {
        task: TaskId,
        members: Vec<RequestId>,
        member_tokens: Vec<u64>,
        head_deadline: f64,
    },
    Resume {
        task: TaskId,
    },
}

impl Command {
    pub fn task(&self) -> TaskId {
        match self {
            Command::Preempt { task } | Command::Submit { task, .. } | Command::Resume { task } => *task,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Command::Preempt { .. } => "preempt",
            Command::Submit { .. } => "submit",
            Command::Resume { .. } => "resume",
        }
    }
}

/// Scheduler-side view of an execution task. Membership is frozen at submit.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskInfo {
    pub id: TaskId,
    pub members: Vec<RequestId>,
    pub head: RequestId,
    pub head_deadline: f64,
    pub head_arrival: f64,
    pub tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchRecord {
    pub time: f64,
    pub task: TaskId,
    pub head_deadline: f64,
    pub budget_tokens: u64,
    pub decision: BatchDecision,
}

#[derive(Debug, Clone)]
pub struct SchedulerConfig {
    pub policy: Arc<dyn PriorityPolicy>,
    /// False for run-to-completion baselines: the running task is never preempted.
    pub preemptive: bool,
    pub batching: bool,
    pub batch_budget_tokens: u64,
    pub predictor: TtftPoly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Item {
    Waiting(RequestId),
    Task(TaskId),
}

#[derive(Debug, Clone)]
struct Ranked {
    item: Item,
    priority: f64,
    arrival: f64,
    id: RequestId,
}

fn rank_order(a: &Ranked, b: &Ranked) -> Ordering {
    b.priority
        .total_cmp(&a.priority)
        .then(a.arrival.total_cmp(&b.arrival))
        .then(a.id.cmp(&b.id))
        .then(a.item.cmp(&b.item))
}

#[derive(Debug)]
pub struct Scheduler {
    cfg: SchedulerConfig,
    waiting: BTreeMap<RequestId, Request>,
    preempted: BTreeSet<TaskId>,
    running: Option<TaskId>,
    tasks: BTreeMap<TaskId, TaskInfo>,
    next_task: TaskId,
    rounds: u64,
    batch_log: Vec<BatchRecord>,
}

impl Scheduler {
    pub fn new(cfg: SchedulerConfig) -> Self {
        Self {
            cfg,
            waiting: BTreeMap::new(),
            preempted: BTreeSet::new(),
            running: None,
            tasks: BTreeMap::new(),
            next_task: 0,
            rounds: 0,
            batch_log: Vec::new(),
        }
    }

    pub fn rounds(&self) -> u64 {
        self.rounds
    }

    pub fn batch_log(&self) -> &[BatchRecord] {
        &self.batch_log
    }

    pub fn running(&self) -> Option<TaskId> {
        self.running
    }

    pub fn preempted(&self) -> &BTreeSet<TaskId> {
        &self.preempted
    }

    pub fn waiting_ids(&self) -> impl Iterator<Item = RequestId> + '_ {
        self.waiting.keys().copied()
    }

    pub fn task(&self, id: TaskId) -> Option<&TaskInfo> {
        self.tasks.get(&id)
    }

    pub fn policy_name(&self) -> &'static str {
        self.cfg.policy.name()
    }

    /// Forgets a finished task, wherever the scheduler believed it to be.
    pub fn notify_completion(&mut self, task: TaskId) -> Option<TaskInfo> {
        if self.running == Some(task) {
            self.running = None;
        }
        self.preempted.remove(&task);
        self.tasks.remove(&task)
    }

    fn priority_of(&self, input: &PriorityInput, now: f64) -> f64 {
        policy::priority(input, now, &self.cfg.predictor, self.cfg.policy.as_ref())
            .unwrap_or_else(|e| panic!("scheduler invariant violated: {e}"))
    }

    fn rank(&self, now: f64, progress: &dyn Fn(TaskId) -> f64) -> Vec<Ranked> {
        let mut ranked = Vec::with_capacity(self.waiting.len() + self.preempted.len() + 1);
        for r in self.waiting.values() {
            let input = PriorityInput {
                deadline: r.deadline,
                arrival_time: r.arrival_time,
                tokens: r.num_tokens,
                progress: 0.0,
            };
            ranked.push(Ranked {
                item: Item::Waiting(r.id),
                priority: self.priority_of(&input, now),
                arrival: r.arrival_time,
                id: r.id,
            });
        }
        for &t in self.preempted.iter().chain(self.running.iter()) {
            let info = &self.tasks[&t];
            let input = PriorityInput {
                deadline: info.head_deadline,
                arrival_time: info.head_arrival,
                tokens: info.tokens,
                progress: progress(t),
            };
            ranked.push(Ranked {
                item: Item::Task(t),
                priority: self.priority_of(&input, now),
                arrival: info.head_arrival,
                id: info.head,
            });
        }
        ranked.sort_by(rank_order);
        ranked
    }

    /// One scheduling round. `progress` reports the executed fraction of a task.
    pub fn schedule_round(
        &mut self,
        now: f64,
        arrivals: Vec<Request>,
        progress: &dyn Fn(TaskId) -> f64,
    ) -> Vec<Command> {
        self.rounds += 1;
        for r in arrivals {
            let prev = self.waiting.insert(r.id, r);
            assert!(prev.is_none(), "request enqueued twice");
        }
        if self.waiting.is_empty() && self.preempted.is_empty() && self.running.is_none() {
            return Vec::new();
        }
        if !self.cfg.preemptive && self.running.is_some() {
            return Vec::new();
        }

        let ranked = self.rank(now, progress);
        let head = &ranked[0];
        if self.running.is_some_and(|t| head.item == Item::Task(t)) {
            return Vec::new();
        }

        let mut commands = Vec::with_capacity(2);
        if let Some(current) = self.running.take() {
            commands.push(Command::Preempt { task: current });
            self.preempted.insert(current);
        }
        match head.item {
            Item::Waiting(head_id) => {
                let head_req = &self.waiting[&head_id];
                let candidates: Vec<BatchCandidate> = if self.cfg.batching {
                    ranked[1..]
                        .iter()
                        .filter_map(|r| match r.item {
                            Item::Waiting(id) => Some(BatchCandidate {
                                id,
                                tokens: self.waiting[&id].num_tokens,
                            }),
                            Item::Task(_) => None,
                        })
                        .collect()
                } else {
                    Vec::new()
                };
                let decision = slo_aware_batching(
                    BatchCandidate {
                        id: head_id,
                        tokens: head_req.num_tokens,
                    },
                    head_req.deadline,
                    &candidates,
                    self.cfg.batch_budget_tokens,
                    &self.cfg.predictor,
                    now,
                );
                let task = self.next_task;
                self.next_task += 1;
                let info = TaskInfo {
                    id: task,
                    members: decision.members.clone(),
                    head: head_id,
                    head_deadline: head_req.deadline,
                    head_arrival: head_req.arrival_time,
                    tokens: decision.aggregate_tokens,
                };
                for id in &decision.members {
                    self.waiting.remove(id);
                }
                commands.push(Command::Submit {
                    task,
                    members: decision.members.clone(),
                    member_tokens: decision.member_tokens.clone(),
                    head_deadline: info.head_deadline,
                });
                self.batch_log.push(BatchRecord {
                    time: now,
                    task,
                    head_deadline: info.head_deadline,
                    budget_tokens: self.cfg.batch_budget_tokens,
                    decision,
                });
                self.tasks.insert(task, info);
                self.running = Some(task);
            }
            Item::Task(task) => {
                let was_preempted = self.preempted.remove(&task);
                assert!(was_preempted, "resume of task {task} that is not preempted");
                commands.push(Command::Resume { task });
                self.running = Some(task);
            }
        }
        commands
    }
}
