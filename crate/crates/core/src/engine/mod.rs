//! Deterministic discrete-event driver tying the scheduler to the execution pool.
//!
//! Only arrivals and completions trigger scheduling rounds. A round that preempts blocks
//! the scheduler until the pool acknowledges at a boundary; arrivals in that window are
//! held back and delivered together in one round right after the acknowledgement.

pub mod event;
pub mod pool;

use std::collections::{BTreeMap, VecDeque};

use serde_json::json;
use thiserror::Error;

use crate::config::RunConfig;
use crate::cost_model::{build_timeline, CostModelError, CostParams};
use crate::metrics::{CommandCounts, CommandRecord, EventLogEntry, RequestOutcome, RunResult, TaskRecord};
use crate::predictor::{fit_to_cost_model, FitError, TtftPoly};
use crate::scheduler::{Command, PolicyRegistry, Scheduler, SchedulerConfig, TaskId};
use crate::workload::{Request, RequestId, Trace};
use event::{EventKind, EventQueue};

pub use pool::{
    tp_sync_check, Ack, BlockingRecord, EngineError, ExecutionPool, ExecutionTask, PreemptionGranularity, TaskState,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("unknown policy `{name}` (registered: {known})")]
    UnknownPolicy { name: String, known: String },
    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Cost(#[from] CostModelError),
    #[error("predictor fit failed: {0}")]
    Fit(#[from] FitError),
    #[error("scheduler issued an illegal command at t={time} ({context}): {source}")]
    IllegalCommand {
        time: f64,
        context: String,
        #[source]
        source: EngineError,
    },
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub event_log: bool,
    /// Use this predictor instead of fitting one to the cost model.
    pub predictor: Option<TtftPoly>,
}

/// Runs `trace` with the built-in policies.
pub fn run(trace: &Trace, cfg: &RunConfig, cost: &CostParams) -> Result<RunResult, SimError> {
    run_with(trace, cfg, cost, &PolicyRegistry::builtin(), &RunOptions::default())
}

pub fn run_with(
    trace: &Trace,
    cfg: &RunConfig,
    cost: &CostParams,
    registry: &PolicyRegistry,
    options: &RunOptions,
) -> Result<RunResult, SimError> {
    cost.validate()?;
    let policy = registry.get(&cfg.policy).ok_or_else(|| SimError::UnknownPolicy {
        name: cfg.policy.clone(),
        known: registry.names().join(", "),
    })?;
    if cfg.chunk_tokens == Some(0) {
        return Err(SimError::InvalidConfig("chunk_tokens must be >= 1".into()));
    }
    if cfg.granularity == PreemptionGranularity::Chunk && cfg.chunk_tokens.is_none() {
        return Err(SimError::InvalidConfig("chunk granularity needs chunk_tokens".into()));
    }
    let predictor = match &options.predictor {
        Some(p) => p.clone(),
        None => fit_to_cost_model(cost, cfg.chunk_tokens, cfg.predictor_degree)?,
    };
    let scheduler = Scheduler::new(SchedulerConfig {
        policy,
        preemptive: cfg.granularity != PreemptionGranularity::None,
        batching: cfg.batching,
        batch_budget_tokens: cfg.batch_budget_tokens,
        predictor,
    });
    let sim = Simulation {
        requests: &trace.requests,
        chunk_tokens: cfg.chunk_tokens,
        cost,
        queue: EventQueue::new(),
        pool: ExecutionPool::new(cfg.granularity, cost.c_check, cost.tp_degree),
        scheduler,
        live_completion: None,
        live_ack: None,
        awaiting_ack: false,
        followups: VecDeque::new(),
        deferred: Vec::new(),
        finished: BTreeMap::new(),
        finish_order: Vec::new(),
        counts: CommandCounts::default(),
        command_trace: Vec::new(),
        log: options.event_log.then(Vec::new),
    };
    sim.run()
}

struct Simulation<'a> {
    requests: &'a [Request],
    chunk_tokens: Option<u64>,
    cost: &'a CostParams,
    queue: EventQueue,
    pool: ExecutionPool,
    scheduler: Scheduler,
    /// `(task, sequence)` of the only Completion event still valid.
    live_completion: Option<(TaskId, u64)>,
    live_ack: Option<(TaskId, u64)>,
    awaiting_ack: bool,
    followups: VecDeque<Command>,
    deferred: Vec<Request>,
    finished: BTreeMap<RequestId, f64>,
    finish_order: Vec<(TaskId, f64)>,
    counts: CommandCounts,
    command_trace: Vec<CommandRecord>,
    log: Option<Vec<EventLogEntry>>,
}

impl<'a> Simulation<'a> {
    fn record(&mut self, t: f64, kind: &'static str, task: Option<TaskId>, detail: serde_json::Value) {
        if let Some(log) = &mut self.log {
            log.push(EventLogEntry {
                t,
                kind,
                task: task.map_or(-1, |id| id as i64),
                detail,
            });
        }
    }

    fn illegal(&self, time: f64, context: String, source: EngineError) -> SimError {
        SimError::IllegalCommand { time, context, source }
    }

    fn run(mut self) -> Result<RunResult, SimError> {
        for (idx, r) in self.requests.iter().enumerate() {
            self.queue.push(r.arrival_time, EventKind::Arrival(idx));
        }
        while let Some(ev) = self.queue.pop() {
            let now = ev.time;
            match ev.kind {
                EventKind::Arrival(idx) => {
                    let req = self.requests[idx].clone();
                    self.record(
                        now,
                        "arrival",
                        None,
                        json!({"request": req.id, "tokens": req.num_tokens, "deadline": req.deadline}),
                    );
                    if self.awaiting_ack {
                        self.deferred.push(req);
                    } else {
                        self.round(now, vec![req])?;
                    }
                }
                EventKind::Completion(task) => {
                    if self.live_completion != Some((task, ev.sequence)) {
                        continue;
                    }
                    self.live_completion = None;
                    self.complete(now, task)?;
                }
                EventKind::Boundary { task, position } => {
                    if self.live_ack != Some((task, ev.sequence)) {
                        continue;
                    }
                    self.live_ack = None;
                    self.acknowledge(now, task, position)?;
                    self.awaiting_ack = false;
                    self.drain_followups(now)?;
                    if !self.deferred.is_empty() && !self.awaiting_ack {
                        let arrivals = std::mem::take(&mut self.deferred);
                        self.round(now, arrivals)?;
                    }
                }
            }
        }
        debug_assert!(self.pool.current().is_none() && self.deferred.is_empty());
        self.finish()
    }

    fn acknowledge(&mut self, now: f64, task: TaskId, position: usize) -> Result<(), SimError> {
        self.pool
            .acknowledge(now)
            .map_err(|e| self.illegal(now, format!("ack of task {task}"), e))?;
        let signal = self.pool.blocking_log().last().map_or(now, |r| r.signal);
        self.record(
            now,
            "preempt_ack",
            Some(task),
            json!({"signal_t": signal, "blocking_s": now - signal, "cursor": position}),
        );
        Ok(())
    }

    fn complete(&mut self, now: f64, task: TaskId) -> Result<(), SimError> {
        let was_pending = self.pool.pending_signal();
        self.pool
            .complete(now)
            .map_err(|e| self.illegal(now, format!("completion of task {task}"), e))?;
        let members = self.pool.task(task).map(|t| t.member_requests.clone()).unwrap_or_default();
        for &id in &members {
            self.finished.insert(id, now);
        }
        self.finish_order.push((task, now));
        self.record(now, "completion", Some(task), json!({"members": members}));
        self.scheduler.notify_completion(task);
        if was_pending {
            // The signal landed in the final stretch: the task finished before any check.
            self.awaiting_ack = false;
            self.drain_followups(now)?;
        }
        if !self.awaiting_ack {
            let arrivals = std::mem::take(&mut self.deferred);
            self.round(now, arrivals)?;
        }
        Ok(())
    }

    fn round(&mut self, now: f64, arrivals: Vec<Request>) -> Result<(), SimError> {
        let pool = &self.pool;
        let commands = self
            .scheduler
            .schedule_round(now, arrivals, &|task| pool.progress(task, now));
        self.followups = commands.into();
        self.drain_followups(now)
    }

    fn drain_followups(&mut self, now: f64) -> Result<(), SimError> {
        while let Some(cmd) = self.followups.pop_front() {
            self.counts_and_trace(now, &cmd);
            match cmd {
                Command::Preempt { task } => {
                    if self.pool.current() != Some(task) {
                        return Err(self.illegal(
                            now,
                            format!("preempt of task {task}"),
                            EngineError::WrongState {
                                task,
                                expected: TaskState::Running,
                                actual: self.pool.task(task).map_or(TaskState::Pending, |t| t.state),
                            },
                        ));
                    }
                    let ack = self
                        .pool
                        .signal_preempt(now)
                        .map_err(|e| self.illegal(now, format!("preempt of task {task}"), e))?;
                    self.record(
                        now,
                        "preempt_signal",
                        Some(task),
                        json!({"ack_t": ack.time, "completes": ack.completes}),
                    );
                    if ack.completes {
                        // Completion event already queued; it acknowledges the signal.
                        self.awaiting_ack = true;
                        return Ok(());
                    }
                    if ack.time <= now {
                        self.live_completion = None;
                        self.acknowledge(now, task, ack.position)?;
                        continue;
                    }
                    self.live_completion = None;
                    let seq = self.queue.push(
                        ack.time,
                        EventKind::Boundary {
                            task,
                            position: ack.position,
                        },
                    );
                    self.live_ack = Some((task, seq));
                    self.awaiting_ack = true;
                    return Ok(());
                }
                Command::Submit {
                    task,
                    members,
                    member_tokens,
                    head_deadline,
                } => {
                    let timeline = build_timeline(&member_tokens, self.chunk_tokens, self.cost);
                    let exec = ExecutionTask::new(
                        task,
                        members.clone(),
                        timeline,
                        head_deadline,
                        self.pool.granularity(),
                        self.pool.c_check(),
                    );
                    let done = self
                        .pool
                        .submit(exec, now)
                        .map_err(|e| self.illegal(now, format!("submit of task {task}"), e))?;
                    self.record(
                        now,
                        "submit",
                        Some(task),
                        json!({"members": members, "tokens": member_tokens.iter().sum::<u64>(), "completion_t": done}),
                    );
                    let seq = self.queue.push(done, EventKind::Completion(task));
                    self.live_completion = Some((task, seq));
                }
                Command::Resume { task } => {
                    let done = self
                        .pool
                        .resume(task, now)
                        .map_err(|e| self.illegal(now, format!("resume of task {task}"), e))?;
                    let cursor = self.pool.task(task).map_or(0, |t| t.cursor);
                    self.record(now, "resume", Some(task), json!({"cursor": cursor, "completion_t": done}));
                    let seq = self.queue.push(done, EventKind::Completion(task));
                    self.live_completion = Some((task, seq));
                }
            }
        }
        Ok(())
    }

    fn counts_and_trace(&mut self, now: f64, cmd: &Command) {
        match cmd {
            Command::Preempt { .. } => self.counts.preempt += 1,
            Command::Submit { .. } => self.counts.submit += 1,
            Command::Resume { .. } => self.counts.resume += 1,
        }
        self.command_trace.push(CommandRecord {
            time: now,
            command: cmd.name(),
            task: cmd.task(),
        });
    }

    fn finish(self) -> Result<RunResult, SimError> {
        let outcomes = self
            .requests
            .iter()
            .map(|r| {
                let end = *self
                    .finished
                    .get(&r.id)
                    .unwrap_or_else(|| panic!("request {} never completed", r.id));
                let ttft = end - r.arrival_time;
                RequestOutcome {
                    id: r.id,
                    task: r.task.clone(),
                    arrival: r.arrival_time,
                    tokens: r.num_tokens,
                    prefill_end: end,
                    ttft,
                    slo: r.ttft_slo,
                    met: ttft <= r.ttft_slo,
                }
            })
            .collect();
        let rounds = self.scheduler.rounds();
        let batches = self.scheduler.batch_log().to_vec();
        let (tasks, blocking_log) = self.pool.into_parts();
        let tasks = self
            .finish_order
            .iter()
            .map(|&(id, finish_time)| {
                let t = &tasks[&id];
                TaskRecord {
                    task: id,
                    members: t.member_requests.clone(),
                    total_duration: t.timeline.total_duration,
                    executed_duration: t.executed,
                    busy_time: t.busy_time,
                    uninterrupted_wall_time: t.uninterrupted_wall_time(),
                    max_entry_duration: t.timeline.max_entry_duration(),
                    resume_count: t.resume_count,
                    finish_time,
                }
            })
            .collect();
        Ok(RunResult {
            outcomes,
            blocking_log,
            rounds,
            commands: self.counts,
            command_trace: self.command_trace,
            tasks,
            batches,
            event_log: self.log,
        })
    }
}
