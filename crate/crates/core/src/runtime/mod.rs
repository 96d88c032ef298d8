//! Discrete-event executor: binds, dispatches and runs a workload on a
//! fabric, producing a trace, metrics and task outputs.

mod actions;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde_json::{json, Value};

pub use actions::{check_params, render_report, run_action, ActionContext, ActionOutput, Artifact, ACTIONS};

use crate::engine::{EventQueue, SimTime};
use crate::fabric::{Fabric, Resource};
use crate::par::Execution;
use crate::patterns::{EvalMode, VqeMachine, VqeParams};
use crate::qsim;
use crate::rng;
use crate::taskmgr::{failure_time, sample_failure, FailureReason, PilotManager, RetryPolicy};
use crate::trace::{fold, Outcome, RunMetrics, TraceKind, TraceRecord};
use crate::workflow::{QuantumTask, TaskKind, Workload};
use crate::workload::{
    bind_late, plan_early, BindingMode, ConstraintIndex, Estimator, ExternalLoad, LoadAwareEstimator,
    ModelEstimator, Request, SchedError, ScheduleDecision, SchedulerState,
};

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub binding: BindingMode,
    pub seed: u64,
    pub mode: EvalMode,
    pub retry: RetryPolicy,
    pub pilot_walltime_us: u64,
    /// Foreign work occupying resources from time 0.
    pub external_load: Vec<ExternalLoad>,
    /// Let the early planner see `external_load`. Off, it plans with the
    /// bare fabric model.
    pub plan_with_load: bool,
    pub execution: Execution,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            binding: BindingMode::Early,
            seed: 0,
            mode: EvalMode::Exact,
            retry: RetryPolicy::default(),
            pilot_walltime_us: 3_600_000_000,
            external_load: Vec::new(),
            plan_with_load: false,
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub outcome: Outcome,
    pub error: Option<String>,
    pub trace: Vec<TraceRecord>,
    pub metrics: RunMetrics,
    pub outputs: BTreeMap<String, Value>,
    pub artifacts: Vec<Artifact>,
    pub decisions: Vec<ScheduleDecision>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RunError {
    #[error("{0}")]
    Invalid(String),
}

/// Checks what can be checked before anything runs: actions, their
/// parameters, driver templates and external load targets.
pub fn validate_workload(wl: &Workload, fabric: &Fabric) -> Result<(), RunError> {
    let mut errors = Vec::new();
    for t in &wl.tasks {
        match &t.kind {
            TaskKind::Classical(c) => {
                if let Err(e) = check_params(&c.action, &c.params) {
                    errors.push(format!("task \"{}\": {e}", t.id));
                }
            }
            TaskKind::Driver(d) => {
                if d.template != "vqe" {
                    errors.push(format!("task \"{}\": no driver for template \"{}\"", t.id, d.template));
                } else if let Err(e) = VqeParams::from_value(&d.params) {
                    errors.push(format!("task \"{}\": {e}", t.id));
                }
            }
            TaskKind::Quantum(_) => {}
        }
    }
    if fabric.nodes.is_empty() && wl.tasks.iter().any(|t| !t.is_quantum()) {
        errors.push("fabric has no classical nodes".into());
    }
    if errors.is_empty() {
        Ok(())
    } else {
        Err(RunError::Invalid(errors.join("\n")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum JobState {
    Waiting,
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone)]
struct Attempt {
    number: u32,
    end: SimTime,
    pilot: u64,
    fault: bool,
}

#[derive(Debug, Clone)]
struct EvalLink {
    driver: String,
    generation: u32,
    slot: usize,
    value: f64,
}

#[derive(Debug, Clone)]
struct Job {
    kind: TaskKind,
    inputs: Vec<String>,
    preds: Vec<String>,
    eval: Option<EvalLink>,
    origin: Option<String>,
    /// Bound once and never moved (early plan).
    pinned: bool,
    resource: Option<String>,
    priority: SimTime,
    seq: u64,
    not_before: SimTime,
    state: JobState,
    faults: u32,
    attempts: u32,
    running: Option<Attempt>,
    unsat_retried: bool,
}

impl Job {
    fn is_driver(&self) -> bool {
        matches!(self.kind, TaskKind::Driver(_))
    }
}

struct DriverRun {
    machine: VqeMachine,
    node: String,
    step: SimTime,
    shots: u64,
    qubits: usize,
    generation: u32,
    outstanding: usize,
    values: Vec<f64>,
}

#[derive(Debug, Clone)]
enum Ev {
    Wake,
    Finish { job: String, attempt: u32 },
    Expire { pilot: u64 },
    Rebind { job: String },
    DriverStep { job: String, generation: u32 },
    Deliver { driver: String, generation: u32, slot: usize, value: f64 },
}

type QueueKey = (SimTime, u64, String);

struct Executor<'a> {
    wl: &'a Workload,
    fabric: &'a Fabric,
    cfg: &'a RunConfig,
    q: EventQueue<Ev>,
    state: SchedulerState,
    constraints: ConstraintIndex,
    pilots: PilotManager,
    jobs: BTreeMap<String, Job>,
    queues: BTreeMap<String, BTreeSet<QueueKey>>,
    running: BTreeMap<String, BTreeMap<String, u32>>,
    external: BTreeMap<String, SimTime>,
    drivers: BTreeMap<String, DriverRun>,
    generations: BTreeMap<String, u32>,
    outputs: BTreeMap<String, Value>,
    artifacts: Vec<Artifact>,
    trace: Vec<TraceRecord>,
    decisions: Vec<ScheduleDecision>,
    deferred: Vec<String>,
    seq: u64,
    abort: Option<(Outcome, String)>,
}

/// Runs `wl` on `fabric`. Scheduling and execution failures are reported
/// through the outcome; only invalid input is an `Err`.
pub fn execute(wl: &Workload, fabric: &Fabric, cfg: &RunConfig) -> Result<RunReport, RunError> {
    validate_workload(wl, fabric)?;
    for l in &cfg.external_load {
        if fabric.resource(&l.resource_id).is_none() {
            return Err(RunError::Invalid(format!("external load on unknown resource \"{}\"", l.resource_id)));
        }
    }
    if cfg.pilot_walltime_us == 0 {
        return Err(RunError::Invalid("pilot walltime must be positive".into()));
    }
    let mut ex = Executor::new(wl, fabric, cfg);
    ex.run();
    Ok(ex.finish())
}

fn quantum_detail(q: &QuantumTask) -> String {
    format!("kind=quantum shots={} circuits={}", q.shots, q.circuits.len())
}

impl<'a> Executor<'a> {
    fn new(wl: &'a Workload, fabric: &'a Fabric, cfg: &'a RunConfig) -> Self {
        let preds = wl.predecessors();
        let jobs = wl
            .tasks
            .iter()
            .map(|t| {
                let job = Job {
                    kind: t.kind.clone(),
                    inputs: t.inputs.clone(),
                    preds: preds
                        .get(t.id.as_str())
                        .map(|s| s.iter().map(|p| p.to_string()).collect())
                        .unwrap_or_default(),
                    eval: None,
                    origin: None,
                    pinned: false,
                    resource: None,
                    priority: SimTime::ZERO,
                    seq: 0,
                    not_before: SimTime::ZERO,
                    state: JobState::Waiting,
                    faults: 0,
                    attempts: 0,
                    running: None,
                    unsat_retried: false,
                };
                (t.id.clone(), job)
            })
            .collect();
        let mut external = BTreeMap::new();
        for l in &cfg.external_load {
            let e = external.entry(l.resource_id.clone()).or_insert(SimTime::ZERO);
            *e = (*e).max(l.until);
        }
        Executor {
            wl,
            fabric,
            cfg,
            q: EventQueue::new(),
            state: SchedulerState::new(fabric, wl),
            constraints: ConstraintIndex::new(wl),
            pilots: PilotManager::new(),
            jobs,
            queues: fabric.resource_ids().map(|id| (id.to_string(), BTreeSet::new())).collect(),
            running: fabric.resource_ids().map(|id| (id.to_string(), BTreeMap::new())).collect(),
            external,
            drivers: BTreeMap::new(),
            generations: BTreeMap::new(),
            outputs: BTreeMap::new(),
            artifacts: Vec::new(),
            trace: Vec::new(),
            decisions: Vec::new(),
            deferred: Vec::new(),
            seq: 0,
            abort: None,
        }
    }

    fn record(&mut self, kind: TraceKind, at: SimTime, task: Option<&str>, res: Option<&str>, attempt: Option<u32>, detail: String) {
        self.trace.push(TraceRecord {
            kind,
            at_us: at.micros(),
            task_id: task.map(str::to_string),
            resource_id: res.map(str::to_string),
            attempt,
            detail,
        });
    }

    fn fail_run(&mut self, outcome: Outcome, message: String) {
        if self.abort.is_none() {
            self.abort = Some((outcome, message));
        }
    }

    fn unsatisfiable(&mut self, at: SimTime, task: &str, reason: &str) {
        self.record(
            TraceKind::Bind,
            at,
            Some(task),
            None,
            None,
            format!("status=unsatisfiable reason={}", reason.replace(char::is_whitespace, "_")),
        );
        self.fail_run(Outcome::Unsatisfiable, format!("task \"{task}\": unsatisfiable placement: {reason}"));
    }

    fn run(&mut self) {
        if self.cfg.binding == BindingMode::Early && !self.plan() {
            return;
        }
        for l in &self.cfg.external_load {
            self.state.reserve_external(l).expect("resource checked");
            self.q.schedule_at(l.until, Ev::Wake);
        }
        let initial: Vec<String> = self.state.ready().iter().cloned().collect();
        for id in initial {
            self.on_ready(&id, SimTime::ZERO);
        }
        self.dispatch(SimTime::ZERO);
        while self.abort.is_none() && !self.state.is_done() {
            let Some((now, ev)) = self.q.advance() else {
                if !self.deferred.is_empty() {
                    let now = self.q.now();
                    self.retry_deferred(now);
                    self.dispatch(now);
                    if self.q.is_empty() && self.abort.is_none() {
                        self.fail_run(Outcome::Failed, "run stalled with unfinished tasks".into());
                    }
                    continue;
                }
                self.fail_run(Outcome::Failed, "run stalled with unfinished tasks".into());
                break;
            };
            match ev {
                Ev::Wake => {}
                Ev::Finish { job, attempt } => self.on_finish(&job, attempt, now),
                Ev::Expire { pilot } => self.on_expire(pilot, now),
                Ev::Rebind { job } => self.bind(&job, now),
                Ev::DriverStep { job, generation } => self.on_driver_step(&job, generation, now),
                Ev::Deliver {
                    driver,
                    generation,
                    slot,
                    value,
                } => self.on_deliver(&driver, generation, slot, value, now),
            }
            if self.abort.is_none() {
                self.dispatch(now);
            }
        }
        if self.abort.is_none() {
            let now = self.q.now();
            let live: Vec<(u64, String)> = self
                .pilots
                .pilots()
                .iter()
                .filter(|p| p.is_live(now))
                .map(|p| (p.id, p.resource_id.clone()))
                .collect();
            for (id, res) in live {
                if self.pilots.release(id, now).is_ok() {
                    self.record(TraceKind::PilotRelease, now, None, Some(&res), None, format!("pilot={id} reason=drain"));
                }
            }
        }
    }

    /// Early binding: plan everything up front and pin the placements.
    fn plan(&mut self) -> bool {
        let load_aware;
        let est: &dyn Estimator = if self.cfg.plan_with_load {
            load_aware = LoadAwareEstimator {
                load: self.cfg.external_load.clone(),
            };
            &load_aware
        } else {
            &ModelEstimator
        };
        match plan_early(self.wl, self.fabric, est) {
            Ok(plan) => {
                for d in plan {
                    let cores = self.jobs[&d.task_id].kind.cores().max(1);
                    if let Err(e) = self.state.admit(&d, cores) {
                        self.fail_run(Outcome::Failed, e.to_string());
                        return false;
                    }
                    self.record(
                        TraceKind::Bind,
                        SimTime::ZERO,
                        Some(&d.task_id),
                        Some(&d.resource_id),
                        None,
                        format!("mode=early planned_start={} planned_end={}", d.planned_start.micros(), d.planned_end.micros()),
                    );
                    self.seq += 1;
                    let job = self.jobs.get_mut(&d.task_id).expect("planned task exists");
                    job.pinned = true;
                    job.resource = Some(d.resource_id.clone());
                    job.priority = d.planned_start;
                    job.seq = self.seq;
                    job.state = JobState::Queued;
                    self.queues
                        .get_mut(&d.resource_id)
                        .expect("resource exists")
                        .insert((d.planned_start, self.seq, d.task_id.clone()));
                    self.decisions.push(d);
                }
                true
            }
            Err(SchedError::Unsatisfiable { task, reason }) => {
                self.unsatisfiable(SimTime::ZERO, &task, &reason);
                false
            }
            Err(e) => {
                self.fail_run(Outcome::Failed, e.to_string());
                false
            }
        }
    }

    fn on_ready(&mut self, id: &str, now: SimTime) {
        if !self.jobs[id].pinned {
            self.bind(id, now);
        }
    }

    fn bind(&mut self, id: &str, now: SimTime) {
        let job = &self.jobs[id];
        let req = Request {
            task_id: id,
            kind: &job.kind,
            ready_at: now,
            origin: job.origin.as_deref(),
        };
        match bind_late(&req, self.fabric, &self.state, &self.constraints) {
            Ok(d) => {
                let cores = job.kind.cores().max(1);
                let origin_delay = match &job.origin {
                    Some(o) => SimTime::from_micros_f64(self.fabric.latency(o, &d.resource_id).unwrap_or(0.0)),
                    None => SimTime::ZERO,
                };
                if let Err(e) = self.state.admit(&d, cores) {
                    self.fail_run(Outcome::Failed, e.to_string());
                    return;
                }
                self.record(
                    TraceKind::Bind,
                    now,
                    Some(id),
                    Some(&d.resource_id),
                    None,
                    format!("mode=late planned_start={} planned_end={}", d.planned_start.micros(), d.planned_end.micros()),
                );
                self.seq += 1;
                let seq = self.seq;
                let job = self.jobs.get_mut(id).expect("job exists");
                job.resource = Some(d.resource_id.clone());
                job.priority = d.planned_start;
                job.seq = seq;
                job.not_before = job.not_before.max(now + origin_delay);
                job.state = JobState::Queued;
                let wake = job.not_before;
                self.queues
                    .get_mut(&d.resource_id)
                    .expect("resource exists")
                    .insert((d.planned_start, seq, id.to_string()));
                if wake > now {
                    self.q.schedule_at(wake, Ev::Wake);
                }
                self.decisions.push(d);
            }
            Err(SchedError::Unsatisfiable { reason, .. }) => {
                let job = self.jobs.get_mut(id).expect("job exists");
                if job.unsat_retried {
                    self.unsatisfiable(now, id, &reason);
                } else {
                    // Partners may be placed later; try once more after the
                    // next completion.
                    job.unsat_retried = true;
                    self.deferred.push(id.to_string());
                }
            }
            Err(e) => self.fail_run(Outcome::Failed, e.to_string()),
        }
    }

    fn retry_deferred(&mut self, now: SimTime) {
        for id in std::mem::take(&mut self.deferred) {
            if self.abort.is_some() {
                return;
            }
            self.bind(&id, now);
        }
    }

    fn has_capacity(&self, res: &str, job: &Job, now: SimTime) -> bool {
        if self.external.get(res).is_some_and(|&until| until > now) {
            return false;
        }
        let running = &self.running[res];
        match self.fabric.resource(res) {
            Some(Resource::Qpu(_)) => running.is_empty(),
            Some(Resource::Node(n)) => running.values().sum::<u32>() + job.kind.cores().max(1) <= n.cores,
            None => false,
        }
    }

    /// Starts every queued job whose dependencies are met, in planned-start
    /// order per resource. A job without room blocks the rest of its queue.
    fn dispatch(&mut self, now: SimTime) {
        let resources: Vec<String> = self.queues.keys().cloned().collect();
        for res in resources {
            let entries: Vec<QueueKey> = self.queues[&res].iter().cloned().collect();
            for key in entries {
                let job = &self.jobs[&key.2];
                if job.not_before > now || !job.preds.iter().all(|p| self.state.completed().contains(p)) {
                    continue;
                }
                if !self.has_capacity(&res, job, now) {
                    break;
                }
                self.queues.get_mut(&res).expect("resource exists").remove(&key);
                self.start(&key.2, &res, now);
                if self.abort.is_some() {
                    return;
                }
            }
        }
    }

    fn start(&mut self, id: &str, res: &str, now: SimTime) {
        let walltime = SimTime(self.cfg.pilot_walltime_us);
        let job = &self.jobs[id];
        let duration = match &job.kind {
            TaskKind::Driver(_) => None,
            kind => Some(
                ModelEstimator
                    .duration(kind, self.fabric.resource(res).expect("resource exists"))
                    .expect("bound resource can run the task"),
            ),
        };
        let units = job.kind.cores().max(1);
        let attempt = job.attempts + 1;
        let faults = job.faults;
        let detail = match &job.kind {
            TaskKind::Quantum(q) => quantum_detail(q),
            k => format!("kind={}", k.label()),
        };
        let failure_prob = match &job.kind {
            TaskKind::Quantum(_) => self.fabric.qpu(res).map_or(0.0, |q| q.failure_prob),
            _ => 0.0,
        };
        if duration.is_some_and(|d| d > walltime) {
            self.jobs.get_mut(id).expect("job exists").state = JobState::Failed;
            self.record(
                TraceKind::TaskFail,
                now,
                Some(id),
                Some(res),
                Some(attempt),
                format!("reason={} terminal=true", FailureReason::ExceedsWalltime),
            );
            self.fail_run(Outcome::Failed, format!("task \"{id}\" cannot fit in a pilot walltime"));
            return;
        }
        let pilot = match self.pilots.live(res, now) {
            Some(p) => p.id,
            None => match self.pilots.acquire(self.fabric, res, walltime, now) {
                Ok(p) => {
                    let pl = self.pilots.pilot(p).expect("just acquired");
                    let detail = format!("pilot={p} capacity={} expires_at={}", pl.capacity, pl.expires_at.micros());
                    let expires = pl.expires_at;
                    self.record(TraceKind::PilotAcquire, now, None, Some(res), None, detail);
                    self.q.schedule_at(expires, Ev::Expire { pilot: p });
                    p
                }
                Err(e) => {
                    self.fail_run(Outcome::Failed, e.to_string());
                    return;
                }
            },
        };
        if let Err(e) = self.pilots.start_task(pilot, id, units) {
            self.fail_run(Outcome::Failed, e.to_string());
            return;
        }
        self.running.get_mut(res).expect("resource exists").insert(id.to_string(), units);
        self.record(TraceKind::TaskStart, now, Some(id), Some(res), Some(attempt), detail);
        let job = self.jobs.get_mut(id).expect("job exists");
        job.attempts = attempt;
        job.state = JobState::Running;
        match duration {
            None => {
                job.running = Some(Attempt {
                    number: attempt,
                    end: SimTime::MAX,
                    pilot,
                    fault: false,
                });
                self.state.update_interval(id, now, SimTime::MAX);
                self.start_driver(id, res, now);
            }
            Some(d) => {
                let (end, fault) = match sample_failure(self.cfg.seed, id, faults + 1, failure_prob) {
                    Some(frac) => (failure_time(now, d, frac), true),
                    None => (now + d, false),
                };
                job.running = Some(Attempt {
                    number: attempt,
                    end,
                    pilot,
                    fault,
                });
                self.state.update_interval(id, now, now + d);
                self.q.schedule_at(end, Ev::Finish {
                    job: id.to_string(),
                    attempt,
                });
            }
        }
    }

    /// Removes the running attempt of `id` from its resource and pilot.
    fn stop(&mut self, id: &str) -> Option<(Attempt, String)> {
        let job = self.jobs.get_mut(id).expect("job exists");
        let run = job.running.take()?;
        let res = job.resource.clone().expect("running job is bound");
        self.running.get_mut(&res).expect("resource exists").remove(id);
        let _ = self.pilots.finish_task(run.pilot, id);
        Some((run, res))
    }

    fn requeue(&mut self, id: &str, at: SimTime, now: SimTime) {
        let job = self.jobs.get_mut(id).expect("job exists");
        job.not_before = at;
        if job.pinned {
            job.state = JobState::Queued;
            let res = job.resource.clone().expect("pinned job is bound");
            let key = (job.priority, job.seq, id.to_string());
            self.queues.get_mut(&res).expect("resource exists").insert(key);
            if at > now {
                self.q.schedule_at(at, Ev::Wake);
            }
        } else {
            job.state = JobState::Waiting;
            job.resource = None;
            self.state.unbind(id);
            self.q.schedule_at(at, Ev::Rebind { job: id.to_string() });
        }
    }

    fn on_finish(&mut self, id: &str, attempt: u32, now: SimTime) {
        let job = &self.jobs[id];
        if job.state != JobState::Running || job.running.as_ref().is_none_or(|r| r.number != attempt) {
            return;
        }
        let (run, res) = self.stop(id).expect("attempt is running");
        if run.fault {
            let job = self.jobs.get_mut(id).expect("job exists");
            job.faults += 1;
            let terminal = job.faults > self.cfg.retry.max_retries;
            let faults = job.faults;
            self.record(
                TraceKind::TaskFail,
                now,
                Some(id),
                Some(&res),
                Some(attempt),
                format!("reason={} terminal={terminal}", FailureReason::Fault),
            );
            if terminal {
                self.jobs.get_mut(id).expect("job exists").state = JobState::Failed;
                self.fail_run(Outcome::Failed, format!("task \"{id}\" failed after {faults} attempts"));
            } else {
                self.requeue(id, now + SimTime(self.cfg.retry.backoff_us), now);
            }
            return;
        }
        let job = &self.jobs[id];
        let detail = match &job.kind {
            TaskKind::Quantum(q) => quantum_detail(q),
            k => format!("kind={}", k.label()),
        };
        self.record(TraceKind::TaskEnd, now, Some(id), Some(&res), Some(attempt), detail);
        if let Err(e) = self.produce_output(id, &res, now) {
            self.jobs.get_mut(id).expect("job exists").state = JobState::Failed;
            self.fail_run(Outcome::Failed, format!("task \"{id}\": {e}"));
            return;
        }
        debug_assert!(run.end == now);
        self.complete(id, now);
    }

    fn produce_output(&mut self, id: &str, res: &str, now: SimTime) -> Result<(), String> {
        let job = &self.jobs[id];
        match &job.kind {
            TaskKind::Classical(c) => {
                let ctx = ActionContext {
                    task_id: id,
                    params: &c.params,
                    inputs: job
                        .inputs
                        .iter()
                        .filter_map(|i| self.outputs.get(i).map(|v| (i.as_str(), v)))
                        .collect(),
                    base_dir: &self.wl.base_dir,
                };
                let out = run_action(&c.action, &ctx)?;
                self.outputs.insert(id.to_string(), out.value);
                self.artifacts.extend(out.artifact);
            }
            TaskKind::Quantum(q) => {
                if let Some(link) = &job.eval {
                    let node = &self.drivers.get(&link.driver).map(|d| d.node.clone()).unwrap_or_default();
                    let lat = self.fabric.latency(res, node).unwrap_or(0.0);
                    self.q.schedule_at(now + SimTime::from_micros_f64(lat), Ev::Deliver {
                        driver: link.driver.clone(),
                        generation: link.generation,
                        slot: link.slot,
                        value: link.value,
                    });
                    return Ok(());
                }
                let mut results = Vec::new();
                for (k, c) in q.circuits.iter().enumerate() {
                    let seed = rng::mix(self.cfg.seed, &[rng::hash_str(id), k as u64]);
                    let r = qsim::run_with(c, q.shots, seed, self.cfg.execution).map_err(|e| e.to_string())?;
                    results.push(r);
                }
                let first = results.first().map(|r| json!(r.counts)).unwrap_or(Value::Null);
                self.outputs.insert(
                    id.to_string(),
                    json!({ "shots": q.shots, "counts": first, "results": results }),
                );
            }
            TaskKind::Driver(_) => {}
        }
        Ok(())
    }

    fn complete(&mut self, id: &str, now: SimTime) {
        let job = self.jobs.get_mut(id).expect("job exists");
        job.state = JobState::Done;
        match self.state.complete(id, now) {
            Ok(newly) => {
                for n in newly {
                    self.on_ready(&n, now);
                    if self.abort.is_some() {
                        return;
                    }
                }
            }
            Err(e) => {
                self.fail_run(Outcome::Failed, e.to_string());
                return;
            }
        }
        self.retry_deferred(now);
    }

    fn on_expire(&mut self, pilot: u64, now: SimTime) {
        let Some(p) = self.pilots.pilot(pilot) else {
            return;
        };
        let res = p.resource_id.clone();
        let tasks: Vec<String> = p.running().map(str::to_string).collect();
        if !p.is_live(now) && p.expires_at != now || p.released_at.is_some() {
            return;
        }
        // Attempts ending exactly at expiry complete first.
        for t in &tasks {
            let ending = self.jobs[t].running.as_ref().filter(|r| r.end <= now).map(|r| r.number);
            if let Some(n) = ending {
                self.on_finish(t, n, now);
                if self.abort.is_some() {
                    return;
                }
            }
        }
        let interrupted = self.pilots.expire(pilot).unwrap_or_default();
        for t in interrupted {
            let Some((run, res)) = self.stop(&t) else {
                continue;
            };
            self.record(
                TraceKind::TaskFail,
                now,
                Some(&t),
                Some(&res),
                Some(run.number),
                format!("reason={} terminal=false", FailureReason::PilotExpired),
            );
            if self.jobs[&t].is_driver() {
                // Outstanding evaluations belong to the old generation and
                // are dropped on delivery.
                self.drivers.remove(&t);
            }
            self.requeue(&t, now, now);
        }
        self.record(TraceKind::PilotRelease, now, None, Some(&res), None, format!("pilot={pilot} reason=expired"));
    }

    fn start_driver(&mut self, id: &str, node: &str, now: SimTime) {
        let job = &self.jobs[id];
        let TaskKind::Driver(spec) = &job.kind else {
            return;
        };
        let resolved = VqeParams::from_value(&spec.params).and_then(|p| {
            let inputs: Vec<&Value> = job.inputs.iter().filter_map(|i| self.outputs.get(i)).collect();
            let cfg = p.resolve(&inputs, self.cfg.mode, self.cfg.seed)?;
            Ok((p, VqeMachine::new(cfg)?))
        });
        let (params, machine) = match resolved {
            Ok(x) => x,
            Err(e) => {
                let attempt = job.attempts;
                self.stop(id);
                self.jobs.get_mut(id).expect("job exists").state = JobState::Failed;
                self.record(TraceKind::TaskFail, now, Some(id), Some(node), Some(attempt), "reason=invalid_config terminal=true".into());
                self.fail_run(Outcome::Failed, format!("task \"{id}\": {e}"));
                return;
            }
        };
        let generation = self.generations.entry(id.to_string()).or_insert(0);
        *generation += 1;
        let generation = *generation;
        let step = SimTime::from_micros_f64(params.step_cost_us);
        self.drivers.insert(id.to_string(), DriverRun {
            machine,
            node: node.to_string(),
            step,
            shots: params.shots,
            qubits: spec.qpu_qubits_min,
            generation,
            outstanding: 0,
            values: Vec::new(),
        });
        self.q.schedule_at(now + step, Ev::DriverStep {
            job: id.to_string(),
            generation,
        });
    }

    fn on_driver_step(&mut self, id: &str, generation: u32, now: SimTime) {
        let Some(rt) = self.drivers.get_mut(id) else {
            return;
        };
        if rt.generation != generation {
            return;
        }
        let Some(batch) = rt.machine.next_batch() else {
            let result = rt.machine.result();
            let evaluations = result.circuit_evaluations;
            let iterations = result.iterations_used;
            self.drivers.remove(id);
            let (run, res) = self.stop(id).expect("driver is running");
            self.record(
                TraceKind::TaskEnd,
                now,
                Some(id),
                Some(&res),
                Some(run.number),
                format!("kind=driver evaluations={evaluations} iterations={iterations}"),
            );
            self.outputs.insert(id.to_string(), serde_json::to_value(&result).expect("result serializes"));
            self.complete(id, now);
            return;
        };
        let cfg = rt.machine.config();
        let exec = self.cfg.execution;
        let values: Result<Vec<f64>, _> = exec
            .map(&batch, |r| cfg.energy(&r.params, r.index, Execution::Sequential))
            .into_iter()
            .collect();
        let circuits: Result<Vec<_>, _> = batch.iter().map(|r| cfg.evaluation_circuits(&r.params)).collect();
        let (values, circuits) = match (values, circuits) {
            (Ok(v), Ok(c)) => (v, c),
            (Err(e), _) | (_, Err(e)) => {
                self.fail_run(Outcome::Failed, format!("task \"{id}\": {e}"));
                return;
            }
        };
        rt.outstanding = batch.len();
        rt.values = vec![f64::NAN; batch.len()];
        let (node, shots, qubits) = (rt.node.clone(), rt.shots, rt.qubits);
        for (slot, (req, (value, circs))) in batch.iter().zip(values.into_iter().zip(circuits)).enumerate() {
            let eval_id = if generation == 1 {
                format!("{id}.eval{}", req.index)
            } else {
                format!("{id}.g{generation}.eval{}", req.index)
            };
            let job = Job {
                kind: TaskKind::Quantum(QuantumTask {
                    qpu_qubits_min: qubits,
                    shots,
                    circuits: circs.into_iter().map(Arc::new).collect(),
                }),
                inputs: Vec::new(),
                preds: Vec::new(),
                eval: Some(EvalLink {
                    driver: id.to_string(),
                    generation,
                    slot,
                    value,
                }),
                origin: Some(node.clone()),
                pinned: false,
                resource: None,
                priority: SimTime::ZERO,
                seq: 0,
                not_before: now,
                state: JobState::Waiting,
                faults: 0,
                attempts: 0,
                running: None,
                unsat_retried: false,
            };
            self.state.add_dynamic(&eval_id);
            self.jobs.insert(eval_id.clone(), job);
            self.bind(&eval_id, now);
            if self.abort.is_some() {
                return;
            }
        }
    }

    fn on_deliver(&mut self, driver: &str, generation: u32, slot: usize, value: f64, now: SimTime) {
        let Some(rt) = self.drivers.get_mut(driver) else {
            return;
        };
        if rt.generation != generation {
            return;
        }
        rt.values[slot] = value;
        rt.outstanding -= 1;
        if rt.outstanding == 0 {
            let values = std::mem::take(&mut rt.values);
            rt.machine.feed(&values);
            let at = now + rt.step;
            self.q.schedule_at(at, Ev::DriverStep {
                job: driver.to_string(),
                generation,
            });
        }
    }

    fn finish(mut self) -> RunReport {
        self.trace.sort_by_key(|r| r.at_us);
        let mut metrics = fold(&self.trace);
        let (outcome, error) = match self.abort.take() {
            Some((o, e)) => (o, Some(e)),
            None => (Outcome::Success, None),
        };
        metrics.outcome = outcome;
        RunReport {
            outcome,
            error,
            trace: self.trace,
            metrics,
            outputs: self.outputs,
            artifacts: self.artifacts,
            decisions: self.decisions,
        }
    }
}
