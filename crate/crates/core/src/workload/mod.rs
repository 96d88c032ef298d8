//! Workload layer: resource selection, early/late binding and
//! coupling-aware co-allocation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use crate::engine::SimTime;
use crate::fabric::{Fabric, Resource};
use crate::workflow::{generations, TaskKind, Workload};

/// Resources hosting `members` must be pairwise within `max_latency_us`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlacementConstraint {
    pub members: Vec<String>,
    pub max_latency_us: f64,
}

impl PlacementConstraint {
    pub fn pair(a: &str, b: &str, max_latency_us: f64) -> Self {
        let mut members = vec![a.to_string(), b.to_string()];
        members.sort();
        PlacementConstraint {
            members,
            max_latency_us,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BindingMode {
    #[default]
    Early,
    Late,
}

impl FromStr for BindingMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "early" => Ok(BindingMode::Early),
            "late" => Ok(BindingMode::Late),
            other => Err(format!("unknown binding mode \"{other}\"")),
        }
    }
}

impl fmt::Display for BindingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BindingMode::Early => "early",
            BindingMode::Late => "late",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduleDecision {
    pub task_id: String,
    pub resource_id: String,
    pub planned_start: SimTime,
    pub planned_end: SimTime,
    pub bound_at: SimTime,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SchedError {
    #[error("task \"{task}\": unsatisfiable placement: {reason}")]
    Unsatisfiable { task: String, reason: String },
    #[error("task \"{task}\" overlaps existing work on \"{resource}\"")]
    Overlap { task: String, resource: String },
    #[error("unknown resource \"{0}\"")]
    UnknownResource(String),
    #[error("unknown task \"{0}\"")]
    UnknownTask(String),
}

/// Work outside the workload occupying a resource from time 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExternalLoad {
    pub resource_id: String,
    pub until: SimTime,
}

/// Task duration model used for planning.
pub trait Estimator {
    /// `None` when the resource cannot run the task.
    fn duration(&self, kind: &TaskKind, resource: Resource<'_>) -> Option<SimTime>;

    /// Time before which the estimator believes the resource is occupied by
    /// work it was told about.
    fn busy_until(&self, _resource_id: &str) -> SimTime {
        SimTime::ZERO
    }
}

/// Fabric timing model; knows nothing about external load.
#[derive(Debug, Clone, Copy, Default)]
pub struct ModelEstimator;

/// Planning durations are at least one microsecond so every interval is
/// non-empty.
fn nonzero(us: f64) -> SimTime {
    SimTime::from_micros_f64(us).max(SimTime(1))
}

impl Estimator for ModelEstimator {
    fn duration(&self, kind: &TaskKind, resource: Resource<'_>) -> Option<SimTime> {
        match (kind, resource) {
            (TaskKind::Classical(c), Resource::Node(n)) => Some(nonzero(c.compute_cost_us / n.core_speed)),
            (TaskKind::Driver(_), Resource::Node(_)) => Some(SimTime(1)),
            (TaskKind::Quantum(q), Resource::Qpu(d)) => {
                let mut total = 0.0;
                for c in &q.circuits {
                    total += d.exec_time_us(c, q.shots).ok()?;
                }
                Some(nonzero(total))
            }
            _ => None,
        }
    }
}

/// Model estimator that also knows about pre-existing load.
#[derive(Debug, Clone, Default)]
pub struct LoadAwareEstimator {
    pub load: Vec<ExternalLoad>,
}

impl Estimator for LoadAwareEstimator {
    fn duration(&self, kind: &TaskKind, resource: Resource<'_>) -> Option<SimTime> {
        ModelEstimator.duration(kind, resource)
    }

    fn busy_until(&self, resource_id: &str) -> SimTime {
        self.load
            .iter()
            .filter(|l| l.resource_id == resource_id)
            .map(|l| l.until)
            .max()
            .unwrap_or(SimTime::ZERO)
    }
}

#[derive(Debug, Clone)]
struct Slot {
    task: String,
    start: SimTime,
    end: SimTime,
    cores: u32,
}

/// Reserved intervals on one resource. QPUs have capacity 1.
#[derive(Debug, Clone)]
pub struct Timeline {
    capacity: u32,
    slots: Vec<Slot>,
}

impl Timeline {
    fn new(capacity: u32) -> Self {
        Timeline {
            capacity,
            slots: Vec::new(),
        }
    }

    pub fn capacity(&self) -> u32 {
        self.capacity
    }

    /// Peak reserved cores over `[start, end)`.
    pub fn peak_usage(&self, start: SimTime, end: SimTime) -> u32 {
        let overlapping: Vec<&Slot> = self
            .slots
            .iter()
            .filter(|s| s.start < end && start < s.end)
            .collect();
        let mut points = vec![start];
        points.extend(overlapping.iter().map(|s| s.start).filter(|t| *t > start));
        points
            .into_iter()
            .map(|t| {
                overlapping
                    .iter()
                    .filter(|s| s.start <= t && t < s.end)
                    .map(|s| s.cores)
                    .sum::<u32>()
            })
            .max()
            .unwrap_or(0)
    }

    pub fn fits(&self, start: SimTime, end: SimTime, cores: u32) -> bool {
        self.peak_usage(start, end) + cores <= self.capacity
    }

    /// Earliest `t ≥ ready` with room for `cores` over `[t, t + dur)`.
    pub fn earliest_start(&self, ready: SimTime, dur: SimTime, cores: u32) -> SimTime {
        if cores > self.capacity {
            return SimTime::MAX;
        }
        let mut candidates: Vec<SimTime> = vec![ready];
        candidates.extend(self.slots.iter().map(|s| s.end).filter(|e| *e > ready));
        candidates.sort();
        candidates.dedup();
        candidates
            .into_iter()
            .find(|&t| t < SimTime::MAX && self.fits(t, t.saturating_add(dur), cores))
            .unwrap_or(SimTime::MAX)
    }

    pub fn intervals(&self) -> impl Iterator<Item = (&str, SimTime, SimTime)> {
        self.slots.iter().map(|s| (s.task.as_str(), s.start, s.end))
    }
}

/// Tasks a given task is constrained against.
#[derive(Debug, Clone)]
pub struct Partner {
    pub id: String,
    pub bound: f64,
    pub kind: TaskKind,
}

#[derive(Debug, Clone, Default)]
pub struct ConstraintIndex {
    partners: BTreeMap<String, Vec<Partner>>,
}

impl ConstraintIndex {
    pub fn new(wl: &Workload) -> Self {
        let mut partners: BTreeMap<String, Vec<Partner>> = BTreeMap::new();
        for c in &wl.constraints {
            for a in &c.members {
                for b in &c.members {
                    if a == b {
                        continue;
                    }
                    if let Some(t) = wl.task(b) {
                        partners.entry(a.clone()).or_default().push(Partner {
                            id: b.clone(),
                            bound: c.max_latency_us,
                            kind: t.kind.clone(),
                        });
                    }
                }
            }
        }
        ConstraintIndex { partners }
    }

    pub fn partners(&self, task: &str) -> &[Partner] {
        self.partners.get(task).map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Resource availability, bindings and dependency progress.
#[derive(Debug, Clone)]
pub struct SchedulerState {
    timelines: BTreeMap<String, Timeline>,
    bindings: BTreeMap<String, String>,
    ready: BTreeSet<String>,
    completed: BTreeSet<String>,
    remaining: BTreeMap<String, usize>,
    successors: BTreeMap<String, Vec<String>>,
}

impl SchedulerState {
    /// Empty timelines; every task without predecessors is ready.
    pub fn new(fabric: &Fabric, wl: &Workload) -> Self {
        let mut timelines = BTreeMap::new();
        for n in &fabric.nodes {
            timelines.insert(n.id.clone(), Timeline::new(n.cores));
        }
        for q in &fabric.qpus {
            timelines.insert(q.id.clone(), Timeline::new(1));
        }
        let preds = wl.predecessors();
        let remaining: BTreeMap<String, usize> =
            preds.iter().map(|(k, v)| (k.to_string(), v.len())).collect();
        let successors = wl
            .successors()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v.into_iter().map(str::to_string).collect()))
            .collect();
        let ready = remaining
            .iter()
            .filter(|(_, n)| **n == 0)
            .map(|(k, _)| k.clone())
            .collect();
        SchedulerState {
            timelines,
            bindings: BTreeMap::new(),
            ready,
            completed: BTreeSet::new(),
            remaining,
            successors,
        }
    }

    pub fn timeline(&self, resource: &str) -> Option<&Timeline> {
        self.timelines.get(resource)
    }

    pub fn binding(&self, task: &str) -> Option<&str> {
        self.bindings.get(task).map(String::as_str)
    }

    pub fn ready(&self) -> &BTreeSet<String> {
        &self.ready
    }

    pub fn completed(&self) -> &BTreeSet<String> {
        &self.completed
    }

    pub fn is_done(&self) -> bool {
        self.completed.len() == self.remaining.len()
    }

    /// Marks a resource occupied over `[0, until)` by foreign work.
    pub fn reserve_external(&mut self, load: &ExternalLoad) -> Result<(), SchedError> {
        let tl = self
            .timelines
            .get_mut(&load.resource_id)
            .ok_or_else(|| SchedError::UnknownResource(load.resource_id.clone()))?;
        tl.slots.push(Slot {
            task: String::new(),
            start: SimTime::ZERO,
            end: load.until,
            cores: tl.capacity,
        });
        Ok(())
    }

    /// Records the binding and reserves its interval. Rejects reservations
    /// that would overlap a QPU interval or exceed node cores.
    pub fn admit(&mut self, d: &ScheduleDecision, cores: u32) -> Result<(), SchedError> {
        let tl = self
            .timelines
            .get_mut(&d.resource_id)
            .ok_or_else(|| SchedError::UnknownResource(d.resource_id.clone()))?;
        if !tl.fits(d.planned_start, d.planned_end, cores) {
            return Err(SchedError::Overlap {
                task: d.task_id.clone(),
                resource: d.resource_id.clone(),
            });
        }
        tl.slots.push(Slot {
            task: d.task_id.clone(),
            start: d.planned_start,
            end: d.planned_end,
            cores,
        });
        self.bindings.insert(d.task_id.clone(), d.resource_id.clone());
        Ok(())
    }

    /// Moves a task's reservation to its actual interval.
    pub fn update_interval(&mut self, task: &str, start: SimTime, end: SimTime) {
        if let Some(r) = self.bindings.get(task) {
            if let Some(tl) = self.timelines.get_mut(r) {
                for s in tl.slots.iter_mut().filter(|s| s.task == task) {
                    s.start = start;
                    s.end = end;
                }
            }
        }
    }

    /// Drops a task's reservation and binding so it can be rebound.
    pub fn unbind(&mut self, task: &str) {
        if let Some(r) = self.bindings.remove(task) {
            if let Some(tl) = self.timelines.get_mut(&r) {
                tl.slots.retain(|s| s.task != task);
            }
        }
    }

    /// Registers a task created at run time, with no predecessors and no
    /// successors. It is ready immediately.
    pub fn add_dynamic(&mut self, task: &str) {
        if self.remaining.insert(task.to_string(), 0).is_none() {
            self.ready.insert(task.to_string());
        }
    }

    /// Marks `task` complete at `at`; returns successors that became ready.
    pub fn complete(&mut self, task: &str, at: SimTime) -> Result<Vec<String>, SchedError> {
        if !self.remaining.contains_key(task) {
            return Err(SchedError::UnknownTask(task.to_string()));
        }
        if let Some(r) = self.bindings.get(task) {
            if let Some(tl) = self.timelines.get_mut(r) {
                for s in tl.slots.iter_mut().filter(|s| s.task == task) {
                    s.end = at.max(s.start);
                }
            }
        }
        self.ready.remove(task);
        if !self.completed.insert(task.to_string()) {
            return Ok(Vec::new());
        }
        let mut newly = Vec::new();
        for s in self.successors.get(task).cloned().unwrap_or_default() {
            let r = self.remaining.get_mut(&s).expect("successor is a task");
            *r -= 1;
            if *r == 0 {
                self.ready.insert(s.clone());
                newly.push(s);
            }
        }
        Ok(newly)
    }
}

/// A binding request for one task.
#[derive(Debug, Clone)]
pub struct Request<'a> {
    pub task_id: &'a str,
    pub kind: &'a TaskKind,
    pub ready_at: SimTime,
    /// Node submitting the task; its latency to a candidate delays the
    /// earliest start there.
    pub origin: Option<&'a str>,
}

/// Resources meeting a task's static requirements, sorted by id.
pub fn candidates<'f>(fabric: &'f Fabric, kind: &TaskKind) -> Vec<Resource<'f>> {
    let mut out: Vec<Resource<'f>> = match kind {
        TaskKind::Classical(c) => fabric
            .nodes
            .iter()
            .filter(|n| n.cores >= c.cores && n.gpus >= c.gpus)
            .map(Resource::Node)
            .collect(),
        TaskKind::Driver(d) => fabric
            .nodes
            .iter()
            .filter(|n| n.cores >= d.cores)
            .map(Resource::Node)
            .collect(),
        TaskKind::Quantum(q) => fabric
            .qpus
            .iter()
            .filter(|d| {
                d.num_qubits >= q.qpu_qubits_min
                    && q.circuits.iter().all(|c| c.num_qubits <= d.num_qubits)
            })
            .map(Resource::Qpu)
            .collect(),
    };
    out.sort_by(|a, b| a.id().cmp(b.id()));
    out
}

fn latency(fabric: &Fabric, a: &str, b: &str) -> f64 {
    fabric.latency(a, b).unwrap_or(f64::INFINITY)
}

/// Feedback latency seen by a QPU: the closest classical partner's host
/// (bound, or best possible if unbound), else the closest node.
fn feedback_latency(fabric: &Fabric, state: &SchedulerState, qpu: &str, partners: &[Partner]) -> f64 {
    let classical: Vec<&Partner> = partners
        .iter()
        .filter(|p| !matches!(p.kind, TaskKind::Quantum(_)))
        .collect();
    let lat_to = |r: &str| latency(fabric, qpu, r);
    if classical.is_empty() {
        return fabric
            .nodes
            .iter()
            .map(|n| lat_to(&n.id))
            .fold(f64::INFINITY, f64::min);
    }
    classical
        .iter()
        .map(|p| match state.binding(&p.id) {
            Some(r) => lat_to(r),
            None => candidates(fabric, &p.kind)
                .iter()
                .map(|h| lat_to(h.id()))
                .filter(|l| *l <= p.bound)
                .fold(f64::INFINITY, f64::min),
        })
        .fold(f64::INFINITY, f64::min)
}

/// Earliest-finish-time choice among feasible resources; ties go to the
/// earlier start, then the smaller resource id. The decision is not
/// admitted.
pub fn select_resource(
    req: &Request<'_>,
    fabric: &Fabric,
    state: &SchedulerState,
    constraints: &ConstraintIndex,
    est: &dyn Estimator,
) -> Result<ScheduleDecision, SchedError> {
    let unsat = |reason: String| SchedError::Unsatisfiable {
        task: req.task_id.to_string(),
        reason,
    };
    let cands = candidates(fabric, req.kind);
    if cands.is_empty() {
        return Err(unsat("no resource meets the task's requirements".into()));
    }
    let partners = constraints.partners(req.task_id);
    let cores = req.kind.cores().max(1);
    let mut reasons = BTreeSet::new();
    let mut best: Option<(SimTime, SimTime, &str)> = None;
    for r in &cands {
        let rid = r.id();
        let violated = partners.iter().find(|p| match state.binding(&p.id) {
            Some(rb) => latency(fabric, rid, rb) > p.bound,
            None => !candidates(fabric, &p.kind)
                .iter()
                .any(|h| latency(fabric, rid, h.id()) <= p.bound),
        });
        if let Some(p) = violated {
            reasons.insert(format!(
                "no host for partner \"{}\" within {} us of {rid}",
                p.id, p.bound
            ));
            continue;
        }
        if let (Resource::Qpu(q), TaskKind::Quantum(qt)) = (r, req.kind) {
            let fb = feedback_latency(fabric, state, rid, partners);
            if let Some(c) = qt.circuits.iter().find(|c| !q.coherence_budget_ok(c, fb)) {
                reasons.insert(format!(
                    "coherence budget exceeded on {rid}: shot time {} us plus {} conditioned feedback round trips at {} us exceeds coherence time {} us",
                    q.shot_time_us(c),
                    c.conditioned_count(),
                    fb,
                    q.coherence_time_us
                ));
                continue;
            }
        }
        let Some(dur) = est.duration(req.kind, *r) else {
            continue;
        };
        let Some(tl) = state.timeline(rid) else {
            continue;
        };
        let origin_delay = req
            .origin
            .map(|o| SimTime::from_micros_f64(latency(fabric, o, rid)))
            .unwrap_or(SimTime::ZERO);
        let ready = req.ready_at.max(est.busy_until(rid)).saturating_add(origin_delay);
        let start = tl.earliest_start(ready, dur, cores);
        if start == SimTime::MAX {
            continue;
        }
        let end = start.saturating_add(dur);
        let key = (end, start, rid);
        if best.is_none_or(|b| key < b) {
            best = Some(key);
        }
    }
    match best {
        Some((end, start, rid)) => Ok(ScheduleDecision {
            task_id: req.task_id.to_string(),
            resource_id: rid.to_string(),
            planned_start: start,
            planned_end: end,
            bound_at: req.ready_at,
        }),
        None if reasons.is_empty() => Err(unsat("no resource can host the task".into())),
        None => Err(unsat(reasons.into_iter().collect::<Vec<_>>().join("; "))),
    }
}

/// Binds a task that just became ready using live state; `bound_at = now`.
pub fn bind_late(
    req: &Request<'_>,
    fabric: &Fabric,
    state: &SchedulerState,
    constraints: &ConstraintIndex,
) -> Result<ScheduleDecision, SchedError> {
    select_resource(req, fabric, state, constraints, &ModelEstimator)
}

/// List scheduling in generation order (ties by task id). Drivers are left
/// unbound; their successors are planned as if they finished immediately.
pub fn plan_early(
    wl: &Workload,
    fabric: &Fabric,
    est: &dyn Estimator,
) -> Result<Vec<ScheduleDecision>, SchedError> {
    let mut state = SchedulerState::new(fabric, wl);
    let constraints = ConstraintIndex::new(wl);
    let preds = wl.predecessors();
    let mut finish: BTreeMap<String, SimTime> = BTreeMap::new();
    let mut out = Vec::new();
    for generation in generations(wl) {
        for id in generation {
            let task = wl.task(&id).ok_or_else(|| SchedError::UnknownTask(id.clone()))?;
            let ready = preds[id.as_str()]
                .iter()
                .map(|p| finish[*p])
                .max()
                .unwrap_or(SimTime::ZERO);
            if task.is_driver() {
                finish.insert(id, ready);
                continue;
            }
            let req = Request {
                task_id: &id,
                kind: &task.kind,
                ready_at: ready,
                origin: None,
            };
            let mut d = select_resource(&req, fabric, &state, &constraints, est)?;
            d.bound_at = SimTime::ZERO;
            state.admit(&d, task.kind.cores().max(1))?;
            finish.insert(id, d.planned_end);
            out.push(d);
        }
    }
    Ok(out)
}
