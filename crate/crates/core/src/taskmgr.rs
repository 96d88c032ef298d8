//! Task layer: pilot-based resource acquisition and task attempts.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;

use crate::engine::SimTime;
use crate::fabric::{Fabric, Resource};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PilotCapacity {
    Cores(u32),
    WholeQpu,
}

impl PilotCapacity {
    fn units(self) -> u32 {
        match self {
            PilotCapacity::Cores(n) => n,
            PilotCapacity::WholeQpu => 1,
        }
    }
}

impl fmt::Display for PilotCapacity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PilotCapacity::Cores(n) => write!(f, "cores:{n}"),
            PilotCapacity::WholeQpu => f.write_str("qpu"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PilotState {
    Requested,
    Active,
    Released,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pilot {
    pub id: u64,
    pub resource_id: String,
    pub capacity: PilotCapacity,
    pub starts_at: SimTime,
    pub expires_at: SimTime,
    pub state: PilotState,
    pub released_at: Option<SimTime>,
    /// Running task id → units held.
    running: BTreeMap<String, u32>,
}

impl Pilot {
    pub fn used(&self) -> u32 {
        self.running.values().sum()
    }

    pub fn has_room(&self, units: u32) -> bool {
        self.used() + units <= self.capacity.units()
    }

    pub fn running(&self) -> impl Iterator<Item = &str> {
        self.running.keys().map(String::as_str)
    }

    /// Active and inside its window at `at`.
    pub fn is_live(&self, at: SimTime) -> bool {
        self.state == PilotState::Active && self.starts_at <= at && at < self.expires_at
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TaskError {
    #[error("unknown resource \"{0}\"")]
    UnknownResource(String),
    #[error("unknown pilot {0}")]
    UnknownPilot(u64),
    #[error("pilot duration must be positive")]
    EmptyWindow,
    #[error("QPU \"{0}\" already has a pilot overlapping the requested window")]
    PilotConflict(String),
    #[error("pilot {pilot} has no room for task \"{task}\"")]
    CapacityExceeded { pilot: u64, task: String },
    #[error("pilot {pilot} is not active")]
    NotActive { pilot: u64 },
    #[error("pilot {pilot} still runs {running} task(s)")]
    RunningAttempts { pilot: u64, running: usize },
    #[error("task \"{task}\": illegal attempt transition {from:?} -> {to:?}")]
    InvalidTransition {
        task: String,
        from: AttemptState,
        to: AttemptState,
    },
}

/// Pilots acquired on demand, one live pilot per resource at a time.
#[derive(Debug, Clone, Default)]
pub struct PilotManager {
    pilots: Vec<Pilot>,
}

impl PilotManager {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers an active pilot covering `[at, at + duration)`.
    pub fn acquire(
        &mut self,
        fabric: &Fabric,
        resource_id: &str,
        duration: SimTime,
        at: SimTime,
    ) -> Result<u64, TaskError> {
        if duration == SimTime::ZERO {
            return Err(TaskError::EmptyWindow);
        }
        let capacity = match fabric.resource(resource_id) {
            Some(Resource::Node(n)) => PilotCapacity::Cores(n.cores),
            Some(Resource::Qpu(_)) => PilotCapacity::WholeQpu,
            None => return Err(TaskError::UnknownResource(resource_id.to_string())),
        };
        let expires_at = at.saturating_add(duration);
        if capacity == PilotCapacity::WholeQpu {
            let overlap = self.pilots.iter().any(|p| {
                p.resource_id == resource_id
                    && p.state != PilotState::Released
                    && p.starts_at < expires_at
                    && at < p.expires_at
            });
            if overlap {
                return Err(TaskError::PilotConflict(resource_id.to_string()));
            }
        }
        let id = self.pilots.len() as u64;
        self.pilots.push(Pilot {
            id,
            resource_id: resource_id.to_string(),
            capacity,
            starts_at: at,
            expires_at,
            state: PilotState::Active,
            released_at: None,
            running: BTreeMap::new(),
        });
        Ok(id)
    }

    pub fn pilot(&self, id: u64) -> Option<&Pilot> {
        self.pilots.get(id as usize)
    }

    pub fn pilots(&self) -> &[Pilot] {
        &self.pilots
    }

    /// Live pilot on `resource_id` at `at`, if any.
    pub fn live(&self, resource_id: &str, at: SimTime) -> Option<&Pilot> {
        self.pilots
            .iter()
            .find(|p| p.resource_id == resource_id && p.is_live(at))
    }

    fn get_mut(&mut self, id: u64) -> Result<&mut Pilot, TaskError> {
        self.pilots.get_mut(id as usize).ok_or(TaskError::UnknownPilot(id))
    }

    /// Places a task inside the pilot, holding `units` cores (1 on a QPU).
    pub fn start_task(&mut self, id: u64, task: &str, units: u32) -> Result<(), TaskError> {
        let p = self.get_mut(id)?;
        if p.state != PilotState::Active {
            return Err(TaskError::NotActive { pilot: id });
        }
        let units = match p.capacity {
            PilotCapacity::WholeQpu => 1,
            PilotCapacity::Cores(_) => units,
        };
        if !p.has_room(units) {
            return Err(TaskError::CapacityExceeded {
                pilot: id,
                task: task.to_string(),
            });
        }
        p.running.insert(task.to_string(), units);
        Ok(())
    }

    pub fn finish_task(&mut self, id: u64, task: &str) -> Result<(), TaskError> {
        self.get_mut(id)?.running.remove(task);
        Ok(())
    }

    pub fn release(&mut self, id: u64, at: SimTime) -> Result<(), TaskError> {
        let p = self.get_mut(id)?;
        if p.state != PilotState::Active {
            return Err(TaskError::NotActive { pilot: id });
        }
        if !p.running.is_empty() {
            return Err(TaskError::RunningAttempts {
                pilot: id,
                running: p.running.len(),
            });
        }
        p.state = PilotState::Released;
        p.released_at = Some(at);
        Ok(())
    }

    /// Ends the pilot at its expiry, returning the tasks it interrupted.
    pub fn expire(&mut self, id: u64) -> Result<Vec<String>, TaskError> {
        let p = self.get_mut(id)?;
        if p.state != PilotState::Active {
            return Ok(Vec::new());
        }
        let interrupted = std::mem::take(&mut p.running).into_keys().collect();
        p.state = PilotState::Released;
        p.released_at = Some(p.expires_at);
        Ok(interrupted)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub backoff_us: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 2,
            backoff_us: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttemptState {
    Pending,
    Staged,
    Running,
    Completed,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureReason {
    /// Transient fault drawn from the device failure probability.
    Fault,
    /// The pilot ended before the attempt did.
    PilotExpired,
    /// The attempt can never fit in a pilot window.
    ExceedsWalltime,
}

impl fmt::Display for FailureReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FailureReason::Fault => "fault",
            FailureReason::PilotExpired => "pilot_expired",
            FailureReason::ExceedsWalltime => "exceeds_walltime",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskAttempt {
    pub task_id: String,
    pub attempt_no: u32,
    pub state: AttemptState,
    pub started_at: Option<SimTime>,
    pub ended_at: Option<SimTime>,
    pub failure_reason: Option<FailureReason>,
}

impl TaskAttempt {
    pub fn new(task_id: &str, attempt_no: u32) -> Self {
        TaskAttempt {
            task_id: task_id.to_string(),
            attempt_no,
            state: AttemptState::Pending,
            started_at: None,
            ended_at: None,
            failure_reason: None,
        }
    }

    fn step(&mut self, from: &[AttemptState], to: AttemptState) -> Result<(), TaskError> {
        if !from.contains(&self.state) {
            return Err(TaskError::InvalidTransition {
                task: self.task_id.clone(),
                from: self.state,
                to,
            });
        }
        self.state = to;
        Ok(())
    }

    pub fn stage(&mut self) -> Result<(), TaskError> {
        self.step(&[AttemptState::Pending], AttemptState::Staged)
    }

    pub fn start(&mut self, at: SimTime) -> Result<(), TaskError> {
        self.step(&[AttemptState::Staged], AttemptState::Running)?;
        self.started_at = Some(at);
        Ok(())
    }

    pub fn complete(&mut self, at: SimTime) -> Result<(), TaskError> {
        self.step(&[AttemptState::Running], AttemptState::Completed)?;
        self.ended_at = Some(at);
        Ok(())
    }

    /// Failure is legal before the attempt runs too (e.g. it cannot fit).
    pub fn fail(&mut self, at: SimTime, reason: FailureReason) -> Result<(), TaskError> {
        self.step(
            &[AttemptState::Pending, AttemptState::Staged, AttemptState::Running],
            AttemptState::Failed,
        )?;
        self.ended_at = Some(at);
        self.failure_reason = Some(reason);
        Ok(())
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self.state, AttemptState::Completed | AttemptState::Failed)
    }
}

/// Fraction of the attempt's duration after which it fails, or `None` if
/// it succeeds. Drawn from stream (seed, task, attempt).
pub fn sample_failure(seed: u64, task_id: &str, attempt_no: u32, failure_prob: f64) -> Option<f64> {
    if failure_prob <= 0.0 {
        return None;
    }
    let mut r = rng::stream(seed, &[rng::hash_str(task_id), attempt_no as u64]);
    let u: f64 = r.random();
    if u < failure_prob {
        Some(r.random::<f64>())
    } else {
        None
    }
}

/// Instant an attempt started at `start` fails after `fraction` of `dur`.
pub fn failure_time(start: SimTime, dur: SimTime, fraction: f64) -> SimTime {
    let offset = SimTime::from_micros_f64(fraction * dur.micros() as f64).min(dur);
    start + offset
}

/// Attempt history of one task running alone in `pilot` from `at`.
/// Faults are retried after the backoff; an attempt overrunning the pilot
/// ends with `PilotExpired` and does not count against the retry budget.
pub fn submit(
    pilot: &Pilot,
    task_id: &str,
    duration: SimTime,
    failure_prob: f64,
    policy: RetryPolicy,
    seed: u64,
    at: SimTime,
) -> Vec<TaskAttempt> {
    let mut out = Vec::new();
    let mut t = at.max(pilot.starts_at);
    let mut faults = 0;
    loop {
        let mut a = TaskAttempt::new(task_id, out.len() as u32 + 1);
        a.stage().expect("fresh attempt stages");
        if t >= pilot.expires_at {
            a.fail(t, FailureReason::PilotExpired).expect("staged attempt can fail");
            out.push(a);
            return out;
        }
        a.start(t).expect("staged attempt starts");
        let end = t + duration;
        match sample_failure(seed, task_id, faults + 1, failure_prob) {
            Some(frac) => {
                let at_fail = failure_time(t, duration, frac);
                if at_fail > pilot.expires_at {
                    a.fail(pilot.expires_at, FailureReason::PilotExpired).expect("running");
                    out.push(a);
                    return out;
                }
                a.fail(at_fail, FailureReason::Fault).expect("running");
                out.push(a);
                faults += 1;
                if faults > policy.max_retries {
                    return out;
                }
                t = at_fail.saturating_add(SimTime(policy.backoff_us));
            }
            None if end > pilot.expires_at => {
                a.fail(pilot.expires_at, FailureReason::PilotExpired).expect("running");
                out.push(a);
                return out;
            }
            None => {
                a.complete(end).expect("running");
                out.push(a);
                return out;
            }
        }
    }
}
