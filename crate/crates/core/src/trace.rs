//! Execution trace records and the metrics folded from them.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    TaskStart,
    TaskEnd,
    TaskFail,
    PilotAcquire,
    PilotRelease,
    Bind,
}

/// One trace line. Optional fields serialize as `null` so every line has
/// the same keys in the same order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub kind: TraceKind,
    pub at_us: u64,
    pub task_id: Option<String>,
    pub resource_id: Option<String>,
    pub attempt: Option<u32>,
    /// Space-separated `key=value` tokens.
    pub detail: String,
}

impl TraceRecord {
    /// Value of `key` in the detail tokens.
    pub fn field(&self, key: &str) -> Option<&str> {
        self.detail.split_whitespace().find_map(|tok| {
            let (k, v) = tok.split_once('=')?;
            (k == key).then_some(v)
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
}

pub fn to_jsonl(records: &[TraceRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("trace record serializes"));
        out.push('\n');
    }
    out
}

pub fn parse_jsonl(text: &str) -> Result<Vec<TraceRecord>, TraceError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| TraceError::Malformed {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Failed,
    Unsatisfiable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceMetrics {
    pub busy_us: u64,
    pub utilization: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub makespan_us: u64,
    pub resources: BTreeMap<String, ResourceMetrics>,
    pub total_quantum_tasks: u64,
    pub total_shots: u64,
    pub total_circuit_evaluations: u64,
    pub outcome: Outcome,
}

/// Executed interval of one attempt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Span {
    pub task_id: String,
    pub resource_id: String,
    pub attempt: u32,
    pub start_us: u64,
    pub end_us: u64,
    pub completed: bool,
}

/// Pairs every start with its end or failure record.
pub fn spans(records: &[TraceRecord]) -> Vec<Span> {
    let mut open: BTreeMap<(String, u32), (String, u64)> = BTreeMap::new();
    let mut out = Vec::new();
    for r in records {
        let (Some(task), Some(attempt)) = (&r.task_id, r.attempt) else {
            continue;
        };
        match r.kind {
            TraceKind::TaskStart => {
                let res = r.resource_id.clone().unwrap_or_default();
                open.insert((task.clone(), attempt), (res, r.at_us));
            }
            TraceKind::TaskEnd | TraceKind::TaskFail => {
                if let Some((res, start)) = open.remove(&(task.clone(), attempt)) {
                    out.push(Span {
                        task_id: task.clone(),
                        resource_id: res,
                        attempt,
                        start_us: start,
                        end_us: r.at_us,
                        completed: r.kind == TraceKind::TaskEnd,
                    });
                }
            }
            _ => {}
        }
    }
    out
}

fn union_length(mut iv: Vec<(u64, u64)>) -> u64 {
    iv.sort();
    let mut total = 0;
    let mut cur: Option<(u64, u64)> = None;
    for (s, e) in iv {
        match cur {
            Some((cs, ce)) if s <= ce => cur = Some((cs, ce.max(e))),
            Some((cs, ce)) => {
                total += ce - cs;
                cur = Some((s, e));
            }
            None => cur = Some((s, e)),
        }
    }
    if let Some((cs, ce)) = cur {
        total += ce - cs;
    }
    total
}

/// Metrics recomputed from the records alone. Makespan is the last end of
/// any attempt; busy time is the union of attempt intervals per resource.
pub fn fold(records: &[TraceRecord]) -> RunMetrics {
    let spans = spans(records);
    let makespan = records
        .iter()
        .filter(|r| matches!(r.kind, TraceKind::TaskEnd | TraceKind::TaskFail))
        .map(|r| r.at_us)
        .max()
        .unwrap_or(0);
    let mut per: BTreeMap<String, Vec<(u64, u64)>> = BTreeMap::new();
    for s in &spans {
        per.entry(s.resource_id.clone()).or_default().push((s.start_us, s.end_us));
    }
    let resources = per
        .into_iter()
        .map(|(id, iv)| {
            let busy = union_length(iv);
            let utilization = if makespan == 0 {
                0.0
            } else {
                busy as f64 / makespan as f64
            };
            (id, ResourceMetrics {
                busy_us: busy,
                utilization,
            })
        })
        .collect();
    let mut quantum = 0;
    let mut shots = 0;
    let mut circuits = 0;
    for r in records.iter().filter(|r| r.kind == TraceKind::TaskEnd) {
        if r.field("kind") == Some("quantum") {
            let n: u64 = r.field("circuits").and_then(|v| v.parse().ok()).unwrap_or(0);
            let s: u64 = r.field("shots").and_then(|v| v.parse().ok()).unwrap_or(0);
            quantum += 1;
            circuits += n;
            shots += n * s;
        }
    }
    let outcome = if records
        .iter()
        .any(|r| r.kind == TraceKind::Bind && r.field("status") == Some("unsatisfiable"))
    {
        Outcome::Unsatisfiable
    } else if records
        .iter()
        .any(|r| r.kind == TraceKind::TaskFail && r.field("terminal") == Some("true"))
    {
        Outcome::Failed
    } else {
        Outcome::Success
    };
    RunMetrics {
        makespan_us: makespan,
        resources,
        total_quantum_tasks: quantum,
        total_shots: shots,
        total_circuit_evaluations: circuits,
        outcome,
    }
}

/// Tab-separated `task resource start end attempt status`, one attempt per
/// row, ordered by start.
pub fn gantt(records: &[TraceRecord]) -> String {
    let mut rows = spans(records);
    rows.sort_by(|a, b| (a.start_us, &a.resource_id, &a.task_id).cmp(&(b.start_us, &b.resource_id, &b.task_id)));
    let mut out = String::from("task\tresource\tstart_us\tend_us\tattempt\tstatus\n");
    for s in rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            s.task_id,
            s.resource_id,
            s.start_us,
            s.end_us,
            s.attempt,
            if s.completed { "completed" } else { "failed" }
        );
    }
    out
}

/// Human-readable per-resource timeline summary and metrics table.
pub fn report(records: &[TraceRecord]) -> String {
    let m = fold(records);
    let spans = spans(records);
    let mut out = String::new();
    let _ = writeln!(out, "{:<20} {:>6} {:>12} {:>12} {:>12} {:>8}", "resource", "tasks", "first_us", "last_us", "busy_us", "util");
    for (id, rm) in &m.resources {
        let mine: Vec<&Span> = spans.iter().filter(|s| &s.resource_id == id).collect();
        let first = mine.iter().map(|s| s.start_us).min().unwrap_or(0);
        let last = mine.iter().map(|s| s.end_us).max().unwrap_or(0);
        let _ = writeln!(
            out,
            "{:<20} {:>6} {:>12} {:>12} {:>12} {:>8.4}",
            id,
            mine.len(),
            first,
            last,
            rm.busy_us,
            rm.utilization
        );
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "makespan_us               {}", m.makespan_us);
    let _ = writeln!(out, "total_quantum_tasks       {}", m.total_quantum_tasks);
    let _ = writeln!(out, "total_shots               {}", m.total_shots);
    let _ = writeln!(out, "total_circuit_evaluations {}", m.total_circuit_evaluations);
    let outcome = serde_json::to_value(m.outcome).expect("outcome serializes");
    let _ = writeln!(out, "outcome                   {}", outcome.as_str().unwrap_or(""));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(kind: TraceKind, at: u64, task: &str, res: &str, attempt: u32, detail: &str) -> TraceRecord {
        TraceRecord {
            kind,
            at_us: at,
            task_id: Some(task.into()),
            resource_id: Some(res.into()),
            attempt: Some(attempt),
            detail: detail.into(),
        }
    }

    fn three_tasks() -> Vec<TraceRecord> {
        vec![
            rec(TraceKind::TaskStart, 0, "a", "n1", 1, "kind=classical"),
            rec(TraceKind::TaskStart, 0, "q", "q1", 1, "kind=quantum"),
            rec(TraceKind::TaskEnd, 10, "a", "n1", 1, "kind=classical"),
            rec(TraceKind::TaskStart, 10, "b", "n1", 1, "kind=classical"),
            rec(TraceKind::TaskEnd, 30, "q", "q1", 1, "kind=quantum shots=100 circuits=2"),
            rec(TraceKind::TaskEnd, 40, "b", "n1", 1, "kind=classical"),
        ]
    }

    #[test]
    fn two_resource_rows() {
        let m = fold(&three_tasks());
        assert_eq!(m.resources.len(), 2);
        assert_eq!(m.makespan_us, 40);
        assert_eq!(m.resources["n1"].busy_us, 40);
        assert_eq!(m.resources["q1"].utilization, 0.75);
        assert_eq!((m.total_quantum_tasks, m.total_shots, m.total_circuit_evaluations), (1, 200, 2));
        assert_eq!(m.outcome, Outcome::Success);
        let text = report(&three_tasks());
        assert!(text.contains("n1") && text.contains("q1"));
    }

    #[test]
    fn empty_trace() {
        let m = fold(&[]);
        assert_eq!(m.makespan_us, 0);
        assert!(m.resources.values().all(|r| r.utilization == 0.0));
        assert_eq!(gantt(&[]).lines().count(), 1);
    }

    #[test]
    fn jsonl_round_trip_keeps_key_order() {
        let mut recs = three_tasks();
        recs.push(TraceRecord {
            kind: TraceKind::PilotAcquire,
            at_us: 0,
            task_id: None,
            resource_id: Some("n1".into()),
            attempt: None,
            detail: "pilot=0".into(),
        });
        let text = to_jsonl(&recs);
        assert!(text.lines().last().unwrap().starts_with(
            r#"{"kind":"pilot_acquire","at_us":0,"task_id":null,"resource_id":"n1","attempt":null"#
        ));
        assert_eq!(parse_jsonl(&text).unwrap(), recs);
        assert!(matches!(parse_jsonl("{}\n"), Err(TraceError::Malformed { line: 1, .. })));
    }

    #[test]
    fn union_merges_overlaps() {
        assert_eq!(union_length(vec![(0, 10), (5, 15), (20, 25)]), 20);
        assert_eq!(union_length(vec![]), 0);
    }
}
