//! Workflow layer: declarative task DAGs with coupling-annotated edges,
//! compiled into executable workloads.

mod compile;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::qasm::{parse_qasm_named, Circuit, ParseDiagnostic, Severity};

pub use compile::{
    compile, generations, CompositeTemplate, DriverSpec, ExecutableTask, ExpandContext, Expansion,
    ExpansionTask, QuantumTask, TaskKind, TemplateRegistry, Workload, WorkloadEdge,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    Tight,
    Medium,
    Loose,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingDefaults {
    #[serde(default = "default_tight")]
    pub tight_latency_us: f64,
    #[serde(default = "default_medium")]
    pub medium_latency_us: f64,
}

fn default_tight() -> f64 {
    1.0
}

fn default_medium() -> f64 {
    1000.0
}

impl Default for CouplingDefaults {
    fn default() -> Self {
        CouplingDefaults {
            tight_latency_us: default_tight(),
            medium_latency_us: default_medium(),
        }
    }
}

impl CouplingDefaults {
    /// Latency bound implied by a coupling class; `None` for loose.
    pub fn bound(&self, c: Coupling) -> Option<f64> {
        match c {
            Coupling::Tight => Some(self.tight_latency_us),
            Coupling::Medium => Some(self.medium_latency_us),
            Coupling::Loose => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassicalSpec {
    pub cores: u32,
    pub gpus: u32,
    /// Work at reference core speed, in microseconds.
    pub compute_cost_us: f64,
    pub action: String,
    pub params: Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantumSpec {
    pub qpu_qubits_min: usize,
    pub shots: u64,
    pub circuit: Arc<Circuit>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompositeSpec {
    pub template: String,
    pub params: Value,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TaskSpecKind {
    Classical(ClassicalSpec),
    Quantum(QuantumSpec),
    Composite(CompositeSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub id: String,
    pub kind: TaskSpecKind,
    /// Tasks whose outputs this task consumes; each must be a direct
    /// predecessor.
    pub inputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Edge {
    pub from: String,
    pub to: String,
    pub coupling: Coupling,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkflowSpec {
    pub name: String,
    pub defaults: CouplingDefaults,
    pub tasks: Vec<TaskSpec>,
    pub edges: Vec<Edge>,
    /// Directory that relative file references resolve against.
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WorkflowError {
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("duplicate task id \"{0}\"")]
    DuplicateTask(String),
    #[error("task \"{task}\": unknown kind \"{kind}\"")]
    UnknownKind { task: String, kind: String },
    #[error("task \"{task}\": field \"{field}\" is required for {kind} tasks")]
    MissingField {
        task: String,
        field: &'static str,
        kind: &'static str,
    },
    #[error("task \"{task}\": field \"{field}\" is not allowed for {kind} tasks")]
    FieldNotAllowed {
        task: String,
        field: &'static str,
        kind: &'static str,
    },
    #[error("task \"{task}\": {message}")]
    InvalidTask { task: String, message: String },
    #[error("task \"{task}\": invalid circuit: {}", join_diags(.diagnostics))]
    InvalidCircuit {
        task: String,
        diagnostics: Vec<ParseDiagnostic>,
    },
    #[error("edge {from} -> {to}: unknown task \"{missing}\"")]
    DanglingEdge {
        from: String,
        to: String,
        missing: String,
    },
    #[error("edge {0} -> {0}: self-loop")]
    SelfLoop(String),
    #[error("cycle detected: {}", .0.join(" -> "))]
    Cycle(Vec<String>),
    #[error("task \"{task}\" requires input from \"{input}\" but no edge {input} -> {task} exists")]
    MissingInput { task: String, input: String },
    #[error("task \"{task}\": unknown composite template \"{template}\"")]
    UnknownTemplate { task: String, template: String },
    #[error("task \"{task}\": template \"{template}\": {message}")]
    Template {
        task: String,
        template: String,
        message: String,
    },
}

fn join_diags(d: &[ParseDiagnostic]) -> String {
    d.iter()
        .filter(|d| d.severity == Severity::Error)
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

/// Every problem found while validating a workflow.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkflowDiagnostics(pub Vec<WorkflowError>);

impl fmt::Display for WorkflowDiagnostics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for WorkflowDiagnostics {}

impl From<WorkflowError> for WorkflowDiagnostics {
    fn from(e: WorkflowError) -> Self {
        WorkflowDiagnostics(vec![e])
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWorkflow {
    name: String,
    #[serde(default)]
    defaults: Option<CouplingDefaults>,
    tasks: Vec<RawTask>,
    #[serde(default)]
    edges: Vec<Edge>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTask {
    id: String,
    kind: String,
    #[serde(default)]
    inputs: Vec<String>,
    cores: Option<u32>,
    gpus: Option<u32>,
    compute_cost_us: Option<f64>,
    action: Option<String>,
    params: Option<Value>,
    qpu_qubits_min: Option<usize>,
    shots: Option<u64>,
    qasm: Option<String>,
    qasm_file: Option<String>,
    template: Option<String>,
}

impl RawTask {
    fn present(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        let fields: [(&'static str, bool); 11] = [
            ("cores", self.cores.is_some()),
            ("gpus", self.gpus.is_some()),
            ("compute_cost_us", self.compute_cost_us.is_some()),
            ("action", self.action.is_some()),
            ("params", self.params.is_some()),
            ("qpu_qubits_min", self.qpu_qubits_min.is_some()),
            ("shots", self.shots.is_some()),
            ("qasm", self.qasm.is_some()),
            ("qasm_file", self.qasm_file.is_some()),
            ("template", self.template.is_some()),
            ("inputs", !self.inputs.is_empty()),
        ];
        for (name, set) in fields {
            if set {
                v.push(name);
            }
        }
        v
    }
}

pub(crate) fn resolve(base: &Path, p: &str) -> PathBuf {
    let path = Path::new(p);
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

pub(crate) fn read_file(base: &Path, p: &str) -> Result<String, WorkflowError> {
    let full = resolve(base, p);
    std::fs::read_to_string(&full).map_err(|e| WorkflowError::Io {
        path: full.display().to_string(),
        message: e.to_string(),
    })
}

fn convert_task(raw: RawTask, base: &Path) -> Result<TaskSpec, WorkflowError> {
    let id = raw.id.clone();
    let (kind_name, allowed): (&'static str, &[&str]) = match raw.kind.as_str() {
        "classical" => (
            "classical",
            &["cores", "gpus", "compute_cost_us", "action", "params", "inputs"],
        ),
        "quantum" => (
            "quantum",
            &["qpu_qubits_min", "shots", "qasm", "qasm_file", "inputs"],
        ),
        "composite" => ("composite", &["template", "params", "inputs"]),
        other => {
            return Err(WorkflowError::UnknownKind {
                task: id,
                kind: other.to_string(),
            })
        }
    };
    if let Some(field) = raw.present().into_iter().find(|f| !allowed.contains(f)) {
        return Err(WorkflowError::FieldNotAllowed {
            task: id,
            field,
            kind: kind_name,
        });
    }
    let missing = |field: &'static str| WorkflowError::MissingField {
        task: raw.id.clone(),
        field,
        kind: kind_name,
    };
    let kind = match kind_name {
        "classical" => {
            let cores = raw.cores.ok_or_else(|| missing("cores"))?;
            let cost = raw.compute_cost_us.ok_or_else(|| missing("compute_cost_us"))?;
            let action = raw.action.clone().ok_or_else(|| missing("action"))?;
            if cores == 0 {
                return Err(WorkflowError::InvalidTask {
                    task: id,
                    message: "cores must be at least 1".into(),
                });
            }
            if !(cost.is_finite() && cost >= 0.0) {
                return Err(WorkflowError::InvalidTask {
                    task: id,
                    message: "compute_cost_us must be non-negative".into(),
                });
            }
            TaskSpecKind::Classical(ClassicalSpec {
                cores,
                gpus: raw.gpus.unwrap_or(0),
                compute_cost_us: cost,
                action,
                params: raw.params.clone().unwrap_or(Value::Null),
            })
        }
        "quantum" => {
            let shots = raw.shots.ok_or_else(|| missing("shots"))?;
            if shots == 0 {
                return Err(WorkflowError::InvalidTask {
                    task: id,
                    message: "shots must be at least 1".into(),
                });
            }
            let text = match (&raw.qasm, &raw.qasm_file) {
                (Some(t), None) => t.clone(),
                (None, Some(f)) => read_file(base, f)?,
                (None, None) => return Err(missing("qasm")),
                (Some(_), Some(_)) => {
                    return Err(WorkflowError::InvalidTask {
                        task: id,
                        message: "give either qasm or qasm_file, not both".into(),
                    })
                }
            };
            let circuit = parse_qasm_named(&text, &id).map_err(|diagnostics| {
                WorkflowError::InvalidCircuit {
                    task: id.clone(),
                    diagnostics,
                }
            })?;
            let qmin = raw.qpu_qubits_min.unwrap_or(circuit.num_qubits);
            if qmin < circuit.num_qubits {
                return Err(WorkflowError::InvalidTask {
                    task: id,
                    message: format!(
                        "qpu_qubits_min {qmin} is smaller than the circuit width {}",
                        circuit.num_qubits
                    ),
                });
            }
            TaskSpecKind::Quantum(QuantumSpec {
                qpu_qubits_min: qmin,
                shots,
                circuit: Arc::new(circuit),
            })
        }
        _ => TaskSpecKind::Composite(CompositeSpec {
            template: raw.template.clone().ok_or_else(|| missing("template"))?,
            params: raw.params.clone().unwrap_or(Value::Null),
        }),
    };
    Ok(TaskSpec {
        id,
        kind,
        inputs: raw.inputs,
    })
}

impl WorkflowSpec {
    /// Parses the JSON workflow format and validates the DAG. Relative
    /// `qasm_file` paths resolve against `base_dir`.
    pub fn from_json(text: &str, base_dir: &Path) -> Result<WorkflowSpec, WorkflowDiagnostics> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let raw: RawWorkflow = serde_path_to_error::deserialize(de).map_err(|e| {
            WorkflowError::Parse {
                path: e.path().to_string(),
                message: e.inner().to_string(),
            }
        })?;
        let mut errors = Vec::new();
        let mut tasks = Vec::new();
        for t in raw.tasks {
            match convert_task(t, base_dir) {
                Ok(t) => tasks.push(t),
                Err(e) => errors.push(e),
            }
        }
        if !errors.is_empty() {
            return Err(WorkflowDiagnostics(errors));
        }
        let spec = WorkflowSpec {
            name: raw.name,
            defaults: raw.defaults.unwrap_or_default(),
            tasks,
            edges: raw.edges,
            base_dir: base_dir.to_path_buf(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<WorkflowSpec, WorkflowDiagnostics> {
        let text = std::fs::read_to_string(path).map_err(|e| WorkflowError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        WorkflowSpec::from_json(&text, base)
    }

    pub fn task(&self, id: &str) -> Option<&TaskSpec> {
        self.tasks.iter().find(|t| t.id == id)
    }

    /// Structural checks: unique ids, resolvable edges, declared inputs
    /// backed by edges, acyclicity.
    pub fn validate(&self) -> Result<(), WorkflowDiagnostics> {
        let mut errors = Vec::new();
        let mut ids = BTreeSet::new();
        for t in &self.tasks {
            if !ids.insert(t.id.as_str()) {
                errors.push(WorkflowError::DuplicateTask(t.id.clone()));
            }
        }
        let mut edge_set = BTreeSet::new();
        for e in &self.edges {
            if e.from == e.to {
                errors.push(WorkflowError::SelfLoop(e.from.clone()));
                continue;
            }
            for end in [&e.from, &e.to] {
                if !ids.contains(end.as_str()) {
                    errors.push(WorkflowError::DanglingEdge {
                        from: e.from.clone(),
                        to: e.to.clone(),
                        missing: end.clone(),
                    });
                }
            }
            edge_set.insert((e.from.as_str(), e.to.as_str()));
        }
        for t in &self.tasks {
            for input in &t.inputs {
                if !edge_set.contains(&(input.as_str(), t.id.as_str())) {
                    errors.push(WorkflowError::MissingInput {
                        task: t.id.clone(),
                        input: input.clone(),
                    });
                }
            }
        }
        if errors.is_empty() {
            let nodes: Vec<&str> = self.tasks.iter().map(|t| t.id.as_str()).collect();
            let edges: Vec<(&str, &str)> = self
                .edges
                .iter()
                .map(|e| (e.from.as_str(), e.to.as_str()))
                .collect();
            if let Some(cycle) = find_cycle(&nodes, &edges) {
                errors.push(WorkflowError::Cycle(cycle));
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(WorkflowDiagnostics(errors))
        }
    }
}

/// Returns one cycle (rotated to start at its smallest id), if any.
pub(crate) fn find_cycle(nodes: &[&str], edges: &[(&str, &str)]) -> Option<Vec<String>> {
    let index: BTreeMap<&str, usize> = nodes.iter().enumerate().map(|(i, n)| (*n, i)).collect();
    let mut adj = vec![Vec::new(); nodes.len()];
    for (a, b) in edges {
        if let (Some(&i), Some(&j)) = (index.get(a), index.get(b)) {
            adj[i].push(j);
        }
    }
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut color = vec![0u8; nodes.len()];
    let mut stack: Vec<usize> = Vec::new();
    fn dfs(
        u: usize,
        adj: &[Vec<usize>],
        color: &mut [u8],
        stack: &mut Vec<usize>,
    ) -> Option<Vec<usize>> {
        color[u] = 1;
        stack.push(u);
        for &v in &adj[u] {
            if color[v] == 1 {
                let pos = stack.iter().position(|&x| x == v).expect("v is on the stack");
                return Some(stack[pos..].to_vec());
            }
            if color[v] == 0 {
                if let Some(c) = dfs(v, adj, color, stack) {
                    return Some(c);
                }
            }
        }
        stack.pop();
        color[u] = 2;
        None
    }
    for start in 0..nodes.len() {
        if color[start] == 0 {
            if let Some(mut cycle) = dfs(start, &adj, &mut color, &mut stack) {
                let min = (0..cycle.len())
                    .min_by_key(|&i| nodes[cycle[i]])
                    .expect("cycle is non-empty");
                cycle.rotate_left(min);
                return Some(cycle.into_iter().map(|i| nodes[i].to_string()).collect());
            }
        }
    }
    None
}

/// Parses a workflow file.
pub fn parse_workflow(path: &Path) -> Result<WorkflowSpec, WorkflowDiagnostics> {
    WorkflowSpec::load(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<WorkflowSpec, WorkflowDiagnostics> {
        WorkflowSpec::from_json(text, Path::new("."))
    }

    const CHAIN: &str = r#"{
        "name": "chem",
        "tasks": [
            {"id": "pre", "kind": "classical", "cores": 1, "compute_cost_us": 100, "action": "compute"},
            {"id": "vqe", "kind": "composite", "template": "vqe", "params": {}, "inputs": ["pre"]},
            {"id": "post", "kind": "classical", "cores": 1, "compute_cost_us": 100, "action": "compute"}
        ],
        "edges": [
            {"from": "pre", "to": "vqe", "coupling": "loose"},
            {"from": "vqe", "to": "post", "coupling": "loose"}
        ]
    }"#;

    #[test]
    fn three_task_chain_is_valid() {
        let w = parse(CHAIN).unwrap();
        assert_eq!(w.tasks.len(), 3);
        assert_eq!(w.defaults, CouplingDefaults::default());
    }

    #[test]
    fn two_cycle_is_reported() {
        let text = r#"{"name": "c", "tasks": [
            {"id": "B", "kind": "classical", "cores": 1, "compute_cost_us": 1, "action": "compute"},
            {"id": "A", "kind": "classical", "cores": 1, "compute_cost_us": 1, "action": "compute"}],
            "edges": [{"from": "A", "to": "B", "coupling": "loose"}, {"from": "B", "to": "A", "coupling": "loose"}]}"#;
        let err = parse(text).unwrap_err();
        assert_eq!(err.0, vec![WorkflowError::Cycle(vec!["A".into(), "B".into()])]);
    }

    #[test]
    fn malformed_qasm_is_forwarded_with_task_id() {
        let text = r#"{"name": "q", "tasks": [
            {"id": "circ", "kind": "quantum", "shots": 10, "qasm": "OPENQASM 2.0;\nqreg q[1];\nx q[3];"}],
            "edges": []}"#;
        let err = parse(text).unwrap_err();
        match &err.0[0] {
            WorkflowError::InvalidCircuit { task, diagnostics } => {
                assert_eq!(task, "circ");
                assert_eq!(diagnostics[0].line, 3);
            }
            other => panic!("{other:?}"),
        }
        assert!(err.to_string().contains("circ"));
    }

    #[test]
    fn missing_input_edge() {
        let text = CHAIN.replace(r#"{"from": "pre", "to": "vqe", "coupling": "loose"},"#, "");
        let err = parse(&text).unwrap_err();
        assert_eq!(
            err.0,
            vec![WorkflowError::MissingInput {
                task: "vqe".into(),
                input: "pre".into()
            }]
        );
    }

    #[test]
    fn kind_field_rules() {
        let text = r#"{"name": "k", "tasks": [
            {"id": "a", "kind": "classical", "cores": 1, "compute_cost_us": 1, "action": "compute", "shots": 3}]}"#;
        assert!(matches!(
            &parse(text).unwrap_err().0[0],
            WorkflowError::FieldNotAllowed { field: "shots", .. }
        ));
        let text = r#"{"name": "k", "tasks": [{"id": "a", "kind": "gpu"}]}"#;
        assert!(matches!(
            &parse(text).unwrap_err().0[0],
            WorkflowError::UnknownKind { .. }
        ));
        let text = r#"{"name": "k", "tasks": [{"id": "a", "kind": "quantum", "qasm": "x"}]}"#;
        assert!(matches!(
            &parse(text).unwrap_err().0[0],
            WorkflowError::MissingField { field: "shots", .. }
        ));
    }

    #[test]
    fn dangling_edges_and_self_loops() {
        let text = r#"{"name": "d", "tasks": [
            {"id": "a", "kind": "classical", "cores": 1, "compute_cost_us": 1, "action": "compute"}],
            "edges": [{"from": "a", "to": "z", "coupling": "tight"}, {"from": "a", "to": "a", "coupling": "loose"}]}"#;
        let err = parse(text).unwrap_err();
        assert!(err.0.contains(&WorkflowError::SelfLoop("a".into())));
        assert!(err.0.iter().any(|e| matches!(e, WorkflowError::DanglingEdge { missing, .. } if missing == "z")));
    }

    #[test]
    fn unknown_keys_rejected_with_path() {
        let text = r#"{"name": "u", "tasks": [], "edges": [{"from": "a", "to": "b", "coupling": "tight", "w": 1}]}"#;
        match &parse(text).unwrap_err().0[0] {
            WorkflowError::Parse { path, .. } => assert_eq!(path, "edges[0].w"),
            other => panic!("{other:?}"),
        }
        let text = r#"{"name": "u", "tasks": [], "edges": [{"from": "a", "to": "b", "coupling": "snug"}]}"#;
        assert!(matches!(&parse(text).unwrap_err().0[0], WorkflowError::Parse { .. }));
    }

    #[test]
    fn longer_cycle_found() {
        let c = find_cycle(&["a", "b", "c", "d"], &[("a", "b"), ("b", "c"), ("c", "d"), ("d", "b")]);
        assert_eq!(c, Some(vec!["b".into(), "c".into(), "d".into()]));
        assert_eq!(find_cycle(&["a", "b"], &[("a", "b")]), None);
    }
}
