use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde_json::Value;

use super::{
    find_cycle, ClassicalSpec, Coupling, TaskSpecKind, WorkflowDiagnostics,
    WorkflowError, WorkflowSpec,
};
use crate::qasm::Circuit;
use crate::workload::PlacementConstraint;

/// Quantum work submitted to a QPU: one or more circuits, each run for
/// `shots` shots back to back.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantumTask {
    pub qpu_qubits_min: usize,
    pub shots: u64,
    pub circuits: Vec<Arc<Circuit>>,
}

/// Long-lived classical controller that submits quantum tasks at run time.
#[derive(Debug, Clone, PartialEq)]
pub struct DriverSpec {
    pub template: String,
    /// Template parameters with file references already inlined.
    pub params: Value,
    pub cores: u32,
    pub qpu_qubits_min: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TaskKind {
    Classical(ClassicalSpec),
    Quantum(QuantumTask),
    Driver(DriverSpec),
}

impl TaskKind {
    pub fn label(&self) -> &'static str {
        match self {
            TaskKind::Classical(_) => "classical",
            TaskKind::Quantum(_) => "quantum",
            TaskKind::Driver(_) => "driver",
        }
    }

    /// Cores held on a classical node while running (0 for quantum work).
    pub fn cores(&self) -> u32 {
        match self {
            TaskKind::Classical(c) => c.cores,
            TaskKind::Driver(d) => d.cores,
            TaskKind::Quantum(_) => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecutableTask {
    pub id: String,
    pub kind: TaskKind,
    pub inputs: Vec<String>,
}

impl ExecutableTask {
    pub fn is_driver(&self) -> bool {
        matches!(self.kind, TaskKind::Driver(_))
    }

    pub fn is_quantum(&self) -> bool {
        matches!(self.kind, TaskKind::Quantum(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct WorkloadEdge {
    pub from: String,
    pub to: String,
    pub coupling: Coupling,
}

/// Composite-free set of interdependent executable tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct Workload {
    pub name: String,
    pub tasks: Vec<ExecutableTask>,
    pub edges: Vec<WorkloadEdge>,
    pub constraints: Vec<PlacementConstraint>,
    pub driver_tasks: Vec<String>,
    pub base_dir: PathBuf,
}

impl Workload {
    pub fn task(&self, id: &str) -> Option<&ExecutableTask> {
        self.tasks.iter().find(|t| t.id == id)
    }

    pub fn predecessors(&self) -> BTreeMap<&str, BTreeSet<&str>> {
        let mut m: BTreeMap<&str, BTreeSet<&str>> =
            self.tasks.iter().map(|t| (t.id.as_str(), BTreeSet::new())).collect();
        for e in &self.edges {
            m.entry(e.to.as_str()).or_default().insert(e.from.as_str());
        }
        m
    }

    pub fn successors(&self) -> BTreeMap<&str, BTreeSet<&str>> {
        let mut m: BTreeMap<&str, BTreeSet<&str>> =
            self.tasks.iter().map(|t| (t.id.as_str(), BTreeSet::new())).collect();
        for e in &self.edges {
            m.entry(e.from.as_str()).or_default().insert(e.to.as_str());
        }
        m
    }
}

/// One task produced by a template, named relative to the composite.
#[derive(Debug, Clone)]
pub struct ExpansionTask {
    pub name: String,
    pub kind: TaskKind,
    /// Child-local input names.
    pub inputs: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct Expansion {
    pub tasks: Vec<ExpansionTask>,
    pub edges: Vec<(String, String, Coupling)>,
    pub drivers: Vec<String>,
}

pub struct ExpandContext<'a> {
    pub composite_id: &'a str,
    pub base_dir: &'a Path,
}

/// Maps one composite task spec to a sub-DAG.
pub trait CompositeTemplate: Send + Sync {
    fn expand(&self, params: &Value, ctx: &ExpandContext<'_>) -> Result<Expansion, String>;
}

#[derive(Default)]
pub struct TemplateRegistry {
    templates: BTreeMap<String, Box<dyn CompositeTemplate>>,
}

impl fmt::Debug for TemplateRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.templates.keys()).finish()
    }
}

impl TemplateRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Registry with the built-in `vqe` template.
    pub fn standard() -> Self {
        let mut r = Self::empty();
        r.register("vqe", crate::patterns::VqeTemplate);
        r
    }

    pub fn register(&mut self, name: &str, t: impl CompositeTemplate + 'static) {
        self.templates.insert(name.to_string(), Box::new(t));
    }

    pub fn get(&self, name: &str) -> Option<&dyn CompositeTemplate> {
        self.templates.get(name).map(|b| b.as_ref())
    }
}

struct Expanded {
    sources: Vec<String>,
    sinks: Vec<String>,
}

/// Expands composites and derives placement constraints from coupled edges.
pub fn compile(w: &WorkflowSpec, registry: &TemplateRegistry) -> Result<Workload, WorkflowDiagnostics> {
    let mut tasks: Vec<ExecutableTask> = Vec::new();
    let mut edges: Vec<WorkloadEdge> = Vec::new();
    let mut drivers = Vec::new();
    let mut reps: BTreeMap<&str, Expanded> = BTreeMap::new();
    let mut errors = Vec::new();

    for spec in &w.tasks {
        match &spec.kind {
            TaskSpecKind::Classical(c) => {
                tasks.push(ExecutableTask {
                    id: spec.id.clone(),
                    kind: TaskKind::Classical(c.clone()),
                    inputs: Vec::new(),
                });
                reps.insert(&spec.id, Expanded {
                    sources: vec![spec.id.clone()],
                    sinks: vec![spec.id.clone()],
                });
            }
            TaskSpecKind::Quantum(q) => {
                tasks.push(ExecutableTask {
                    id: spec.id.clone(),
                    kind: TaskKind::Quantum(QuantumTask {
                        qpu_qubits_min: q.qpu_qubits_min,
                        shots: q.shots,
                        circuits: vec![q.circuit.clone()],
                    }),
                    inputs: Vec::new(),
                });
                reps.insert(&spec.id, Expanded {
                    sources: vec![spec.id.clone()],
                    sinks: vec![spec.id.clone()],
                });
            }
            TaskSpecKind::Composite(c) => {
                let Some(template) = registry.get(&c.template) else {
                    errors.push(WorkflowError::UnknownTemplate {
                        task: spec.id.clone(),
                        template: c.template.clone(),
                    });
                    continue;
                };
                let ctx = ExpandContext {
                    composite_id: &spec.id,
                    base_dir: &w.base_dir,
                };
                let template_err = |message: String| WorkflowError::Template {
                    task: spec.id.clone(),
                    template: c.template.clone(),
                    message,
                };
                let exp = match template.expand(&c.params, &ctx) {
                    Ok(e) => e,
                    Err(m) => {
                        errors.push(template_err(m));
                        continue;
                    }
                };
                if exp.tasks.is_empty() {
                    errors.push(template_err("expansion produced no tasks".into()));
                    continue;
                }
                let full = |name: &str| format!("{}.{}", spec.id, name);
                let names: BTreeSet<&str> = exp.tasks.iter().map(|t| t.name.as_str()).collect();
                let mut has_pred = BTreeSet::new();
                let mut has_succ = BTreeSet::new();
                for (a, b, coupling) in &exp.edges {
                    if !names.contains(a.as_str()) || !names.contains(b.as_str()) {
                        errors.push(template_err(format!("edge {a} -> {b} names an unknown child")));
                        continue;
                    }
                    has_succ.insert(a.as_str());
                    has_pred.insert(b.as_str());
                    edges.push(WorkloadEdge {
                        from: full(a),
                        to: full(b),
                        coupling: *coupling,
                    });
                }
                for t in &exp.tasks {
                    tasks.push(ExecutableTask {
                        id: full(&t.name),
                        kind: t.kind.clone(),
                        inputs: t.inputs.iter().map(|i| full(i)).collect(),
                    });
                }
                drivers.extend(exp.drivers.iter().map(|d| full(d)));
                reps.insert(&spec.id, Expanded {
                    sources: exp
                        .tasks
                        .iter()
                        .filter(|t| !has_pred.contains(t.name.as_str()))
                        .map(|t| full(&t.name))
                        .collect(),
                    sinks: exp
                        .tasks
                        .iter()
                        .filter(|t| !has_succ.contains(t.name.as_str()))
                        .map(|t| full(&t.name))
                        .collect(),
                });
            }
        }
    }
    if !errors.is_empty() {
        return Err(WorkflowDiagnostics(errors));
    }

    // Declared inputs land on the representatives' sources, pointing at the
    // input task's sinks.
    for spec in &w.tasks {
        let mapped: Vec<String> = spec
            .inputs
            .iter()
            .flat_map(|i| reps[i.as_str()].sinks.clone())
            .collect();
        for src in &reps[spec.id.as_str()].sources {
            let t = tasks.iter_mut().find(|t| &t.id == src).expect("source exists");
            t.inputs.extend(mapped.iter().cloned());
        }
    }

    let mut constraints = Vec::new();
    for e in &w.edges {
        for s in &reps[e.from.as_str()].sinks {
            for t in &reps[e.to.as_str()].sources {
                edges.push(WorkloadEdge {
                    from: s.clone(),
                    to: t.clone(),
                    coupling: e.coupling,
                });
                if let Some(bound) = w.defaults.bound(e.coupling) {
                    constraints.push(PlacementConstraint::pair(s, t, bound));
                }
            }
        }
    }
    edges.sort();
    edges.dedup();

    let ids: Vec<&str> = tasks.iter().map(|t| t.id.as_str()).collect();
    let pairs: Vec<(&str, &str)> = edges.iter().map(|e| (e.from.as_str(), e.to.as_str())).collect();
    if let Some(cycle) = find_cycle(&ids, &pairs) {
        return Err(WorkflowError::Cycle(cycle).into());
    }
    Ok(Workload {
        name: w.name.clone(),
        tasks,
        edges,
        constraints,
        driver_tasks: drivers,
        base_dir: w.base_dir.clone(),
    })
}

/// Topological layering: generation k holds the tasks whose longest
/// predecessor chain has length k.
pub fn generations(wl: &Workload) -> Vec<BTreeSet<String>> {
    let preds = wl.predecessors();
    let succs = wl.successors();
    let mut remaining: BTreeMap<&str, usize> = preds.iter().map(|(k, v)| (*k, v.len())).collect();
    let mut level: BTreeMap<&str, usize> = BTreeMap::new();
    let mut frontier: Vec<&str> = remaining
        .iter()
        .filter(|(_, n)| **n == 0)
        .map(|(k, _)| *k)
        .collect();
    while let Some(u) = frontier.pop() {
        let lu = preds[u].iter().map(|p| level[p] + 1).max().unwrap_or(0);
        level.insert(u, lu);
        for v in &succs[u] {
            let r = remaining.get_mut(v).expect("successor is a task");
            *r -= 1;
            if *r == 0 {
                frontier.push(v);
            }
        }
    }
    let depth = level.values().copied().max().map_or(0, |m| m + 1);
    let mut out = vec![BTreeSet::new(); depth];
    for (id, l) in level {
        out[l].insert(id.to_string());
    }
    out
}
