//! Reference workloads for the three integration patterns and the VQE
//! driver behind the `vqe` composite template.

mod vqe;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::qasm::parse_qasm_named;
use crate::qsim::Observable;
use crate::workflow::{
    read_file, ClassicalSpec, CompositeSpec, CompositeTemplate, Coupling, CouplingDefaults,
    DriverSpec, Edge, ExpandContext, Expansion, ExpansionTask, QuantumSpec, TaskKind, TaskSpec,
    TaskSpecKind, WorkflowSpec,
};

pub use vqe::{
    parameter_shift_gradient, run_vqe, vqe_driver, warm_start, AnsatzTemplate, EvalMode,
    EvalRequest, LocalSubmitter, Submitter, VqeConfig, VqeMachine, VqeResult,
};

/// Parameters of the `vqe` template. File references are replaced by their
/// contents during expansion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VqeParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hamiltonian: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hamiltonian_file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ansatz: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ansatz_file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_params: Option<Vec<f64>>,
    #[serde(default)]
    pub warm_start: bool,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: u32,
    /// Shots per circuit; drives QPU timing in both modes.
    #[serde(default = "default_shots")]
    pub shots: u64,
    /// Classical optimizer work between evaluation batches.
    #[serde(default = "default_step_cost")]
    pub step_cost_us: f64,
    /// Overrides the run seed for this driver.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn default_lr() -> f64 {
    0.1
}
fn default_tol() -> f64 {
    1e-6
}
fn default_max_iters() -> u32 {
    500
}
fn default_shots() -> u64 {
    1024
}
fn default_step_cost() -> f64 {
    100.0
}

impl Default for VqeParams {
    fn default() -> Self {
        VqeParams {
            hamiltonian: None,
            hamiltonian_file: None,
            ansatz: None,
            ansatz_file: None,
            initial_params: None,
            warm_start: false,
            learning_rate: default_lr(),
            tol: default_tol(),
            max_iters: default_max_iters(),
            shots: default_shots(),
            step_cost_us: default_step_cost(),
            seed: None,
        }
    }
}

impl VqeParams {
    pub fn from_value(v: &Value) -> Result<Self, String> {
        let v = if v.is_null() { json!({}) } else { v.clone() };
        serde_path_to_error::deserialize(v).map_err(|e| {
            let path = e.path().to_string();
            if path == "." {
                e.inner().to_string()
            } else {
                format!("{path}: {}", e.inner())
            }
        })
    }

    /// Inlines file references and checks everything that can be checked
    /// before run time.
    pub fn normalize(mut self, base: &Path) -> Result<Self, String> {
        if let Some(f) = self.hamiltonian_file.take() {
            if self.hamiltonian.is_some() {
                return Err("give either hamiltonian or hamiltonian_file, not both".into());
            }
            self.hamiltonian = Some(read_file(base, &f).map_err(|e| e.to_string())?);
        }
        if let Some(f) = self.ansatz_file.take() {
            if self.ansatz.is_some() {
                return Err("give either ansatz or ansatz_file, not both".into());
            }
            self.ansatz = Some(read_file(base, &f).map_err(|e| e.to_string())?);
        }
        let ansatz = self.ansatz_template()?;
        if let Some(h) = &self.hamiltonian {
            let h = Observable::parse(h).map_err(|e| format!("hamiltonian: {e}"))?;
            if h.num_qubits() != ansatz.num_qubits() {
                return Err(format!(
                    "hamiltonian acts on {} qubits but the ansatz has {}",
                    h.num_qubits(),
                    ansatz.num_qubits()
                ));
            }
        }
        if let Some(p) = &self.initial_params {
            if p.len() != ansatz.num_params() {
                return Err(format!(
                    "{} initial parameters given for {} ansatz slots",
                    p.len(),
                    ansatz.num_params()
                ));
            }
        }
        if !(self.learning_rate > 0.0) || !(self.tol > 0.0) {
            return Err("learning_rate and tol must be positive".into());
        }
        if self.max_iters == 0 || self.shots == 0 {
            return Err("max_iters and shots must be at least 1".into());
        }
        if !(self.step_cost_us.is_finite() && self.step_cost_us >= 0.0) {
            return Err("step_cost_us must be non-negative".into());
        }
        Ok(self)
    }

    pub fn ansatz_template(&self) -> Result<AnsatzTemplate, String> {
        let text = self.ansatz.as_deref().ok_or("an ansatz is required")?;
        AnsatzTemplate::parse(text).map_err(|e| format!("ansatz: {e}"))
    }

    /// Resolves the run-time configuration. The Hamiltonian and initial
    /// parameters fall back to the first input output carrying them; warm
    /// start and then zeros fill in missing parameters.
    pub fn resolve(&self, inputs: &[&Value], mode: EvalMode, run_seed: u64) -> Result<VqeConfig, String> {
        let ansatz = self.ansatz_template()?;
        let text = match &self.hamiltonian {
            Some(h) => h.clone(),
            None => inputs
                .iter()
                .find_map(|v| v.get("hamiltonian").and_then(Value::as_str))
                .ok_or("no hamiltonian given and no input provides one")?
                .to_string(),
        };
        let hamiltonian = Observable::parse(&text).map_err(|e| format!("hamiltonian: {e}"))?;
        let from_input = || {
            inputs.iter().find_map(|v| {
                v.get("initial_params")
                    .and_then(Value::as_array)
                    .map(|a| a.iter().filter_map(Value::as_f64).collect::<Vec<_>>())
            })
        };
        let initial_params = if let Some(p) = &self.initial_params {
            p.clone()
        } else if let Some(p) = from_input() {
            p
        } else if self.warm_start {
            warm_start(&hamiltonian)
        } else {
            vec![0.0; ansatz.num_params()]
        };
        let mode = match mode {
            EvalMode::Exact => EvalMode::Exact,
            EvalMode::Sampled { .. } => EvalMode::Sampled { shots: self.shots },
        };
        let cfg = VqeConfig {
            hamiltonian,
            ansatz,
            initial_params,
            learning_rate: self.learning_rate,
            tol: self.tol,
            max_iters: self.max_iters,
            mode,
            seed: self.seed.unwrap_or(run_seed),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// `vqe` composite: expands to a single long-lived driver task named
/// `driver`.
#[derive(Debug, Clone, Copy, Default)]
pub struct VqeTemplate;

impl CompositeTemplate for VqeTemplate {
    fn expand(&self, params: &Value, ctx: &ExpandContext<'_>) -> Result<Expansion, String> {
        let p = VqeParams::from_value(params)?.normalize(ctx.base_dir)?;
        let width = p.ansatz_template()?.num_qubits();
        let params = serde_json::to_value(&p).map_err(|e| e.to_string())?;
        Ok(Expansion {
            tasks: vec![ExpansionTask {
                name: "driver".into(),
                kind: TaskKind::Driver(DriverSpec {
                    template: "vqe".into(),
                    params,
                    cores: 1,
                    qpu_qubits_min: width,
                }),
                inputs: vec![],
            }],
            edges: vec![],
            drivers: vec!["driver".into()],
        })
    }
}

/// h, measure, conditional x, measure: every shot ends in 0.
pub const DYNAMIC_QASM: &str = "OPENQASM 2.0;
include \"qelib1.inc\";
qreg q[1];
creg c[1];
h q[0];
measure q[0] -> c[0];
if(c==1) x q[0];
measure q[0] -> c[0];
";

/// Ansatz of the two-qubit fixture: ry on each qubit, then cx.
pub const TWO_QUBIT_ANSATZ: &str = "OPENQASM 2.0;
qreg q[2];
ry(0) q[0];
ry(0) q[1];
cx q[0],q[1];
";

/// Z₀Z₁ + 0.5·X₀ + 0.5·X₁.
pub const TWO_QUBIT_HAMILTONIAN: &str = "# Z0 Z1 + 0.5 X0 + 0.5 X1\n1.0 ZZ\n0.5 XI\n0.5 IX\n";

fn classical(id: &str, cost: f64, action: &str, params: Value, inputs: Vec<String>) -> TaskSpec {
    TaskSpec {
        id: id.into(),
        kind: TaskSpecKind::Classical(ClassicalSpec {
            cores: 1,
            gpus: 0,
            compute_cost_us: cost,
            action: action.into(),
            params,
        }),
        inputs,
    }
}

fn edge(a: &str, b: &str, coupling: Coupling) -> Edge {
    Edge {
        from: a.into(),
        to: b.into(),
        coupling,
    }
}

/// HPC-for-Quantum: a dynamic circuit tightly coupled to the classical task
/// consuming its measurement record.
pub fn build_dynamic_workload() -> WorkflowSpec {
    let circuit = parse_qasm_named(DYNAMIC_QASM, "circuit").expect("built-in circuit parses");
    WorkflowSpec {
        name: "dynamic".into(),
        defaults: CouplingDefaults::default(),
        tasks: vec![
            TaskSpec {
                id: "circuit".into(),
                kind: TaskSpecKind::Quantum(QuantumSpec {
                    qpu_qubits_min: 1,
                    shots: 1000,
                    circuit: Arc::new(circuit),
                }),
                inputs: vec![],
            },
            classical("feedback", 10.0, "feedback", Value::Null, vec!["circuit".into()]),
        ],
        edges: vec![edge("circuit", "feedback", Coupling::Tight)],
        base_dir: PathBuf::from("."),
    }
}

#[derive(Debug, Clone)]
pub struct ChemistryConfig {
    /// Hamiltonian file read by the pre-processing task.
    pub hamiltonian_path: String,
    pub warm_start: bool,
    /// Report written by the post-processing task.
    pub report_path: String,
    /// Template parameters; the Hamiltonian comes from the pre-task.
    pub vqe: VqeParams,
    pub base_dir: PathBuf,
}

/// Quantum-in-HPC chemistry chain: load Hamiltonian (with optional warm
/// start) → vqe → report, all loosely coupled.
pub fn build_chemistry_workflow(cfg: &ChemistryConfig) -> WorkflowSpec {
    let vqe = serde_json::to_value(&cfg.vqe).expect("params serialize");
    WorkflowSpec {
        name: "chemistry".into(),
        defaults: CouplingDefaults::default(),
        tasks: vec![
            classical(
                "load",
                500.0,
                "load_hamiltonian",
                json!({"path": cfg.hamiltonian_path, "warm_start": cfg.warm_start}),
                vec![],
            ),
            TaskSpec {
                id: "vqe".into(),
                kind: TaskSpecKind::Composite(CompositeSpec {
                    template: "vqe".into(),
                    params: vqe,
                }),
                inputs: vec!["load".into()],
            },
            classical(
                "report",
                200.0,
                "write_report",
                json!({"path": cfg.report_path}),
                vec!["vqe".into()],
            ),
        ],
        edges: vec![
            edge("load", "vqe", Coupling::Loose),
            edge("vqe", "report", Coupling::Loose),
        ],
        base_dir: cfg.base_dir.clone(),
    }
}

/// Quantum-about-HPC ensemble: one independent vqe per learning rate and a
/// reducer selecting the lowest final energy.
pub fn build_hyperparameter_ensemble(
    base: &VqeParams,
    learning_rates: &[f64],
    base_dir: &Path,
) -> Result<WorkflowSpec, String> {
    if learning_rates.len() < 2 {
        return Err("an ensemble needs at least two learning rates".into());
    }
    let mut tasks = Vec::new();
    let mut edges = Vec::new();
    let mut members = Vec::new();
    for (i, lr) in learning_rates.iter().enumerate() {
        let id = format!("member{i}");
        let params = VqeParams {
            learning_rate: *lr,
            ..base.clone()
        };
        tasks.push(TaskSpec {
            id: id.clone(),
            kind: TaskSpecKind::Composite(CompositeSpec {
                template: "vqe".into(),
                params: serde_json::to_value(&params).map_err(|e| e.to_string())?,
            }),
            inputs: vec![],
        });
        edges.push(edge(&id, "select", Coupling::Loose));
        members.push(id);
    }
    tasks.push(classical("select", 50.0, "select_min", Value::Null, members));
    Ok(WorkflowSpec {
        name: "ensemble".into(),
        defaults: CouplingDefaults::default(),
        tasks,
        edges,
        base_dir: base_dir.to_path_buf(),
    })
}
