//! Independent oracles and generators shared by the integration tests and
//! the acceptance suite.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64 as C;
use rand::Rng;
use serde_json::{json, Value};

use qhpc_core::fabric::Fabric;
use qhpc_core::patterns::AnsatzTemplate;
use qhpc_core::qasm::{Circuit, Gate, Instruction, Op};
use qhpc_core::qsim::Observable;
use qhpc_core::rng;
use qhpc_core::runtime::RunReport;
use qhpc_core::trace::{spans, Span};
use qhpc_core::workflow::{compile, TaskKind, TemplateRegistry, Workload, WorkflowSpec};

pub fn fixtures() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

// ---------------------------------------------------------------------------
// Dense linear algebra

pub type Matrix = Vec<Vec<C>>;

fn zeros(n: usize) -> Matrix {
    vec![vec![C::new(0.0, 0.0); n]; n]
}

fn identity(n: usize) -> Matrix {
    let mut m = zeros(n);
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = C::new(1.0, 0.0);
    }
    m
}

fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    let (na, nb) = (a.len(), b.len());
    let mut out = zeros(na * nb);
    for i in 0..na {
        for j in 0..na {
            for k in 0..nb {
                for l in 0..nb {
                    out[i * nb + k][j * nb + l] = a[i][j] * b[k][l];
                }
            }
        }
    }
    out
}

fn mat_vec(m: &Matrix, v: &[C]) -> Vec<C> {
    m.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

fn single(gate: Gate) -> Matrix {
    let c = |re: f64, im: f64| C::new(re, im);
    let s2 = 1.0 / 2f64.sqrt();
    match gate {
        Gate::H => vec![vec![c(s2, 0.0), c(s2, 0.0)], vec![c(s2, 0.0), c(-s2, 0.0)]],
        Gate::X => vec![vec![c(0.0, 0.0), c(1.0, 0.0)], vec![c(1.0, 0.0), c(0.0, 0.0)]],
        Gate::Y => vec![vec![c(0.0, 0.0), c(0.0, -1.0)], vec![c(0.0, 1.0), c(0.0, 0.0)]],
        Gate::Z => vec![vec![c(1.0, 0.0), c(0.0, 0.0)], vec![c(0.0, 0.0), c(-1.0, 0.0)]],
        Gate::Rx(t) => {
            let (s, co) = (t / 2.0).sin_cos();
            vec![vec![c(co, 0.0), c(0.0, -s)], vec![c(0.0, -s), c(co, 0.0)]]
        }
        Gate::Ry(t) => {
            let (s, co) = (t / 2.0).sin_cos();
            vec![vec![c(co, 0.0), c(-s, 0.0)], vec![c(s, 0.0), c(co, 0.0)]]
        }
        Gate::Rz(t) => vec![
            vec![C::from_polar(1.0, -t / 2.0), c(0.0, 0.0)],
            vec![c(0.0, 0.0), C::from_polar(1.0, t / 2.0)],
        ],
    }
}

/// `m` acting on `qubit` of an `n`-qubit register; qubit 0 is the least
/// significant bit, so it is the rightmost kron factor.
fn embed(m: &Matrix, qubit: usize, n: usize) -> Matrix {
    let mut out = identity(1);
    for q in (0..n).rev() {
        let f = if q == qubit { m.clone() } else { identity(2) };
        out = kron(&out, &f);
    }
    out
}

fn cx_matrix(control: usize, target: usize, n: usize) -> Matrix {
    let dim = 1 << n;
    let mut m = zeros(dim);
    for i in 0..dim {
        let j = if i >> control & 1 == 1 { i ^ (1 << target) } else { i };
        m[j][i] = C::new(1.0, 0.0);
    }
    m
}

/// Final state of a measurement-free circuit by full matrix products.
pub fn dense_state(c: &Circuit) -> Vec<C> {
    let n = c.num_qubits;
    let mut psi = vec![C::new(0.0, 0.0); 1 << n];
    psi[0] = C::new(1.0, 0.0);
    for inst in &c.instructions {
        let m = match &inst.op {
            Op::Gate { gate, qubit } => embed(&single(*gate), *qubit, n),
            Op::Cx { control, target } => cx_matrix(*control, *target, n),
            Op::Barrier { .. } => continue,
            Op::Measure { .. } => panic!("dense oracle takes unitary circuits only"),
        };
        psi = mat_vec(&m, &psi);
    }
    psi
}

pub fn dense_observable(h: &Observable) -> Matrix {
    let n = h.num_qubits();
    let mut total = zeros(1 << n);
    for term in h.terms() {
        let s = term.pauli_string();
        let mut m = identity(1);
        for q in (0..n).rev() {
            let p = match s.as_bytes()[q] {
                b'X' => single(Gate::X),
                b'Y' => single(Gate::Y),
                b'Z' => single(Gate::Z),
                _ => identity(2),
            };
            m = kron(&m, &p);
        }
        for (i, row) in m.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                total[i][j] += v * term.coeff;
            }
        }
    }
    total
}

pub fn dense_expectation(c: &Circuit, h: &Observable) -> f64 {
    let psi = dense_state(c);
    let hpsi = mat_vec(&dense_observable(h), &psi);
    psi.iter().zip(&hpsi).map(|(a, b)| a.conj() * b).sum::<C>().re
}

/// Minimum of ⟨H⟩ over a 1° grid of the ansatz's two parameters.
pub fn grid_minimum(h: &Observable, ansatz: &AnsatzTemplate) -> (f64, [f64; 2]) {
    assert_eq!(ansatz.num_params(), 2);
    let hm = dense_observable(h);
    let mut best = (f64::INFINITY, [0.0, 0.0]);
    for a in 0..360 {
        for b in 0..360 {
            let theta = [a as f64 * PI / 180.0, b as f64 * PI / 180.0];
            let psi = dense_state(&ansatz.instantiate(&theta));
            let hpsi = mat_vec(&hm, &psi);
            let e = psi.iter().zip(&hpsi).map(|(x, y)| x.conj() * y).sum::<C>().re;
            if e < best.0 {
                best = (e, theta);
            }
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Circuits

pub fn random_unitary_circuit(seed: u64, n: usize, len: usize) -> Circuit {
    let mut r = rng::stream(seed, &[]);
    let mut c = Circuit::new("random", n, 0);
    for _ in 0..len {
        let q = r.random_range(0..n);
        let t: f64 = r.random_range(-PI..PI);
        let inst = match r.random_range(0..8) {
            0 => Instruction::gate(Gate::H, q),
            1 => Instruction::gate(Gate::X, q),
            2 => Instruction::gate(Gate::Y, q),
            3 => Instruction::gate(Gate::Z, q),
            4 => Instruction::gate(Gate::Rx(t), q),
            5 => Instruction::gate(Gate::Ry(t), q),
            6 => Instruction::gate(Gate::Rz(t), q),
            _ if n > 1 => Instruction::cx(q, (q + 1 + r.random_range(0..n - 1)) % n),
            _ => Instruction::gate(Gate::H, q),
        };
        c.push(inst);
    }
    c
}

pub fn random_observable(seed: u64, n: usize, terms: usize) -> Observable {
    let mut r = rng::stream(seed, &[1]);
    let pairs: Vec<(f64, String)> = (0..terms)
        .map(|_| {
            let s: String = (0..n).map(|_| ['I', 'X', 'Y', 'Z'][r.random_range(0..4)]).collect();
            (r.random_range(-2.0..2.0), s)
        })
        .collect();
    let refs: Vec<(f64, &str)> = pairs.iter().map(|(c, s)| (*c, s.as_str())).collect();
    Observable::from_pairs(&refs).unwrap()
}

// ---------------------------------------------------------------------------
// Random workloads and schedule checks

/// Three islands, each a node and a QPU 0.5 µs apart; islands are 2000 µs
/// apart, beyond both coupling bounds.
pub fn islands_fabric() -> Fabric {
    let mut nodes = Vec::new();
    let mut qpus = Vec::new();
    let mut links = Vec::new();
    for i in 1..=3 {
        nodes.push(json!({"id": format!("n{i}"), "cores": 4, "gpus": 0, "core_speed": 0.5 * i as f64}));
        qpus.push(json!({
            "id": format!("q{i}"), "num_qubits": 3, "modality": "simulated",
            "coherence_time_us": 100.0, "gate_time_1q_us": 0.05, "gate_time_2q_us": 0.3,
            "readout_time_us": 1.0, "shot_overhead_us": 10.0, "compile_overhead_us": 100.0 * i as f64,
            "failure_prob": 0.0
        }));
        links.push(json!({"a": format!("n{i}"), "b": format!("q{i}"), "latency_us": 0.5}));
    }
    let ids = ["n1", "n2", "n3", "q1", "q2", "q3"];
    for a in ids {
        for b in ids {
            if a < b && a[1..] != b[1..] {
                links.push(json!({"a": a, "b": b, "latency_us": 2000.0}));
            }
        }
    }
    let f = json!({"nodes": nodes, "qpus": qpus, "links": links, "default_latency_us": 10000.0});
    Fabric::from_json(&f.to_string()).unwrap()
}

const SMALL_CIRCUITS: [&str; 3] = [
    "OPENQASM 2.0; qreg q[2]; creg c[2]; h q[0]; cx q[0],q[1]; measure q[0] -> c[0]; measure q[1] -> c[1];",
    "OPENQASM 2.0; qreg q[1]; creg c[1]; h q[0]; measure q[0] -> c[0];",
    "OPENQASM 2.0; qreg q[3]; creg c[3]; h q[0]; cx q[0],q[1]; cx q[1],q[2]; measure q[2] -> c[2];",
];

/// Random DAG of up to 20 classical and quantum tasks. Each task takes part
/// in at most one tight or medium edge, which keeps every instance
/// placeable on [`islands_fabric`].
pub fn random_workflow(seed: u64) -> Value {
    let mut r = rng::stream(seed, &[7]);
    let n = r.random_range(2..=20);
    let mut tasks = Vec::new();
    for i in 0..n {
        let id = format!("t{i}");
        if r.random_bool(0.5) {
            tasks.push(json!({
                "id": id, "kind": "classical", "cores": r.random_range(1..=4),
                "compute_cost_us": r.random_range(0..3000), "action": "compute"
            }));
        } else {
            tasks.push(json!({
                "id": id, "kind": "quantum", "shots": r.random_range(1..400),
                "qasm": SMALL_CIRCUITS[r.random_range(0..SMALL_CIRCUITS.len())]
            }));
        }
    }
    let mut constrained = vec![false; n];
    let mut edges = Vec::new();
    for j in 1..n {
        for i in 0..j {
            if !r.random_bool(0.2) {
                continue;
            }
            let mut coupling = "loose";
            if !constrained[i] && !constrained[j] && r.random_bool(0.4) {
                coupling = if r.random_bool(0.5) { "tight" } else { "medium" };
                constrained[i] = true;
                constrained[j] = true;
            }
            edges.push(json!({"from": format!("t{i}"), "to": format!("t{j}"), "coupling": coupling}));
        }
    }
    json!({"name": format!("random{seed}"), "tasks": tasks, "edges": edges})
}

pub fn compile_json(v: &Value, base: &Path) -> Workload {
    let spec = WorkflowSpec::from_json(&v.to_string(), base).unwrap();
    compile(&spec, &TemplateRegistry::standard()).unwrap()
}

/// Every violated scheduling invariant, as text. Empty means the run
/// respected dependencies, QPU exclusivity, node capacity and placement
/// bounds.
pub fn schedule_violations(wl: &Workload, fabric: &Fabric, report: &RunReport) -> Vec<String> {
    let mut out = Vec::new();
    let all = spans(&report.trace);
    let done: BTreeMap<&str, &Span> = all.iter().filter(|s| s.completed).map(|s| (s.task_id.as_str(), s)).collect();
    for e in &wl.edges {
        let Some(pred) = done.get(e.from.as_str()) else {
            out.push(format!("{} never completed", e.from));
            continue;
        };
        for s in all.iter().filter(|s| s.task_id == e.to) {
            if s.start_us < pred.end_us {
                out.push(format!("{} started at {} before {} ended at {}", e.to, s.start_us, e.from, pred.end_us));
            }
        }
    }
    for q in &fabric.qpus {
        let mut iv: Vec<&Span> = all.iter().filter(|s| s.resource_id == q.id).collect();
        iv.sort_by_key(|s| s.start_us);
        for w in iv.windows(2) {
            if w[1].start_us < w[0].end_us {
                out.push(format!("{} overlaps {} on {}", w[0].task_id, w[1].task_id, q.id));
            }
        }
    }
    let cores = |id: &str| wl.task(id).map_or(1, |t| t.kind.cores().max(1));
    for n in &fabric.nodes {
        let mine: Vec<&Span> = all.iter().filter(|s| s.resource_id == n.id).collect();
        for s in &mine {
            let used: u32 = mine
                .iter()
                .filter(|o| o.start_us <= s.start_us && s.start_us < o.end_us.max(o.start_us + 1))
                .map(|o| cores(&o.task_id))
                .sum();
            if used > n.cores {
                out.push(format!("{} cores in use on {} at {}", used, n.id, s.start_us));
            }
        }
    }
    for c in &wl.constraints {
        let hosts: Vec<&str> = c.members.iter().filter_map(|m| done.get(m.as_str())).map(|s| s.resource_id.as_str()).collect();
        for a in &hosts {
            for b in &hosts {
                let l = fabric.latency(a, b).unwrap();
                if l > c.max_latency_us {
                    out.push(format!("{:?} placed {a}/{b} at {l} µs > {}", c.members, c.max_latency_us));
                }
            }
        }
    }
    for t in &wl.tasks {
        if matches!(t.kind, TaskKind::Quantum(_)) && done.get(t.id.as_str()).is_some_and(|s| !s.resource_id.starts_with('q')) {
            out.push(format!("quantum task {} ran off a QPU", t.id));
        }
    }
    out
}

/// Longest path (in instructions) through the DAG where a later instruction
/// depends on an earlier one sharing a qubit. Conditioned instructions touch
/// every qubit.
pub fn longest_path_depth(c: &Circuit) -> usize {
    let touched = |i: &Instruction| -> Vec<usize> {
        if i.condition.is_some() {
            (0..c.num_qubits).collect()
        } else {
            i.qubits()
        }
    };
    let n = c.instructions.len();
    let mut longest = vec![1usize; n];
    for j in 0..n {
        let tj = touched(&c.instructions[j]);
        for i in 0..j {
            let ti = touched(&c.instructions[i]);
            if ti.iter().any(|q| tj.contains(q)) {
                longest[j] = longest[j].max(longest[i] + 1);
            }
        }
    }
    longest.into_iter().max().unwrap_or(0)
}

// ---------------------------------------------------------------------------
// VQE fixtures

pub fn two_qubit_hamiltonian() -> Observable {
    Observable::parse(qhpc_core::patterns::TWO_QUBIT_HAMILTONIAN).unwrap()
}

pub fn two_qubit_ansatz() -> AnsatzTemplate {
    AnsatzTemplate::parse(qhpc_core::patterns::TWO_QUBIT_ANSATZ).unwrap()
}

/// The chemistry settings: lr 0.1, tol 1e-6, at most 300 iterations.
pub fn two_qubit_config(initial_params: Vec<f64>, mode: qhpc_core::patterns::EvalMode) -> qhpc_core::patterns::VqeConfig {
    qhpc_core::patterns::VqeConfig {
        hamiltonian: two_qubit_hamiltonian(),
        ansatz: two_qubit_ansatz(),
        initial_params,
        learning_rate: 0.1,
        tol: 1e-6,
        max_iters: 300,
        mode,
        seed: 0,
    }
}

/// H = Z with a single ry(θ) ansatz, so E(θ) = cos θ.
pub fn one_qubit_z(theta0: f64, lr: f64) -> qhpc_core::patterns::VqeConfig {
    qhpc_core::patterns::VqeConfig {
        hamiltonian: Observable::parse("1.0 Z\n").unwrap(),
        ansatz: AnsatzTemplate::parse("OPENQASM 2.0; qreg q[1]; ry(0) q[0];").unwrap(),
        initial_params: vec![theta0],
        learning_rate: lr,
        tol: 1e-9,
        max_iters: 500,
        mode: qhpc_core::patterns::EvalMode::Exact,
        seed: 0,
    }
}

// ---------------------------------------------------------------------------
// Straggler scenario

/// Four independent Bell runs.
pub fn four_bells() -> Value {
    let tasks: Vec<Value> = (0..4)
        .map(|i| json!({"id": format!("bell{i}"), "kind": "quantum", "shots": 1000, "qasm": SMALL_CIRCUITS[0]}))
        .collect();
    json!({"name": "straggler", "tasks": tasks})
}

/// Runs [`four_bells`] on two QPUs while q1 is busy with foreign work until
/// 50 ms. The early planner does not see that load.
pub fn straggler_run(binding: qhpc_core::workload::BindingMode) -> (Workload, Fabric, RunReport) {
    let fabric = Fabric::load(&fixtures().join("fabrics/two_qpu.json")).unwrap();
    let wl = compile_json(&four_bells(), &fixtures());
    let cfg = qhpc_core::runtime::RunConfig {
        binding,
        external_load: vec![qhpc_core::workload::ExternalLoad {
            resource_id: "q1".into(),
            until: qhpc_core::engine::SimTime(50_000),
        }],
        plan_with_load: false,
        ..Default::default()
    };
    let report = qhpc_core::runtime::execute(&wl, &fabric, &cfg).unwrap();
    (wl, fabric, report)
}
