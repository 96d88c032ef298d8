use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::par::Execution;
use crate::qasm::{Circuit, Op};
use crate::qsim::{self, Observable, SimError};
use crate::rng;

/// Parameterized circuit: every rotation gate of the skeleton is a slot,
/// numbered in instruction order.
#[derive(Debug, Clone, PartialEq)]
pub struct AnsatzTemplate {
    skeleton: Circuit,
    slots: Vec<usize>,
}

impl AnsatzTemplate {
    pub fn from_circuit(c: Circuit) -> Result<Self, String> {
        c.validate().map_err(|e| e.to_string())?;
        if c.has_measurements() {
            return Err("ansatz must not contain measurements".into());
        }
        if c.conditioned_count() > 0 {
            return Err("ansatz must not contain conditioned instructions".into());
        }
        let slots = c
            .instructions
            .iter()
            .enumerate()
            .filter(|(_, i)| matches!(i.op, Op::Gate { gate, .. } if gate.is_rotation()))
            .map(|(k, _)| k)
            .collect();
        Ok(AnsatzTemplate { skeleton: c, slots })
    }

    pub fn parse(qasm: &str) -> Result<Self, String> {
        let c = crate::qasm::parse_qasm_named(qasm, "ansatz").map_err(|d| {
            d.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
        })?;
        Self::from_circuit(c)
    }

    pub fn num_params(&self) -> usize {
        self.slots.len()
    }

    pub fn num_qubits(&self) -> usize {
        self.skeleton.num_qubits
    }

    pub fn skeleton(&self) -> &Circuit {
        &self.skeleton
    }

    /// Skeleton with slot `k` set to `theta[k]`.
    pub fn instantiate(&self, theta: &[f64]) -> Circuit {
        assert_eq!(theta.len(), self.slots.len(), "parameter count mismatch");
        let mut c = self.skeleton.clone();
        for (&idx, &t) in self.slots.iter().zip(theta) {
            if let Op::Gate { gate, .. } = &mut c.instructions[idx].op {
                *gate = gate.with_angle(t);
            }
        }
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    Exact,
    Sampled { shots: u64 },
}

#[derive(Debug, Clone)]
pub struct VqeConfig {
    pub hamiltonian: Observable,
    pub ansatz: AnsatzTemplate,
    pub initial_params: Vec<f64>,
    pub learning_rate: f64,
    pub tol: f64,
    pub max_iters: u32,
    pub mode: EvalMode,
    pub seed: u64,
}

impl VqeConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.hamiltonian.num_qubits() != self.ansatz.num_qubits() {
            return Err(format!(
                "hamiltonian acts on {} qubits but the ansatz has {}",
                self.hamiltonian.num_qubits(),
                self.ansatz.num_qubits()
            ));
        }
        if self.initial_params.len() != self.ansatz.num_params() {
            return Err(format!(
                "{} initial parameters given for {} ansatz slots",
                self.initial_params.len(),
                self.ansatz.num_params()
            ));
        }
        if !(self.learning_rate > 0.0) {
            return Err("learning_rate must be positive".into());
        }
        if !(self.tol > 0.0) {
            return Err("tol must be positive".into());
        }
        if self.max_iters == 0 {
            return Err("max_iters must be at least 1".into());
        }
        if let EvalMode::Sampled { shots: 0 } = self.mode {
            return Err("shots must be at least 1".into());
        }
        Ok(())
    }

    /// Convergence threshold on |ΔE|, widened tenfold under shot noise.
    pub fn effective_tol(&self) -> f64 {
        match self.mode {
            EvalMode::Exact => self.tol,
            EvalMode::Sampled { .. } => 10.0 * self.tol,
        }
    }

    /// Energy at `theta`; sampled evaluations draw from stream `index`.
    pub fn energy(&self, theta: &[f64], index: u64, exec: Execution) -> Result<f64, SimError> {
        let c = self.ansatz.instantiate(theta);
        match self.mode {
            EvalMode::Exact => qsim::expectation(&c, &self.hamiltonian),
            EvalMode::Sampled { shots } => qsim::sample_expectation_with(
                &c,
                &self.hamiltonian,
                shots,
                rng::mix(self.seed, &[index]),
                exec,
            ),
        }
    }

    /// Circuits a QPU actually runs for one evaluation: the bare ansatz in
    /// exact mode, one measured basis circuit per non-identity term when
    /// sampling.
    pub fn evaluation_circuits(&self, theta: &[f64]) -> Result<Vec<Circuit>, SimError> {
        let c = self.ansatz.instantiate(theta);
        match self.mode {
            EvalMode::Exact => Ok(vec![c]),
            EvalMode::Sampled { .. } => self
                .hamiltonian
                .terms()
                .iter()
                .filter(|t| !t.is_identity())
                .map(|t| qsim::basis_circuit(&c, t).map(|(c, _)| c))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqeResult {
    pub energy_trace: Vec<f64>,
    pub final_params: Vec<f64>,
    pub final_energy: f64,
    pub iterations_used: u32,
    pub circuit_evaluations: u64,
    pub converged: bool,
    pub failed: bool,
}

/// One energy evaluation requested by the optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRequest {
    /// Global evaluation counter, also the sampling stream id.
    pub index: u64,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Initial,
    Gradient,
    Energy,
    Done,
}

/// Gradient descent with parameter-shift gradients, driven one batch of
/// evaluations at a time so the caller decides how batches execute.
#[derive(Debug, Clone)]
pub struct VqeMachine {
    cfg: VqeConfig,
    theta: Vec<f64>,
    phase: Phase,
    pending: Option<Vec<EvalRequest>>,
    trace: Vec<f64>,
    evaluations: u64,
    iterations: u32,
    /// Consecutive iterations meeting the |ΔE| test.
    streak: u32,
    converged: bool,
    failed: bool,
}

/// Sampled energies are multiples of 1/shots, so two consecutive values can
/// coincide by chance; the widened test must then hold this many times in a
/// row.
pub const SAMPLED_CONVERGENCE_STREAK: u32 = 3;

impl VqeMachine {
    pub fn new(cfg: VqeConfig) -> Result<Self, String> {
        cfg.validate()?;
        Ok(VqeMachine {
            theta: cfg.initial_params.clone(),
            cfg,
            phase: Phase::Initial,
            pending: None,
            trace: Vec::new(),
            evaluations: 0,
            iterations: 0,
            streak: 0,
            converged: false,
            failed: false,
        })
    }

    pub fn config(&self) -> &VqeConfig {
        &self.cfg
    }

    pub fn is_done(&self) -> bool {
        self.phase == Phase::Done
    }

    /// Evaluations to run next; repeated calls return the same batch until
    /// it is fed back. `None` once finished.
    pub fn next_batch(&mut self) -> Option<Vec<EvalRequest>> {
        if self.phase == Phase::Done {
            return None;
        }
        if self.pending.is_none() {
            let points: Vec<Vec<f64>> = match self.phase {
                Phase::Initial | Phase::Energy => vec![self.theta.clone()],
                Phase::Gradient => (0..self.theta.len())
                    .flat_map(|j| {
                        let mut plus = self.theta.clone();
                        plus[j] += FRAC_PI_2;
                        let mut minus = self.theta.clone();
                        minus[j] -= FRAC_PI_2;
                        [plus, minus]
                    })
                    .collect(),
                Phase::Done => unreachable!(),
            };
            let batch = points
                .into_iter()
                .enumerate()
                .map(|(k, params)| EvalRequest {
                    index: self.evaluations + k as u64,
                    params,
                })
                .collect::<Vec<_>>();
            self.evaluations += batch.len() as u64;
            self.pending = Some(batch);
        }
        self.pending.clone()
    }

    /// Supplies the energies of the pending batch, in batch order.
    pub fn feed(&mut self, values: &[f64]) {
        let batch = self.pending.take().expect("feed without a pending batch");
        assert_eq!(batch.len(), values.len(), "one value per evaluation");
        match self.phase {
            Phase::Initial => {
                self.trace.push(values[0]);
                self.phase = if self.theta.is_empty() { Phase::Done } else { Phase::Gradient };
            }
            Phase::Gradient => {
                let lr = self.cfg.learning_rate;
                for (j, t) in self.theta.iter_mut().enumerate() {
                    let g = (values[2 * j] - values[2 * j + 1]) / 2.0;
                    *t -= lr * g;
                }
                self.phase = Phase::Energy;
            }
            Phase::Energy => {
                let e = values[0];
                let prev = *self.trace.last().expect("initial energy recorded");
                self.trace.push(e);
                self.iterations += 1;
                if (e - prev).abs() < self.cfg.effective_tol() {
                    self.streak += 1;
                } else {
                    self.streak = 0;
                }
                let needed = match self.cfg.mode {
                    EvalMode::Exact => 1,
                    EvalMode::Sampled { .. } => SAMPLED_CONVERGENCE_STREAK,
                };
                if self.streak >= needed {
                    self.converged = true;
                    self.phase = Phase::Done;
                } else if self.iterations >= self.cfg.max_iters {
                    self.phase = Phase::Done;
                } else {
                    self.phase = Phase::Gradient;
                }
            }
            Phase::Done => unreachable!(),
        }
    }

    /// Stops the loop after a task failure that exhausted its retries.
    pub fn fail(&mut self) {
        self.failed = true;
        self.pending = None;
        self.phase = Phase::Done;
    }

    pub fn result(&self) -> VqeResult {
        VqeResult {
            energy_trace: self.trace.clone(),
            final_params: self.theta.clone(),
            final_energy: self.trace.last().copied().unwrap_or(f64::NAN),
            iterations_used: self.iterations,
            circuit_evaluations: self.evaluations,
            converged: self.converged,
            failed: self.failed,
        }
    }
}

/// Route from the driver to quantum execution.
pub trait Submitter {
    /// Energies for every request, in order.
    fn submit(&mut self, cfg: &VqeConfig, batch: &[EvalRequest]) -> Result<Vec<f64>, String>;
}

/// Evaluates batches in-process, in parallel when enabled.
#[derive(Debug, Clone, Copy, Default)]
pub struct LocalSubmitter {
    pub exec: Execution,
}

impl Submitter for LocalSubmitter {
    fn submit(&mut self, cfg: &VqeConfig, batch: &[EvalRequest]) -> Result<Vec<f64>, String> {
        self.exec
            .map(batch, |r| cfg.energy(&r.params, r.index, Execution::Sequential))
            .into_iter()
            .map(|r| r.map_err(|e| e.to_string()))
            .collect()
    }
}

/// Runs the optimization loop, sending every evaluation through `submit`.
/// A submission error ends the loop with `failed` set.
pub fn vqe_driver(cfg: VqeConfig, submit: &mut dyn Submitter) -> Result<VqeResult, String> {
    let mut m = VqeMachine::new(cfg)?;
    while let Some(batch) = m.next_batch() {
        match submit.submit(m.config(), &batch) {
            Ok(values) => m.feed(&values),
            Err(_) => m.fail(),
        }
    }
    Ok(m.result())
}

/// [`vqe_driver`] with in-process evaluation.
pub fn run_vqe(cfg: VqeConfig, exec: Execution) -> Result<VqeResult, String> {
    vqe_driver(cfg, &mut LocalSubmitter { exec })
}

/// Exact parameter-shift gradient at `theta`.
pub fn parameter_shift_gradient(cfg: &VqeConfig, theta: &[f64]) -> Result<Vec<f64>, SimError> {
    let exact = VqeConfig {
        mode: EvalMode::Exact,
        ..cfg.clone()
    };
    (0..theta.len())
        .map(|j| {
            let mut plus = theta.to_vec();
            plus[j] += FRAC_PI_2;
            let mut minus = theta.to_vec();
            minus[j] -= FRAC_PI_2;
            Ok((exact.energy(&plus, 0, Execution::Sequential)?
                - exact.energy(&minus, 0, Execution::Sequential)?)
                / 2.0)
        })
        .collect()
}

/// Greedy product-state guess from the Z-only terms: qubits are decided in
/// order, each taking the bit that lowers the energy of the terms supported
/// on decided qubits (ties keep 0). Returns θ_j = π·b_j for an ry layer.
pub fn warm_start(h: &Observable) -> Vec<f64> {
    let n = h.num_qubits();
    let z_terms: Vec<_> = h
        .terms()
        .iter()
        .filter(|t| t.is_diagonal() && !t.is_identity())
        .collect();
    let mut bits = vec![false; n];
    if z_terms.is_empty() {
        return vec![0.0; n];
    }
    let energy = |bits: &[bool], upto: usize| -> f64 {
        z_terms
            .iter()
            .filter(|t| t.support().all(|(q, _)| q <= upto))
            .map(|t| {
                let odd = t.support().filter(|(q, _)| bits[*q]).count() % 2 == 1;
                if odd {
                    -t.coeff
                } else {
                    t.coeff
                }
            })
            .sum()
    };
    for j in 0..n {
        bits[j] = false;
        let e0 = energy(&bits, j);
        bits[j] = true;
        let e1 = energy(&bits, j);
        bits[j] = e1 < e0;
    }
    bits.into_iter().map(|b| if b { PI } else { 0.0 }).collect()
}
