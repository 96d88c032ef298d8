//! Statevector simulator with mid-circuit measurement and classical
//! conditioning.
//!
//! Shot `i` of a run draws from the rng stream `(seed, i)`, so shot loops
//! may execute on any number of threads and still return identical counts.

mod observable;
mod state;

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;

pub use observable::{Observable, ObservableError, Pauli, PauliTerm};
pub use state::{apply, ClassicalRegister, StateVector};

use crate::par::Execution;
use crate::qasm::{Circuit, CircuitError, Gate, Instruction, MAX_CLBITS};
use crate::rng;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("measurement of qubit {qubit} hit a zero-probability branch")]
    Degenerate { qubit: usize },
    #[error("exact expectation requires a measurement-free circuit")]
    MeasurementInExactMode,
    #[error("observable acts on {observable} qubits but the circuit has {circuit}")]
    WidthMismatch { observable: usize, circuit: usize },
    #[error("expectation value has imaginary residue {0:e}")]
    ComplexExpectation(f64),
    #[error("shots must be at least 1")]
    ZeroShots,
    #[error("basis measurement needs {0} classical bits, more than the register supports")]
    TooManyClbits(usize),
    #[error(transparent)]
    Circuit(#[from] CircuitError),
}

/// Histogram of classical register values over a run.
///
/// Keys are bit strings of length `num_clbits`; character `j` is clbit `j`.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ShotResult {
    pub counts: BTreeMap<String, u64>,
    pub shots: u64,
}

impl ShotResult {
    pub fn frequency(&self, key: &str) -> f64 {
        self.counts.get(key).copied().unwrap_or(0) as f64 / self.shots as f64
    }
}

pub fn bitstring(value: u64, width: usize) -> String {
    (0..width)
        .map(|j| if value >> j & 1 == 1 { '1' } else { '0' })
        .collect()
}

/// A circuit split at its first measurement or conditioned instruction.
/// The deterministic prefix is simulated once and cloned per shot.
struct Prepared<'a> {
    prefix_state: StateVector,
    rest: &'a [Instruction],
}

fn prepare(c: &Circuit) -> Result<Prepared<'_>, SimError> {
    c.validate()?;
    let split = c
        .instructions
        .iter()
        .position(|i| i.is_measure() || i.condition.is_some())
        .unwrap_or(c.instructions.len());
    let mut state = StateVector::zero(c.num_qubits);
    let mut reg = ClassicalRegister::default();
    let mut unused = rng::stream(0, &[]);
    for inst in &c.instructions[..split] {
        apply(&mut state, inst, &mut reg, &mut unused)?;
    }
    Ok(Prepared {
        prefix_state: state,
        rest: &c.instructions[split..],
    })
}

impl Prepared<'_> {
    fn shot(&self, seed: u64, index: u64) -> Result<u64, SimError> {
        let mut state = self.prefix_state.clone();
        let mut reg = ClassicalRegister::default();
        let mut rng = rng::stream(seed, &[index]);
        for inst in self.rest {
            apply(&mut state, inst, &mut reg, &mut rng)?;
        }
        Ok(reg.value)
    }
}

/// Final classical register value of every shot, in shot order.
pub fn run_registers(
    c: &Circuit,
    shots: u64,
    seed: u64,
    exec: Execution,
) -> Result<Vec<u64>, SimError> {
    if shots == 0 {
        return Err(SimError::ZeroShots);
    }
    let prepared = prepare(c)?;
    exec.map_range(shots, |i| prepared.shot(seed, i))
        .into_iter()
        .collect()
}

/// Executes `c` once per shot from |0…0⟩.
pub fn run(c: &Circuit, shots: u64, seed: u64) -> Result<ShotResult, SimError> {
    run_with(c, shots, seed, Execution::default())
}

pub fn run_with(
    c: &Circuit,
    shots: u64,
    seed: u64,
    exec: Execution,
) -> Result<ShotResult, SimError> {
    let values = run_registers(c, shots, seed, exec)?;
    let mut counts = BTreeMap::new();
    for v in values {
        *counts.entry(bitstring(v, c.num_clbits)).or_insert(0) += 1;
    }
    Ok(ShotResult { counts, shots })
}

/// Final statevector of a measurement-free circuit.
pub fn final_state(c: &Circuit) -> Result<StateVector, SimError> {
    if c.has_measurements() {
        return Err(SimError::MeasurementInExactMode);
    }
    c.validate()?;
    let mut state = StateVector::zero(c.num_qubits);
    let mut reg = ClassicalRegister::default();
    let mut unused = rng::stream(0, &[]);
    for inst in &c.instructions {
        apply(&mut state, inst, &mut reg, &mut unused)?;
    }
    Ok(state)
}

/// Exact ⟨ψ|H|ψ⟩ for the final state of a measurement-free circuit.
pub fn expectation(c: &Circuit, obs: &Observable) -> Result<f64, SimError> {
    if obs.num_qubits() != c.num_qubits {
        return Err(SimError::WidthMismatch {
            observable: obs.num_qubits(),
            circuit: c.num_qubits,
        });
    }
    let psi = final_state(c)?;
    let v = obs.expectation_complex(&psi);
    if v.im.abs() > 1e-9 {
        return Err(SimError::ComplexExpectation(v.im));
    }
    Ok(v.re)
}

/// `c` followed by the basis change for `term` and a measurement of each
/// qubit in its support into fresh classical bits. Returns the circuit and
/// the mask of the new bits. X is measured after `h`, Y after
/// `rz(-pi/2); h`.
pub fn basis_circuit(c: &Circuit, term: &PauliTerm) -> Result<(Circuit, u64), SimError> {
    let support: Vec<(usize, Pauli)> = term.support().collect();
    let width = c.num_clbits + support.len();
    if width > MAX_CLBITS {
        return Err(SimError::TooManyClbits(width));
    }
    let mut out = c.clone();
    out.num_clbits = width;
    let mut mask = 0u64;
    for (k, (q, p)) in support.into_iter().enumerate() {
        match p {
            Pauli::X => out.push(Instruction::gate(Gate::H, q)),
            Pauli::Y => {
                out.push(Instruction::gate(Gate::Rz(-FRAC_PI_2), q));
                out.push(Instruction::gate(Gate::H, q));
            }
            Pauli::Z | Pauli::I => {}
        }
        let bit = c.num_clbits + k;
        out.push(Instruction::measure(q, bit));
        mask |= 1 << bit;
    }
    Ok((out, mask))
}

/// Shot-based estimate Σ_k coeff_k · mean(±1 parity of term k).
pub fn sample_expectation(
    c: &Circuit,
    obs: &Observable,
    shots: u64,
    seed: u64,
) -> Result<f64, SimError> {
    sample_expectation_with(c, obs, shots, seed, Execution::default())
}

pub fn sample_expectation_with(
    c: &Circuit,
    obs: &Observable,
    shots: u64,
    seed: u64,
    exec: Execution,
) -> Result<f64, SimError> {
    if obs.num_qubits() != c.num_qubits {
        return Err(SimError::WidthMismatch {
            observable: obs.num_qubits(),
            circuit: c.num_qubits,
        });
    }
    if shots == 0 {
        return Err(SimError::ZeroShots);
    }
    let mut total = 0.0;
    for (k, term) in obs.terms().iter().enumerate() {
        if term.is_identity() {
            total += term.coeff;
            continue;
        }
        let (circuit, mask) = basis_circuit(c, term)?;
        let prepared = prepare(&circuit)?;
        let term_seed = rng::mix(seed, &[k as u64]);
        let sum: Result<i64, SimError> = exec.map_reduce(
            shots,
            || Ok(0i64),
            |i| {
                prepared
                    .shot(term_seed, i)
                    .map(|v| if (v & mask).count_ones() % 2 == 0 { 1 } else { -1 })
            },
            |a, b| Ok(a? + b?),
        );
        total += term.coeff * sum? as f64 / shots as f64;
    }
    Ok(total)
}
