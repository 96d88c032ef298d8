//! OpenQASM 2.0 subset: circuit IR, parser, canonical printer and depth.
//!
//! Accepted grammar: `OPENQASM 2.0;` header, optional `include "qelib1.inc";`,
//! one `qreg`, at most one `creg`, the gates `h x y z rx ry rz cx`,
//! `measure q[i] -> c[j];`, `barrier`, `if(c==v) <gate>` and `//` comments.
//! Angles are a decimal literal, `pi` or `pi/k`, optionally negated.

mod emit;
mod parse;

use std::fmt;

pub use emit::{emit_qasm, format_angle};
pub use parse::{parse_qasm, parse_qasm_named};

/// Statevector capacity bound; 2^20 complex doubles is 16 MiB.
pub const MAX_QUBITS: usize = 20;
/// Classical registers are compared as a single `u64` value.
pub const MAX_CLBITS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gate {
    H,
    X,
    Y,
    Z,
    Rx(f64),
    Ry(f64),
    Rz(f64),
}

impl Gate {
    pub fn name(&self) -> &'static str {
        match self {
            Gate::H => "h",
            Gate::X => "x",
            Gate::Y => "y",
            Gate::Z => "z",
            Gate::Rx(_) => "rx",
            Gate::Ry(_) => "ry",
            Gate::Rz(_) => "rz",
        }
    }

    pub fn angle(&self) -> Option<f64> {
        match *self {
            Gate::Rx(t) | Gate::Ry(t) | Gate::Rz(t) => Some(t),
            _ => None,
        }
    }

    /// Same gate kind with a new angle; fixed gates are returned unchanged.
    pub fn with_angle(&self, theta: f64) -> Gate {
        match self {
            Gate::Rx(_) => Gate::Rx(theta),
            Gate::Ry(_) => Gate::Ry(theta),
            Gate::Rz(_) => Gate::Rz(theta),
            g => *g,
        }
    }

    pub fn is_rotation(&self) -> bool {
        self.angle().is_some()
    }

    pub(crate) fn from_name(name: &str, angle: Option<f64>) -> Option<Gate> {
        Some(match (name, angle) {
            ("h", None) => Gate::H,
            ("x", None) => Gate::X,
            ("y", None) => Gate::Y,
            ("z", None) => Gate::Z,
            ("rx", Some(t)) => Gate::Rx(t),
            ("ry", Some(t)) => Gate::Ry(t),
            ("rz", Some(t)) => Gate::Rz(t),
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Gate { gate: Gate, qubit: usize },
    Cx { control: usize, target: usize },
    Measure { qubit: usize, clbit: usize },
    Barrier { qubits: Vec<usize> },
}

/// Whole-register equality test `if(c==value)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Condition {
    pub value: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instruction {
    pub op: Op,
    pub condition: Option<Condition>,
}

impl Instruction {
    pub fn gate(gate: Gate, qubit: usize) -> Self {
        Instruction {
            op: Op::Gate { gate, qubit },
            condition: None,
        }
    }

    pub fn cx(control: usize, target: usize) -> Self {
        Instruction {
            op: Op::Cx { control, target },
            condition: None,
        }
    }

    pub fn measure(qubit: usize, clbit: usize) -> Self {
        Instruction {
            op: Op::Measure { qubit, clbit },
            condition: None,
        }
    }

    pub fn barrier(qubits: Vec<usize>) -> Self {
        Instruction {
            op: Op::Barrier { qubits },
            condition: None,
        }
    }

    pub fn when(mut self, value: u64) -> Self {
        self.condition = Some(Condition { value });
        self
    }

    pub fn qubits(&self) -> Vec<usize> {
        match &self.op {
            Op::Gate { qubit, .. } | Op::Measure { qubit, .. } => vec![*qubit],
            Op::Cx { control, target } => vec![*control, *target],
            Op::Barrier { qubits } => qubits.clone(),
        }
    }

    pub fn is_measure(&self) -> bool {
        matches!(self.op, Op::Measure { .. })
    }

    pub fn is_barrier(&self) -> bool {
        matches!(self.op, Op::Barrier { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CircuitError {
    #[error("circuit needs between 1 and {MAX_QUBITS} qubits, got {0}")]
    QubitCount(usize),
    #[error("circuit supports at most {MAX_CLBITS} classical bits, got {0}")]
    ClbitCount(usize),
    #[error("instruction {index}: qubit index {qubit} out of range")]
    QubitOutOfRange { index: usize, qubit: usize },
    #[error("instruction {index}: classical bit {clbit} out of range")]
    ClbitOutOfRange { index: usize, clbit: usize },
    #[error("instruction {index}: cx control and target must differ")]
    SameQubits { index: usize },
    #[error("instruction {index}: condition needs a classical register")]
    ConditionWithoutRegister { index: usize },
    #[error("instruction {index}: condition value {value} does not fit the register")]
    ConditionValue { index: usize, value: u64 },
    #[error("instruction {index}: only gates may be conditioned")]
    ConditionOnNonGate { index: usize },
}

/// A self-contained quantum computation.
#[derive(Debug, Clone, PartialEq)]
pub struct Circuit {
    pub name: String,
    pub num_qubits: usize,
    pub num_clbits: usize,
    pub instructions: Vec<Instruction>,
}

impl Circuit {
    pub fn new(name: impl Into<String>, num_qubits: usize, num_clbits: usize) -> Self {
        Circuit {
            name: name.into(),
            num_qubits,
            num_clbits,
            instructions: Vec::new(),
        }
    }

    pub fn with(mut self, inst: Instruction) -> Self {
        self.instructions.push(inst);
        self
    }

    pub fn push(&mut self, inst: Instruction) {
        self.instructions.push(inst);
    }

    pub fn validate(&self) -> Result<(), CircuitError> {
        if self.num_qubits == 0 || self.num_qubits > MAX_QUBITS {
            return Err(CircuitError::QubitCount(self.num_qubits));
        }
        if self.num_clbits > MAX_CLBITS {
            return Err(CircuitError::ClbitCount(self.num_clbits));
        }
        for (index, inst) in self.instructions.iter().enumerate() {
            for q in inst.qubits() {
                if q >= self.num_qubits {
                    return Err(CircuitError::QubitOutOfRange { index, qubit: q });
                }
            }
            match &inst.op {
                Op::Cx { control, target } if control == target => {
                    return Err(CircuitError::SameQubits { index });
                }
                Op::Measure { clbit, .. } if *clbit >= self.num_clbits => {
                    return Err(CircuitError::ClbitOutOfRange {
                        index,
                        clbit: *clbit,
                    });
                }
                _ => {}
            }
            if let Some(cond) = inst.condition {
                if !matches!(inst.op, Op::Gate { .. } | Op::Cx { .. }) {
                    return Err(CircuitError::ConditionOnNonGate { index });
                }
                if self.num_clbits == 0 {
                    return Err(CircuitError::ConditionWithoutRegister { index });
                }
                if self.num_clbits < 64 && cond.value >> self.num_clbits != 0 {
                    return Err(CircuitError::ConditionValue {
                        index,
                        value: cond.value,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn has_measurements(&self) -> bool {
        self.instructions.iter().any(Instruction::is_measure)
    }

    pub fn conditioned_count(&self) -> usize {
        self.instructions
            .iter()
            .filter(|i| i.condition.is_some())
            .count()
    }

    /// Compares everything except the name; angles within `angle_tol`.
    pub fn structurally_eq(&self, other: &Circuit, angle_tol: f64) -> bool {
        if self.num_qubits != other.num_qubits
            || self.num_clbits != other.num_clbits
            || self.instructions.len() != other.instructions.len()
        {
            return false;
        }
        self.instructions
            .iter()
            .zip(&other.instructions)
            .all(|(a, b)| instruction_eq(a, b, angle_tol))
    }

    /// Greedy layering: each instruction lands one layer above the deepest
    /// qubit it touches. Conditioned instructions occupy a layer on every
    /// qubit; barriers align all qubits without adding a layer.
    pub fn depth(&self) -> usize {
        let mut level = vec![0usize; self.num_qubits];
        for inst in &self.instructions {
            if inst.is_barrier() {
                let top = level.iter().copied().max().unwrap_or(0);
                level.iter_mut().for_each(|l| *l = top);
                continue;
            }
            let touched: Vec<usize> = if inst.condition.is_some() {
                (0..self.num_qubits).collect()
            } else {
                inst.qubits()
            };
            let next = touched.iter().map(|&q| level[q]).max().unwrap_or(0) + 1;
            for q in touched {
                level[q] = next;
            }
        }
        level.into_iter().max().unwrap_or(0)
    }
}

fn instruction_eq(a: &Instruction, b: &Instruction, tol: f64) -> bool {
    if a.condition != b.condition {
        return false;
    }
    match (&a.op, &b.op) {
        (Op::Gate { gate: ga, qubit: qa }, Op::Gate { gate: gb, qubit: qb }) => {
            qa == qb
                && ga.name() == gb.name()
                && match (ga.angle(), gb.angle()) {
                    (Some(x), Some(y)) => (x - y).abs() <= tol * x.abs().max(1.0),
                    (None, None) => true,
                    _ => false,
                }
        }
        _ => a.op == b.op,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Error => "error",
            Severity::Warning => "warning",
        })
    }
}

/// Parser message anchored at a 1-based line and column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseDiagnostic {
    pub line: usize,
    pub column: usize,
    pub message: String,
    pub severity: Severity,
}

impl fmt::Display for ParseDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}: {}: {}",
            self.line, self.column, self.severity, self.message
        )
    }
}
