use std::fmt;
use std::str::FromStr;

use crate::qasm::Gate;

use super::StateVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    fn from_char(c: char) -> Option<Pauli> {
        Some(match c {
            'I' => Pauli::I,
            'X' => Pauli::X,
            'Y' => Pauli::Y,
            'Z' => Pauli::Z,
            _ => return None,
        })
    }

    fn as_char(self) -> char {
        match self {
            Pauli::I => 'I',
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        }
    }
}

/// `coeff · P_0 ⊗ … ⊗ P_{n-1}`; character `j` of the string acts on qubit `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct PauliTerm {
    pub coeff: f64,
    pub paulis: Vec<Pauli>,
}

impl PauliTerm {
    pub fn new(coeff: f64, s: &str) -> Result<Self, ObservableError> {
        let paulis = s
            .chars()
            .map(|c| Pauli::from_char(c).ok_or(ObservableError::BadPauli(c)))
            .collect::<Result<Vec<_>, _>>()?;
        if paulis.is_empty() {
            return Err(ObservableError::Empty);
        }
        Ok(PauliTerm { coeff, paulis })
    }

    pub fn is_identity(&self) -> bool {
        self.paulis.iter().all(|p| *p == Pauli::I)
    }

    /// Qubits carrying a non-identity factor.
    pub fn support(&self) -> impl Iterator<Item = (usize, Pauli)> + '_ {
        self.paulis
            .iter()
            .enumerate()
            .filter(|(_, p)| **p != Pauli::I)
            .map(|(q, p)| (q, *p))
    }

    pub fn is_diagonal(&self) -> bool {
        self.paulis.iter().all(|p| matches!(p, Pauli::I | Pauli::Z))
    }

    pub fn pauli_string(&self) -> String {
        self.paulis.iter().map(|p| p.as_char()).collect()
    }

    /// P|ψ⟩, applying each factor as a gate.
    pub fn apply_to(&self, state: &StateVector) -> StateVector {
        let mut out = state.clone();
        for (q, p) in self.support() {
            let g = match p {
                Pauli::X => Gate::X,
                Pauli::Y => Gate::Y,
                Pauli::Z => Gate::Z,
                Pauli::I => unreachable!("support skips identities"),
            };
            out.apply_gate(g, q);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ObservableError {
    #[error("observable needs at least one term")]
    NoTerms,
    #[error("empty Pauli string")]
    Empty,
    #[error("invalid Pauli character '{0}'")]
    BadPauli(char),
    #[error("Pauli strings have mixed lengths ({0} vs {1})")]
    MixedLengths(usize, usize),
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
}

/// Hermitian operator as a real-weighted sum of Pauli strings.
#[derive(Debug, Clone, PartialEq)]
pub struct Observable {
    terms: Vec<PauliTerm>,
}

impl Observable {
    pub fn new(terms: Vec<PauliTerm>) -> Result<Self, ObservableError> {
        let first = terms.first().ok_or(ObservableError::NoTerms)?.paulis.len();
        for t in &terms {
            if t.paulis.len() != first {
                return Err(ObservableError::MixedLengths(first, t.paulis.len()));
            }
        }
        Ok(Observable { terms })
    }

    pub fn from_pairs(pairs: &[(f64, &str)]) -> Result<Self, ObservableError> {
        let terms = pairs
            .iter()
            .map(|(c, s)| PauliTerm::new(*c, s))
            .collect::<Result<Vec<_>, _>>()?;
        Observable::new(terms)
    }

    pub fn terms(&self) -> &[PauliTerm] {
        &self.terms
    }

    pub fn num_qubits(&self) -> usize {
        self.terms[0].paulis.len()
    }

    /// Parses the line format `<coefficient> <pauli-string>` with `#`
    /// comments and blank lines.
    pub fn parse(text: &str) -> Result<Self, ObservableError> {
        let mut terms = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |message: String| ObservableError::Line {
                line: idx + 1,
                message,
            };
            let mut parts = line.split_whitespace();
            let (coeff, pauli) = match (parts.next(), parts.next(), parts.next()) {
                (Some(c), Some(p), None) => (c, p),
                _ => return Err(bad("expected '<coefficient> <pauli-string>'".into())),
            };
            let coeff: f64 = coeff
                .parse()
                .ok()
                .filter(|c: &f64| c.is_finite())
                .ok_or_else(|| bad(format!("invalid coefficient '{coeff}'")))?;
            terms.push(PauliTerm::new(coeff, pauli).map_err(|e| bad(e.to_string()))?);
        }
        Observable::new(terms)
    }

    /// ⟨ψ|H|ψ⟩ as a complex number; the imaginary part is round-off.
    pub fn expectation_complex(&self, psi: &StateVector) -> num_complex::Complex64 {
        self.terms
            .iter()
            .map(|t| {
                if t.is_identity() {
                    num_complex::Complex64::new(t.coeff, 0.0) * psi.norm_sqr()
                } else {
                    psi.inner(&t.apply_to(psi)) * t.coeff
                }
            })
            .sum()
    }
}

impl FromStr for Observable {
    type Err = ObservableError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Observable::parse(s)
    }
}

impl fmt::Display for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for t in &self.terms {
            writeln!(f, "{} {}", t.coeff, t.pauli_string())?;
        }
        Ok(())
    }
}
