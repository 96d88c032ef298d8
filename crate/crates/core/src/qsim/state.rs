use num_complex::Complex64;
use rand::Rng;

use super::SimError;
use crate::qasm::{Gate, Instruction, Op};

const DEGENERATE_NORM: f64 = 1e-12;

/// Full statevector; bit `i` of an amplitude index is qubit `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    n: usize,
    amps: Vec<Complex64>,
}

type Mat2 = [[Complex64; 2]; 2];

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn matrix(gate: Gate) -> Mat2 {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let z = c(0.0, 0.0);
    let one = c(1.0, 0.0);
    match gate {
        Gate::H => [[c(s, 0.0), c(s, 0.0)], [c(s, 0.0), c(-s, 0.0)]],
        Gate::X => [[z, one], [one, z]],
        Gate::Y => [[z, c(0.0, -1.0)], [c(0.0, 1.0), z]],
        Gate::Z => [[one, z], [z, c(-1.0, 0.0)]],
        Gate::Rx(t) => {
            let (sn, cs) = (t / 2.0).sin_cos();
            [[c(cs, 0.0), c(0.0, -sn)], [c(0.0, -sn), c(cs, 0.0)]]
        }
        Gate::Ry(t) => {
            let (sn, cs) = (t / 2.0).sin_cos();
            [[c(cs, 0.0), c(-sn, 0.0)], [c(sn, 0.0), c(cs, 0.0)]]
        }
        Gate::Rz(t) => {
            let (sn, cs) = (t / 2.0).sin_cos();
            [[c(cs, -sn), z], [z, c(cs, sn)]]
        }
    }
}

impl StateVector {
    /// |0…0⟩ on `n` qubits.
    pub fn zero(n: usize) -> Self {
        let mut amps = vec![Complex64::new(0.0, 0.0); 1 << n];
        amps[0] = Complex64::new(1.0, 0.0);
        StateVector { n, amps }
    }

    pub fn from_amplitudes(amps: Vec<Complex64>) -> Self {
        assert!(amps.len().is_power_of_two(), "length must be 2^n");
        let n = amps.len().trailing_zeros() as usize;
        StateVector { n, amps }
    }

    pub fn num_qubits(&self) -> usize {
        self.n
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(Complex64::norm_sqr).sum()
    }

    /// ⟨self|other⟩
    pub fn inner(&self, other: &StateVector) -> Complex64 {
        self.amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn apply_gate(&mut self, gate: Gate, qubit: usize) {
        let m = matrix(gate);
        let mask = 1usize << qubit;
        for i in 0..self.amps.len() {
            if i & mask == 0 {
                let a0 = self.amps[i];
                let a1 = self.amps[i | mask];
                self.amps[i] = m[0][0] * a0 + m[0][1] * a1;
                self.amps[i | mask] = m[1][0] * a0 + m[1][1] * a1;
            }
        }
    }

    pub fn apply_cx(&mut self, control: usize, target: usize) {
        let (cm, tm) = (1usize << control, 1usize << target);
        for i in 0..self.amps.len() {
            if i & cm != 0 && i & tm == 0 {
                self.amps.swap(i, i | tm);
            }
        }
    }

    pub fn prob_one(&self, qubit: usize) -> f64 {
        let mask = 1usize << qubit;
        self.amps
            .iter()
            .enumerate()
            .filter(|(i, _)| i & mask != 0)
            .map(|(_, a)| a.norm_sqr())
            .sum()
    }

    /// Projects `qubit` onto `outcome` and renormalizes.
    pub fn collapse(&mut self, qubit: usize, outcome: bool) -> Result<(), SimError> {
        let mask = 1usize << qubit;
        let mut kept = 0.0;
        for (i, a) in self.amps.iter_mut().enumerate() {
            if (i & mask != 0) == outcome {
                kept += a.norm_sqr();
            } else {
                *a = Complex64::new(0.0, 0.0);
            }
        }
        if kept < DEGENERATE_NORM {
            return Err(SimError::Degenerate { qubit });
        }
        let scale = 1.0 / kept.sqrt();
        self.amps.iter_mut().for_each(|a| *a *= scale);
        Ok(())
    }

    /// Measures with an explicit uniform draw `u ∈ [0,1)`: outcome 1 iff
    /// `u < P(1)`.
    pub fn measure_with(&mut self, qubit: usize, u: f64) -> Result<bool, SimError> {
        let outcome = u < self.prob_one(qubit);
        self.collapse(qubit, outcome)?;
        Ok(outcome)
    }
}

/// Classical bits of one shot; bit `j` of `value` is clbit `j`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClassicalRegister {
    pub value: u64,
}

impl ClassicalRegister {
    pub fn get(&self, j: usize) -> bool {
        self.value >> j & 1 == 1
    }

    pub fn set(&mut self, j: usize, bit: bool) {
        if bit {
            self.value |= 1 << j;
        } else {
            self.value &= !(1 << j);
        }
    }
}

/// Applies one instruction, evaluating its condition against `clbits`
/// first. Measurements draw from `rng`.
pub fn apply<R: Rng + ?Sized>(
    state: &mut StateVector,
    inst: &Instruction,
    clbits: &mut ClassicalRegister,
    rng: &mut R,
) -> Result<(), SimError> {
    if let Some(cond) = inst.condition {
        if clbits.value != cond.value {
            return Ok(());
        }
    }
    match &inst.op {
        Op::Gate { gate, qubit } => state.apply_gate(*gate, *qubit),
        Op::Cx { control, target } => state.apply_cx(*control, *target),
        Op::Measure { qubit, clbit } => {
            let u: f64 = rng.random();
            let bit = state.measure_with(*qubit, u)?;
            clbits.set(*clbit, bit);
        }
        Op::Barrier { .. } => {}
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_1_SQRT_2, PI};

    fn close(a: Complex64, re: f64, im: f64) -> bool {
        (a.re - re).abs() < 1e-12 && (a.im - im).abs() < 1e-12
    }

    #[test]
    fn hadamard_on_zero() {
        let mut s = StateVector::zero(1);
        s.apply_gate(Gate::H, 0);
        assert!(close(s.amplitudes()[0], FRAC_1_SQRT_2, 0.0));
        assert!(close(s.amplitudes()[1], FRAC_1_SQRT_2, 0.0));
    }

    #[test]
    fn ry_rotation_identity() {
        for theta in [0.3, 1.0, 2.5] {
            let mut s = StateVector::zero(1);
            s.apply_gate(Gate::Ry(theta), 0);
            assert!(close(s.amplitudes()[0], (theta / 2.0).cos(), 0.0));
            assert!(close(s.amplitudes()[1], (theta / 2.0).sin(), 0.0));
        }
        let mut s = StateVector::zero(1);
        s.apply_gate(Gate::Ry(PI), 0);
        assert!(s.amplitudes()[0].norm() < 1e-15);
        assert!(close(s.amplitudes()[1], 1.0, 0.0));
    }

    #[test]
    fn measure_forced_to_one() {
        let mut s = StateVector::zero(1);
        s.apply_gate(Gate::H, 0);
        let mut reg = ClassicalRegister::default();
        let bit = s.measure_with(0, 0.1).unwrap();
        reg.set(0, bit);
        assert!(bit);
        assert!(reg.get(0));
        assert!(close(s.amplitudes()[1], 1.0, 0.0));
        assert!((s.norm_sqr() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn impossible_branch_is_degenerate() {
        let mut s = StateVector::zero(1);
        assert_eq!(s.collapse(0, true), Err(SimError::Degenerate { qubit: 0 }));
    }

    #[test]
    fn cx_uses_qubit_zero_as_low_bit() {
        let mut s = StateVector::zero(2);
        s.apply_gate(Gate::X, 0);
        s.apply_cx(0, 1);
        assert!(close(s.amplitudes()[3], 1.0, 0.0));
    }

    #[test]
    fn self_inverse_and_opposite_rotations_restore_state() {
        let mut s = StateVector::zero(3);
        s.apply_gate(Gate::H, 0);
        s.apply_gate(Gate::Ry(0.7), 1);
        s.apply_cx(0, 2);
        let before = s.clone();
        for (g, inv) in [
            (Gate::X, Gate::X),
            (Gate::H, Gate::H),
            (Gate::Rx(0.9), Gate::Rx(-0.9)),
            (Gate::Ry(1.3), Gate::Ry(-1.3)),
            (Gate::Rz(2.1), Gate::Rz(-2.1)),
        ] {
            for q in 0..3 {
                s.apply_gate(g, q);
                s.apply_gate(inv, q);
            }
        }
        for (a, b) in s.amplitudes().iter().zip(before.amplitudes()) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn conditioned_instruction_skipped_when_register_differs() {
        let mut s = StateVector::zero(1);
        let mut reg = ClassicalRegister::default();
        let mut rng = crate::rng::stream(0, &[]);
        apply(&mut s, &Instruction::gate(Gate::X, 0).when(1), &mut reg, &mut rng).unwrap();
        assert!(close(s.amplitudes()[0], 1.0, 0.0));
        reg.set(0, true);
        apply(&mut s, &Instruction::gate(Gate::X, 0).when(1), &mut reg, &mut rng).unwrap();
        assert!(close(s.amplitudes()[1], 1.0, 0.0));
    }
}
