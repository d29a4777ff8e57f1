use std::time::Instant;

use num_complex::Complex64;

use crate::circuit::Circuit;
use crate::error::{SimError, SimResult};
use crate::gate::{Gate, GateKind, Matrix2, Matrix4};
use crate::memory::{memory_estimate, Precision};

/// Dense double-precision state of an `n`-qubit register.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    n_qubits: usize,
    amplitudes: Vec<Complex64>,
}

impl StateVector {
    /// `|0…0⟩` on `n_qubits`.
    pub fn zero(n_qubits: usize) -> Self {
        Self::basis(n_qubits, 0)
    }

    /// The computational basis state `|index⟩`.
    pub fn basis(n_qubits: usize, index: usize) -> Self {
        assert!(n_qubits >= 1, "a state needs at least one qubit");
        let dim = 1usize << n_qubits;
        assert!(index < dim, "basis index {index} out of range");
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); dim];
        amplitudes[index] = Complex64::new(1.0, 0.0);
        Self {
            n_qubits,
            amplitudes,
        }
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn probabilities(&self) -> impl Iterator<Item = f64> + '_ {
        self.amplitudes.iter().map(|a| a.norm_sqr())
    }

    /// `|⟨self|other⟩|²`.
    pub fn fidelity(&self, other: &StateVector) -> f64 {
        assert_eq!(self.n_qubits, other.n_qubits);
        self.amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum::<Complex64>()
            .norm_sqr()
    }

    pub fn apply_circuit(&mut self, circuit: &Circuit) {
        assert_eq!(self.n_qubits, circuit.n_qubits(), "register size mismatch");
        for gate in circuit.gates() {
            self.apply(gate);
        }
    }

    pub fn apply(&mut self, gate: &Gate) {
        let t = gate.targets();
        match gate.kind() {
            GateKind::H | GateKind::Rx => {
                let m = gate.matrix2().expect("single-qubit gate");
                self.apply_1q(&m, t[0]);
            }
            GateKind::Rz => {
                let m = gate.matrix2().expect("single-qubit gate");
                self.apply_diag_1q(m[0][0], m[1][1], t[0]);
            }
            GateKind::Cx => self.apply_cx(t[0], t[1]),
            GateKind::Cp => {
                let theta = gate.angle().expect("cp carries an angle");
                self.apply_cp(t[0], t[1], Complex64::from_polar(1.0, theta));
            }
            GateKind::Swap => self.apply_swap(t[0], t[1]),
            GateKind::U4 => {
                let m = gate.matrix().expect("u4 carries a matrix");
                self.apply_2q(m, t[0], t[1]);
            }
        }
    }

    fn apply_1q(&mut self, m: &Matrix2, q: usize) {
        let stride = 1usize << q;
        for block in self.amplitudes.chunks_exact_mut(stride << 1) {
            let (lo, hi) = block.split_at_mut(stride);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x, y) = (*a, *b);
                *a = m[0][0] * x + m[0][1] * y;
                *b = m[1][0] * x + m[1][1] * y;
            }
        }
    }

    fn apply_diag_1q(&mut self, d0: Complex64, d1: Complex64, q: usize) {
        let stride = 1usize << q;
        for block in self.amplitudes.chunks_exact_mut(stride << 1) {
            let (lo, hi) = block.split_at_mut(stride);
            lo.iter_mut().for_each(|a| *a *= d0);
            hi.iter_mut().for_each(|b| *b *= d1);
        }
    }

    fn apply_cx(&mut self, control: usize, target: usize) {
        let (cbit, tbit) = (1usize << control, 1usize << target);
        for base in pair_bases(self.amplitudes.len(), control, target) {
            self.amplitudes.swap(base | cbit, base | cbit | tbit);
        }
    }

    fn apply_cp(&mut self, a: usize, b: usize, phase: Complex64) {
        let both = (1usize << a) | (1usize << b);
        for base in pair_bases(self.amplitudes.len(), a, b) {
            self.amplitudes[base | both] *= phase;
        }
    }

    fn apply_swap(&mut self, a: usize, b: usize) {
        let (abit, bbit) = (1usize << a, 1usize << b);
        for base in pair_bases(self.amplitudes.len(), a, b) {
            self.amplitudes.swap(base | abit, base | bbit);
        }
    }

    fn apply_2q(&mut self, m: &Matrix4, a: usize, b: usize) {
        let (abit, bbit) = (1usize << a, 1usize << b);
        for base in pair_bases(self.amplitudes.len(), a, b) {
            let idx = [base, base | abit, base | bbit, base | abit | bbit];
            let v = idx.map(|i| self.amplitudes[i]);
            for (row, &i) in m.iter().zip(&idx) {
                self.amplitudes[i] = row[0] * v[0] + row[1] * v[1] + row[2] * v[2] + row[3] * v[3];
            }
        }
    }
}

/// Indices in `0..dim` with zero bits at positions `a` and `b`.
fn pair_bases(dim: usize, a: usize, b: usize) -> impl Iterator<Item = usize> {
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    (0..dim >> 2).map(move |i| insert_zero_bit(insert_zero_bit(i, lo), hi))
}

fn insert_zero_bit(i: usize, bit: usize) -> usize {
    let low = i & ((1usize << bit) - 1);
    ((i >> bit) << (bit + 1)) | low
}

/// Simulates `circuit` from `|0…0⟩`.
///
/// Returns the final state and the wall-clock seconds spent applying gates.
/// Fails with [`SimError::Capacity`] before allocating when the
/// double-precision state would exceed `memory_limit_bytes`.
pub fn run_statevector(
    circuit: &Circuit,
    memory_limit_bytes: u128,
) -> SimResult<(StateVector, f64)> {
    let n = circuit.n_qubits() as u32;
    let estimate = memory_estimate(n, Precision::Double);
    if estimate.bytes > memory_limit_bytes {
        return Err(SimError::Capacity {
            n_qubits: n,
            required_bytes: estimate.bytes,
            available_bytes: memory_limit_bytes,
        });
    }
    let mut state = StateVector::zero(circuit.n_qubits());
    let start = Instant::now();
    state.apply_circuit(circuit);
    let seconds = start.elapsed().as_secs_f64();
    Ok((state, seconds))
}
