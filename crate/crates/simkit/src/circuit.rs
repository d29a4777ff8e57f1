use std::f64::consts::{PI, TAU};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{SimError, SimResult};
use crate::gate::Gate;
use crate::haar::sample_su4;

/// Largest register `build_qft` will construct.
pub const QFT_MAX_QUBITS: usize = 30;

#[derive(Debug, Clone, PartialEq)]
pub struct Circuit {
    n_qubits: usize,
    gates: Vec<Gate>,
    label: String,
}

impl Circuit {
    pub fn new(n_qubits: usize, label: impl Into<String>) -> SimResult<Self> {
        if n_qubits == 0 {
            return Err(SimError::Domain("a circuit needs at least one qubit".into()));
        }
        Ok(Self {
            n_qubits,
            gates: Vec::new(),
            label: label.into(),
        })
    }

    pub fn push(&mut self, gate: Gate) -> SimResult<()> {
        gate.validate(self.n_qubits)?;
        self.gates.push(gate);
        Ok(())
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn gate_count(&self) -> usize {
        self.gates.len()
    }

    /// Gates in reverse order, each replaced by its inverse.
    pub fn inverse(&self) -> Self {
        Self {
            n_qubits: self.n_qubits,
            gates: self.gates.iter().rev().map(Gate::inverse).collect(),
            label: format!("{}_inverse", self.label),
        }
    }

    /// Appends all gates of `other`, which must act on the same register.
    pub fn append(&mut self, other: &Circuit) -> SimResult<()> {
        if other.n_qubits != self.n_qubits {
            return Err(SimError::Domain(format!(
                "cannot append a {}-qubit circuit to a {}-qubit circuit",
                other.n_qubits, self.n_qubits
            )));
        }
        self.gates.extend(other.gates.iter().cloned());
        Ok(())
    }
}

/// Quantum Fourier transform on `n` qubits, output in natural order.
///
/// For each qubit `j` from `n-1` down to `0`: `H(j)`, then `CP(π/2^(j-k))`
/// between `k` and `j` for every `k < j`. Finally `floor(n/2)` swaps reverse
/// the register so the circuit's matrix is the DFT matrix itself.
pub fn build_qft(n: usize) -> SimResult<Circuit> {
    if !(1..=QFT_MAX_QUBITS).contains(&n) {
        return Err(SimError::Domain(format!(
            "qft needs 1 <= n <= {QFT_MAX_QUBITS}, got n={n}"
        )));
    }
    let mut c = Circuit::new(n, "qft")?;
    for j in (0..n).rev() {
        c.push(Gate::h(j))?;
        for k in (0..j).rev() {
            let distance = (j - k) as i32;
            c.push(Gate::cp(k, j, PI / 2f64.powi(distance)))?;
        }
    }
    for i in 0..n / 2 {
        c.push(Gate::swap(i, n - 1 - i))?;
    }
    Ok(c)
}

/// Quantum volume circuit: `d` layers, each a seeded random pairing of the
/// qubits with one Haar-random SU(4) per pair.
pub fn build_qv(n: usize, d: usize, seed: u64) -> SimResult<Circuit> {
    if n < 2 {
        return Err(SimError::Domain(format!("qv needs n >= 2, got n={n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = Circuit::new(n, "qv")?;
    let mut perm: Vec<usize> = (0..n).collect();
    for _ in 0..d {
        perm.shuffle(&mut rng);
        for pair in perm.chunks_exact(2) {
            let u = sample_su4(&mut rng);
            c.push(Gate::u4(pair[0], pair[1], u)?)?;
        }
    }
    Ok(c)
}

/// QAOA ansatz for Max-Cut on the `n`-cycle with `p` layers and angles drawn
/// uniformly from `[0, 2π)`. Draw order is `γ_1, β_1, γ_2, β_2, ...`.
pub fn build_qaoa_maxcut_ring(n: usize, p: usize, seed: u64) -> SimResult<Circuit> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let angles: Vec<(f64, f64)> = (0..p)
        .map(|_| (rng.gen_range(0.0..TAU), rng.gen_range(0.0..TAU)))
        .collect();
    build_qaoa_with_angles(n, &angles)
}

/// QAOA ring ansatz with explicit `(γ, β)` per layer.
///
/// Each cost term `exp(-iγ Z_i Z_j)` is emitted as `CX(i,j) RZ(2γ, j)
/// CX(i,j)`; each mixer as `RX(2β)` on every qubit.
pub fn build_qaoa_with_angles(n: usize, angles: &[(f64, f64)]) -> SimResult<Circuit> {
    if n < 3 {
        return Err(SimError::Domain(format!(
            "qaoa on a ring needs n >= 3, got n={n}"
        )));
    }
    let mut c = Circuit::new(n, "qaoa")?;
    for q in 0..n {
        c.push(Gate::h(q))?;
    }
    for &(gamma, beta) in angles {
        for i in 0..n {
            let j = (i + 1) % n;
            c.push(Gate::cx(i, j))?;
            c.push(Gate::rz(j, 2.0 * gamma))?;
            c.push(Gate::cx(i, j))?;
        }
        for q in 0..n {
            c.push(Gate::rx(q, 2.0 * beta))?;
        }
    }
    Ok(c)
}
