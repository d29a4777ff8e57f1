use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;

use num_complex::Complex64;

use crate::error::{SimError, SimResult};

/// Row-major 4x4 complex matrix acting on a two-qubit subspace.
///
/// The local basis index is `b0 + 2 * b1`, where `b0` is the bit of the
/// gate's first target and `b1` the bit of its second target.
pub type Matrix4 = [[Complex64; 4]; 4];

/// Row-major 2x2 complex matrix.
pub type Matrix2 = [[Complex64; 2]; 2];

const UNITARITY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GateKind {
    H,
    Rx,
    Rz,
    /// Controlled NOT, targets `[control, target]`.
    Cx,
    /// Controlled phase `diag(1, 1, 1, e^{iθ})`; symmetric in its targets.
    Cp,
    Swap,
    /// Arbitrary two-qubit unitary carried as a matrix.
    U4,
}

impl GateKind {
    pub fn arity(self) -> usize {
        match self {
            GateKind::H | GateKind::Rx | GateKind::Rz => 1,
            GateKind::Cx | GateKind::Cp | GateKind::Swap | GateKind::U4 => 2,
        }
    }

    fn n_params(self) -> usize {
        match self {
            GateKind::Rx | GateKind::Rz | GateKind::Cp => 1,
            _ => 0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GateKind::H => "h",
            GateKind::Rx => "rx",
            GateKind::Rz => "rz",
            GateKind::Cx => "cx",
            GateKind::Cp => "cp",
            GateKind::Swap => "swap",
            GateKind::U4 => "u4",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gate {
    kind: GateKind,
    targets: Vec<usize>,
    params: Vec<f64>,
    matrix: Option<Box<Matrix4>>,
}

impl Gate {
    pub fn h(q: usize) -> Self {
        Self::plain(GateKind::H, vec![q], vec![])
    }

    /// `RX(θ) = exp(-iθX/2)`.
    pub fn rx(q: usize, theta: f64) -> Self {
        Self::plain(GateKind::Rx, vec![q], vec![theta])
    }

    /// `RZ(θ) = diag(e^{-iθ/2}, e^{iθ/2})`.
    pub fn rz(q: usize, theta: f64) -> Self {
        Self::plain(GateKind::Rz, vec![q], vec![theta])
    }

    pub fn cx(control: usize, target: usize) -> Self {
        Self::plain(GateKind::Cx, vec![control, target], vec![])
    }

    pub fn cp(a: usize, b: usize, theta: f64) -> Self {
        Self::plain(GateKind::Cp, vec![a, b], vec![theta])
    }

    pub fn swap(a: usize, b: usize) -> Self {
        Self::plain(GateKind::Swap, vec![a, b], vec![])
    }

    /// Two-qubit unitary. Fails if `matrix` is not unitary within 1e-10.
    pub fn u4(a: usize, b: usize, matrix: Matrix4) -> SimResult<Self> {
        let err = unitarity_error(&matrix);
        if err > UNITARITY_TOL {
            return Err(SimError::InvalidGate(format!(
                "u4 matrix is not unitary: max|U†U - I| = {err:e}"
            )));
        }
        Ok(Self {
            kind: GateKind::U4,
            targets: vec![a, b],
            params: vec![],
            matrix: Some(Box::new(matrix)),
        })
    }

    fn plain(kind: GateKind, targets: Vec<usize>, params: Vec<f64>) -> Self {
        Self {
            kind,
            targets,
            params,
            matrix: None,
        }
    }

    pub fn kind(&self) -> GateKind {
        self.kind
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn matrix(&self) -> Option<&Matrix4> {
        self.matrix.as_deref()
    }

    /// The single angle of RX/RZ/CP gates.
    pub fn angle(&self) -> Option<f64> {
        self.params.first().copied()
    }

    /// Checks the gate invariants against a register of `n_qubits`.
    pub fn validate(&self, n_qubits: usize) -> SimResult<()> {
        let kind = self.kind;
        if self.targets.len() != kind.arity() {
            return Err(SimError::InvalidGate(format!(
                "{} takes {} target(s), got {}",
                kind.name(),
                kind.arity(),
                self.targets.len()
            )));
        }
        if let Some(&q) = self.targets.iter().find(|&&q| q >= n_qubits) {
            return Err(SimError::InvalidGate(format!(
                "{} target {q} out of range for {n_qubits} qubits",
                kind.name()
            )));
        }
        if self.targets.len() == 2 && self.targets[0] == self.targets[1] {
            return Err(SimError::InvalidGate(format!(
                "{} targets must be distinct, got {:?}",
                kind.name(),
                self.targets
            )));
        }
        if self.params.len() != kind.n_params() {
            return Err(SimError::InvalidGate(format!(
                "{} takes {} angle(s), got {}",
                kind.name(),
                kind.n_params(),
                self.params.len()
            )));
        }
        match (kind, &self.matrix) {
            (GateKind::U4, None) => Err(SimError::InvalidGate("u4 without a matrix".into())),
            (GateKind::U4, Some(m)) if unitarity_error(m) > UNITARITY_TOL => {
                Err(SimError::InvalidGate("u4 matrix is not unitary".into()))
            }
            (GateKind::U4, Some(_)) => Ok(()),
            (_, Some(_)) => Err(SimError::InvalidGate(format!(
                "{} must not carry a matrix",
                kind.name()
            ))),
            (_, None) => Ok(()),
        }
    }

    /// The exact inverse gate: negated angles, adjoint matrix, and
    /// self-inverse gates unchanged.
    pub fn inverse(&self) -> Self {
        let mut inv = self.clone();
        match self.kind {
            GateKind::Rx | GateKind::Rz | GateKind::Cp => {
                inv.params = self.params.iter().map(|t| -t).collect();
            }
            GateKind::U4 => {
                inv.matrix = self.matrix.as_ref().map(|m| Box::new(adjoint4(m)));
            }
            GateKind::H | GateKind::Cx | GateKind::Swap => {}
        }
        inv
    }

    /// The 2x2 matrix of a single-qubit gate.
    pub fn matrix2(&self) -> Option<Matrix2> {
        let c = Complex64::new;
        match self.kind {
            GateKind::H => {
                let h = c(FRAC_1_SQRT_2, 0.0);
                Some([[h, h], [h, -h]])
            }
            GateKind::Rx => {
                let half = self.params[0] / 2.0;
                let (s, co) = half.sin_cos();
                Some([[c(co, 0.0), c(0.0, -s)], [c(0.0, -s), c(co, 0.0)]])
            }
            GateKind::Rz => {
                let half = self.params[0] / 2.0;
                Some([
                    [Complex64::from_polar(1.0, -half), c(0.0, 0.0)],
                    [c(0.0, 0.0), Complex64::from_polar(1.0, half)],
                ])
            }
            _ => None,
        }
    }
}

impl fmt::Display for Gate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.kind.name())?;
        if !self.params.is_empty() {
            let ps: Vec<String> = self.params.iter().map(|p| format!("{p}")).collect();
            write!(f, "({})", ps.join(", "))?;
        }
        let ts: Vec<String> = self.targets.iter().map(|t| t.to_string()).collect();
        write!(f, " {}", ts.join(","))
    }
}

pub fn adjoint4(m: &Matrix4) -> Matrix4 {
    let mut out = [[Complex64::new(0.0, 0.0); 4]; 4];
    for (i, row) in m.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            out[j][i] = v.conj();
        }
    }
    out
}

/// `max |U†U - I|` over all entries.
pub fn unitarity_error(m: &Matrix4) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            let mut acc = Complex64::new(0.0, 0.0);
            for row in m.iter() {
                acc += row[i].conj() * row[j];
            }
            if i == j {
                acc -= 1.0;
            }
            worst = worst.max(acc.norm());
        }
    }
    worst
}

/// Determinant of a 4x4 complex matrix by Gaussian elimination with partial
/// pivoting.
pub fn det4(m: &Matrix4) -> Complex64 {
    let mut a = *m;
    let mut det = Complex64::new(1.0, 0.0);
    for col in 0..4 {
        let pivot = (col..4)
            .max_by(|&x, &y| a[x][col].norm().total_cmp(&a[y][col].norm()))
            .unwrap_or(col);
        if a[pivot][col].norm() == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        if pivot != col {
            a.swap(pivot, col);
            det = -det;
        }
        det *= a[col][col];
        for row in col + 1..4 {
            let factor = a[row][col] / a[col][col];
            for k in col..4 {
                let sub = factor * a[col][k];
                a[row][k] -= sub;
            }
        }
    }
    det
}
