//! Haar-random SU(4) sampling via the Ginibre ensemble and a phase-corrected
//! QR factorization.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::gate::{det4, Matrix4};

const SINGULAR_TOL: f64 = 1e-12;

/// Draws a 4x4 unitary with determinant 1, distributed according to the
/// Haar measure on SU(4).
///
/// A matrix of i.i.d. standard complex Gaussians is QR-factorized with
/// Householder reflections; each column of Q is rotated by the phase of the
/// matching diagonal entry of R, which makes the result Haar on U(4). The
/// matrix is then divided by a fourth root of its determinant.
pub fn sample_su4<R: Rng + ?Sized>(rng: &mut R) -> Matrix4 {
    loop {
        let ginibre = draw_ginibre(rng);
        let (q, r) = householder_qr(&ginibre);
        if (0..4).any(|i| r[i][i].norm() < SINGULAR_TOL) {
            continue;
        }
        let mut u = q;
        for j in 0..4 {
            let phase = r[j][j] / r[j][j].norm();
            for row in u.iter_mut() {
                row[j] *= phase;
            }
        }
        let det = det4(&u);
        let root = Complex64::from_polar(det.norm().powf(0.25), det.arg() / 4.0);
        for row in u.iter_mut() {
            for v in row.iter_mut() {
                *v /= root;
            }
        }
        return u;
    }
}

fn draw_ginibre<R: Rng + ?Sized>(rng: &mut R) -> Matrix4 {
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    let mut m = [[Complex64::new(0.0, 0.0); 4]; 4];
    for row in m.iter_mut() {
        for v in row.iter_mut() {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *v = Complex64::new(re * scale, im * scale);
        }
    }
    m
}

/// Returns `(Q, R)` with `a = Q R`, Q unitary and R upper triangular.
pub(crate) fn householder_qr(a: &Matrix4) -> (Matrix4, Matrix4) {
    let zero = Complex64::new(0.0, 0.0);
    let mut r = *a;
    let mut q = [[zero; 4]; 4];
    for (i, row) in q.iter_mut().enumerate() {
        row[i] = Complex64::new(1.0, 0.0);
    }

    for k in 0..3 {
        let norm = (k..4).map(|i| r[i][k].norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let x0 = r[k][k];
        let phase = if x0.norm() == 0.0 {
            Complex64::new(1.0, 0.0)
        } else {
            x0 / x0.norm()
        };
        let alpha = -phase * norm;

        let mut v = [zero; 4];
        for i in k..4 {
            v[i] = r[i][k];
        }
        v[k] -= alpha;
        let vnorm2: f64 = v.iter().map(|c| c.norm_sqr()).sum();
        if vnorm2 == 0.0 {
            continue;
        }

        // R <- (I - 2 v v^H / |v|^2) R
        for col in 0..4 {
            let dot: Complex64 = (k..4).map(|i| v[i].conj() * r[i][col]).sum();
            let f = dot * (2.0 / vnorm2);
            for i in k..4 {
                r[i][col] -= v[i] * f;
            }
        }
        // Q <- Q (I - 2 v v^H / |v|^2)
        for row in q.iter_mut() {
            let dot: Complex64 = (k..4).map(|i| row[i] * v[i]).sum();
            let f = dot * (2.0 / vnorm2);
            for i in k..4 {
                row[i] -= f * v[i].conj();
            }
        }
    }
    for (i, row) in r.iter_mut().enumerate() {
        for v in row.iter_mut().take(i) {
            *v = zero;
        }
    }
    (q, r)
}
