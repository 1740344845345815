//! Independent reference computations used as test oracles.

use num_complex::Complex64;

use cauchy_fwi::grid::{BoundaryKind, Face, Grid};

type C = Complex64;

/// Dense Gaussian elimination with partial pivoting.
pub fn dense_solve(a: &[Vec<C>], b: &[C]) -> Vec<C> {
    let n = b.len();
    let mut m: Vec<Vec<C>> = a.to_vec();
    let mut x = b.to_vec();
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| m[i][k].norm().total_cmp(&m[j][k].norm())).unwrap();
        m.swap(k, p);
        x.swap(k, p);
        for i in k + 1..n {
            let f = m[i][k] / m[k][k];
            if f == C::new(0.0, 0.0) {
                continue;
            }
            for j in k..n {
                let t = m[k][j];
                m[i][j] -= f * t;
            }
            let t = x[k];
            x[i] -= f * t;
        }
    }
    for k in (0..n).rev() {
        let mut s = x[k];
        for j in k + 1..n {
            s -= m[k][j] * x[j];
        }
        x[k] = s / m[k][k];
    }
    x
}

/// The discrete operator built edge by edge from the quadratic form
///   E(u) = Σ_edges w_e (u_p − u_q)² − Σ_nodes μ_p ω²/c_p² u_p²
///          − i k0 Σ_{absorbing faces} σ_p u_p²,
/// with `w_e = V α_e / h_d²`, `μ_p` the nodal control-volume fraction,
/// `σ_p` the face-area fraction times `V/h_d`, and `A = −∂²E/(2V)`.
/// Free-surface nodes become identity rows with their columns removed.
pub fn edge_assembly(grid: &Grid, speed: &[f64], omega: f64, k0: f64) -> Vec<Vec<C>> {
    let n = grid.n_nodes();
    let dim = grid.dim();
    let v: f64 = grid.spacing()[..dim].iter().product();
    let frac = |m: [usize; 3], d: usize| {
        if m[d] == 0 || m[d] == grid.nodes()[d] - 1 {
            0.5
        } else {
            1.0
        }
    };
    let mut a = vec![vec![C::new(0.0, 0.0); n]; n];
    for p in 0..n {
        let m = grid.multi_index(p);
        // edges to the next node along each axis
        for d in 0..dim {
            if m[d] + 1 < grid.nodes()[d] {
                let mut mq = m;
                mq[d] += 1;
                let q = grid.index(mq);
                let alpha: f64 = (0..dim).filter(|&e| e != d).map(|e| frac(m, e)).product();
                let w = v * alpha / grid.spacing()[d].powi(2);
                // −∂²/(2V) of w (u_p − u_q)²
                a[p][p] -= C::new(w / v, 0.0);
                a[q][q] -= C::new(w / v, 0.0);
                a[p][q] += C::new(w / v, 0.0);
                a[q][p] += C::new(w / v, 0.0);
            }
        }
        let mu: f64 = (0..dim).map(|d| frac(m, d)).product();
        a[p][p] += C::new(mu * omega * omega / (speed[p] * speed[p]), 0.0);
        for d in 0..dim {
            for upper in [false, true] {
                let face = Face { axis: d, upper };
                if grid.on_face(p, face) && grid.face_kind(face) == BoundaryKind::Absorbing {
                    let sigma: f64 = (0..dim).filter(|&e| e != d).map(|e| frac(m, e)).product();
                    a[p][p] += C::new(0.0, k0 * sigma / grid.spacing()[d]);
                }
            }
        }
    }
    for p in 0..n {
        if grid.is_dirichlet(p) {
            for q in 0..n {
                a[p][q] = C::new(0.0, 0.0);
                a[q][p] = C::new(0.0, 0.0);
            }
            a[p][p] = C::new(1.0, 0.0);
        }
    }
    a
}

/// Bessel J0 and Y0 by their power series (adequate for x ≲ 20).
pub fn bessel_j0_y0(x: f64) -> (f64, f64) {
    const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut harmonic = 0.0;
    let mut j0 = 1.0;
    let mut tail = 0.0;
    for k in 1..200 {
        term *= -q / (k * k) as f64;
        harmonic += 1.0 / k as f64;
        j0 += term;
        tail -= harmonic * term;
        if term.abs() < 1e-18 {
            break;
        }
    }
    let y0 = 2.0 / std::f64::consts::PI * ((0.5 * x).ln() + EULER_GAMMA) * j0
        + 2.0 / std::f64::consts::PI * tail;
    (j0, y0)
}

/// Outgoing 2D free-space Green's function of `Δ + k²` with a `−δ` source:
/// `(i/4) H0⁽¹⁾(k r)`.
pub fn free_space_green_2d(k: f64, r: f64) -> C {
    let (j0, y0) = bessel_j0_y0(k * r);
    C::new(0.0, 0.25) * C::new(j0, y0)
}
