//! Discrete mixed-boundary Helmholtz problem
//! `Δu + k² c⁻² u = −δ(· − y)`, zero pressure on the sea surface and the
//! first-order absorbing condition `∂_ν u − i k₀ u = 0` on the other faces.
//!
//! Every non-Dirichlet node carries a flux balance over its dual cell,
//! divided by the full cell volume: interior rows reduce to the centered
//! 5-point (7-point in 3D) stencil plus `k² c⁻²` on the diagonal, while
//! boundary rows see half-cells and pick up `i k₀ |face| / |cell|` from the
//! absorbing condition. Dirichlet unknowns are eliminated symmetrically, so
//! the matrix is complex symmetric (`A = Aᵀ`).

mod banded;

use std::f64::consts::PI;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, OnceLock};

use num_complex::Complex64;
use rayon::prelude::*;

pub use banded::BandedLu;

use crate::acquisition::ReceiverArray;
use crate::error::{FwiError, Result};
use crate::grid::{BoundaryKind, Grid, NodalField};

/// Minimum number of grid points per wavelength accepted by [`assemble`].
pub const MIN_POINTS_PER_WAVELENGTH: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhysicsConfig {
    pub freq_hz: f64,
    /// Known water speed `c₀` (m/s).
    pub c_water: f64,
}

impl PhysicsConfig {
    pub fn new(freq_hz: f64, c_water: f64) -> Result<Self> {
        if !(freq_hz > 0.0 && freq_hz.is_finite()) {
            return Err(FwiError::Config(format!("frequency must be positive, got {freq_hz}")));
        }
        if !(c_water > 0.0 && c_water.is_finite()) {
            return Err(FwiError::Config(format!("water speed must be positive, got {c_water}")));
        }
        Ok(PhysicsConfig { freq_hz, c_water })
    }

    /// `k = 2πf`.
    pub fn omega(&self) -> f64 {
        2.0 * PI * self.freq_hz
    }

    /// Absorbing coefficient `k₀ = k / c₀`.
    pub fn k0(&self) -> f64 {
        self.omega() / self.c_water
    }

    /// Points per wavelength for the slowest speed on the coarsest axis.
    pub fn points_per_wavelength(&self, grid: &Grid, c_min: f64) -> f64 {
        let h = grid.spacing().iter().cloned().fold(0.0, f64::max);
        c_min / (self.freq_hz * h)
    }
}

/// A complex value per grid node.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexField {
    pub grid: Grid,
    pub values: Vec<Complex64>,
}

impl ComplexField {
    pub fn zeros(grid: Grid) -> Self {
        ComplexField {
            grid,
            values: vec![Complex64::new(0.0, 0.0); grid.n_nodes()],
        }
    }
}

/// Point source location.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SourceSpec {
    pub position: [f64; 3],
}

impl SourceSpec {
    pub fn new(position: &[f64]) -> Self {
        let mut p = [0.0; 3];
        p[..position.len()].copy_from_slice(position);
        SourceSpec { position: p }
    }

    /// Nearest node, rejected when outside the grid or on the free surface.
    pub fn node(&self, grid: &Grid) -> Result<usize> {
        let idx = grid.nearest_node(&self.position[..grid.dim()]).ok_or_else(|| {
            FwiError::InvalidSource(format!("source {:?} outside the grid", self.position))
        })?;
        if grid.is_dirichlet(idx) {
            return Err(FwiError::InvalidSource(format!(
                "source {:?} falls on the free surface",
                self.position
            )));
        }
        Ok(idx)
    }

    /// Discrete delta of unit mass: `1/∏h` at the nearest node.
    pub fn delta(&self, grid: &Grid) -> Result<ComplexField> {
        let idx = self.node(grid)?;
        let mut f = ComplexField::zeros(*grid);
        f.values[idx] = Complex64::new(1.0 / grid.cell_volume(), 0.0);
        Ok(f)
    }
}

/// Compressed sparse rows.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub values: Vec<Complex64>,
}

impl SparseMatrix {
    fn from_rows(n: usize, rows: Vec<Vec<(usize, Complex64)>>) -> Self {
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            let start = cols.len();
            for (c, v) in row {
                if cols.len() > start && cols[cols.len() - 1] == c {
                    *values.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        SparseMatrix {
            n,
            row_ptr,
            cols,
            values,
        }
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.cols[range.clone()].binary_search(&c) {
            Ok(k) => self.values[range.start + k],
            Err(_) => Complex64::new(0.0, 0.0),
        }
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, Complex64)> + '_ {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[range.clone()]
            .iter()
            .cloned()
            .zip(self.values[range].iter().cloned())
    }

    pub fn triplets(&self) -> Vec<(usize, usize, Complex64)> {
        (0..self.n)
            .flat_map(|r| self.row(r).map(move |(c, v)| (r, c, v)))
            .collect()
    }

    pub fn mul_vec(&self, x: &[Complex64]) -> Vec<Complex64> {
        (0..self.n)
            .map(|r| self.row(r).map(|(c, v)| v * x[c]).sum())
            .collect()
    }

    /// `max |A_rc − A_cr|`.
    pub fn max_asymmetry(&self) -> f64 {
        (0..self.n)
            .flat_map(|r| self.row(r).map(move |(c, v)| (r, c, v)))
            .map(|(r, c, v)| (v - self.get(c, r)).norm())
            .fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> Vec<Vec<Complex64>> {
        let mut d = vec![vec![Complex64::new(0.0, 0.0); self.n]; self.n];
        for (r, c, v) in self.triplets() {
            d[r][c] += v;
        }
        d
    }
}

/// Assembled operator with a lazily created, shared factorization.
#[derive(Debug)]
pub struct HelmholtzSystem {
    grid: Grid,
    speed: NodalField,
    phys: PhysicsConfig,
    matrix: SparseMatrix,
    factor: OnceLock<std::result::Result<Arc<BandedLu>, FwiError>>,
    solves: AtomicUsize,
    factorizations: AtomicUsize,
}

/// Builds the discrete operator for `speed` on its grid.
pub fn assemble(speed: &NodalField, phys: &PhysicsConfig) -> Result<HelmholtzSystem> {
    let grid = speed.grid;
    if let Some(i) = speed.values.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(FwiError::Assembly(format!(
            "speed at node {i} is not a positive finite number ({})",
            speed.values[i]
        )));
    }
    let c_min = speed.values.iter().cloned().fold(f64::INFINITY, f64::min);
    let ppw = phys.points_per_wavelength(&grid, c_min);
    if ppw < MIN_POINTS_PER_WAVELENGTH {
        return Err(FwiError::Assembly(format!(
            "{ppw:.2} points per wavelength, need at least {MIN_POINTS_PER_WAVELENGTH}"
        )));
    }

    let dim = grid.dim();
    let h = grid.spacing();
    let n = grid.n_nodes();
    let k2 = phys.omega().powi(2);
    let ik0 = Complex64::new(0.0, phys.k0());
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let mut row = Vec::with_capacity(2 * dim + 1);
        if grid.is_dirichlet(i) {
            row.push((i, Complex64::new(1.0, 0.0)));
            rows.push(row);
            continue;
        }
        let m = grid.multi_index(i);
        // 1/2 along axes where the node sits on a face
        let f: Vec<f64> = (0..dim)
            .map(|d| if m[d] == 0 || m[d] == grid.nodes()[d] - 1 { 0.5 } else { 1.0 })
            .collect();
        let mass: f64 = f.iter().product();
        let mut diag = Complex64::new(k2 * mass / (speed.values[i] * speed.values[i]), 0.0);
        for d in 0..dim {
            let across: f64 = (0..dim).filter(|&e| e != d).map(|e| f[e]).product();
            let coupling = across / (h[d] * h[d]);
            for up in [false, true] {
                let nb = if up {
                    (m[d] + 1 < grid.nodes()[d]).then(|| m[d] + 1)
                } else {
                    m[d].checked_sub(1)
                };
                match nb {
                    Some(v) => {
                        let mut mm = m;
                        mm[d] = v;
                        let j = grid.index(mm);
                        diag -= coupling;
                        if !grid.is_dirichlet(j) {
                            row.push((j, Complex64::new(coupling, 0.0)));
                        }
                    }
                    None => {
                        let face = crate::grid::Face { axis: d, upper: up };
                        if grid.face_kind(face) == BoundaryKind::Absorbing {
                            diag += ik0 * (across / h[d]);
                        }
                    }
                }
            }
        }
        row.push((i, diag));
        rows.push(row);
    }
    Ok(HelmholtzSystem {
        grid,
        speed: speed.clone(),
        phys: *phys,
        matrix: SparseMatrix::from_rows(n, rows),
        factor: OnceLock::new(),
        solves: AtomicUsize::new(0),
        factorizations: AtomicUsize::new(0),
    })
}

/// Unknown ordering with the axis of fewest nodes running fastest, which
/// gives the narrowest band for the 5/7-point stencil.
fn band_order(grid: &Grid) -> Vec<usize> {
    let dim = grid.dim();
    let mut axes: Vec<usize> = (0..dim).collect();
    axes.sort_by_key(|&d| (grid.nodes()[d], d));
    let counts: Vec<usize> = axes.iter().map(|&d| grid.nodes()[d]).collect();
    let mut order = Vec::with_capacity(grid.n_nodes());
    let mut m = [0usize; 3];
    for k in 0..grid.n_nodes() {
        let mut r = k;
        for (a, &d) in axes.iter().enumerate() {
            m[d] = r % counts[a];
            r /= counts[a];
        }
        order.push(grid.index(m));
    }
    order
}

impl HelmholtzSystem {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn speed(&self) -> &NodalField {
        &self.speed
    }

    pub fn physics(&self) -> &PhysicsConfig {
        &self.phys
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }

    /// Number of right-hand sides solved so far.
    pub fn solve_count(&self) -> usize {
        self.solves.load(Ordering::Relaxed)
    }

    pub fn factorization_count(&self) -> usize {
        self.factorizations.load(Ordering::Relaxed)
    }

    /// The cached factorization, created on first use.
    pub fn factorization(&self) -> Result<Arc<BandedLu>> {
        self.factor
            .get_or_init(|| {
                self.factorizations.fetch_add(1, Ordering::Relaxed);
                BandedLu::factor(
                    self.matrix.n,
                    &self.matrix.triplets(),
                    &band_order(&self.grid),
                )
                .map(Arc::new)
            })
            .clone()
    }

    pub fn solve(&self, rhs: &ComplexField) -> Result<ComplexField> {
        if rhs.grid != self.grid {
            return Err(FwiError::Geometry("right-hand side on a different grid".into()));
        }
        if rhs.values.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(FwiError::Numeric("right-hand side is not finite".into()));
        }
        let lu = self.factorization()?;
        self.solves.fetch_add(1, Ordering::Relaxed);
        Ok(ComplexField {
            grid: self.grid,
            values: lu.solve(&rhs.values),
        })
    }

    /// Solves several right-hand sides concurrently; output order follows
    /// the input order.
    pub fn solve_many(&self, rhs: &[ComplexField]) -> Result<Vec<ComplexField>> {
        self.factorization()?;
        rhs.par_iter().map(|b| self.solve(b)).collect()
    }

    /// `G(·, y)`: response to `−δ_h(· − y)`.
    pub fn green(&self, src: &SourceSpec) -> Result<ComplexField> {
        let mut b = src.delta(&self.grid)?;
        b.values.iter_mut().for_each(|v| *v = -*v);
        self.solve(&b)
    }

    /// Green's functions for many sources, in input order.
    pub fn greens(&self, sources: &[SourceSpec]) -> Result<Vec<ComplexField>> {
        let rhs = sources
            .iter()
            .map(|s| {
                let mut b = s.delta(&self.grid)?;
                b.values.iter_mut().for_each(|v| *v = -*v);
                Ok(b)
            })
            .collect::<Result<Vec<_>>>()?;
        self.solve_many(&rhs)
    }

    /// `‖A u − b‖₂ / ‖b‖₂`.
    pub fn relative_residual(&self, u: &ComplexField, b: &ComplexField) -> f64 {
        let au = self.matrix.mul_vec(&u.values);
        let num: f64 = au
            .iter()
            .zip(&b.values)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        let den: f64 = b.values.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        if den == 0.0 {
            num
        } else {
            num / den
        }
    }
}

/// Receiver-node stencil: `(above, at, below)` node indices per receiver.
pub fn locate_receivers(grid: &Grid, receivers: &ReceiverArray) -> Result<Vec<[usize; 3]>> {
    let d = grid.depth_axis();
    let hz = grid.spacing()[d];
    let tol = 1e-6 * grid.spacing().iter().cloned().fold(f64::INFINITY, f64::min);
    let mut out = Vec::with_capacity(receivers.len());
    for (r, pos) in receivers.positions().iter().enumerate() {
        let idx = grid.node_at(&pos[..grid.dim()], tol).ok_or_else(|| {
            FwiError::Alignment(format!("receiver {r} at {pos:?} is not on a grid node"))
        })?;
        let m = grid.multi_index(idx);
        if m[d] == 0 || m[d] + 1 >= grid.nodes()[d] {
            return Err(FwiError::Alignment(format!(
                "receiver {r} must lie strictly inside the grid (depth {} m, spacing {hz} m)",
                pos[d]
            )));
        }
        let mut above = m;
        above[d] -= 1;
        let mut below = m;
        below[d] += 1;
        out.push([grid.index(above), idx, grid.index(below)]);
    }
    Ok(out)
}

/// Cauchy pair on the receiver surface: values and normal derivatives by a
/// centered difference across the receiver layer. The normal points up,
/// out of the region below the receivers (sign flipped when the array says
/// otherwise).
pub fn traces(
    field: &ComplexField,
    receivers: &ReceiverArray,
) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    let grid = &field.grid;
    let stencil = locate_receivers(grid, receivers)?;
    Ok(traces_located(field, &stencil, receivers.normal_sign()))
}

pub(crate) fn traces_located(
    field: &ComplexField,
    stencil: &[[usize; 3]],
    normal_sign: f64,
) -> (Vec<Complex64>, Vec<Complex64>) {
    let hz = field.grid.spacing()[field.grid.depth_axis()];
    let scale = normal_sign / (2.0 * hz);
    let mut values = Vec::with_capacity(stencil.len());
    let mut normals = Vec::with_capacity(stencil.len());
    for &[above, at, below] in stencil {
        values.push(field.values[at]);
        normals.push((field.values[below] - field.values[above]) * scale);
    }
    (values, normals)
}
