//! Reciprocity-gap misfit and its adjoint-state gradient.
//!
//! For simulation source `y` and observation source `z`
//!
//! ```text
//! S(y, z) = Σ_i w_i ( G(x_i, y) ∂_ν G_obs(x_i, z) − G_obs(x_i, z) ∂_ν G(x_i, y) )
//! J(c)    = Σ_{y,z} w_y w_z |S(y, z)|²
//! ```
//!
//! The integrand is bilinear (no conjugation). The gradient uses one
//! adjoint solve per simulation source: the observation sources are
//! aggregated into a single right-hand side `b_y`, and
//! `γ̂(·, y) = A⁻¹(−b_y)` with the forward matrix (`A = Aᵀ`).
//!
//! Because the centered normal derivative with trapezoid weights is the
//! average of two exact discrete flux identities of the symmetric
//! operator, `S` vanishes to round-off when the simulated and observed
//! fields come from the same discrete model.

use std::time::Instant;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::acquisition::{CauchyDataSet, SourceSet};
use crate::error::{FwiError, Result};
use crate::grid::{Grid, NodalField};
use crate::helmholtz::{self, assemble, ComplexField, HelmholtzSystem, PhysicsConfig};

/// `S[y, z]` stored row-major over (simulation source, observation source).
#[derive(Clone, Debug, PartialEq)]
pub struct ReciprocityGapMatrix {
    pub n_sim: usize,
    pub n_obs: usize,
    pub values: Vec<Complex64>,
    pub sim_weights: Vec<f64>,
    pub obs_weights: Vec<f64>,
}

impl ReciprocityGapMatrix {
    pub fn get(&self, y: usize, z: usize) -> Complex64 {
        self.values[y * self.n_obs + z]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// `|S[y, z]|²` table in the same layout.
    pub fn pair_table(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm_sqr()).collect()
    }
}

/// Adjoint field `γ̂(·, y)` of one simulation source.
#[derive(Clone, Debug, PartialEq)]
pub struct AdjointField {
    pub source: usize,
    pub field: ComplexField,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MisfitReport {
    pub j: f64,
    /// Magnitude `Σ w_y w_z (Σ_i w_i (|G||∂G_obs| + |G_obs||∂G|))²` that `J`
    /// would reach without any cancellation.
    pub j_scale: f64,
    pub gap: ReciprocityGapMatrix,
    pub forward_solves: usize,
    pub adjoint_solves: usize,
    pub factorizations: usize,
    pub wall_time_s: f64,
}

impl MisfitReport {
    pub fn pair_table(&self) -> Vec<f64> {
        self.gap.pair_table()
    }
}

/// Trapezoid discretization of the boundary integral for every pair.
pub fn reciprocity_gap(
    sim_traces: &[(Vec<Complex64>, Vec<Complex64>)],
    sim_weights: &[f64],
    data: &CauchyDataSet,
) -> Result<ReciprocityGapMatrix> {
    let m = data.n_receivers();
    if sim_traces.len() != sim_weights.len() {
        return Err(FwiError::ShapeMismatch {
            expected: sim_traces.len(),
            got: sim_weights.len(),
        });
    }
    for (v, dv) in sim_traces {
        if v.len() != m || dv.len() != m {
            return Err(FwiError::Geometry(format!(
                "simulated traces have {} receivers, data have {m}",
                v.len()
            )));
        }
    }
    let w = data.receivers.weights();
    let n_obs = data.n_sources();
    let mut values = Vec::with_capacity(sim_traces.len() * n_obs);
    for (g, dg) in sim_traces {
        for z in 0..n_obs {
            let (go, dgo) = (data.g(z), data.dg(z));
            let mut s = Complex64::new(0.0, 0.0);
            for i in 0..m {
                s += w[i] * (g[i] * dgo[i] - go[i] * dg[i]);
            }
            values.push(s);
        }
    }
    Ok(ReciprocityGapMatrix {
        n_sim: sim_traces.len(),
        n_obs,
        values,
        sim_weights: sim_weights.to_vec(),
        obs_weights: data.sources.weights().to_vec(),
    })
}

/// `J = Σ w_y w_z |S[y, z]|²`.
pub fn misfit(gap: &ReciprocityGapMatrix) -> f64 {
    let mut j = 0.0;
    for y in 0..gap.n_sim {
        let mut row = 0.0;
        for z in 0..gap.n_obs {
            row += gap.obs_weights[z] * gap.get(y, z).norm_sqr();
        }
        j += gap.sim_weights[y] * row;
    }
    j
}

/// Right-hand side `b_y` of the aggregated adjoint problem: for every
/// receiver `i` and observation source `z`, the monopole
/// `2 w_z conj(S) w_i ∂G_obs` at the receiver node and the dipole
/// `−2 w_z conj(S) w_i G_obs` spread by the transpose of the centered
/// normal-derivative stencil. Free-surface rows stay zero.
pub fn adjoint_source(
    grid: &Grid,
    stencil: &[[usize; 3]],
    normal_sign: f64,
    gap: &ReciprocityGapMatrix,
    data: &CauchyDataSet,
    y: usize,
) -> ComplexField {
    let w = data.receivers.weights();
    let hz = grid.spacing()[grid.depth_axis()];
    let d = normal_sign / (2.0 * hz);
    let mut b = ComplexField::zeros(*grid);
    for z in 0..gap.n_obs {
        let c = 2.0 * gap.obs_weights[z] * gap.get(y, z).conj();
        if c.re == 0.0 && c.im == 0.0 {
            continue;
        }
        let (go, dgo) = (data.g(z), data.dg(z));
        for (i, &[above, at, below]) in stencil.iter().enumerate() {
            b.values[at] += c * w[i] * dgo[i];
            let dip = -c * w[i] * go[i] * d;
            b.values[below] += dip;
            b.values[above] -= dip;
        }
    }
    for (k, v) in b.values.iter_mut().enumerate() {
        if grid.is_dirichlet(k) {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    b
}

/// `γ̂(·, y) = A⁻¹(−b_y)` on the shared factorization.
pub fn adjoint_solve(
    system: &HelmholtzSystem,
    gap: &ReciprocityGapMatrix,
    data: &CauchyDataSet,
    y: usize,
) -> Result<AdjointField> {
    let grid = *system.grid();
    let stencil = helmholtz::locate_receivers(&grid, &data.receivers)?;
    let mut b = adjoint_source(&grid, &stencil, data.receivers.normal_sign(), gap, data, y);
    b.values.iter_mut().for_each(|v| *v = -*v);
    Ok(AdjointField {
        source: y,
        field: system.solve(&b)?,
    })
}

/// Gradient density with respect to the nodal speed, so that
/// `δJ = Σ_i w_i g_i δc_i` with trapezoid node weights:
/// `g = −Re(Σ_y w_y 2k² c⁻³ G(·, y) γ̂(·, y)) / ∏h`, zero on the free surface.
pub fn nodal_gradient(
    g_fields: &[ComplexField],
    adjoints: &[AdjointField],
    speed: &NodalField,
    phys: &PhysicsConfig,
    sim_weights: &[f64],
) -> Result<NodalField> {
    let grid = speed.grid;
    if g_fields.len() != adjoints.len() || g_fields.len() != sim_weights.len() {
        return Err(FwiError::ShapeMismatch {
            expected: g_fields.len(),
            got: adjoints.len(),
        });
    }
    let k2 = phys.omega().powi(2);
    let inv_cell = 1.0 / grid.cell_volume();
    let mut acc = vec![Complex64::new(0.0, 0.0); grid.n_nodes()];
    // fixed source order for reproducible sums
    for ((g, a), &wy) in g_fields.iter().zip(adjoints).zip(sim_weights) {
        for ((s, gv), av) in acc.iter_mut().zip(&g.values).zip(&a.field.values) {
            *s += wy * gv * av;
        }
    }
    let values = acc
        .iter()
        .enumerate()
        .map(|(i, s)| {
            if grid.is_dirichlet(i) {
                0.0
            } else {
                let c = speed.values[i];
                -(2.0 * k2 / (c * c * c) * s.re) * inv_cell
            }
        })
        .collect();
    NodalField::new(grid, values, "J/(m/s)/m^d")
}

/// Everything fixed during an inversion: grid, physics, data and the
/// simulation sources.
#[derive(Clone, Debug)]
pub struct MisfitProblem {
    grid: Grid,
    phys: PhysicsConfig,
    data: CauchyDataSet,
    sim_sources: SourceSet,
    stencil: Vec<[usize; 3]>,
}

impl MisfitProblem {
    pub fn new(
        grid: Grid,
        phys: PhysicsConfig,
        data: CauchyDataSet,
        sim_sources: SourceSet,
    ) -> Result<Self> {
        data.check_frequency(phys.freq_hz)?;
        let stencil = helmholtz::locate_receivers(&grid, &data.receivers)?;
        sim_sources.validate(&grid, &data.receivers)?;
        Ok(MisfitProblem {
            grid,
            phys,
            data,
            sim_sources,
            stencil,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn physics(&self) -> &PhysicsConfig {
        &self.phys
    }

    pub fn data(&self) -> &CauchyDataSet {
        &self.data
    }

    pub fn sim_sources(&self) -> &SourceSet {
        &self.sim_sources
    }

    fn forward(&self, speed: &NodalField) -> Result<(HelmholtzSystem, Vec<ComplexField>, MisfitReport)> {
        let start = Instant::now();
        if speed.grid != self.grid {
            return Err(FwiError::Geometry("speed field on a different grid".into()));
        }
        let system = assemble(speed, &self.phys)?;
        let fields = system.greens(&self.sim_sources.specs())?;
        let sign = self.data.receivers.normal_sign();
        let traces: Vec<_> = fields
            .iter()
            .map(|f| helmholtz::traces_located(f, &self.stencil, sign))
            .collect();
        let gap = reciprocity_gap(&traces, self.sim_sources.weights(), &self.data)?;
        let j = misfit(&gap);
        let j_scale = self.scale(&traces);
        let report = MisfitReport {
            j,
            j_scale,
            gap,
            forward_solves: system.solve_count(),
            adjoint_solves: 0,
            factorizations: system.factorization_count(),
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        Ok((system, fields, report))
    }

    fn scale(&self, traces: &[(Vec<Complex64>, Vec<Complex64>)]) -> f64 {
        let w = self.data.receivers.weights();
        let mut total = 0.0;
        for ((g, dg), wy) in traces.iter().zip(self.sim_sources.weights()) {
            for (z, wz) in self.data.sources.weights().iter().enumerate() {
                let (go, dgo) = (self.data.g(z), self.data.dg(z));
                let mut s = 0.0;
                for i in 0..w.len() {
                    s += w[i] * (g[i].norm() * dgo[i].norm() + go[i].norm() * dg[i].norm());
                }
                total += wy * wz * s * s;
            }
        }
        total
    }

    /// Misfit only: one forward solve per simulation source.
    pub fn evaluate(&self, speed: &NodalField) -> Result<MisfitReport> {
        Ok(self.forward(speed)?.2)
    }

    /// Misfit and nodal gradient density: `n_sim` forward plus `n_sim`
    /// adjoint solves on one factorization.
    pub fn evaluate_with_gradient(&self, speed: &NodalField) -> Result<(MisfitReport, NodalField)> {
        let start = Instant::now();
        let (system, fields, mut report) = self.forward(speed)?;
        let sign = self.data.receivers.normal_sign();
        let rhs: Vec<ComplexField> = (0..self.sim_sources.len())
            .into_par_iter()
            .map(|y| {
                let mut b =
                    adjoint_source(&self.grid, &self.stencil, sign, &report.gap, &self.data, y);
                b.values.iter_mut().for_each(|v| *v = -*v);
                b
            })
            .collect();
        let adjoints: Vec<AdjointField> = system
            .solve_many(&rhs)?
            .into_iter()
            .enumerate()
            .map(|(source, field)| AdjointField { source, field })
            .collect();
        let grad = nodal_gradient(
            &fields,
            &adjoints,
            speed,
            &self.phys,
            self.sim_sources.weights(),
        )?;
        report.adjoint_solves = system.solve_count() - report.forward_solves;
        report.factorizations = system.factorization_count();
        report.wall_time_s = start.elapsed().as_secs_f64();
        Ok((report, grad))
    }
}
