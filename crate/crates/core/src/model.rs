//! Piecewise-linear wave-speed models on a fixed partition.
//!
//! On subdomain `j` the speed is `a_j + A_j · x`. Coefficients are stored
//! per subdomain as `[a_j, A_j,1, .., A_j,dim]`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{FwiError, Result};
use crate::grid::NodalField;
use crate::partition::Partition;

/// Admissible speed interval and the known water speed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpeedBounds {
    pub c_min: f64,
    pub c_max: f64,
    pub c_water: f64,
}

impl SpeedBounds {
    pub fn new(c_min: f64, c_max: f64, c_water: f64) -> Result<Self> {
        if !(c_min > 0.0 && c_max > c_min && c_max.is_finite()) {
            return Err(FwiError::Config(format!(
                "speed bounds must satisfy 0 < c_min < c_max, got [{c_min}, {c_max}]"
            )));
        }
        if !(c_min..=c_max).contains(&c_water) {
            return Err(FwiError::Config(format!(
                "water speed {c_water} outside [{c_min}, {c_max}]"
            )));
        }
        Ok(SpeedBounds {
            c_min,
            c_max,
            c_water,
        })
    }

    pub fn range(&self) -> f64 {
        self.c_max - self.c_min
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PiecewiseLinearModel {
    partition: Arc<Partition>,
    coeffs: Vec<f64>,
    bounds: SpeedBounds,
}

impl PiecewiseLinearModel {
    /// Frozen subdomains are reset to the water speed with zero slope.
    pub fn new(partition: Arc<Partition>, coeffs: Vec<f64>, bounds: SpeedBounds) -> Result<Self> {
        if coeffs.len() != partition.n_coefficients() {
            return Err(FwiError::ShapeMismatch {
                expected: partition.n_coefficients(),
                got: coeffs.len(),
            });
        }
        if let Some(k) = coeffs.iter().position(|c| !c.is_finite()) {
            return Err(FwiError::Numeric(format!("coefficient {k} is not finite")));
        }
        let mut m = PiecewiseLinearModel {
            partition,
            coeffs,
            bounds,
        };
        m.reset_frozen();
        Ok(m)
    }

    pub fn constant(partition: Arc<Partition>, speed: f64, bounds: SpeedBounds) -> Result<Self> {
        let stride = 1 + partition.grid().dim();
        let mut coeffs = vec![0.0; partition.n_coefficients()];
        for j in 0..partition.len() {
            coeffs[j * stride] = speed;
        }
        PiecewiseLinearModel::new(partition, coeffs, bounds)
    }

    fn reset_frozen(&mut self) {
        let stride = self.stride();
        for (j, s) in self.partition.subdomains().iter().enumerate() {
            if s.frozen {
                self.coeffs[j * stride] = self.bounds.c_water;
                for d in 1..stride {
                    self.coeffs[j * stride + d] = 0.0;
                }
            }
        }
    }

    fn stride(&self) -> usize {
        1 + self.partition.grid().dim()
    }

    pub fn partition(&self) -> &Arc<Partition> {
        &self.partition
    }

    pub fn bounds(&self) -> SpeedBounds {
        self.bounds
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }

    /// Same partition and bounds, new coefficient vector.
    pub fn with_coefficients(&self, coeffs: Vec<f64>) -> Result<Self> {
        PiecewiseLinearModel::new(self.partition.clone(), coeffs, self.bounds)
    }

    /// `(a_j, A_j)` of one subdomain.
    pub fn subdomain_coefficients(&self, j: usize) -> (f64, &[f64]) {
        let s = self.stride();
        (self.coeffs[j * s], &self.coeffs[j * s + 1..(j + 1) * s])
    }

    /// Mask of coefficients the inversion may change.
    pub fn free_mask(&self) -> Vec<bool> {
        let s = self.stride();
        let mut mask = vec![true; self.coeffs.len()];
        for (j, sd) in self.partition.subdomains().iter().enumerate() {
            if sd.frozen {
                mask[j * s..(j + 1) * s].iter_mut().for_each(|m| *m = false);
            }
        }
        mask
    }

    /// Nodal speed without the bound check.
    pub fn evaluate_unchecked(&self) -> NodalField {
        let grid = *self.partition.grid();
        let dim = grid.dim();
        let s = self.stride();
        let values = (0..grid.n_nodes())
            .map(|i| {
                let j = self.partition.owner(i);
                let x = grid.coords(i);
                let c = &self.coeffs[j * s..(j + 1) * s];
                let mut v = c[0];
                for d in 0..dim {
                    v += c[1 + d] * x[d];
                }
                v
            })
            .collect();
        NodalField {
            grid,
            values,
            unit: "m/s".into(),
        }
    }

    /// Nodal speed; fails on the first node outside `[c_min, c_max]`.
    pub fn evaluate(&self) -> Result<NodalField> {
        let f = self.evaluate_unchecked();
        check_bounds(&f, &self.bounds)?;
        Ok(f)
    }

    /// Least-squares affine fit of `field` on every subdomain.
    pub fn fit(field: &NodalField, partition: Arc<Partition>, bounds: SpeedBounds) -> Result<Self> {
        let grid = *partition.grid();
        if field.grid != grid {
            return Err(FwiError::Geometry("field and partition grids differ".into()));
        }
        if field.values.iter().any(|v| !v.is_finite()) {
            return Err(FwiError::Numeric("field has non-finite values".into()));
        }
        let dim = grid.dim();
        let s = 1 + dim;
        let mut coeffs = vec![0.0; partition.n_coefficients()];
        for (j, sd) in partition.subdomains().iter().enumerate() {
            if sd.frozen {
                continue;
            }
            let centroid = sd.centroid(&grid);
            let mut normal = DMatrix::<f64>::zeros(s, s);
            let mut rhs = DVector::<f64>::zeros(s);
            let mut row = vec![0.0; s];
            for &i in &sd.nodes {
                let x = grid.coords(i);
                row[0] = 1.0;
                for d in 0..dim {
                    row[1 + d] = x[d] - centroid[d];
                }
                for p in 0..s {
                    rhs[p] += row[p] * field.values[i];
                    for q in 0..s {
                        normal[(p, q)] += row[p] * row[q];
                    }
                }
            }
            let eig = normal.clone().symmetric_eigen();
            let max = eig.eigenvalues.max();
            let min = eig.eigenvalues.min();
            if sd.nodes.len() < s || !(min > 1e-12 * max) {
                return Err(FwiError::RankDeficient {
                    subdomain: j,
                    nodes: sd.nodes.len(),
                });
            }
            let sol = normal
                .cholesky()
                .ok_or(FwiError::RankDeficient {
                    subdomain: j,
                    nodes: sd.nodes.len(),
                })?
                .solve(&rhs);
            let mut a = sol[0];
            for d in 0..dim {
                a -= sol[1 + d] * centroid[d];
                coeffs[j * s + 1 + d] = sol[1 + d];
            }
            coeffs[j * s] = a;
        }
        PiecewiseLinearModel::new(partition, coeffs, bounds)
    }
}

pub fn check_bounds(field: &NodalField, bounds: &SpeedBounds) -> Result<()> {
    for (node, &value) in field.values.iter().enumerate() {
        if !(value >= bounds.c_min && value <= bounds.c_max) {
            return Err(FwiError::BoundsViolation {
                node,
                value,
                c_min: bounds.c_min,
                c_max: bounds.c_max,
            });
        }
    }
    Ok(())
}

/// Pulls a nodal gradient density back to coefficient space:
/// `∂J/∂a_j = Σ w_i g_i`, `∂J/∂A_j,d = Σ w_i x_i,d g_i` over nodes of `D_j`,
/// with trapezoid node weights `w_i`. Frozen subdomains receive zero.
pub fn coefficient_gradient(nodal_grad: &NodalField, partition: &Partition) -> Result<Vec<f64>> {
    let grid = partition.grid();
    if nodal_grad.grid != *grid {
        return Err(FwiError::ShapeMismatch {
            expected: grid.n_nodes(),
            got: nodal_grad.values.len(),
        });
    }
    let dim = grid.dim();
    let s = 1 + dim;
    let mut out = vec![0.0; partition.n_coefficients()];
    for (j, sd) in partition.subdomains().iter().enumerate() {
        if sd.frozen {
            continue;
        }
        for &i in &sd.nodes {
            let wg = grid.node_weight(i) * nodal_grad.values[i];
            let x = grid.coords(i);
            out[j * s] += wg;
            for d in 0..dim {
                out[j * s + 1 + d] += wg * x[d];
            }
        }
    }
    Ok(out)
}

/// Reparameterisation of the coefficient space used by the optimizer.
///
/// On subdomain `j` the normalised coefficients are the speed at the
/// node centroid and the speed change from the centroid to the edge of the
/// bounding box along each axis, so every component is in m/s. The map is
/// linear and invertible: `coeffs = T θ`.
#[derive(Clone, Debug)]
pub struct NormalizedBasis {
    dim: usize,
    centroid: Vec<[f64; 3]>,
    half_extent: Vec<[f64; 3]>,
}

impl NormalizedBasis {
    pub fn new(partition: &Partition) -> Self {
        let grid = partition.grid();
        let dim = grid.dim();
        let mut centroid = Vec::with_capacity(partition.len());
        let mut half_extent = Vec::with_capacity(partition.len());
        for sd in partition.subdomains() {
            centroid.push(sd.centroid(grid));
            let mut l = [1.0; 3];
            for d in 0..dim {
                let h = grid.spacing()[d];
                l[d] = (0.5 * (sd.hi[d] - sd.lo[d]) as f64 * h).max(h);
            }
            half_extent.push(l);
        }
        NormalizedBasis {
            dim,
            centroid,
            half_extent,
        }
    }

    /// `θ = T⁻¹ coeffs`.
    pub fn to_normalized(&self, coeffs: &[f64]) -> Vec<f64> {
        let s = 1 + self.dim;
        let mut out = vec![0.0; coeffs.len()];
        for j in 0..self.centroid.len() {
            let c = &coeffs[j * s..(j + 1) * s];
            let mut v = c[0];
            for d in 0..self.dim {
                v += c[1 + d] * self.centroid[j][d];
                out[j * s + 1 + d] = c[1 + d] * self.half_extent[j][d];
            }
            out[j * s] = v;
        }
        out
    }

    /// `coeffs = T θ`.
    pub fn from_normalized(&self, theta: &[f64]) -> Vec<f64> {
        let s = 1 + self.dim;
        let mut out = vec![0.0; theta.len()];
        for j in 0..self.centroid.len() {
            let t = &theta[j * s..(j + 1) * s];
            let mut a = t[0];
            for d in 0..self.dim {
                let slope = t[1 + d] / self.half_extent[j][d];
                a -= slope * self.centroid[j][d];
                out[j * s + 1 + d] = slope;
            }
            out[j * s] = a;
        }
        out
    }

    /// Gradient in θ from a gradient in raw coefficients: `Tᵀ g`.
    pub fn gradient_to_normalized(&self, grad: &[f64]) -> Vec<f64> {
        let s = 1 + self.dim;
        let mut out = vec![0.0; grad.len()];
        for j in 0..self.centroid.len() {
            let g = &grad[j * s..(j + 1) * s];
            out[j * s] = g[0];
            for d in 0..self.dim {
                let l = self.half_extent[j][d];
                out[j * s + 1 + d] = (g[1 + d] - self.centroid[j][d] * g[0]) / l;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;

    fn setup() -> (Grid, Arc<Partition>, SpeedBounds) {
        let g = Grid::new(&[200.0, 100.0], &[21, 11]).unwrap();
        let p = Arc::new(Partition::build(&g, &[70.0, 70.0], 20.0).unwrap());
        (g, p, SpeedBounds::new(1000.0, 6000.0, 1500.0).unwrap())
    }

    #[test]
    fn constant_model_evaluates_constant() {
        let (g, _, b) = setup();
        let p = Arc::new(Partition::build(&g, &[70.0, 70.0], 0.0).unwrap());
        let m = PiecewiseLinearModel::constant(p, 1500.0, b).unwrap();
        assert!(m.evaluate().unwrap().values.iter().all(|&v| v == 1500.0));
    }

    #[test]
    fn affine_arithmetic() {
        let g = Grid::new(&[1000.0, 1000.0], &[11, 11]).unwrap();
        let p = Arc::new(Partition::build(&g, &[1000.0, 1000.0], 0.0).unwrap());
        assert_eq!(p.len(), 1);
        let b = SpeedBounds::new(500.0, 3000.0, 1500.0).unwrap();
        let m = PiecewiseLinearModel::new(p, vec![1000.0, 0.0, 0.5], b).unwrap();
        let f = m.evaluate().unwrap();
        assert_eq!(f.values[g.index([0, 10, 0])], 1500.0);
    }

    #[test]
    fn frozen_subdomains_hold_water_speed() {
        let (_, p, b) = setup();
        let m = PiecewiseLinearModel::constant(p.clone(), 2500.0, b).unwrap();
        let f = m.evaluate().unwrap();
        for (i, v) in f.values.iter().enumerate() {
            let expect = if p.subdomain(p.owner(i)).frozen { 1500.0 } else { 2500.0 };
            assert_eq!(*v, expect);
        }
    }

    #[test]
    fn bound_violation_names_the_node() {
        let (_, p, b) = setup();
        let m = PiecewiseLinearModel::constant(p, 7000.0, b).unwrap();
        match m.evaluate() {
            Err(FwiError::BoundsViolation { value, .. }) => assert_eq!(value, 7000.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn constant_field_fits_exactly() {
        let (g, p, b) = setup();
        let f = NodalField::constant(g, 2000.0, "m/s");
        let m = PiecewiseLinearModel::fit(&f, p.clone(), b).unwrap();
        for j in 0..p.len() {
            let (a, slope) = m.subdomain_coefficients(j);
            if p.subdomain(j).frozen {
                assert_eq!(a, 1500.0);
            } else {
                assert!((a - 2000.0).abs() < 1e-9, "{a}");
                assert!(slope.iter().all(|s| s.abs() < 1e-12));
            }
        }
    }

    #[test]
    fn collinear_subdomain_is_rank_deficient() {
        // water at 20 m cuts the first 40 m tile, leaving one node layer below it
        let g = Grid::new(&[40.0, 50.0], &[5, 6]).unwrap();
        let p = Arc::new(Partition::build(&g, &[40.0, 40.0], 20.0).unwrap());
        let b = SpeedBounds::new(1000.0, 3000.0, 1500.0).unwrap();
        let f = NodalField::constant(g, 2000.0, "m/s");
        assert!(matches!(
            PiecewiseLinearModel::fit(&f, p, b),
            Err(FwiError::RankDeficient { .. })
        ));
    }

    #[test]
    fn unit_gradient_integrates_to_measure() {
        let (g, p, _) = setup();
        let j = (0..p.len()).find(|&j| !p.subdomain(j).frozen).unwrap();
        let mut v = vec![0.0; g.n_nodes()];
        for &i in &p.subdomain(j).nodes {
            v[i] = 1.0;
        }
        let grad = coefficient_gradient(&NodalField::new(g, v, "").unwrap(), &p).unwrap();
        assert!((grad[3 * j] - p.subdomain(j).measure(&g)).abs() < 1e-9);
        let frozen = (0..p.len()).find(|&j| p.subdomain(j).frozen).unwrap();
        assert_eq!(&grad[3 * frozen..3 * frozen + 3], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn normalized_basis_round_trip() {
        let (_, p, _) = setup();
        let basis = NormalizedBasis::new(&p);
        let coeffs: Vec<f64> = (0..p.n_coefficients()).map(|k| (k as f64).sin() * 3.0).collect();
        let back = basis.from_normalized(&basis.to_normalized(&coeffs));
        for (a, b) in coeffs.iter().zip(&back) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn normalized_gradient_is_transpose() {
        let (_, p, _) = setup();
        let basis = NormalizedBasis::new(&p);
        let n = p.n_coefficients();
        let g: Vec<f64> = (0..n).map(|k| (k as f64 * 0.7).cos()).collect();
        let theta: Vec<f64> = (0..n).map(|k| (k as f64 * 1.3).sin()).collect();
        // <g, T θ> == <Tᵀ g, θ>
        let lhs: f64 = g.iter().zip(basis.from_normalized(&theta)).map(|(a, b)| a * b).sum();
        let rhs: f64 = basis
            .gradient_to_normalized(&g)
            .iter()
            .zip(&theta)
            .map(|(a, b)| a * b)
            .sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
    }
}
