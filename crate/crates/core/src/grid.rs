//! Structured rectilinear grids and nodal fields.
//!
//! Axis `0` is the horizontal `x` axis, axis `1` is `y` in 3D, and the last
//! axis is depth, increasing downwards from the sea surface at depth 0.
//! Nodes are numbered with `x` fastest and depth slowest.

use crate::error::{FwiError, Result};

/// Boundary condition attached to a grid face.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryKind {
    /// Zero pressure (sea surface).
    FreeSurface,
    /// First-order absorbing Robin condition.
    Absorbing,
}

/// A face of the bounding box: `axis` and whether it is the upper end.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Face {
    pub axis: usize,
    pub upper: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    dim: usize,
    extent: [f64; 3],
    nodes: [usize; 3],
    spacing: [f64; 3],
    free_surface: bool,
}

impl Grid {
    /// Builds a grid from per-axis extents (meters) and node counts.
    pub fn new(extent: &[f64], nodes: &[usize]) -> Result<Self> {
        let dim = extent.len();
        if !(dim == 2 || dim == 3) || nodes.len() != dim {
            return Err(FwiError::InvalidGrid(format!(
                "dimension must be 2 or 3 with matching node counts (got {} extents, {} counts)",
                extent.len(),
                nodes.len()
            )));
        }
        let mut e = [1.0; 3];
        let mut n = [1usize; 3];
        let mut h = [1.0; 3];
        for d in 0..dim {
            if !(extent[d].is_finite() && extent[d] > 0.0) {
                return Err(FwiError::InvalidGrid(format!(
                    "extent along axis {d} must be positive, got {}",
                    extent[d]
                )));
            }
            if nodes[d] < 3 {
                return Err(FwiError::InvalidGrid(format!(
                    "need at least 3 nodes along axis {d}, got {}",
                    nodes[d]
                )));
            }
            e[d] = extent[d];
            n[d] = nodes[d];
            h[d] = extent[d] / (nodes[d] - 1) as f64;
        }
        Ok(Grid {
            dim,
            extent: e,
            nodes: n,
            spacing: h,
            free_surface: true,
        })
    }

    /// Builds a grid from extents and a uniform target spacing.
    pub fn with_spacing(extent: &[f64], spacing: f64) -> Result<Self> {
        let mut nodes = Vec::with_capacity(extent.len());
        for &e in extent {
            let cells = (e / spacing).round();
            if cells < 2.0 || ((cells * spacing) - e).abs() > 1e-9 * e {
                return Err(FwiError::InvalidGrid(format!(
                    "extent {e} is not a multiple of spacing {spacing}"
                )));
            }
            nodes.push(cells as usize + 1);
        }
        Grid::new(extent, &nodes)
    }

    /// Same extent with the spacing divided by `factor` along every axis.
    pub fn refined(&self, factor: usize) -> Result<Self> {
        let nodes: Vec<usize> = (0..self.dim)
            .map(|d| (self.nodes[d] - 1) * factor + 1)
            .collect();
        let mut g = Grid::new(&self.extent[..self.dim], &nodes)?;
        g.free_surface = self.free_surface;
        Ok(g)
    }

    /// Replaces the free surface on top by an absorbing face, so that every
    /// face is absorbing. Used for free-space comparisons.
    pub fn all_absorbing(mut self) -> Self {
        self.free_surface = false;
        self
    }

    pub fn has_free_surface(&self) -> bool {
        self.free_surface
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn depth_axis(&self) -> usize {
        self.dim - 1
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes[..self.dim]
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing[..self.dim]
    }

    pub fn extent(&self) -> &[f64] {
        &self.extent[..self.dim]
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.iter().product()
    }

    /// Volume of one grid cell (area in 2D).
    pub fn cell_volume(&self) -> f64 {
        self.spacing().iter().product()
    }

    pub fn index(&self, ijk: [usize; 3]) -> usize {
        ijk[0] + self.nodes[0] * (ijk[1] + self.nodes[1] * ijk[2])
    }

    pub fn multi_index(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.nodes[0];
        let r = idx / self.nodes[0];
        [i, r % self.nodes[1], r / self.nodes[1]]
    }

    /// Physical coordinates of a node; unused axes are zero.
    pub fn coords(&self, idx: usize) -> [f64; 3] {
        let m = self.multi_index(idx);
        let mut x = [0.0; 3];
        for d in 0..self.dim {
            x[d] = m[d] as f64 * self.spacing[d];
        }
        x
    }

    /// Index along the depth axis.
    pub fn depth_index(&self, idx: usize) -> usize {
        self.multi_index(idx)[self.depth_axis()]
    }

    pub fn face_kind(&self, face: Face) -> BoundaryKind {
        if self.free_surface && face.axis == self.depth_axis() && !face.upper {
            BoundaryKind::FreeSurface
        } else {
            BoundaryKind::Absorbing
        }
    }

    /// All faces with their boundary tags.
    pub fn faces(&self) -> Vec<(Face, BoundaryKind)> {
        let mut out = Vec::with_capacity(2 * self.dim);
        for axis in 0..self.dim {
            for upper in [false, true] {
                let f = Face { axis, upper };
                out.push((f, self.face_kind(f)));
            }
        }
        out
    }

    /// True for nodes carrying the zero-pressure condition.
    pub fn is_dirichlet(&self, idx: usize) -> bool {
        self.free_surface && self.depth_index(idx) == 0
    }

    /// Whether the node lies on the given face.
    pub fn on_face(&self, idx: usize, face: Face) -> bool {
        let m = self.multi_index(idx);
        if face.upper {
            m[face.axis] == self.nodes[face.axis] - 1
        } else {
            m[face.axis] == 0
        }
    }

    /// Tensor-product trapezoid weight of a node (half per boundary axis).
    pub fn node_weight(&self, idx: usize) -> f64 {
        let m = self.multi_index(idx);
        let mut w = 1.0;
        for d in 0..self.dim {
            w *= self.spacing[d];
            if m[d] == 0 || m[d] == self.nodes[d] - 1 {
                w *= 0.5;
            }
        }
        w
    }

    pub fn node_weights(&self) -> Vec<f64> {
        (0..self.n_nodes()).map(|i| self.node_weight(i)).collect()
    }

    /// Nearest node to a physical position, `None` if outside the box.
    pub fn nearest_node(&self, pos: &[f64]) -> Option<usize> {
        let mut m = [0usize; 3];
        for d in 0..self.dim {
            let t = pos[d] / self.spacing[d];
            if !t.is_finite() || t < -0.5 || t > (self.nodes[d] - 1) as f64 + 0.5 {
                return None;
            }
            m[d] = (t.round().max(0.0) as usize).min(self.nodes[d] - 1);
        }
        Some(self.index(m))
    }

    /// Node exactly at `pos` (to `tol` meters), if any.
    pub fn node_at(&self, pos: &[f64], tol: f64) -> Option<usize> {
        let idx = self.nearest_node(pos)?;
        let x = self.coords(idx);
        (0..self.dim)
            .all(|d| (x[d] - pos[d]).abs() <= tol)
            .then_some(idx)
    }

    /// Short human-readable description, e.g. `2d 81x41 h=12.5,12.5`.
    pub fn describe(&self) -> String {
        let n: Vec<String> = self.nodes().iter().map(|v| v.to_string()).collect();
        let h: Vec<String> = self.spacing().iter().map(|v| format!("{v}")).collect();
        format!("{}d {} h={}", self.dim, n.join("x"), h.join(","))
    }
}

/// One real value per grid node.
#[derive(Clone, Debug, PartialEq)]
pub struct NodalField {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub unit: String,
}

impl NodalField {
    pub fn new(grid: Grid, values: Vec<f64>, unit: &str) -> Result<Self> {
        if values.len() != grid.n_nodes() {
            return Err(FwiError::ShapeMismatch {
                expected: grid.n_nodes(),
                got: values.len(),
            });
        }
        Ok(NodalField {
            grid,
            values,
            unit: unit.to_string(),
        })
    }

    pub fn constant(grid: Grid, value: f64, unit: &str) -> Self {
        NodalField {
            grid,
            values: vec![value; grid.n_nodes()],
            unit: unit.to_string(),
        }
    }

    pub fn from_fn(grid: Grid, unit: &str, f: impl Fn([f64; 3]) -> f64) -> Self {
        let values = (0..grid.n_nodes()).map(|i| f(grid.coords(i))).collect();
        NodalField {
            grid,
            values,
            unit: unit.to_string(),
        }
    }

    /// Weighted inner product with trapezoid node weights.
    pub fn weighted_dot(&self, other: &NodalField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .enumerate()
            .map(|(i, (a, b))| self.grid.node_weight(i) * a * b)
            .sum()
    }

    /// Samples this field onto a coarser grid whose nodes coincide with
    /// nodes of `self.grid`.
    pub fn restrict_to(&self, coarse: &Grid) -> Result<NodalField> {
        let tol = 1e-9 * self.grid.spacing()[0];
        let mut values = Vec::with_capacity(coarse.n_nodes());
        for i in 0..coarse.n_nodes() {
            let x = coarse.coords(i);
            let j = self.grid.node_at(&x[..coarse.dim()], tol).ok_or_else(|| {
                FwiError::Alignment(format!("coarse node {i} has no matching fine node"))
            })?;
            values.push(self.values[j]);
        }
        NodalField::new(*coarse, values, &self.unit)
    }
}

/// Relative L2 difference `‖reference − recovered‖ / ‖reference‖` with the
/// node quadrature weights.
pub fn relative_l2_error(reference: &NodalField, recovered: &NodalField) -> Result<f64> {
    if reference.grid != recovered.grid {
        return Err(FwiError::Geometry(
            "relative error needs fields on the same grid".into(),
        ));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, (r, c)) in reference.values.iter().zip(&recovered.values).enumerate() {
        let w = reference.grid.node_weight(i);
        num += w * (r - c) * (r - c);
        den += w * r * r;
    }
    if den == 0.0 {
        return Err(FwiError::Numeric("reference field has zero norm".into()));
    }
    Ok((num / den).sqrt())
}
