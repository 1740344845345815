//! Axis-aligned tile partitions of a structured grid.

use std::collections::VecDeque;

use crate::error::{FwiError, Result};
use crate::grid::Grid;

#[derive(Clone, Debug, PartialEq)]
pub struct Subdomain {
    /// Inclusive lower node-index corner of the bounding box.
    pub lo: [usize; 3],
    /// Inclusive upper node-index corner of the bounding box.
    pub hi: [usize; 3],
    pub nodes: Vec<usize>,
    /// Inside the known water layer: never updated by the inversion.
    pub frozen: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    grid: Grid,
    owner: Vec<usize>,
    subdomains: Vec<Subdomain>,
}

impl Partition {
    /// Structured tiling with at most `max_extent[d]` meters per tile along
    /// axis `d`. Tiles reaching into the water layer (`water_depth` > 0) are
    /// cut at the water-depth node layer and their upper part is frozen.
    pub fn build(grid: &Grid, max_extent: &[f64], water_depth: f64) -> Result<Self> {
        let dim = grid.dim();
        if max_extent.len() != dim {
            return Err(FwiError::InvalidPartition(format!(
                "expected {dim} tile extents, got {}",
                max_extent.len()
            )));
        }
        let mut width = [1usize; 3];
        let mut count = [1usize; 3];
        for d in 0..dim {
            let h = grid.spacing()[d];
            let w = (max_extent[d] / h + 1e-9).floor();
            if !(w >= 1.0) {
                return Err(FwiError::InvalidPartition(format!(
                    "tile extent {} m along axis {d} is smaller than the spacing {h} m",
                    max_extent[d]
                )));
            }
            let cells = grid.nodes()[d] - 1;
            width[d] = (w as usize).min(cells);
            count[d] = cells.div_ceil(width[d]);
        }

        let depth_axis = grid.depth_axis();
        let water_layer = water_layer_index(grid, water_depth)?;

        let tile_of = |idx: usize| -> usize {
            let m = grid.multi_index(idx);
            let mut t = [0usize; 3];
            for d in 0..dim {
                t[d] = (m[d] / width[d]).min(count[d] - 1);
            }
            t[0] + count[0] * (t[1] + count[1] * t[2])
        };
        let n_tiles = count.iter().product::<usize>();
        // [tile][0 = upper (water), 1 = lower]
        let mut buckets: Vec<[Vec<usize>; 2]> = vec![[Vec::new(), Vec::new()]; n_tiles];
        for idx in 0..grid.n_nodes() {
            let t = tile_of(idx);
            let part = match water_layer {
                Some(m) if grid.multi_index(idx)[depth_axis] <= m => 0,
                _ => 1,
            };
            buckets[t][part].push(idx);
        }

        let mut subdomains = Vec::new();
        for [upper, lower] in buckets {
            if !upper.is_empty() {
                subdomains.push(Subdomain::from_nodes(grid, upper, true));
            }
            if !lower.is_empty() {
                subdomains.push(Subdomain::from_nodes(grid, lower, false));
            }
        }
        let mut owner = vec![usize::MAX; grid.n_nodes()];
        for (j, s) in subdomains.iter().enumerate() {
            for &i in &s.nodes {
                owner[i] = j;
            }
        }
        Ok(Partition {
            grid: *grid,
            owner,
            subdomains,
        })
    }

    /// Rebuilds a partition from a node-to-subdomain map, e.g. read from a
    /// partition file. Checks coverage and connectedness.
    pub fn from_owner_map(grid: &Grid, owner: Vec<usize>, frozen: &[bool]) -> Result<Self> {
        if owner.len() != grid.n_nodes() {
            return Err(FwiError::ShapeMismatch {
                expected: grid.n_nodes(),
                got: owner.len(),
            });
        }
        let n = frozen.len();
        let mut lists = vec![Vec::new(); n];
        for (i, &j) in owner.iter().enumerate() {
            if j >= n {
                return Err(FwiError::InvalidPartition(format!(
                    "node {i} refers to subdomain {j}, only {n} declared"
                )));
            }
            lists[j].push(i);
        }
        let mut subdomains = Vec::with_capacity(n);
        for (j, nodes) in lists.into_iter().enumerate() {
            if nodes.is_empty() {
                return Err(FwiError::InvalidPartition(format!("subdomain {j} is empty")));
            }
            subdomains.push(Subdomain::from_nodes(grid, nodes, frozen[j]));
        }
        let p = Partition {
            grid: *grid,
            owner,
            subdomains,
        };
        for j in 0..n {
            if !p.is_connected(j) {
                return Err(FwiError::InvalidPartition(format!(
                    "subdomain {j} is not connected"
                )));
            }
        }
        Ok(p)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.subdomains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subdomains.is_empty()
    }

    pub fn owner(&self, node: usize) -> usize {
        self.owner[node]
    }

    pub fn owner_map(&self) -> &[usize] {
        &self.owner
    }

    pub fn subdomains(&self) -> &[Subdomain] {
        &self.subdomains
    }

    pub fn subdomain(&self, j: usize) -> &Subdomain {
        &self.subdomains[j]
    }

    pub fn frozen_flags(&self) -> Vec<bool> {
        self.subdomains.iter().map(|s| s.frozen).collect()
    }

    /// Number of coefficients `(1 + dim) N`.
    pub fn n_coefficients(&self) -> usize {
        (1 + self.grid.dim()) * self.len()
    }

    /// Connectedness of a subdomain through axis-neighbour nodes.
    pub fn is_connected(&self, j: usize) -> bool {
        let nodes = &self.subdomains[j].nodes;
        if nodes.is_empty() {
            return false;
        }
        let g = &self.grid;
        let mut seen = vec![false; g.n_nodes()];
        let mut queue = VecDeque::from([nodes[0]]);
        seen[nodes[0]] = true;
        let mut reached = 1;
        while let Some(i) = queue.pop_front() {
            let m = g.multi_index(i);
            for d in 0..g.dim() {
                for step in [-1i64, 1] {
                    let v = m[d] as i64 + step;
                    if v < 0 || v >= g.nodes()[d] as i64 {
                        continue;
                    }
                    let mut mm = m;
                    mm[d] = v as usize;
                    let k = g.index(mm);
                    if !seen[k] && self.owner[k] == j {
                        seen[k] = true;
                        reached += 1;
                        queue.push_back(k);
                    }
                }
            }
        }
        reached == nodes.len()
    }
}

/// Node layer carrying the water bottom, `None` when there is no water.
pub(crate) fn water_layer_index(grid: &Grid, water_depth: f64) -> Result<Option<usize>> {
    let d = grid.depth_axis();
    if !water_depth.is_finite() || water_depth < 0.0 || water_depth > grid.extent()[d] {
        return Err(FwiError::InvalidPartition(format!(
            "water depth {water_depth} m outside the grid depth range"
        )));
    }
    if water_depth == 0.0 {
        return Ok(None);
    }
    Ok(Some((water_depth / grid.spacing()[d]).round() as usize))
}

impl Subdomain {
    fn from_nodes(grid: &Grid, nodes: Vec<usize>, frozen: bool) -> Self {
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        for &i in &nodes {
            let m = grid.multi_index(i);
            for d in 0..3 {
                lo[d] = lo[d].min(m[d]);
                hi[d] = hi[d].max(m[d]);
            }
        }
        Subdomain {
            lo,
            hi,
            nodes,
            frozen,
        }
    }

    /// Trapezoid measure of the subdomain.
    pub fn measure(&self, grid: &Grid) -> f64 {
        self.nodes.iter().map(|&i| grid.node_weight(i)).sum()
    }

    /// Node-average position.
    pub fn centroid(&self, grid: &Grid) -> [f64; 3] {
        let mut c = [0.0; 3];
        for &i in &self.nodes {
            let x = grid.coords(i);
            for d in 0..3 {
                c[d] += x[d];
            }
        }
        c.iter_mut().for_each(|v| *v /= self.nodes.len() as f64);
        c
    }
}
