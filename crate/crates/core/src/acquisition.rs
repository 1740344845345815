//! Acquisition geometry, synthetic Cauchy data and noise.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{FwiError, Result};
use crate::grid::{Grid, NodalField};
use crate::helmholtz::{self, assemble, PhysicsConfig, SourceSpec};

/// Dual sensors on one horizontal node layer `Σ`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReceiverArray {
    dim: usize,
    depth: f64,
    positions: Vec<[f64; 3]>,
    weights: Vec<f64>,
    upward_normal: bool,
}

impl ReceiverArray {
    /// Every node of the grid layer at `depth`, with trapezoid weights over
    /// the layer.
    pub fn layer(grid: &Grid, depth: f64) -> Result<Self> {
        let d = grid.depth_axis();
        let hz = grid.spacing()[d];
        let m = (depth / hz).round();
        if (m * hz - depth).abs() > 1e-9 * hz.max(depth) {
            return Err(FwiError::Alignment(format!(
                "receiver depth {depth} m is not on a node layer (spacing {hz} m)"
            )));
        }
        let m = m as usize;
        if m == 0 || m + 1 >= grid.nodes()[d] {
            return Err(FwiError::Alignment(format!(
                "receiver layer at {depth} m must be strictly inside the grid"
            )));
        }
        let mut positions = Vec::new();
        let mut weights = Vec::new();
        for i in 0..grid.n_nodes() {
            let mi = grid.multi_index(i);
            if mi[d] != m {
                continue;
            }
            let mut w = 1.0;
            for e in 0..d {
                w *= grid.spacing()[e];
                if mi[e] == 0 || mi[e] + 1 == grid.nodes()[e] {
                    w *= 0.5;
                }
            }
            positions.push(grid.coords(i));
            weights.push(w);
        }
        Ok(ReceiverArray {
            dim: grid.dim(),
            depth: m as f64 * hz,
            positions,
            weights,
            upward_normal: true,
        })
    }

    /// Receivers from explicit positions and surface weights.
    pub fn new(dim: usize, positions: Vec<[f64; 3]>, weights: Vec<f64>) -> Result<Self> {
        if positions.is_empty() || positions.len() != weights.len() {
            return Err(FwiError::Geometry(format!(
                "{} receiver positions for {} weights",
                positions.len(),
                weights.len()
            )));
        }
        if let Some(k) = weights.iter().position(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(FwiError::Geometry(format!("receiver {k} has a non-positive weight")));
        }
        let depth = positions[0][dim - 1];
        if positions.iter().any(|p| (p[dim - 1] - depth).abs() > 1e-9 * depth.abs().max(1.0)) {
            return Err(FwiError::Geometry("receivers must share one depth".into()));
        }
        Ok(ReceiverArray {
            dim,
            depth,
            positions,
            weights,
            upward_normal: true,
        })
    }

    /// Flips the normal so that it points down, into the region below `Σ`.
    pub fn with_downward_normal(mut self) -> Self {
        self.upward_normal = false;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn depth(&self) -> f64 {
        self.depth
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn upward_normal(&self) -> bool {
        self.upward_normal
    }

    /// `-1` for an upward normal (depth grows downwards), `+1` otherwise.
    pub fn normal_sign(&self) -> f64 {
        if self.upward_normal {
            -1.0
        } else {
            1.0
        }
    }

    pub fn surface_area(&self) -> f64 {
        self.weights.iter().sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SourceRole {
    Observation,
    Simulation,
}

/// Point sources with midpoint quadrature weights.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceSet {
    dim: usize,
    positions: Vec<[f64; 3]>,
    weights: Vec<f64>,
    role: SourceRole,
}

impl SourceSet {
    /// Regular lattice: `count[a]` sources from `start[a]` every `step[a]`
    /// along each horizontal axis, repeated at every depth in `depths`.
    /// Each source carries the cell it represents as weight: `∏ step`
    /// (planar, one depth) times the depth step for several depths.
    pub fn lattice(
        start: &[f64],
        step: &[f64],
        count: &[usize],
        depths: &[f64],
        role: SourceRole,
    ) -> Result<Self> {
        let horiz = start.len();
        if horiz == 0 || horiz > 2 || step.len() != horiz || count.len() != horiz {
            return Err(FwiError::Geometry("source lattice needs 1 or 2 horizontal axes".into()));
        }
        if depths.is_empty() || count.iter().any(|&c| c == 0) {
            return Err(FwiError::Geometry("empty source lattice".into()));
        }
        if step.iter().any(|s| !(*s > 0.0)) {
            return Err(FwiError::Geometry("source steps must be positive".into()));
        }
        let mut weight: f64 = step.iter().product();
        if depths.len() > 1 {
            let dz = (depths[depths.len() - 1] - depths[0]) / (depths.len() - 1) as f64;
            if !(dz > 0.0) {
                return Err(FwiError::Geometry("source depths must increase".into()));
            }
            weight *= dz;
        }
        let dim = horiz + 1;
        let mut positions = Vec::new();
        for &z in depths {
            let ny = if horiz == 2 { count[1] } else { 1 };
            for iy in 0..ny {
                for ix in 0..count[0] {
                    let mut p = [0.0; 3];
                    p[0] = start[0] + ix as f64 * step[0];
                    if horiz == 2 {
                        p[1] = start[1] + iy as f64 * step[1];
                    }
                    p[dim - 1] = z;
                    positions.push(p);
                }
            }
        }
        let weights = vec![weight; positions.len()];
        Ok(SourceSet {
            dim,
            positions,
            weights,
            role,
        })
    }

    pub fn new(dim: usize, positions: Vec<[f64; 3]>, weights: Vec<f64>, role: SourceRole) -> Result<Self> {
        if positions.is_empty() || positions.len() != weights.len() {
            return Err(FwiError::Geometry(format!(
                "{} source positions for {} weights",
                positions.len(),
                weights.len()
            )));
        }
        if let Some(k) = weights.iter().position(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(FwiError::Geometry(format!("source {k} has a non-positive weight")));
        }
        Ok(SourceSet {
            dim,
            positions,
            weights,
            role,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn role(&self) -> SourceRole {
        self.role
    }

    pub fn with_role(mut self, role: SourceRole) -> Self {
        self.role = role;
        self
    }

    pub fn specs(&self) -> Vec<SourceSpec> {
        self.positions
            .iter()
            .map(|p| SourceSpec::new(&p[..self.dim]))
            .collect()
    }

    /// Sources must sit strictly inside the grid, off the free surface, and
    /// at least two depth spacings above the receiver layer.
    pub fn validate(&self, grid: &Grid, receivers: &ReceiverArray) -> Result<()> {
        let d = grid.depth_axis();
        let hz = grid.spacing()[d];
        for (k, p) in self.positions.iter().enumerate() {
            for a in 0..grid.dim() {
                if !(p[a] > 0.0 && p[a] < grid.extent()[a]) {
                    return Err(FwiError::InvalidSource(format!(
                        "source {k} at {p:?} is not strictly inside the grid"
                    )));
                }
            }
            SourceSpec::new(&p[..grid.dim()]).node(grid)?;
            if p[d] > receivers.depth() - 2.0 * hz + 1e-9 * hz {
                return Err(FwiError::InvalidSource(format!(
                    "source {k} at depth {} m is closer than 2h to the receivers at {} m",
                    p[d],
                    receivers.depth()
                )));
            }
        }
        Ok(())
    }
}

/// Where a data set came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Provenance {
    /// Description of the synthesis grid.
    pub grid: String,
    pub seed: u64,
    /// `f64::INFINITY` when no noise was added.
    pub snr_db: f64,
}

/// Pressure and normal-derivative traces per observation source and
/// receiver, stored row-major as `[source][receiver]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CauchyDataSet {
    pub receivers: ReceiverArray,
    pub sources: SourceSet,
    pub g_obs: Vec<Complex64>,
    pub dg_obs: Vec<Complex64>,
    pub freq_hz: f64,
    pub provenance: Provenance,
}

impl CauchyDataSet {
    pub fn new(
        receivers: ReceiverArray,
        sources: SourceSet,
        g_obs: Vec<Complex64>,
        dg_obs: Vec<Complex64>,
        freq_hz: f64,
        provenance: Provenance,
    ) -> Result<Self> {
        let n = receivers.len() * sources.len();
        for m in [&g_obs, &dg_obs] {
            if m.len() != n {
                return Err(FwiError::ShapeMismatch {
                    expected: n,
                    got: m.len(),
                });
            }
            if m.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
                return Err(FwiError::Numeric("Cauchy data contain non-finite values".into()));
            }
        }
        Ok(CauchyDataSet {
            receivers,
            sources,
            g_obs,
            dg_obs,
            freq_hz,
            provenance,
        })
    }

    pub fn n_sources(&self) -> usize {
        self.sources.len()
    }

    pub fn n_receivers(&self) -> usize {
        self.receivers.len()
    }

    pub fn g(&self, source: usize) -> &[Complex64] {
        let m = self.n_receivers();
        &self.g_obs[source * m..(source + 1) * m]
    }

    pub fn dg(&self, source: usize) -> &[Complex64] {
        let m = self.n_receivers();
        &self.dg_obs[source * m..(source + 1) * m]
    }

    /// Rejects data recorded at another frequency.
    pub fn check_frequency(&self, freq_hz: f64) -> Result<()> {
        if (self.freq_hz - freq_hz).abs() > 1e-12 * freq_hz.abs() {
            return Err(FwiError::Load(format!(
                "data recorded at {} Hz, configuration expects {} Hz",
                self.freq_hz, freq_hz
            )));
        }
        Ok(())
    }
}

/// Synthesizes Cauchy data in `true_speed` (on its own, usually finer,
/// grid): one Green's function per observation source, sampled at the
/// receivers.
pub fn synthesize(
    true_speed: &NodalField,
    obs_sources: &SourceSet,
    receivers: &ReceiverArray,
    phys: &PhysicsConfig,
) -> Result<CauchyDataSet> {
    let grid = true_speed.grid;
    let stencil = helmholtz::locate_receivers(&grid, receivers)?;
    obs_sources.validate(&grid, receivers)?;
    let system = assemble(true_speed, phys)?;
    let fields = system.greens(&obs_sources.specs())?;
    let mut g_obs = Vec::with_capacity(obs_sources.len() * receivers.len());
    let mut dg_obs = Vec::with_capacity(g_obs.capacity());
    for f in &fields {
        let (v, dv) = helmholtz::traces_located(f, &stencil, receivers.normal_sign());
        g_obs.extend(v);
        dg_obs.extend(dv);
    }
    CauchyDataSet::new(
        receivers.clone(),
        obs_sources.clone().with_role(SourceRole::Observation),
        g_obs,
        dg_obs,
        phys.freq_hz,
        Provenance {
            grid: grid.describe(),
            seed: 0,
            snr_db: f64::INFINITY,
        },
    )
}

/// Grid used to synthesize data for an inversion on `inversion`: half the
/// spacing unless the same-grid ("inverse crime") mode is requested.
pub fn synthesis_grid(inversion: &Grid, inverse_crime: bool) -> Result<Grid> {
    if inverse_crime {
        Ok(*inversion)
    } else {
        inversion.refined(2)
    }
}

/// Adds circular complex Gaussian noise independently per source,
/// receiver and component, with per-trace variance
/// `mean power × 10^(−snr_db/10)`. `snr_db = +∞` returns the input.
pub fn add_noise(data: &CauchyDataSet, snr_db: f64, seed: u64) -> Result<CauchyDataSet> {
    if snr_db == f64::INFINITY {
        return Ok(data.clone());
    }
    if !snr_db.is_finite() {
        return Err(FwiError::UndefinedSnr(format!("SNR {snr_db} dB")));
    }
    let mut out = data.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = data.n_receivers();
    let ratio = 10f64.powf(-snr_db / 10.0);
    for (name, matrix) in [("pressure", &mut out.g_obs), ("normal derivative", &mut out.dg_obs)] {
        for (z, trace) in matrix.chunks_mut(m).enumerate() {
            let power = trace.iter().map(|v| v.norm_sqr()).sum::<f64>() / m as f64;
            if power == 0.0 {
                return Err(FwiError::UndefinedSnr(format!(
                    "{name} trace of source {z} is identically zero"
                )));
            }
            let sigma = (power * ratio / 2.0).sqrt();
            for v in trace.iter_mut() {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                *v += Complex64::new(sigma * re, sigma * im);
            }
        }
    }
    out.provenance.seed = seed;
    out.provenance.snr_db = snr_db;
    Ok(out)
}
