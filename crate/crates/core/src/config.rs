//! Run configuration: a sectioned `key = value` document (TOML) holding
//! every parameter of a run, with units in the key names.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::acquisition::{ReceiverArray, SourceRole, SourceSet};
use crate::error::{FwiError, Result};
use crate::grid::{Grid, NodalField};
use crate::helmholtz::PhysicsConfig;
use crate::inversion::OptimConfig;
use crate::model::SpeedBounds;
use crate::partition::Partition;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSection {
    pub extent_m: Vec<f64>,
    pub spacing_m: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicsSection {
    pub freq_hz: f64,
    pub c_water_mps: f64,
    pub c_min_mps: f64,
    pub c_max_mps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionSection {
    pub max_extent_m: Vec<f64>,
    pub water_depth_m: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReceiverSection {
    pub depth_m: f64,
}

/// Observation lattice plus the alternative simulation lattice used when
/// sources are decoupled. Horizontal vectors have one entry per
/// horizontal axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceSection {
    pub obs_start_m: Vec<f64>,
    pub obs_step_m: Vec<f64>,
    pub obs_count: Vec<usize>,
    pub obs_depth_m: Vec<f64>,
    pub sim_start_m: Vec<f64>,
    pub sim_step_m: Vec<f64>,
    pub sim_count: Vec<usize>,
    pub sim_depth_m: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSection {
    /// `inf` disables noise.
    pub snr_db: f64,
    pub seed: u64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        NoiseSection {
            snr_db: f64::INFINITY,
            seed: 0,
        }
    }
}

/// Smooth layered background below the water plus one box inclusion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSection {
    /// Speed just below the water layer.
    pub background_mps: f64,
    /// Depth gradient of the background, (m/s)/m.
    pub gradient_per_s: f64,
    pub inclusion_lo_m: Vec<f64>,
    pub inclusion_hi_m: Vec<f64>,
    pub inclusion_contrast_mps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerSection {
    pub n_iter_min: usize,
    pub n_iter_max: usize,
    pub n_eps: usize,
    pub eps_j: f64,
    pub armijo_c1: f64,
    pub backtrack: f64,
    pub initial_step_fraction: f64,
    pub max_backtracks: usize,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let d = OptimConfig::default();
        OptimizerSection {
            n_iter_min: d.n_iter_min,
            n_iter_max: d.n_iter_max,
            n_eps: d.n_eps,
            eps_j: d.eps_j,
            armijo_c1: d.armijo_c1,
            backtrack: d.backtrack,
            initial_step_fraction: d.initial_step_fraction,
            max_backtracks: d.max_backtracks,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSection {
    pub inverse_crime: bool,
    pub decouple_sources: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub grid: GridSection,
    pub physics: PhysicsSection,
    pub partition: PartitionSection,
    pub receivers: ReceiverSection,
    pub sources: SourceSection,
    #[serde(default)]
    pub noise: NoiseSection,
    pub phantom: PhantomSection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub run: RunSection,
}

/// (section, required keys, optional keys)
const SCHEMA: &[(&str, &[&str], &[&str])] = &[
    ("grid", &["extent_m", "spacing_m"], &[]),
    ("physics", &["freq_hz", "c_water_mps", "c_min_mps", "c_max_mps"], &[]),
    ("partition", &["max_extent_m", "water_depth_m"], &[]),
    ("receivers", &["depth_m"], &[]),
    (
        "sources",
        &[
            "obs_start_m",
            "obs_step_m",
            "obs_count",
            "obs_depth_m",
            "sim_start_m",
            "sim_step_m",
            "sim_count",
            "sim_depth_m",
        ],
        &[],
    ),
    ("noise", &[], &["snr_db", "seed"]),
    (
        "phantom",
        &[
            "background_mps",
            "gradient_per_s",
            "inclusion_lo_m",
            "inclusion_hi_m",
            "inclusion_contrast_mps",
        ],
        &[],
    ),
    (
        "optimizer",
        &[],
        &[
            "n_iter_min",
            "n_iter_max",
            "n_eps",
            "eps_j",
            "armijo_c1",
            "backtrack",
            "initial_step_fraction",
            "max_backtracks",
        ],
    ),
    ("run", &[], &["inverse_crime", "decouple_sources"]),
];

const OPTIONAL_SECTIONS: &[&str] = &["noise", "optimizer", "run"];

/// Every unknown or missing key, in document order.
fn schema_problems(doc: &toml::Table) -> Vec<String> {
    let mut problems = Vec::new();
    for (name, value) in doc {
        let Some((_, req, opt)) = SCHEMA.iter().find(|(s, _, _)| s == name) else {
            problems.push(format!("unknown section [{name}]"));
            continue;
        };
        let Some(table) = value.as_table() else {
            problems.push(format!("[{name}] must be a section"));
            continue;
        };
        for key in table.keys() {
            if !req.contains(&key.as_str()) && !opt.contains(&key.as_str()) {
                problems.push(format!("unknown key '{name}.{key}'"));
            }
        }
    }
    for (name, req, _) in SCHEMA {
        match doc.get(*name).and_then(|v| v.as_table()) {
            Some(table) => {
                for key in *req {
                    if !table.contains_key(*key) {
                        problems.push(format!("missing key '{name}.{key}'"));
                    }
                }
            }
            None if !OPTIONAL_SECTIONS.contains(name) && !doc.contains_key(*name) => {
                problems.push(format!("missing section [{name}]"));
            }
            None => {}
        }
    }
    problems
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let doc: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| FwiError::Config(e.to_string()))?;
        let problems = schema_problems(&doc);
        if !problems.is_empty() {
            return Err(FwiError::Config(problems.join("; ")));
        }
        let cfg: RunConfig = toml::from_str(text).map_err(|e| FwiError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| FwiError::Config(format!("cannot read {}: {e}", path.display())))?;
        RunConfig::parse(&text)
    }

    /// The resolved document, as archived next to every run's outputs.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always serializable")
    }

    /// Checks every value and reports all problems at once.
    pub fn validate(&self) -> Result<()> {
        let mut p = Vec::new();
        let dim = self.grid.extent_m.len();
        if !(dim == 2 || dim == 3) {
            p.push(format!("grid.extent_m needs 2 or 3 entries, got {dim}"));
        }
        if !(self.grid.spacing_m > 0.0) {
            p.push("grid.spacing_m must be positive".into());
        }
        let ph = &self.physics;
        if !(ph.freq_hz > 0.0) {
            p.push("physics.freq_hz must be positive".into());
        }
        if !(ph.c_min_mps > 0.0 && ph.c_min_mps < ph.c_max_mps) {
            p.push("physics needs 0 < c_min_mps < c_max_mps".into());
        }
        if !(ph.c_water_mps >= ph.c_min_mps && ph.c_water_mps <= ph.c_max_mps) {
            p.push("physics.c_water_mps must lie within [c_min_mps, c_max_mps]".into());
        }
        if self.partition.max_extent_m.len() != dim {
            p.push(format!("partition.max_extent_m needs {dim} entries"));
        }
        if self.partition.water_depth_m < 0.0 {
            p.push("partition.water_depth_m must be non-negative".into());
        }
        let s = &self.sources;
        let h = dim.saturating_sub(1);
        for (name, len) in [
            ("obs_start_m", s.obs_start_m.len()),
            ("obs_step_m", s.obs_step_m.len()),
            ("obs_count", s.obs_count.len()),
            ("sim_start_m", s.sim_start_m.len()),
            ("sim_step_m", s.sim_step_m.len()),
            ("sim_count", s.sim_count.len()),
        ] {
            if len != h {
                p.push(format!("sources.{name} needs {h} entries (one per horizontal axis)"));
            }
        }
        if s.obs_depth_m.is_empty() || s.sim_depth_m.is_empty() {
            p.push("sources.obs_depth_m and sources.sim_depth_m must not be empty".into());
        }
        if self.noise.snr_db.is_nan() || self.noise.snr_db == f64::NEG_INFINITY {
            p.push("noise.snr_db must be a number or inf".into());
        }
        let f = &self.phantom;
        if f.inclusion_lo_m.len() != dim || f.inclusion_hi_m.len() != dim {
            p.push(format!("phantom inclusion corners need {dim} entries"));
        }
        if let Err(FwiError::Config(msg)) = self.optim().validate() {
            p.push(msg);
        }
        if p.is_empty() {
            Ok(())
        } else {
            Err(FwiError::Config(p.join("; ")))
        }
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::with_spacing(&self.grid.extent_m, self.grid.spacing_m)
    }

    pub fn physics(&self) -> Result<PhysicsConfig> {
        PhysicsConfig::new(self.physics.freq_hz, self.physics.c_water_mps)
    }

    pub fn bounds(&self) -> Result<SpeedBounds> {
        SpeedBounds::new(self.physics.c_min_mps, self.physics.c_max_mps, self.physics.c_water_mps)
    }

    pub fn partition(&self, grid: &Grid) -> Result<Arc<Partition>> {
        Ok(Arc::new(Partition::build(
            grid,
            &self.partition.max_extent_m,
            self.partition.water_depth_m,
        )?))
    }

    pub fn receivers(&self, grid: &Grid) -> Result<ReceiverArray> {
        ReceiverArray::layer(grid, self.receivers.depth_m)
    }

    pub fn observation_sources(&self) -> Result<SourceSet> {
        let s = &self.sources;
        SourceSet::lattice(&s.obs_start_m, &s.obs_step_m, &s.obs_count, &s.obs_depth_m, SourceRole::Observation)
    }

    /// The observation lattice itself unless `decoupled`.
    pub fn simulation_sources(&self, decoupled: bool) -> Result<SourceSet> {
        let s = &self.sources;
        if decoupled {
            SourceSet::lattice(&s.sim_start_m, &s.sim_step_m, &s.sim_count, &s.sim_depth_m, SourceRole::Simulation)
        } else {
            Ok(self.observation_sources()?.with_role(SourceRole::Simulation))
        }
    }

    pub fn optim(&self) -> OptimConfig {
        let o = &self.optimizer;
        OptimConfig {
            n_iter_min: o.n_iter_min,
            n_iter_max: o.n_iter_max,
            n_eps: o.n_eps,
            eps_j: o.eps_j,
            armijo_c1: o.armijo_c1,
            backtrack: o.backtrack,
            initial_step_fraction: o.initial_step_fraction,
            max_backtracks: o.max_backtracks,
            ..OptimConfig::default()
        }
    }

    /// Depth-only background: water above the water depth, linear below.
    pub fn background(&self, grid: &Grid) -> NodalField {
        let f = self.phantom.clone();
        let wd = self.partition.water_depth_m;
        let cw = self.physics.c_water_mps;
        let axis = grid.depth_axis();
        NodalField::from_fn(*grid, "m/s", move |x| {
            let z = x[axis];
            if z <= wd {
                cw
            } else {
                f.background_mps + f.gradient_per_s * (z - wd)
            }
        })
    }

    /// Background plus the inclusion (half-open box `[lo, hi)`).
    pub fn phantom(&self, grid: &Grid) -> NodalField {
        let mut field = self.background(grid);
        let f = &self.phantom;
        for (i, v) in field.values.iter_mut().enumerate() {
            let x = grid.coords(i);
            let inside = (0..grid.dim()).all(|d| x[d] >= f.inclusion_lo_m[d] && x[d] < f.inclusion_hi_m[d]);
            if inside {
                *v += f.inclusion_contrast_mps;
            }
        }
        field
    }
}
