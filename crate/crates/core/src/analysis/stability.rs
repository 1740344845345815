use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::acquisition::{synthesize, ReceiverArray, SourceSet};
use crate::error::{FwiError, Result};
use crate::helmholtz::PhysicsConfig;
use crate::misfit::MisfitProblem;
use crate::model::{PiecewiseLinearModel, SpeedBounds};
use crate::partition::Partition;

use super::random_model;

/// Acquisition used by the probe: `c2` is observed with `obs`, `c1` is
/// simulated with `sim`, both on the partition's grid.
#[derive(Clone, Debug)]
pub struct ProbeGeometry {
    pub receivers: ReceiverArray,
    pub obs: SourceSet,
    pub sim: SourceSet,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbePair {
    /// Nodal sup norm `‖c1 − c2‖_∞`.
    pub sup_norm: f64,
    pub sqrt_j: f64,
    /// `sup_norm / sqrt_j`; infinite only for flagged pairs.
    pub ratio: f64,
    /// `J` at the zero-residual floor although `c1 ≠ c2`.
    pub flagged: bool,
    pub c1: Vec<f64>,
    pub c2: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StabilityProbeReport {
    /// Pairs with `c1 ≠ c2`; identical pairs are dropped from the table.
    pub pairs: Vec<ProbePair>,
    pub excluded_identical: usize,
    pub max_ratio: f64,
    pub min_ratio: f64,
}

impl StabilityProbeReport {
    pub fn flagged(&self) -> impl Iterator<Item = &ProbePair> {
        self.pairs.iter().filter(|p| p.flagged)
    }

    /// Empirical constant over the unflagged pairs.
    pub fn constant(&self) -> f64 {
        self.max_ratio
    }

    /// `sup_norm, sqrt_J, ratio, flagged` per pair.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("pair, sup_norm, sqrt_J, ratio, flagged\n");
        for (k, p) in self.pairs.iter().enumerate() {
            out.push_str(&format!(
                "{k}, {:.16e}, {:.16e}, {:.16e}, {}\n",
                p.sup_norm,
                p.sqrt_j,
                p.ratio,
                u8::from(p.flagged)
            ));
        }
        out
    }
}

/// Misfit between two models with the same acquisition: `c2` generates the
/// data, `c1` the simulated fields. Returns `(J, zero-residual floor)`.
pub fn pair_misfit(
    c1: &PiecewiseLinearModel,
    c2: &PiecewiseLinearModel,
    phys: &PhysicsConfig,
    geometry: &ProbeGeometry,
) -> Result<(f64, f64)> {
    let grid = *c1.partition().grid();
    let data = synthesize(&c2.evaluate()?, &geometry.obs, &geometry.receivers, phys)?;
    let problem = MisfitProblem::new(grid, *phys, data, geometry.sim.clone())?;
    let report = problem.evaluate(&c1.evaluate()?)?;
    Ok((report.j, 1e-20 * report.j_scale))
}

pub fn probe_stability(
    partition: &Arc<Partition>,
    bounds: SpeedBounds,
    phys: &PhysicsConfig,
    geometry: &ProbeGeometry,
    n_pairs: usize,
    seed: u64,
) -> Result<StabilityProbeReport> {
    if n_pairs < 2 {
        return Err(FwiError::Config(format!("the probe needs at least 2 pairs, got {n_pairs}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(n_pairs);
    let mut excluded = 0;
    for _ in 0..n_pairs {
        let c1 = random_model(partition, bounds, &mut rng)?;
        let c2 = random_model(partition, bounds, &mut rng)?;
        let v1 = c1.evaluate()?;
        let v2 = c2.evaluate()?;
        let sup_norm = v1
            .values
            .iter()
            .zip(&v2.values)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        if sup_norm == 0.0 {
            excluded += 1;
            continue;
        }
        let (j, floor) = pair_misfit(&c1, &c2, phys, geometry)?;
        let sqrt_j = j.max(0.0).sqrt();
        let flagged = j <= floor;
        pairs.push(ProbePair {
            sup_norm,
            sqrt_j,
            ratio: if sqrt_j > 0.0 { sup_norm / sqrt_j } else { f64::INFINITY },
            flagged,
            c1: c1.coefficients().to_vec(),
            c2: c2.coefficients().to_vec(),
        });
    }
    let ratios = pairs.iter().filter(|p| !p.flagged).map(|p| p.ratio);
    let max_ratio = ratios.clone().fold(0.0f64, f64::max);
    let min_ratio = ratios.fold(f64::INFINITY, f64::min);
    Ok(StabilityProbeReport {
        pairs,
        excluded_identical: excluded,
        max_ratio,
        min_ratio,
    })
}
