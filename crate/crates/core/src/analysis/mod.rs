//! Diagnostics built on the misfit stack: the empirical stability probe,
//! the finite-difference gradient check, and smoothed field export.

mod gradcheck;
mod smoothing;
mod stability;

pub use gradcheck::{gradcheck, CoefficientCheck, CheckStatus, GradcheckReport, DEFAULT_STEPS};
pub use smoothing::{export_field, gaussian_smooth};
pub use stability::{probe_stability, ProbeGeometry, ProbePair, StabilityProbeReport};

use std::sync::Arc;

use rand::Rng;

use crate::error::Result;
use crate::model::{NormalizedBasis, PiecewiseLinearModel, SpeedBounds};
use crate::partition::Partition;

/// Draws an admissible model: per free subdomain, the centroid speed is
/// uniform in `[c_min, c_max]` and the edge-to-centroid changes are
/// uniform within the remaining margin, so every node stays in bounds.
pub fn random_model<R: Rng>(
    partition: &Arc<Partition>,
    bounds: SpeedBounds,
    rng: &mut R,
) -> Result<PiecewiseLinearModel> {
    let dim = partition.grid().dim();
    let basis = NormalizedBasis::new(partition);
    let mut theta = vec![0.0; partition.n_coefficients()];
    for (j, sd) in partition.subdomains().iter().enumerate() {
        let t = &mut theta[j * (1 + dim)..(j + 1) * (1 + dim)];
        if sd.frozen {
            t[0] = bounds.c_water;
            continue;
        }
        let u = rng.random_range(bounds.c_min..=bounds.c_max);
        let margin = (u - bounds.c_min).min(bounds.c_max - u) / dim as f64;
        t[0] = u;
        for v in &mut t[1..] {
            *v = if margin > 0.0 {
                rng.random_range(-margin..=margin)
            } else {
                0.0
            };
        }
    }
    PiecewiseLinearModel::new(partition.clone(), basis.from_normalized(&theta), bounds)
}
