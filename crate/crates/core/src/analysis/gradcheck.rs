use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{FwiError, Result};
use crate::misfit::MisfitProblem;
use crate::model::{coefficient_gradient, PiecewiseLinearModel, SpeedBounds};
use crate::partition::Partition;

use super::random_model;

/// Step sweep, as fractions of each coefficient's natural scale.
pub const DEFAULT_STEPS: [f64; 5] = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6];

/// Largest node count accepted by the check.
const MAX_NODES: usize = 151 * 101;

const TOLERANCE: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckStatus {
    Pass,
    Fail,
    /// Every step left `J` unchanged to rounding, even after widening.
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientCheck {
    pub probe: usize,
    pub coefficient: usize,
    pub adjoint: f64,
    /// Central difference at the best step.
    pub finite_difference: f64,
    pub best_step: f64,
    pub rel_error: f64,
    pub status: CheckStatus,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub checks: Vec<CoefficientCheck>,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.status == CheckStatus::Pass)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.checks.iter().map(|c| c.rel_error).fold(0.0, f64::max)
    }

    pub fn to_table(&self) -> String {
        let mut out = String::from("probe  coef  adjoint                 finite-difference       step      rel-error  status\n");
        for c in &self.checks {
            out.push_str(&format!(
                "{:>5}  {:>4}  {:>22.15e}  {:>22.15e}  {:>8.1e}  {:>9.2e}  {:?}\n",
                c.probe, c.coefficient, c.adjoint, c.finite_difference, c.best_step, c.rel_error, c.status
            ));
        }
        out
    }
}

fn misfit_at(problem: &MisfitProblem, model: &PiecewiseLinearModel, coeffs: Vec<f64>) -> Result<f64> {
    // Bounds are irrelevant for a derivative probe; only the discretization
    // checks in assembly apply.
    let m = model.with_coefficients(coeffs)?;
    Ok(problem.evaluate(&m.evaluate_unchecked())?.j)
}

/// Compares the adjoint coefficient gradient with central differences at
/// `n_probes` random admissible models, over every free coefficient and
/// every step in `steps`. The reported error is the minimum over steps of
/// `|fd − g| / max(|fd|, |g|, 1e-10·max_k |g_k| s_k / s)`, where `s` is
/// the coefficient scale (speed range for intercepts, range over extent
/// for slopes).
pub fn gradcheck(
    problem: &MisfitProblem,
    partition: &Arc<Partition>,
    bounds: SpeedBounds,
    n_probes: usize,
    steps: &[f64],
    seed: u64,
) -> Result<GradcheckReport> {
    let grid = *partition.grid();
    if grid.n_nodes() > MAX_NODES {
        return Err(FwiError::Config(format!(
            "gradient check is limited to {MAX_NODES} nodes, grid {} has {}",
            grid.describe(),
            grid.n_nodes()
        )));
    }
    if steps.is_empty() || steps.iter().any(|s| !(*s > 0.0)) {
        return Err(FwiError::Config("gradient check needs positive steps".into()));
    }
    let dim = grid.dim();
    let scales: Vec<f64> = (0..partition.n_coefficients())
        .map(|k| match k % (1 + dim) {
            0 => bounds.range(),
            d => bounds.range() / grid.extent()[d - 1],
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();
    for probe in 0..n_probes {
        let model = random_model(partition, bounds, &mut rng)?;
        let (report, nodal) = problem.evaluate_with_gradient(&model.evaluate()?)?;
        let grad = coefficient_gradient(&nodal, partition)?;
        let j0 = report.j;
        let gmax = grad
            .iter()
            .zip(&scales)
            .fold(0.0f64, |m, (g, s)| m.max((g * s).abs()));
        for (k, free) in model.free_mask().into_iter().enumerate() {
            if !free {
                continue;
            }
            let floor = 1e-10 * gmax / scales[k];
            let mut best: Option<(f64, f64, f64)> = None;
            let mut try_step = |h: f64| -> Result<bool> {
                let mut cp = model.coefficients().to_vec();
                let mut cm = cp.clone();
                cp[k] += h;
                cm[k] -= h;
                let (jp, jm) = (misfit_at(problem, &model, cp)?, misfit_at(problem, &model, cm)?);
                if (jp - jm).abs() <= 1e-13 * j0.abs() {
                    return Ok(false);
                }
                let fd = (jp - jm) / (2.0 * h);
                let rel = (fd - grad[k]).abs() / fd.abs().max(grad[k].abs()).max(floor);
                if best.is_none_or(|b| rel < b.2) {
                    best = Some((fd, h, rel));
                }
                Ok(true)
            };
            let mut any = false;
            for s in steps {
                any |= try_step(s * scales[k])?;
            }
            if !any {
                let widest = steps.iter().fold(0.0f64, |a, b| a.max(*b));
                try_step(10.0 * widest * scales[k])?;
            }
            let check = match best {
                Some((fd, h, rel)) => CoefficientCheck {
                    probe,
                    coefficient: k,
                    adjoint: grad[k],
                    finite_difference: fd,
                    best_step: h,
                    rel_error: rel,
                    status: if rel <= TOLERANCE { CheckStatus::Pass } else { CheckStatus::Fail },
                },
                None => CoefficientCheck {
                    probe,
                    coefficient: k,
                    adjoint: grad[k],
                    finite_difference: f64::NAN,
                    best_step: f64::NAN,
                    rel_error: f64::INFINITY,
                    status: CheckStatus::Inconclusive,
                },
            };
            checks.push(check);
        }
    }
    Ok(GradcheckReport {
        checks,
        tolerance: TOLERANCE,
    })
}
