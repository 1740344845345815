//! Nonlinear conjugate-gradient driver with Polak–Ribière directions,
//! backtracking line search and stagnation stopping.
//!
//! The optimizer works on the normalized coefficients of
//! [`NormalizedBasis`] (all components in m/s) and updates with the
//! convention `c_{j+1} = c_j − α s_j`, so `s_j` is an ascent direction.

use std::time::Instant;

use crate::error::{FwiError, Result};
use crate::misfit::MisfitProblem;
use crate::model::{coefficient_gradient, NormalizedBasis, PiecewiseLinearModel};

#[derive(Clone, Debug, PartialEq)]
pub struct OptimConfig {
    pub n_iter_min: usize,
    pub n_iter_max: usize,
    pub n_eps: usize,
    pub eps_j: f64,
    /// Armijo sufficient-decrease constant.
    pub armijo_c1: f64,
    /// Step reduction factor per backtrack.
    pub backtrack: f64,
    /// First trial moves the largest normalized coefficient by this
    /// fraction of `c_max − c_min`.
    pub initial_step_fraction: f64,
    pub max_backtracks: usize,
    /// Stop once `J ≤ zero_floor · J_scale` (round-off level misfit).
    pub zero_floor: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            n_iter_min: 50,
            n_iter_max: 250,
            n_eps: 10,
            eps_j: 0.01,
            armijo_c1: 1e-4,
            backtrack: 0.5,
            initial_step_fraction: 0.01,
            max_backtracks: 30,
            zero_floor: 1e-20,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.n_iter_min > self.n_iter_max {
            problems.push(format!(
                "n_iter_min ({}) exceeds n_iter_max ({})",
                self.n_iter_min, self.n_iter_max
            ));
        }
        if !(self.eps_j > 0.0 && self.eps_j < 1.0) {
            problems.push(format!("eps_j must lie in (0, 1), got {}", self.eps_j));
        }
        if !(self.armijo_c1 > 0.0 && self.armijo_c1 < 1.0) {
            problems.push(format!("armijo_c1 must lie in (0, 1), got {}", self.armijo_c1));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            problems.push(format!("backtrack must lie in (0, 1), got {}", self.backtrack));
        }
        if !(self.initial_step_fraction > 0.0) {
            problems.push("initial_step_fraction must be positive".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(FwiError::Config(problems.join("; ")))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Termination {
    MaxIterations,
    Stagnation { e: f64 },
    LineSearchFailure,
    ZeroGradient,
    ZeroResidual,
    /// Solver or feasibility failure; the last valid model is returned.
    Failed(String),
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Termination::MaxIterations => write!(f, "max-iterations"),
            Termination::Stagnation { e } => write!(f, "stagnation (e = {e:.6e})"),
            Termination::LineSearchFailure => write!(f, "line-search-failure"),
            Termination::ZeroGradient => write!(f, "zero-gradient"),
            Termination::ZeroResidual => write!(f, "zero-residual"),
            Termination::Failed(msg) => write!(f, "failed: {msg}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub j: f64,
    pub grad_norm: f64,
    pub alpha: f64,
    pub backtracks: usize,
    pub solves: usize,
    pub wall_time_s: f64,
}

impl IterationRecord {
    /// Equality ignoring wall time.
    pub fn same_outcome(&self, other: &IterationRecord) -> bool {
        self.iteration == other.iteration
            && self.j.to_bits() == other.j.to_bits()
            && self.grad_norm.to_bits() == other.grad_norm.to_bits()
            && self.alpha.to_bits() == other.alpha.to_bits()
            && self.backtracks == other.backtracks
            && self.solves == other.solves
    }
}

#[derive(Clone, Debug)]
pub struct InversionState {
    /// Current normalized coefficients.
    pub theta: Vec<f64>,
    pub prev_grad: Option<Vec<f64>>,
    pub direction: Option<Vec<f64>>,
    /// `J_1, J_2, ..` at the start of each iteration.
    pub history: Vec<f64>,
    pub iteration: usize,
    pub termination: Option<Termination>,
}

#[derive(Clone, Debug)]
pub struct InversionOutcome {
    pub model: PiecewiseLinearModel,
    pub records: Vec<IterationRecord>,
    pub termination: Termination,
    /// Misfit of the returned model, when known.
    pub final_j: Option<f64>,
    pub state: InversionState,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// PR+ direction: `β = max(0, ⟨g, g − g_prev⟩ / ⟨g_prev, g_prev⟩)`,
/// `s = g + β s_prev`; masked entries are zeroed. Without history, or
/// with `g_prev = 0`, `s = g`.
pub fn pr_direction(
    g: &[f64],
    g_prev: Option<&[f64]>,
    s_prev: Option<&[f64]>,
    mask: &[bool],
) -> (Vec<f64>, f64) {
    let beta = match (g_prev, s_prev) {
        (Some(gp), Some(_)) => {
            let den = dot(gp, gp);
            if den == 0.0 {
                0.0
            } else {
                let num: f64 = g.iter().zip(gp).map(|(a, b)| a * (a - b)).sum();
                (num / den).max(0.0)
            }
        }
        _ => 0.0,
    };
    let s = g
        .iter()
        .enumerate()
        .map(|(k, gk)| {
            if !mask[k] {
                0.0
            } else if beta == 0.0 {
                *gk
            } else {
                gk + beta * s_prev.unwrap()[k]
            }
        })
        .collect();
    (s, beta)
}

#[derive(Clone, Debug, PartialEq)]
pub enum LineSearchOutcome {
    Accepted { alpha: f64, j: f64, backtracks: usize },
    Failed { backtracks: usize },
}

/// Backtracking from `α₀` by factor `ρ` until
/// `J(θ − α s) ≤ J(θ) − c₁ α ⟨g, s⟩` holds at a feasible point.
/// `j_fn` returns `None` for trial points violating the speed bounds.
pub fn line_search<F>(
    theta: &[f64],
    j0: f64,
    g: &[f64],
    s: &[f64],
    alpha0: f64,
    cfg: &OptimConfig,
    mut j_fn: F,
) -> Result<LineSearchOutcome>
where
    F: FnMut(&[f64]) -> Result<Option<f64>>,
{
    let slope = dot(g, s);
    let mut alpha = alpha0;
    let mut trial = vec![0.0; theta.len()];
    for m in 0..=cfg.max_backtracks {
        for k in 0..theta.len() {
            trial[k] = theta[k] - alpha * s[k];
        }
        if let Some(j) = j_fn(&trial)? {
            if j <= j0 - cfg.armijo_c1 * alpha * slope {
                return Ok(LineSearchOutcome::Accepted {
                    alpha,
                    j,
                    backtracks: m,
                });
            }
        }
        alpha *= cfg.backtrack;
    }
    Ok(LineSearchOutcome::Failed {
        backtracks: cfg.max_backtracks + 1,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StagnationDecision {
    Continue,
    Stop { e: f64 },
}

/// Relative decrease `e = (J_{j−n_ε} − J_j) / J_{j−n_ε}` over the last
/// `n_ε` iterations; only evaluated once `j ≥ n_iter_min` and `j > n_ε`.
/// `history[k]` holds `J_{k+1}`.
pub fn stagnation(history: &[f64], j: usize, cfg: &OptimConfig) -> StagnationDecision {
    if j < cfg.n_iter_min || j <= cfg.n_eps || history.len() < j {
        return StagnationDecision::Continue;
    }
    let old = history[j - cfg.n_eps - 1];
    let now = history[j - 1];
    let e = (old - now) / old;
    if e < cfg.eps_j {
        StagnationDecision::Stop { e }
    } else {
        StagnationDecision::Continue
    }
}

/// Runs the reconstruction from `initial` on a fixed partition.
pub fn run_inversion(
    problem: &MisfitProblem,
    initial: &PiecewiseLinearModel,
    cfg: &OptimConfig,
) -> Result<InversionOutcome> {
    run_inversion_with(problem, initial, cfg, |_| {})
}

/// Same as [`run_inversion`], calling `observer` after every iteration.
pub fn run_inversion_with<O>(
    problem: &MisfitProblem,
    initial: &PiecewiseLinearModel,
    cfg: &OptimConfig,
    mut observer: O,
) -> Result<InversionOutcome>
where
    O: FnMut(&IterationRecord),
{
    cfg.validate()?;
    initial.evaluate()?;
    if initial.partition().grid() != problem.grid() {
        return Err(FwiError::Geometry("initial model and problem grids differ".into()));
    }
    let partition = initial.partition().clone();
    let basis = NormalizedBasis::new(&partition);
    let mask = initial.free_mask();
    let range = initial.bounds().range();

    let mut state = InversionState {
        theta: basis.to_normalized(initial.coefficients()),
        prev_grad: None,
        direction: None,
        history: Vec::new(),
        iteration: 0,
        termination: None,
    };
    let mut model = initial.clone();
    let mut records = Vec::new();
    let mut final_j = None;

    let to_model = |theta: &[f64]| initial.with_coefficients(basis.from_normalized(theta));

    let termination = loop {
        if state.iteration >= cfg.n_iter_max {
            break Termination::MaxIterations;
        }
        state.iteration += 1;
        let j_index = state.iteration;
        let started = Instant::now();

        let speed = match model.evaluate() {
            Ok(s) => s,
            Err(e) => break Termination::Failed(e.to_string()),
        };
        let (report, nodal) = match problem.evaluate_with_gradient(&speed) {
            Ok(r) => r,
            Err(e) => break Termination::Failed(e.to_string()),
        };
        let mut solves = report.forward_solves + report.adjoint_solves;
        let j_now = report.j;
        state.history.push(j_now);
        final_j = Some(j_now);

        let raw = coefficient_gradient(&nodal, &partition)?;
        let mut g = basis.gradient_to_normalized(&raw);
        for (gk, free) in g.iter_mut().zip(&mask) {
            if !free {
                *gk = 0.0;
            }
        }
        let grad_norm = dot(&g, &g).sqrt();

        let stop_now = if j_now <= cfg.zero_floor * report.j_scale {
            Some(Termination::ZeroResidual)
        } else if grad_norm == 0.0 {
            Some(Termination::ZeroGradient)
        } else {
            None
        };
        if let Some(t) = stop_now {
            let rec = IterationRecord {
                iteration: j_index,
                j: j_now,
                grad_norm,
                alpha: 0.0,
                backtracks: 0,
                solves,
                wall_time_s: started.elapsed().as_secs_f64(),
            };
            observer(&rec);
            records.push(rec);
            break t;
        }

        let (mut s, _beta) = pr_direction(
            &g,
            state.prev_grad.as_deref(),
            state.direction.as_deref(),
            &mask,
        );
        let mut steepest = state.prev_grad.is_none();
        if dot(&g, &s) <= 0.0 {
            s = g.clone();
            steepest = true;
        }

        let mut trial_solves = 0usize;
        let mut j_fn = |theta: &[f64]| -> Result<Option<f64>> {
            let m = to_model(theta)?;
            match m.evaluate() {
                Ok(speed) => {
                    let r = problem.evaluate(&speed)?;
                    trial_solves += r.forward_solves;
                    Ok(Some(r.j))
                }
                Err(FwiError::BoundsViolation { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        };

        let mut backtracks_total = 0;
        let accepted = loop {
            let smax = s.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let alpha0 = cfg.initial_step_fraction * range / smax;
            let outcome = line_search(&state.theta, j_now, &g, &s, alpha0, cfg, &mut j_fn);
            match outcome {
                Ok(LineSearchOutcome::Accepted { alpha, j, backtracks }) => {
                    backtracks_total += backtracks;
                    break Ok(Some((alpha, j)));
                }
                Ok(LineSearchOutcome::Failed { backtracks }) => {
                    backtracks_total += backtracks;
                    if steepest {
                        break Ok(None);
                    }
                    s = g.clone();
                    steepest = true;
                }
                Err(e) => break Err(e),
            }
        };
        solves += trial_solves;

        let (alpha, j_new) = match accepted {
            Ok(Some(v)) => v,
            Ok(None) => {
                let rec = IterationRecord {
                    iteration: j_index,
                    j: j_now,
                    grad_norm,
                    alpha: 0.0,
                    backtracks: backtracks_total,
                    solves,
                    wall_time_s: started.elapsed().as_secs_f64(),
                };
                observer(&rec);
                records.push(rec);
                break Termination::LineSearchFailure;
            }
            Err(e) => break Termination::Failed(e.to_string()),
        };

        for k in 0..state.theta.len() {
            state.theta[k] -= alpha * s[k];
        }
        model = match to_model(&state.theta) {
            Ok(m) => m,
            Err(e) => break Termination::Failed(e.to_string()),
        };
        final_j = Some(j_new);
        state.prev_grad = Some(g);
        state.direction = Some(s);

        let rec = IterationRecord {
            iteration: j_index,
            j: j_now,
            grad_norm,
            alpha,
            backtracks: backtracks_total,
            solves,
            wall_time_s: started.elapsed().as_secs_f64(),
        };
        observer(&rec);
        records.push(rec);

        if let StagnationDecision::Stop { e } = stagnation(&state.history, j_index, cfg) {
            break Termination::Stagnation { e };
        }
    };
    state.termination = Some(termination.clone());
    Ok(InversionOutcome {
        model,
        records,
        termination,
        final_j,
        state,
    })
}
