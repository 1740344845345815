mod common;

use cauchy_fwi::grid::relative_l2_error;
use cauchy_fwi::inversion::{run_inversion, IterationRecord};
use cauchy_fwi::{InversionOutcome, OptimConfig, Termination};

fn assert_mechanics(out: &InversionOutcome, initial: &cauchy_fwi::PiecewiseLinearModel, cfg: &OptimConfig) {
    // accepted J never increases
    for w in out.records.windows(2) {
        assert!(w[1].j <= w[0].j, "J rose from {} to {}", w[0].j, w[1].j);
    }
    if let Some(last) = out.records.last() {
        assert!(out.final_j.unwrap() <= last.j);
    }
    // frozen coefficients untouched, bit for bit
    let s = 1 + initial.partition().grid().dim();
    for (j, sd) in initial.partition().subdomains().iter().enumerate() {
        if sd.frozen {
            for k in j * s..(j + 1) * s {
                assert_eq!(out.model.coefficients()[k].to_bits(), initial.coefficients()[k].to_bits());
            }
        }
    }
    out.model.evaluate().expect("final model within bounds");
    // stagnation fires exactly at the first qualifying iteration
    let js: Vec<f64> = out.records.iter().map(|r| r.j).collect();
    let first = (1..=js.len()).find(|&j| {
        j >= cfg.n_iter_min && j > cfg.n_eps && (js[j - cfg.n_eps - 1] - js[j - 1]) / js[j - cfg.n_eps - 1] < cfg.eps_j
    });
    match out.termination {
        Termination::Stagnation { e } => {
            assert_eq!(first, Some(js.len()));
            assert!(e < cfg.eps_j);
        }
        _ => assert_eq!(first, None),
    }
}

#[test]
fn inverse_crime_inversion_reduces_error() {
    let t = common::toy();
    let truth = t.truth();
    let problem = t.problem(&truth);
    let initial = t.model(&t.background());
    let cfg = OptimConfig {
        n_iter_max: 175,
        ..OptimConfig::default()
    };
    let out = run_inversion(&problem, &initial, &cfg).unwrap();
    let e0 = relative_l2_error(&truth, &initial.evaluate().unwrap()).unwrap();
    let e1 = relative_l2_error(&truth, &out.model.evaluate().unwrap()).unwrap();
    assert!(e1 < 0.5 * e0, "E_rel {e0} -> {e1} ({})", out.termination);
    assert_mechanics(&out, &initial, &cfg);
}

#[test]
fn stagnation_stops_after_the_minimum_iteration_count() {
    let t = common::toy();
    let problem = t.problem(&t.truth());
    let initial = t.model(&t.background());
    let cfg = OptimConfig {
        n_iter_min: 15,
        n_eps: 5,
        eps_j: 0.2,
        n_iter_max: 100,
        ..OptimConfig::default()
    };
    let out = run_inversion(&problem, &initial, &cfg).unwrap();
    assert!(matches!(out.termination, Termination::Stagnation { .. }), "{}", out.termination);
    assert!(out.records.len() >= 15);
    assert_mechanics(&out, &initial, &cfg);
}

#[test]
fn data_from_the_initial_model_stop_at_once() {
    let t = common::toy();
    let initial = t.model(&t.truth());
    let problem = t.problem(&initial.evaluate().unwrap());
    let out = run_inversion(&problem, &initial, &OptimConfig::default()).unwrap();
    assert_eq!(out.termination, Termination::ZeroResidual);
    assert_eq!(out.records.len(), 1);
    assert_eq!(out.model.coefficients(), initial.coefficients());
}

#[test]
fn repeated_runs_are_identical() {
    let t = common::toy();
    let problem = t.problem(&t.truth());
    let initial = t.model(&t.background());
    let cfg = OptimConfig {
        n_iter_min: 5,
        n_iter_max: 12,
        ..OptimConfig::default()
    };
    let a = run_inversion(&problem, &initial, &cfg).unwrap();
    let b = run_inversion(&problem, &initial, &cfg).unwrap();
    assert_eq!(a.records.len(), b.records.len());
    assert!(a.records.iter().zip(&b.records).all(|(x, y)| x.same_outcome(y)));
    let bits = |m: &cauchy_fwi::PiecewiseLinearModel| m.coefficients().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.model), bits(&b.model));
}

#[test]
fn first_step_along_the_gradient_decreases_j() {
    let t = common::toy();
    let problem = t.problem(&t.truth());
    let initial = t.model(&t.background());
    let cfg = OptimConfig {
        n_iter_min: 1,
        n_iter_max: 1,
        ..OptimConfig::default()
    };
    let out = run_inversion(&problem, &initial, &cfg).unwrap();
    let r: &IterationRecord = &out.records[0];
    assert!(r.alpha > 0.0);
    assert!(out.final_j.unwrap() < r.j);
    assert_eq!(out.termination, Termination::MaxIterations);
}

#[test]
fn invalid_optimizer_settings_are_listed_together() {
    let cfg = OptimConfig {
        n_iter_min: 10,
        n_iter_max: 5,
        eps_j: 2.0,
        ..OptimConfig::default()
    };
    let msg = cfg.validate().unwrap_err().to_string();
    assert!(msg.contains("n_iter_min") && msg.contains("eps_j"), "{msg}");
}
