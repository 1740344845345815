mod common;

use num_complex::Complex64;

use cauchy_fwi::acquisition::{synthesize, ReceiverArray, SourceRole, SourceSet};
use cauchy_fwi::helmholtz::{locate_receivers, traces, ComplexField};
use cauchy_fwi::misfit::{adjoint_source, misfit, reciprocity_gap};
use cauchy_fwi::{Grid, MisfitProblem, NodalField, PhysicsConfig};

fn j_of_field(field: &ComplexField, receivers: &ReceiverArray, weight: f64, data: &cauchy_fwi::CauchyDataSet) -> f64 {
    let t = traces(field, receivers).unwrap();
    misfit(&reciprocity_gap(&[t], &[weight], data).unwrap())
}

/// The adjoint source is the Wirtinger gradient `∂J/∂Re G − i ∂J/∂Im G`
/// of the misfit with respect to the simulated field, divided by the
/// simulation weight. `J` is quadratic in `G`, so central differences are
/// exact up to rounding.
#[test]
fn adjoint_source_is_the_field_derivative_of_the_misfit() {
    let g = Grid::new(&[40.0, 60.0], &[5, 7]).unwrap();
    let phys = PhysicsConfig::new(5.0, 1500.0).unwrap();
    let receivers = ReceiverArray::new(2, vec![[10.0, 30.0, 0.0], [30.0, 30.0, 0.0]], vec![0.7, 1.3]).unwrap();
    let obs = SourceSet::new(2, vec![[20.0, 10.0, 0.0]], vec![2.5], SourceRole::Observation).unwrap();
    let speed = NodalField::from_fn(g, "m/s", |x| 1500.0 + 4.0 * x[1]);
    let data = synthesize(&speed, &obs, &receivers, &phys).unwrap();

    // a simulated field unrelated to the data
    let mut field = ComplexField::zeros(g);
    for (k, v) in field.values.iter_mut().enumerate() {
        if !g.is_dirichlet(k) {
            *v = Complex64::new((0.37 * k as f64).sin(), (0.11 * k as f64).cos());
        }
    }
    let wy = 1.7;
    let t = traces(&field, &receivers).unwrap();
    let gap = reciprocity_gap(&[t], &[wy], &data).unwrap();
    let stencil = locate_receivers(&g, &receivers).unwrap();
    let b = adjoint_source(&g, &stencil, receivers.normal_sign(), &gap, &data, 0);

    let eps = 1e-3;
    let scale = b.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
    assert!(scale > 0.0);
    for k in 0..g.n_nodes() {
        if g.is_dirichlet(k) {
            assert_eq!(b.values[k], Complex64::new(0.0, 0.0));
            continue;
        }
        let mut partial = [0.0; 2];
        for (part, dir) in [Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)].into_iter().enumerate() {
            let mut fp = field.clone();
            fp.values[k] += dir * eps;
            let mut fm = field.clone();
            fm.values[k] -= dir * eps;
            partial[part] = (j_of_field(&fp, &receivers, wy, &data) - j_of_field(&fm, &receivers, wy, &data)) / (2.0 * eps);
        }
        let oracle = Complex64::new(partial[0], -partial[1]) / wy;
        assert!((b.values[k] - oracle).norm() <= 1e-8 * scale, "node {k}: {} vs {oracle}", b.values[k]);
    }
}

#[test]
fn gap_is_antisymmetric_in_one_model() {
    // receivers over the middle of the layer only, so the gap is non-zero
    let t = common::toy();
    let speed = t.truth();
    let positions: Vec<[f64; 3]> = (10..=30).map(|i| [10.0 * i as f64, 30.0, 0.0]).collect();
    let receivers = ReceiverArray::new(2, positions.clone(), vec![10.0; positions.len()]).unwrap();
    let data = synthesize(&speed, &t.obs, &receivers, &t.phys).unwrap();
    let sim = t.obs.clone().with_role(SourceRole::Simulation);
    let problem = MisfitProblem::new(t.grid, t.phys, data, sim).unwrap();
    let gap = problem.evaluate(&speed).unwrap().gap;
    let max = gap.max_abs();
    assert!(max > 0.0);
    for y in 0..gap.n_sim {
        assert_eq!(gap.get(y, y), Complex64::new(0.0, 0.0));
        for z in 0..gap.n_obs {
            assert!((gap.get(y, z) + gap.get(z, y)).norm() <= 1e-10 * max);
        }
    }
}

#[test]
fn full_layer_gap_vanishes_between_distinct_sources_in_one_model() {
    let t = common::toy();
    let speed = t.truth();
    let data = synthesize(&speed, &t.obs, &t.receivers, &t.phys).unwrap();
    let sim = t.obs.clone().with_role(SourceRole::Simulation);
    let problem = MisfitProblem::new(t.grid, t.phys, data.clone(), sim).unwrap();
    let gap = problem.evaluate(&speed).unwrap().gap;
    // each term of the sum has magnitude about |G||∂G|
    let typical: f64 = data.g(0).iter().zip(data.dg(1)).map(|(a, b)| a.norm() * b.norm()).sum::<f64>() * 10.0;
    assert!(gap.max_abs() <= 1e-10 * typical, "{} vs {typical}", gap.max_abs());
}

#[test]
fn solver_counts_per_evaluation() {
    let t = common::toy();
    let problem = t.problem(&t.truth());
    let (report, _) = problem.evaluate_with_gradient(&t.background()).unwrap();
    assert_eq!(report.forward_solves, t.sim.len());
    assert_eq!(report.adjoint_solves, t.sim.len());
    assert_eq!(report.factorizations, 1);
    let only = problem.evaluate(&t.background()).unwrap();
    assert_eq!(only.forward_solves, t.sim.len());
    assert_eq!(only.j.to_bits(), report.j.to_bits());
}

#[test]
fn data_on_misaligned_receivers_are_rejected() {
    let t = common::toy();
    let receivers = ReceiverArray::new(2, vec![[105.0, 30.0, 0.0]], vec![1.0]).unwrap();
    let err = synthesize(&t.truth(), &t.obs, &receivers, &t.phys).unwrap_err();
    assert_eq!(err.category(), "acquisition");
}
