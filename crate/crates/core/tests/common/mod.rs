#![allow(dead_code)]

pub mod oracles;

use std::sync::Arc;

use cauchy_fwi::acquisition::{synthesize, ReceiverArray, SourceRole, SourceSet};
use num_complex::Complex64;

use cauchy_fwi::helmholtz::{assemble, SourceSpec};
use cauchy_fwi::{Grid, MisfitProblem, NodalField, Partition, PhysicsConfig, PiecewiseLinearModel, SpeedBounds};

/// Small 2D survey used by several test files: 400 m × 200 m at h = 10 m,
/// 5 Hz, water down to 40 m, receivers at 30 m, sources at 10 m.
pub struct Toy {
    pub grid: Grid,
    pub phys: PhysicsConfig,
    pub bounds: SpeedBounds,
    pub partition: Arc<Partition>,
    pub receivers: ReceiverArray,
    pub obs: SourceSet,
    pub sim: SourceSet,
}

pub fn toy() -> Toy {
    let grid = Grid::new(&[400.0, 200.0], &[41, 21]).unwrap();
    let phys = PhysicsConfig::new(5.0, 1500.0).unwrap();
    let bounds = SpeedBounds::new(1400.0, 3000.0, 1500.0).unwrap();
    let partition = Arc::new(Partition::build(&grid, &[100.0, 80.0], 40.0).unwrap());
    let receivers = ReceiverArray::layer(&grid, 30.0).unwrap();
    let obs = SourceSet::lattice(&[20.0], &[20.0], &[19], &[10.0], SourceRole::Observation).unwrap();
    let sim = SourceSet::lattice(&[30.0], &[30.0], &[12], &[10.0], SourceRole::Simulation).unwrap();
    Toy {
        grid,
        phys,
        bounds,
        partition,
        receivers,
        obs,
        sim,
    }
}

impl Toy {
    pub fn background(&self) -> NodalField {
        NodalField::from_fn(self.grid, "m/s", |p| {
            if p[1] <= 40.0 {
                1500.0
            } else {
                1700.0 + 2.0 * (p[1] - 40.0)
            }
        })
    }

    pub fn truth(&self) -> NodalField {
        let bg = self.background();
        let mut v = bg.values.clone();
        for (i, val) in v.iter_mut().enumerate() {
            let p = self.grid.coords(i);
            if (200.0..300.0).contains(&p[0]) && (80.0..160.0).contains(&p[1]) {
                *val += 300.0;
            }
        }
        NodalField::new(self.grid, v, "m/s").unwrap()
    }

    pub fn model(&self, field: &NodalField) -> PiecewiseLinearModel {
        PiecewiseLinearModel::fit(field, self.partition.clone(), self.bounds).unwrap()
    }

    /// Inverse-crime problem with data from `truth`.
    pub fn problem(&self, truth: &NodalField) -> MisfitProblem {
        let data = synthesize(truth, &self.obs, &self.receivers, &self.phys).unwrap();
        MisfitProblem::new(self.grid, self.phys, data, self.sim.clone()).unwrap()
    }
}

/// Worst relative magnitude error of a point-source solve against
/// `(i/4) H0(kr)` for 150 m ≤ r ≤ 450 m: homogeneous 1500 m/s, 5 Hz,
/// 1200 m square at h = 10 m, Robin condition on every face.
pub fn free_space_magnitude_error() -> f64 {
    let g = Grid::new(&[1200.0, 1200.0], &[121, 121]).unwrap().all_absorbing();
    let phys = PhysicsConfig::new(5.0, 1500.0).unwrap();
    let sys = assemble(&NodalField::constant(g, 1500.0, "m/s"), &phys).unwrap();
    let u = sys.green(&SourceSpec::new(&[600.0, 600.0])).unwrap();
    let k = phys.k0();
    let mut worst: f64 = 0.0;
    for i in 0..g.n_nodes() {
        let x = g.coords(i);
        let r = ((x[0] - 600.0).powi(2) + (x[1] - 600.0).powi(2)).sqrt();
        if (150.0..=450.0).contains(&r) {
            let exact = oracles::free_space_green_2d(k, r).norm();
            worst = worst.max((u.values[i].norm() - exact).abs() / exact);
        }
    }
    worst
}

/// Observed order from solutions at h, h/2, h/4 sampled on the coarse
/// nodes away from the source.
pub fn self_convergence_order(extent: f64, coarse_nodes: usize, freq: f64) -> f64 {
    let phys = PhysicsConfig::new(freq, 1500.0).unwrap();
    let centre = 0.5 * extent;
    let coarse = Grid::new(&[extent, extent], &[coarse_nodes, coarse_nodes]).unwrap().all_absorbing();
    let solve = |factor: usize| {
        let g = coarse.refined(factor).unwrap();
        let sys = assemble(&NodalField::constant(g, 1500.0, "m/s"), &phys).unwrap();
        let u = sys.green(&SourceSpec::new(&[centre, centre])).unwrap();
        (0..coarse.n_nodes())
            .map(|i| {
                let m = coarse.multi_index(i);
                u.values[g.index([m[0] * factor, m[1] * factor, 0])]
            })
            .collect::<Vec<Complex64>>()
    };
    let (u1, u2, u4) = (solve(1), solve(2), solve(4));
    let lambda = 1500.0 / freq;
    let (mut e12, mut e24) = (0.0, 0.0);
    for i in 0..coarse.n_nodes() {
        let x = coarse.coords(i);
        let r = ((x[0] - centre).powi(2) + (x[1] - centre).powi(2)).sqrt();
        if r >= 0.5 * lambda {
            e12 += (u1[i] - u2[i]).norm_sqr();
            e24 += (u2[i] - u4[i]).norm_sqr();
        }
    }
    (e12 / e24).sqrt().log2()
}
