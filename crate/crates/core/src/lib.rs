//! Frequency-domain full-waveform inversion driven by dual-sensor Cauchy
//! data (pressure and its normal derivative on a receiver surface).
//!
//! The misfit is the reciprocity gap between observed traces and simulated
//! Green's functions; the unknown sound speed is piecewise linear on a
//! fixed box partition of the grid, and it is recovered by nonlinear
//! conjugate gradients with an adjoint-state gradient.

pub mod acquisition;
pub mod analysis;
pub mod cli;
pub mod config;
pub mod error;
pub mod grid;
pub mod helmholtz;
pub mod inversion;
pub mod io;
pub mod misfit;
pub mod model;
pub mod partition;

pub use acquisition::{CauchyDataSet, ReceiverArray, SourceRole, SourceSet};
pub use error::{FwiError, Result};
pub use grid::{Grid, NodalField};
pub use helmholtz::{ComplexField, HelmholtzSystem, PhysicsConfig, SourceSpec};
pub use inversion::{run_inversion, InversionOutcome, OptimConfig, Termination};
pub use misfit::{MisfitProblem, MisfitReport, ReciprocityGapMatrix};
pub use model::{PiecewiseLinearModel, SpeedBounds};
pub use partition::Partition;
