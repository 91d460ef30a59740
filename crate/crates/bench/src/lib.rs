//! Shared fixtures of the benchmarks.

use std::sync::Arc;

use grushin_mfg::coupling::{Coupling, CouplingSpec};
use grushin_mfg::mfg::{default_initial_density, TimeMesh};
use grushin_mfg::{Profile, ScalarField, TorusGrid};

/// Default game on an `n x n` SinProfile grid with `2n` time steps. The
/// coupling kernels are dense, so `n` beyond 64 needs gigabytes.
pub struct Fixture {
    pub grid: Arc<TorusGrid>,
    pub coupling: Coupling,
    pub m0: ScalarField,
    pub mesh: TimeMesh,
}

impl Fixture {
    pub fn new(n: usize) -> Self {
        let grid = Arc::new(TorusGrid::new(n, n, Profile::SinProfile).expect("valid grid"));
        let coupling = Coupling::from_spec(&grid, &CouplingSpec::default()).expect("default coupling");
        let m0 = default_initial_density(&grid);
        let mesh = TimeMesh::new(0.0, 1.0, 2 * n).expect("valid mesh");
        Fixture {
            grid,
            coupling,
            m0,
            mesh,
        }
    }
}
