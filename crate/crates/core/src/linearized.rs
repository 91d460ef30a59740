//! Linearized MFG system around a discrete equilibrium `(u, m)`:
//! `-d_t z - Delta_X z + D_X u . D_X z = K_F rho + b`, `z(T) = K_G rho(T) + z_T`,
//! `d_t rho - Delta_X rho - div_X(rho D_X u) = div_X(m D_X z + c)`, `rho(t0) = rho0`,
//! and the measure-derivative kernel `K(t0, x, m0, y) = z(t0, x; delta_y)`.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coupling::{Coupling, Which};
use crate::dual_norm::path_distance;
use crate::error::{Error, Result};
use crate::field::{ScalarField, SpaceTimeField};
use crate::grid::TorusGrid;
use crate::hjb::{solve_backward_linear, BackwardLinearProblem};
use crate::kfp::{linearized_source, solve_kfp, FaceField, KFPProblem};
use crate::mfg::{MFGSolution, MfgOptions};
use crate::ops::gradient;

/// Largest grid for the full column sweep of [`build_kernel_k`].
pub const KERNEL_MAX_NODES: usize = 24 * 24;

/// Data of the linearized system; sources default to zero.
#[derive(Debug, Clone)]
pub struct LinearizedProblem {
    pub rho0: ScalarField,
    /// Source of the `z` equation.
    pub b: Option<SpaceTimeField>,
    /// Face form of the divergence source `c` of the `rho` equation.
    pub cvec: Option<Vec<FaceField>>,
    pub z_t_extra: Option<ScalarField>,
}

impl LinearizedProblem {
    pub fn initial(rho0: ScalarField) -> Self {
        LinearizedProblem {
            rho0,
            b: None,
            cvec: None,
            z_t_extra: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LinearizedSolution {
    pub z: SpaceTimeField,
    pub rho: SpaceTimeField,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
}

/// Damped Picard iteration on the linear forward-backward coupling. The
/// backward step is the exact derivative of the direct HJB scheme at the
/// base solution and the forward step the exact derivative of the KFP
/// scheme, so `z(t0)` is the derivative of `u(t0)` with respect to `m0`.
pub fn solve_linearized(base: &MFGSolution, c: &Coupling, p: &LinearizedProblem, opts: MfgOptions) -> Result<LinearizedSolution> {
    opts.validate()?;
    let g = base.grid().clone();
    g.ensure_same(p.rho0.grid())?;
    let mesh = base.mesh();
    let nt = mesh.nt;
    let forward = KFPProblem::from_value(p.rho0.clone(), &base.u)?;
    let zero_faces = vec![FaceField::zeros(g.len()); nt + 1];
    let cvec = p.cvec.as_ref().unwrap_or(&zero_faces);
    if cvec.len() != nt + 1 {
        return Err(Error::InvalidInput("source c has the wrong number of slices".into()));
    }
    if let Some(b) = &p.b {
        b.ensure_same_mesh(&base.u)?;
    }
    let zero = ScalarField::zeros(g.clone());
    let z_extra = p.z_t_extra.as_ref().unwrap_or(&zero);
    let mut mu = mesh.constant_path(&zero)?;
    let mut history = Vec::new();
    for it in 1..=opts.max_iter {
        let source = (0..=nt)
            .map(|k| {
                let s = c.apply_kernel(Which::F, mu.slice(k))?;
                Ok(match &p.b {
                    Some(b) => s.add(b.slice(k)),
                    None => s,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let source = SpaceTimeField::new(mesh.t0, mesh.t_end, source)?;
        let terminal = c.apply_kernel(Which::G, mu.last())?.add(z_extra);
        let backward = BackwardLinearProblem::hamiltonian_linearization(&base.hjb, source, terminal)?;
        let z = solve_backward_linear(&backward)?;
        let faces = (0..=nt)
            .map(|k| linearized_source(base.m.slice(k), &forward.drift[k], z.slice(k)).axpy(1.0, &cvec[k]))
            .collect();
        let rho = solve_kfp(&forward.clone().with_face_source(faces)?)?;
        let residual = path_distance(&rho, &mu);
        history.push(residual);
        if residual <= opts.tol {
            return Ok(LinearizedSolution {
                z,
                rho,
                iterations: it,
                residual_history: history,
            });
        }
        mu = mu.zip_map(&rho, |a, b| (1.0 - opts.theta) * a + opts.theta * b);
    }
    Err(Error::NotConverged {
        what: "linearized MFG system",
        iterations: opts.max_iter,
        residual: history.last().copied().unwrap_or(f64::NAN),
    })
}

/// `int int D_X z . D_X z m dx dt`, nonnegative for every solution.
pub fn energy(z: &SpaceTimeField, m: &SpaceTimeField) -> Result<f64> {
    z.ensure_same_mesh(m)?;
    let nt = z.nt();
    let dt = z.dt();
    Ok((0..=nt)
        .map(|k| {
            let w = if k == 0 || k == nt { 0.5 } else { 1.0 };
            let [a, b] = gradient(z.slice(k));
            w * dt * a.zip_map(&b, |x, y| x * x + y * y).pairing(m.slice(k))
        })
        .sum())
}

/// Measure derivative `K(t0, x, m0, y)` on grid nodes, row-major in `(x, y)`.
#[derive(Debug, Clone)]
pub struct KernelK {
    pub t0: f64,
    pub grid: Arc<TorusGrid>,
    pub m0: ScalarField,
    pub data: Vec<f64>,
    pub normalized: bool,
}

/// JSON sidecar of a binary kernel export.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelSidecar {
    pub t0: f64,
    pub n1: usize,
    pub n2: usize,
    pub profile: String,
    pub normalized: bool,
    pub layout: String,
}

impl KernelK {
    pub fn size(&self) -> usize {
        self.grid.len()
    }

    pub fn entry(&self, x: usize, y: usize) -> f64 {
        self.data[x * self.size() + y]
    }

    /// `K(x, .)` as a field in `y`.
    pub fn row(&self, x: usize) -> ScalarField {
        let n = self.size();
        ScalarField::from_vec(self.grid.clone(), self.data[x * n..(x + 1) * n].to_vec())
    }

    /// `K(., y)` as a field in `x`.
    pub fn column(&self, y: usize) -> ScalarField {
        let n = self.size();
        ScalarField::from_vec(self.grid.clone(), (0..n).map(|x| self.data[x * n + y]).collect())
    }

    /// `sum_y K(x, y) rho(y) h^2`.
    pub fn apply(&self, rho: &ScalarField) -> ScalarField {
        let n = self.size();
        let area = self.grid.cell_area();
        let r = rho.values();
        let out = self
            .data
            .par_chunks(n)
            .map(|row| area * row.iter().zip(r).map(|(k, v)| k * v).sum::<f64>())
            .collect();
        ScalarField::from_vec(self.grid.clone(), out)
    }

    /// `K(x, y) - sum_y' K(x, y') m0(y') h^2`.
    pub fn normalize(&self) -> KernelK {
        let n = self.size();
        let offset = self.apply(&self.m0);
        let mut data = self.data.clone();
        for (x, row) in data.chunks_mut(n).enumerate() {
            let o = offset.values()[x];
            row.iter_mut().for_each(|v| *v -= o);
        }
        KernelK {
            data,
            normalized: true,
            ..self.clone()
        }
    }

    /// Largest `|sum_y K(x, y) m0(y) h^2|` over `x`.
    pub fn normalization_defect(&self) -> f64 {
        self.apply(&self.m0).sup_norm()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &KernelK) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Writes `stem.bin` (row-major little-endian `f64`) and `stem.json`.
    pub fn export(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join(format!("{stem}.bin")))?);
        for v in &self.data {
            f.write_all(&v.to_le_bytes())?;
        }
        f.flush()?;
        let side = KernelSidecar {
            t0: self.t0,
            n1: self.grid.n1(),
            n2: self.grid.n2(),
            profile: self.grid.profile().name().into(),
            normalized: self.normalized,
            layout: "row-major f64 little-endian, index x * n + y".into(),
        };
        std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&side)?)?;
        Ok(())
    }
}

/// Column `y` of `K` is `z(t0, .)` for the grid Dirac `rho0 = 1 / h^2` at `y`,
/// each solved to a tenth of the requested tolerance.
pub fn build_kernel_k(base: &MFGSolution, c: &Coupling, opts: MfgOptions) -> Result<KernelK> {
    let g = base.grid().clone();
    let n = g.len();
    if n > KERNEL_MAX_NODES {
        return Err(Error::Budget(format!(
            "kernel sweep needs {n} linearized solves of {} time steps on a {} grid; limit is {KERNEL_MAX_NODES} nodes",
            base.u.nt(),
            g.describe()
        )));
    }
    let col_opts = MfgOptions {
        tol: opts.tol / 10.0,
        ..opts
    };
    let inv_area = 1.0 / g.cell_area();
    let columns = (0..n)
        .into_par_iter()
        .map(|y| {
            let mut v = vec![0.0; n];
            v[y] = inv_area;
            let p = LinearizedProblem::initial(ScalarField::from_vec(g.clone(), v));
            Ok(solve_linearized(base, c, &p, col_opts)?.z.slice(0).clone())
        })
        .collect::<Result<Vec<ScalarField>>>()?;
    let mut data = vec![0.0; n * n];
    for (y, col) in columns.iter().enumerate() {
        for (x, v) in col.values().iter().enumerate() {
            data[x * n + y] = *v;
        }
    }
    Ok(KernelK {
        t0: base.u.t0(),
        grid: g,
        m0: base.m0().clone(),
        data,
        normalized: false,
    })
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::coupling::CouplingSpec;
    use crate::grid::Profile;
    use crate::mfg::{solve_mfg, InitialGuess, TimeMesh};

    fn setup(n: usize, spec: &CouplingSpec) -> (Arc<TorusGrid>, Coupling, MFGSolution) {
        let g = Arc::new(TorusGrid::new(n, n, Profile::SinProfile).unwrap());
        let c = Coupling::from_spec(&g, spec).unwrap();
        let m0 = ScalarField::from_fn(g.clone(), |x1, x2| 1.0 + 0.5 * (2.0 * PI * x1).cos() * (2.0 * PI * x2).sin())
            .normalized_density()
            .unwrap();
        let s = solve_mfg(TimeMesh::new(0.0, 1.0, 2 * n).unwrap(), &m0, &c, MfgOptions::default(), InitialGuess::Frozen).unwrap();
        (g, c, s)
    }

    fn zero_mass(g: &Arc<TorusGrid>, rng: &mut impl Rng) -> ScalarField {
        let (k1, k2) = (rng.random_range(1..3) as f64, rng.random_range(0..3) as f64);
        let ph = rng.random_range(0.0..6.0);
        ScalarField::from_fn(g.clone(), |x1, x2| (2.0 * PI * (k1 * x1 + k2 * x2) + ph).cos())
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let (g, c, s) = setup(8, &CouplingSpec::default());
        let r = solve_linearized(&s, &c, &LinearizedProblem::initial(ScalarField::zeros(g)), MfgOptions::default()).unwrap();
        assert_eq!(r.iterations, 1);
        assert_eq!(r.z.sup_norm(), 0.0);
        assert_eq!(r.rho.sup_norm(), 0.0);
    }

    #[test]
    fn superposition_and_zero_mass() {
        let (g, c, s) = setup(8, &CouplingSpec::default());
        let opts = MfgOptions::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (r1, r2) = (zero_mass(&g, &mut rng), zero_mass(&g, &mut rng));
        let solve = |r: &ScalarField| solve_linearized(&s, &c, &LinearizedProblem::initial(r.clone()), opts).unwrap();
        let a = solve(&r1);
        let b = solve(&r2);
        let ab = solve(&r1.scaled(2.0).axpy(-0.5, &r2));
        let combo = a.z.zip_map(&b.z, |x, y| 2.0 * x - 0.5 * y);
        assert!(ab.z.max_abs_diff(&combo) <= 10.0 * opts.tol);
        for sl in a.rho.slices() {
            assert!(sl.integral().abs() < 1e-12);
        }
        assert!(energy(&a.z, &s.m).unwrap() >= 0.0);
    }

    #[test]
    fn linearization_matches_finite_differences_of_the_equilibrium() {
        let (g, c, s) = setup(8, &CouplingSpec::default());
        let opts = MfgOptions {
            tol: 1e-11,
            ..MfgOptions::default()
        };
        let rho = ScalarField::from_fn(g.clone(), |x1, x2| (2.0 * PI * x1).sin() * (2.0 * PI * x2).cos());
        let lin = solve_linearized(&s, &c, &LinearizedProblem::initial(rho.clone()), opts).unwrap();
        let eps = 1e-4;
        let mesh = s.mesh();
        let plus = solve_mfg(mesh, &s.m0().axpy(eps, &rho), &c, opts, InitialGuess::Frozen).unwrap();
        let minus = solve_mfg(mesh, &s.m0().axpy(-eps, &rho), &c, opts, InitialGuess::Frozen).unwrap();
        let fd = plus.u.slice(0).sub(minus.u.slice(0)).scaled(0.5 / eps);
        assert!(fd.max_abs_diff(lin.z.slice(0)) < 1e-6, "{}", fd.max_abs_diff(lin.z.slice(0)));
    }

    #[test]
    fn kernel_represents_the_linear_map() {
        let (g, c, s) = setup(8, &CouplingSpec::default());
        let opts = MfgOptions::default();
        let k = build_kernel_k(&s, &c, opts).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..3 {
            let r = zero_mass(&g, &mut rng);
            let z = solve_linearized(&s, &c, &LinearizedProblem::initial(r.clone()), opts).unwrap();
            assert!(z.z.slice(0).max_abs_diff(&k.apply(&r)) <= 10.0 * opts.tol);
            assert!(z.z.slice(0).max_abs_diff(&k.normalize().apply(&r)) <= 10.0 * opts.tol);
        }
        assert!(k.normalize().normalization_defect() < 1e-10);
    }

    #[test]
    fn decoupled_game_has_zero_kernel() {
        let (_, c, s) = setup(8, &CouplingSpec { scale_f: 0.0, scale_g: 0.0, ..CouplingSpec::default() });
        assert_eq!(build_kernel_k(&s, &c, MfgOptions::default()).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn oversized_grid_is_refused() {
        let (_, c, s) = setup(26, &CouplingSpec::zero());
        assert!(matches!(build_kernel_k(&s, &c, MfgOptions::default()), Err(Error::Budget(_))));
    }
}
