//! Forward Kolmogorov-Fokker-Planck equation
//! `d_t rho - Delta_X rho - div_X(rho b) = div_X(c)` in conservative
//! face-flux form, a particle oracle, and the weak-formulation check.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::ImplicitDiffusion;
use crate::error::{Error, Result};
use crate::field::{fmt_f64, ScalarField, SpaceTimeField};
use crate::grid::TorusGrid;
use crate::hjb::{solve_backward_linear, BackwardLinearProblem, Stencil, UpwindDrift};
use crate::metric::{d1_distance, CCDistanceTable, TransportOptions};
use crate::ops::gradient;

/// Smallest particle count accepted by [`simulate_particles`].
pub const MIN_PARTICLES: usize = 10_000;

/// Largest number of `t,x1,x2` rows in a particle snapshot export.
pub const SNAPSHOT_MAX_ROWS: usize = 10_000;

/// Values on the cell faces of a grid in plain coordinates: `f1[idx]` sits
/// between nodes `(i1, i2)` and `(i1 + 1, i2)`, `f2[idx]` between `(i1, i2)`
/// and `(i1, i2 + 1)`. The second component already carries the factor `a(x1)`
/// of `div_X`.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceField {
    pub f1: Vec<f64>,
    pub f2: Vec<f64>,
}

impl FaceField {
    pub fn zeros(n: usize) -> Self {
        FaceField {
            f1: vec![0.0; n],
            f2: vec![0.0; n],
        }
    }

    /// Face averages of the frame components `(g1, g2)`, the second one
    /// multiplied by `a(x1)`.
    pub fn from_frame(g1: &ScalarField, g2: &ScalarField) -> Self {
        let g = g1.grid();
        let (n1, n2) = (g.n1(), g.n2());
        let (v1, v2) = (g1.values(), g2.values());
        let mut out = FaceField::zeros(g.len());
        for i1 in 0..n1 {
            let up = (i1 + 1) % n1 * n2;
            let row = i1 * n2;
            let a = g.a(i1);
            for i2 in 0..n2 {
                let idx = row + i2;
                out.f1[idx] = 0.5 * (v1[idx] + v1[up + i2]);
                out.f2[idx] = 0.5 * a * (v2[idx] + v2[row + (i2 + 1) % n2]);
            }
        }
        out
    }

    /// Compact face gradient `((z_{i1+1} - z) / h1, a^2 (z_{i2+1} - z) / h2)`,
    /// the face form of `D_X z` inside `div_X`.
    pub fn gradient(z: &ScalarField) -> Self {
        let g = z.grid();
        let (n1, n2) = (g.n1(), g.n2());
        let v = z.values();
        let (i1h, i2h) = (1.0 / g.h1(), 1.0 / g.h2());
        let mut out = FaceField::zeros(g.len());
        for i1 in 0..n1 {
            let up = (i1 + 1) % n1 * n2;
            let row = i1 * n2;
            let a2 = g.a(i1) * g.a(i1);
            for i2 in 0..n2 {
                let idx = row + i2;
                out.f1[idx] = (v[up + i2] - v[idx]) * i1h;
                out.f2[idx] = a2 * (v[row + (i2 + 1) % n2] - v[idx]) * i2h;
            }
        }
        out
    }

    /// Discrete divergence `(F_{+1/2} - F_{-1/2}) / h` summed over both axes.
    pub fn divergence(&self, grid: &Arc<TorusGrid>) -> ScalarField {
        let (n1, n2) = (grid.n1(), grid.n2());
        let (i1h, i2h) = (1.0 / grid.h1(), 1.0 / grid.h2());
        let mut out = vec![0.0; grid.len()];
        for i1 in 0..n1 {
            let dn = (i1 + n1 - 1) % n1 * n2;
            let row = i1 * n2;
            for i2 in 0..n2 {
                let idx = row + i2;
                out[idx] = (self.f1[idx] - self.f1[dn + i2]) * i1h
                    + (self.f2[idx] - self.f2[row + (i2 + n2 - 1) % n2]) * i2h;
            }
        }
        ScalarField::from_vec(grid.clone(), out)
    }

    pub fn axpy(&self, s: f64, other: &FaceField) -> FaceField {
        let comb = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x + s * y).collect();
        FaceField {
            f1: comb(&self.f1, &other.f1),
            f2: comb(&self.f2, &other.f2),
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.f1
            .iter()
            .chain(&self.f2)
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Upwind transport flux `rho b` on every face: the density is taken on
    /// the side the transport velocity `-b` comes from.
    pub fn transport_flux(&self, rho: &ScalarField) -> FaceField {
        let g = rho.grid();
        let (n1, n2) = (g.n1(), g.n2());
        let v = rho.values();
        let mut out = FaceField::zeros(g.len());
        for i1 in 0..n1 {
            let up = (i1 + 1) % n1 * n2;
            let row = i1 * n2;
            for i2 in 0..n2 {
                let idx = row + i2;
                let b1 = self.f1[idx];
                let b2 = self.f2[idx];
                out.f1[idx] = b1.min(0.0) * v[idx] + b1.max(0.0) * v[up + i2];
                out.f2[idx] = b2.min(0.0) * v[idx] + b2.max(0.0) * v[row + (i2 + 1) % n2];
            }
        }
        out
    }

    /// Density on the upwind side of each face, the derivative of
    /// [`FaceField::transport_flux`] with respect to the face drift.
    pub fn upwind_density(&self, rho: &ScalarField) -> FaceField {
        let g = rho.grid();
        let (n1, n2) = (g.n1(), g.n2());
        let v = rho.values();
        let mut out = FaceField::zeros(g.len());
        for i1 in 0..n1 {
            let up = (i1 + 1) % n1 * n2;
            let row = i1 * n2;
            for i2 in 0..n2 {
                let idx = row + i2;
                out.f1[idx] = if self.f1[idx] < 0.0 { v[idx] } else { v[up + i2] };
                out.f2[idx] = if self.f2[idx] < 0.0 {
                    v[idx]
                } else {
                    v[row + (i2 + 1) % n2]
                };
            }
        }
        out
    }

    /// Explicit-transport CFL number `dt max_i sum of outflow rates`.
    pub fn cfl(&self, grid: &TorusGrid, dt: f64) -> f64 {
        let (n1, n2) = (grid.n1(), grid.n2());
        let (i1h, i2h) = (1.0 / grid.h1(), 1.0 / grid.h2());
        let mut worst = 0.0_f64;
        for i1 in 0..n1 {
            let dn = (i1 + n1 - 1) % n1 * n2;
            let row = i1 * n2;
            for i2 in 0..n2 {
                let idx = row + i2;
                let left2 = row + (i2 + n2 - 1) % n2;
                let out = ((-self.f1[idx]).max(0.0) + self.f1[dn + i2].max(0.0)) * i1h
                    + ((-self.f2[idx]).max(0.0) + self.f2[left2].max(0.0)) * i2h;
                worst = worst.max(out);
            }
        }
        worst * dt
    }

    /// Adjoint transport `b . D_X` of [`FaceField::transport_flux`]: the
    /// positive part of the face below multiplies the backward difference and
    /// the negative part of the face above the forward difference.
    pub fn upwind_drift(&self, grid: &Arc<TorusGrid>) -> UpwindDrift {
        let (n1, n2) = (grid.n1(), grid.n2());
        let n = grid.len();
        let mut plus = [vec![0.0; n], vec![0.0; n]];
        let mut minus = [vec![0.0; n], vec![0.0; n]];
        for i1 in 0..n1 {
            let dn = (i1 + n1 - 1) % n1 * n2;
            let row = i1 * n2;
            for i2 in 0..n2 {
                let idx = row + i2;
                plus[0][idx] = self.f1[dn + i2].max(0.0);
                minus[0][idx] = self.f1[idx].min(0.0);
                plus[1][idx] = self.f2[row + (i2 + n2 - 1) % n2].max(0.0);
                minus[1][idx] = self.f2[idx].min(0.0);
            }
        }
        let field = |v: Vec<f64>| ScalarField::from_vec(grid.clone(), v);
        let [p1, p2] = plus;
        let [m1, m2] = minus;
        UpwindDrift {
            plus: [field(p1), field(p2)],
            minus: [field(m1), field(m2)],
            stencil: Stencil::FirstOrder,
        }
    }

    fn product(&self, other: &FaceField) -> FaceField {
        let mul = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).collect();
        FaceField {
            f1: mul(&self.f1, &other.f1),
            f2: mul(&self.f2, &other.f2),
        }
    }
}

/// Data of `d_t rho - Delta_X rho - div_X(rho b) = div_X(c)`, `rho(t0) = rho0`.
#[derive(Debug, Clone)]
pub struct KFPProblem {
    pub rho0: ScalarField,
    pub t0: f64,
    pub t_end: f64,
    /// Face form of `b` per time slice; step `k` uses `drift[k]`.
    pub drift: Vec<FaceField>,
    /// Face form of `c` per time slice.
    pub source: Vec<FaceField>,
}

impl KFPProblem {
    /// Drift and source given by frame components at the nodes.
    pub fn from_frame(
        rho0: ScalarField,
        b1: &SpaceTimeField,
        b2: &SpaceTimeField,
        c: Option<(&SpaceTimeField, &SpaceTimeField)>,
    ) -> Result<Self> {
        b1.ensure_same_mesh(b2)?;
        b1.grid().ensure_same(rho0.grid())?;
        let faces = |x: &SpaceTimeField, y: &SpaceTimeField| -> Vec<FaceField> {
            x.slices()
                .iter()
                .zip(y.slices())
                .map(|(x, y)| FaceField::from_frame(x, y))
                .collect()
        };
        let source = match c {
            Some((c1, c2)) => {
                b1.ensure_same_mesh(c1)?;
                b1.ensure_same_mesh(c2)?;
                faces(c1, c2)
            }
            None => vec![FaceField::zeros(rho0.grid().len()); b1.nt() + 1],
        };
        Ok(KFPProblem {
            rho0,
            t0: b1.t0(),
            t_end: b1.t_end(),
            drift: faces(b1, b2),
            source,
        })
    }

    /// Optimal-control drift `b = D_X u` of a value function, in compact face form.
    pub fn from_value(rho0: ScalarField, u: &SpaceTimeField) -> Result<Self> {
        u.grid().ensure_same(rho0.grid())?;
        Ok(KFPProblem {
            source: vec![FaceField::zeros(rho0.grid().len()); u.nt() + 1],
            rho0,
            t0: u.t0(),
            t_end: u.t_end(),
            drift: u.slices().iter().map(FaceField::gradient).collect(),
        })
    }

    /// Replaces the source by face fluxes.
    pub fn with_face_source(mut self, source: Vec<FaceField>) -> Result<Self> {
        if source.len() != self.drift.len() {
            return Err(Error::InvalidInput(format!(
                "{} source slices for {} time nodes",
                source.len(),
                self.drift.len()
            )));
        }
        self.source = source;
        Ok(self)
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        self.rho0.grid()
    }

    pub fn nt(&self) -> usize {
        self.drift.len().saturating_sub(1)
    }

    pub fn dt(&self) -> f64 {
        (self.t_end - self.t0) / self.nt() as f64
    }

    /// Largest CFL number over the time slices.
    pub fn cfl(&self) -> f64 {
        let dt = self.dt();
        self.drift
            .iter()
            .map(|d| d.cfl(self.grid(), dt))
            .fold(0.0, f64::max)
    }

    /// Source `div_X(c)` at slice `k` as a node field.
    pub fn source_density(&self, k: usize) -> ScalarField {
        self.source[k].divergence(self.grid())
    }

    /// Dual problem `-d_t phi - Delta_X phi + b . D_X phi = xi`, `phi(T) = psi`,
    /// with the transport upwinded on the same faces as the forward flux.
    pub fn dual(&self, xi: SpaceTimeField, psi: ScalarField) -> Result<BackwardLinearProblem> {
        if xi.nt() != self.nt() {
            return Err(Error::InvalidInput("dual source mesh differs from the problem".into()));
        }
        Ok(BackwardLinearProblem {
            drift: self.drift.iter().map(|d| d.upwind_drift(self.grid())).collect(),
            midpoint_drift: None,
            source: xi,
            terminal: psi,
        })
    }
}

/// Source `rho_up * D_X z` on faces: the derivative of the transport flux
/// `m b` in the direction of the drift increment `D_X z`.
pub fn linearized_source(m: &ScalarField, drift: &FaceField, z: &ScalarField) -> FaceField {
    drift.upwind_density(m).product(&FaceField::gradient(z))
}

/// Steps `rho^{k+1} = (I - dt Delta_X)^-1 (rho^k + dt div(rho^k b^k + c^k))`.
pub fn solve_kfp(p: &KFPProblem) -> Result<SpaceTimeField> {
    let nt = p.nt();
    if nt < 2 || p.source.len() != nt + 1 {
        return Err(Error::InvalidInput("drift or source length differs from the time mesh".into()));
    }
    let number = p.cfl();
    if number > 1.0 {
        return Err(Error::Cfl { number });
    }
    let g = p.grid();
    let dt = p.dt();
    let solver = ImplicitDiffusion::new(g, dt);
    let mut slices = Vec::with_capacity(nt + 1);
    slices.push(p.rho0.clone());
    for k in 0..nt {
        let rho = &slices[k];
        let flux = p.drift[k].transport_flux(rho).axpy(1.0, &p.source[k]);
        let rhs = rho.axpy(dt, &flux.divergence(g));
        slices.push(solver.solve(&rhs));
    }
    SpaceTimeField::new(p.t0, p.t_end, slices)
}

/// Largest frequency per axis of the weak-formulation test functions.
pub const TEST_MAX_MODE: i32 = 2;

/// Band-limited random trigonometric polynomial with modes `|k|_inf <= TEST_MAX_MODE`
/// and coefficients in `[-1, 1]`.
pub fn random_trig(grid: &Arc<TorusGrid>, rng: &mut impl Rng) -> ScalarField {
    let modes: Vec<(f64, f64, f64, f64)> = (0..5)
        .map(|_| {
            (
                rng.random_range(-TEST_MAX_MODE..=TEST_MAX_MODE) as f64,
                rng.random_range(-TEST_MAX_MODE..=TEST_MAX_MODE) as f64,
                rng.random_range(-1.0..1.0),
                rng.random_range(0.0..2.0 * PI),
            )
        })
        .collect();
    ScalarField::from_fn(grid.clone(), |x1, x2| {
        modes
            .iter()
            .map(|&(k1, k2, a, ph)| a * (2.0 * PI * (k1 * x1 + k2 * x2) + ph).cos())
            .sum()
    })
}

/// Trapezoidal `int_{t0}^{T} g(t) dt` from slice values.
fn trapezoid(values: &[f64], dt: f64) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    dt * (values[1..n - 1].iter().sum::<f64>() + 0.5 * (values[0] + values[n - 1]))
}

/// Defect of the weak formulation
/// `<rho(T), psi> + int <rho, xi> = <rho0, phi(t0)> + int <f, phi>`
/// with `phi` solving the dual problem `-d_t phi - Delta_X phi + b . D_X phi = xi`,
/// `phi(T) = psi`.
pub fn weak_defect(rho: &SpaceTimeField, p: &KFPProblem, psi: &ScalarField, xi: &SpaceTimeField) -> Result<f64> {
    rho.grid().ensure_same(p.grid())?;
    rho.ensure_same_mesh(xi)?;
    let dual = p.dual(xi.clone(), psi.clone())?;
    let phi = solve_backward_linear(&dual)?;
    let nt = rho.nt();
    let dt = rho.dt();
    let lhs_int: Vec<f64> = (0..=nt).map(|k| rho.slice(k).pairing(xi.slice(k))).collect();
    let rhs_int: Vec<f64> = (0..=nt).map(|k| p.source_density(k).pairing(phi.slice(k))).collect();
    let lhs = rho.last().pairing(psi) + trapezoid(&lhs_int, dt);
    let rhs = p.rho0.pairing(phi.slice(0)) + trapezoid(&rhs_int, dt);
    Ok((lhs - rhs).abs())
}

/// Largest weak-formulation defect over `n_tests` random band-limited
/// pairs `(psi, xi)`.
pub fn verify_weak_solution(rho: &SpaceTimeField, p: &KFPProblem, n_tests: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = rho.grid();
    let mut worst = 0.0_f64;
    for _ in 0..n_tests {
        let psi = random_trig(g, &mut rng);
        let xi_shape = random_trig(g, &mut rng);
        let omega = rng.random_range(0.5..2.0);
        let slices = (0..=rho.nt())
            .map(|k| xi_shape.scaled((omega * rho.time(k)).cos()))
            .collect();
        let xi = SpaceTimeField::new(rho.t0(), rho.t_end(), slices)?;
        worst = worst.max(weak_defect(rho, p, &psi, &xi)?);
    }
    Ok(worst)
}

/// Empirical densities of the particle system with optional position export.
#[derive(Debug, Clone)]
pub struct ParticleRun {
    pub density: SpaceTimeField,
    pub particles: usize,
    pub substeps: usize,
    /// `(t, x1, x2)` rows of the first few particles at every time slice.
    pub snapshot: Vec<(f64, f64, f64)>,
}

impl ParticleRun {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,x1,x2")?;
        for &(t, x1, x2) in &self.snapshot {
            writeln!(w, "{},{},{}", fmt_f64(t), fmt_f64(x1), fmt_f64(x2))?;
        }
        Ok(())
    }
}

/// Periodic bilinear interpolation of a node field at `(x1, x2)`.
fn interpolate(f: &ScalarField, x1: f64, x2: f64) -> f64 {
    let g = f.grid();
    let (n1, n2) = (g.n1(), g.n2());
    let s1 = x1 / g.h1();
    let s2 = x2 / g.h2();
    let (f1, f2) = (s1.floor(), s2.floor());
    let (w1, w2) = (s1 - f1, s2 - f2);
    let i1 = g.wrap1(f1 as isize);
    let i2 = g.wrap2(f2 as isize);
    let j1 = (i1 + 1) % n1;
    let j2 = (i2 + 1) % n2;
    (1.0 - w1) * ((1.0 - w2) * f.at(i1, i2) + w2 * f.at(i1, j2)) + w1 * ((1.0 - w2) * f.at(j1, i2) + w2 * f.at(j1, j2))
}

/// Node whose cell contains `(x1, x2)`.
fn cell_of(g: &TorusGrid, x1: f64, x2: f64) -> usize {
    let i1 = g.wrap1((x1 / g.h1()).round() as isize);
    let i2 = g.wrap2((x2 / g.h2()).round() as isize);
    g.index(i1, i2)
}

/// Euler-Maruyama simulation of
/// `dx1 = -X1 u dt + sqrt(2) dB1`, `dx2 = -a(x1) X2 u dt + sqrt(2) a(x1) dB2`
/// from `m0`, with `substeps` steps per time slice and one counter-based
/// random stream per particle. Slice `k` of `u` drives `[t_k, t_{k+1})`.
pub fn simulate_particles(m0: &ScalarField, u: &SpaceTimeField, n: usize, seed: u64, substeps: usize) -> Result<ParticleRun> {
    m0.check_density()?;
    u.grid().ensure_same(m0.grid())?;
    if n < MIN_PARTICLES {
        return Err(Error::InvalidInput(format!("{n} particles, at least {MIN_PARTICLES} required")));
    }
    if substeps == 0 {
        return Err(Error::InvalidInput("substeps must be positive".into()));
    }
    let g = m0.grid().clone();
    let nodes = g.len();
    let nt = u.nt();
    let profile = g.profile();
    let grads: Vec<[ScalarField; 2]> = u.slices().iter().map(gradient).collect();
    let area = g.cell_area();
    let mut cdf = Vec::with_capacity(nodes);
    let mut acc = 0.0;
    for v in m0.values() {
        acc += v * area;
        cdf.push(acc);
    }
    let tau = u.dt() / substeps as f64;
    let sq = (2.0 * tau).sqrt();
    let keep = (SNAPSHOT_MAX_ROWS / (nt + 1)).min(n);
    let trajectory = |p: usize| -> (Vec<usize>, Vec<(f64, f64)>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(p as u64);
        let r: f64 = rng.random::<f64>() * acc;
        let cell = cdf.partition_point(|&c| c < r).min(nodes - 1);
        let (c1, c2) = g.point(cell);
        let mut x1 = c1 + (rng.random::<f64>() - 0.5) * g.h1();
        let mut x2 = c2 + (rng.random::<f64>() - 0.5) * g.h2();
        let mut cells = Vec::with_capacity(nt + 1);
        let mut path = Vec::new();
        let wrap = |x: f64| x - x.floor();
        x1 = wrap(x1);
        x2 = wrap(x2);
        cells.push(cell_of(&g, x1, x2));
        if p < keep {
            path.push((x1, x2));
        }
        for [d1, d2] in grads.iter().take(nt) {
            for _ in 0..substeps {
                let a = profile.coefficient(x1);
                let v1 = interpolate(d1, x1, x2);
                let v2 = interpolate(d2, x1, x2);
                let z1: f64 = rng.sample(StandardNormal);
                let z2: f64 = rng.sample(StandardNormal);
                x1 = wrap(x1 - v1 * tau + sq * z1);
                x2 = wrap(x2 - a * v2 * tau + sq * a * z2);
            }
            cells.push(cell_of(&g, x1, x2));
            if p < keep {
                path.push((x1, x2));
            }
        }
        (cells, path)
    };
    let counts = (0..n)
        .into_par_iter()
        .fold(
            || vec![0u32; (nt + 1) * nodes],
            |mut h, p| {
                let (cells, _) = trajectory(p);
                for (k, c) in cells.into_iter().enumerate() {
                    h[k * nodes + c] += 1;
                }
                h
            },
        )
        .reduce(
            || vec![0u32; (nt + 1) * nodes],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                a
            },
        );
    let mut snapshot = Vec::with_capacity(keep * (nt + 1));
    let paths: Vec<Vec<(f64, f64)>> = (0..keep).map(|p| trajectory(p).1).collect();
    for k in 0..=nt {
        for path in &paths {
            let (x1, x2) = path[k];
            snapshot.push((u.time(k), x1, x2));
        }
    }
    let scale = 1.0 / (n as f64 * area);
    let slices = (0..=nt)
        .map(|k| {
            let v = counts[k * nodes..(k + 1) * nodes]
                .iter()
                .map(|&c| c as f64 * scale)
                .collect();
            ScalarField::from_vec(g.clone(), v)
        })
        .collect();
    Ok(ParticleRun {
        density: SpaceTimeField::new(u.t0(), u.t_end(), slices)?,
        particles: n,
        substeps,
        snapshot,
    })
}

/// Worst slice pair of the time-Hoelder bound
/// `d1(m(t1), m(t2)) <= C_E |t1 - t2|^{1/2}`, `C_E = ||D_X u||_inf T + 2`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimeHolderReport {
    pub c_e: f64,
    pub pairs: usize,
    pub worst_ratio: f64,
    pub worst_pair: (usize, usize),
    pub holds: bool,
}

/// Checks the time-Hoelder bound of a density path on every slice pair.
pub fn time_holder_check(
    m: &SpaceTimeField,
    u: &SpaceTimeField,
    table: &CCDistanceTable,
    opts: &TransportOptions,
) -> Result<TimeHolderReport> {
    m.ensure_same_mesh(u)?;
    let grad_sup = u
        .slices()
        .iter()
        .map(|s| {
            let [a, b] = gradient(s);
            a.zip_map(&b, |x, y| (x * x + y * y).sqrt()).sup_norm()
        })
        .fold(0.0, f64::max);
    let c_e = grad_sup * (m.t_end() - m.t0()) + 2.0;
    let nt = m.nt();
    let pairs: Vec<(usize, usize)> = (0..=nt).flat_map(|i| (i + 1..=nt).map(move |j| (i, j))).collect();
    let ratios = pairs
        .par_iter()
        .map(|&(i, j)| {
            let d = d1_distance(m.slice(i), m.slice(j), table, *opts)?.cost();
            Ok(d / (c_e * (m.time(j) - m.time(i)).sqrt()))
        })
        .collect::<Result<Vec<f64>>>()?;
    let (worst, &worst_ratio) = ratios
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .unwrap_or((0, &0.0));
    Ok(TimeHolderReport {
        c_e,
        pairs: pairs.len(),
        worst_ratio,
        worst_pair: pairs.get(worst).copied().unwrap_or((0, 0)),
        holds: worst_ratio <= 1.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Profile;

    fn grid(n: usize) -> Arc<TorusGrid> {
        Arc::new(TorusGrid::new(n, n, Profile::SinProfile).unwrap())
    }

    fn bump(g: &Arc<TorusGrid>, c1: f64, c2: f64, w: f64) -> ScalarField {
        ScalarField::from_fn(g.clone(), |x1, x2| {
            let d1 = crate::grid::periodic_gap(x1 - c1);
            let d2 = crate::grid::periodic_gap(x2 - c2);
            (-(d1 * d1 + d2 * d2) / (2.0 * w * w)).exp()
        })
        .normalized_density()
        .unwrap()
    }

    fn value_path(g: &Arc<TorusGrid>, nt: usize) -> SpaceTimeField {
        let slices = (0..=nt)
            .map(|k| {
                let t = k as f64 / nt as f64;
                ScalarField::from_fn(g.clone(), |x1, x2| {
                    (1.0 - 0.5 * t) * (0.1 * (2.0 * PI * x1).cos() + 0.07 * (2.0 * PI * (x1 + x2)).sin())
                })
            })
            .collect();
        SpaceTimeField::new(0.0, 1.0, slices).unwrap()
    }

    #[test]
    fn uniform_density_is_stationary_without_drift() {
        let g = grid(12);
        let zero = SpaceTimeField::zeros(g.clone(), 0.0, 1.0, 10).unwrap();
        let p = KFPProblem::from_frame(ScalarField::uniform_density(g.clone()), &zero, &zero, None).unwrap();
        let rho = solve_kfp(&p).unwrap();
        for s in rho.slices() {
            assert!(s.values().iter().all(|&v| (v - 1.0).abs() < 1e-13));
        }
    }

    #[test]
    fn mass_is_conserved_and_density_stays_nonnegative() {
        let g = grid(16);
        let u = value_path(&g, 32);
        let p = KFPProblem::from_value(bump(&g, 0.3, 0.6, 0.08), &u).unwrap();
        let rho = solve_kfp(&p).unwrap();
        for s in rho.slices() {
            assert!((s.integral() - 1.0).abs() < 1e-12);
            assert!(s.min() >= 0.0);
        }
    }

    #[test]
    fn cfl_violation_is_rejected() {
        let g = grid(16);
        let u = value_path(&g, 2).map_slices(|s| s.scaled(200.0));
        let p = KFPProblem::from_value(ScalarField::uniform_density(g), &u).unwrap();
        assert!(matches!(solve_kfp(&p), Err(Error::Cfl { .. })));
    }

    #[test]
    fn linearized_source_is_the_flux_derivative() {
        let g = grid(12);
        let u = value_path(&g, 2);
        let m = bump(&g, 0.2, 0.5, 0.2);
        let z = ScalarField::from_fn(g.clone(), |x1, x2| (2.0 * PI * x1).sin() * (2.0 * PI * x2).cos());
        let drift = FaceField::gradient(u.slice(0));
        let s = 1e-7;
        let bumped = FaceField::gradient(&u.slice(0).axpy(s, &z)).transport_flux(&m);
        let base = drift.transport_flux(&m);
        let lin = linearized_source(&m, &drift, &z);
        for (i, l) in lin.f1.iter().enumerate() {
            assert!(((bumped.f1[i] - base.f1[i]) / s - l).abs() < 1e-6);
            assert!(((bumped.f2[i] - base.f2[i]) / s - lin.f2[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn degenerate_line_spreads_slower_in_x2() {
        let g = grid(32);
        let zero = SpaceTimeField::zeros(g.clone(), 0.0, 0.02, 8).unwrap();
        let spread = |c1: f64| {
            let p = KFPProblem::from_frame(bump(&g, c1, 0.5, 0.03), &zero, &zero, None).unwrap();
            let rho = solve_kfp(&p).unwrap();
            let var = |s: &ScalarField| {
                (0..g.len())
                    .map(|i| {
                        let (_, x2) = g.point(i);
                        s.values()[i] * (x2 - 0.5).powi(2)
                    })
                    .sum::<f64>()
                    * g.cell_area()
            };
            var(rho.last()) - var(&p.rho0)
        };
        assert!(spread(0.0) < spread(0.25));
    }

    #[test]
    fn weak_defect_vanishes_for_the_constant_test_function() {
        let g = grid(12);
        let u = value_path(&g, 24);
        let p = KFPProblem::from_value(bump(&g, 0.3, 0.6, 0.1), &u).unwrap();
        let rho = solve_kfp(&p).unwrap();
        let one = ScalarField::constant(g.clone(), 1.0);
        let xi = SpaceTimeField::zeros(g, 0.0, 1.0, 24).unwrap();
        assert!(weak_defect(&rho, &p, &one, &xi).unwrap() < 1e-12);
    }

    #[test]
    fn weak_defect_converges_and_reacts_to_noise() {
        let g = grid(16);
        let u = value_path(&g, 32);
        let p = KFPProblem::from_value(bump(&g, 0.3, 0.6, 0.1), &u).unwrap();
        let rho = solve_kfp(&p).unwrap();
        let clean = verify_weak_solution(&rho, &p, 4, 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let slices = rho
            .slices()
            .iter()
            .map(|s| {
                let noise = random_trig(&g, &mut rng);
                s.axpy(1e-3 / noise.sup_norm(), &noise)
            })
            .collect();
        let noisy = SpaceTimeField::new(rho.t0(), rho.t_end(), slices).unwrap();
        let dirty = verify_weak_solution(&noisy, &p, 4, 7).unwrap();
        assert!(dirty > 1e-4 && dirty != clean, "{clean} {dirty}");
        let fine = {
            let g = grid(32);
            let u = value_path(&g, 64);
            let p = KFPProblem::from_value(bump(&g, 0.3, 0.6, 0.1), &u).unwrap();
            verify_weak_solution(&solve_kfp(&p).unwrap(), &p, 4, 7).unwrap()
        };
        assert!(clean / fine >= 1.8, "{clean} {fine}");
    }

    #[test]
    fn particles_keep_the_uniform_density() {
        let g = grid(8);
        let u = SpaceTimeField::zeros(g.clone(), 0.0, 0.5, 4).unwrap();
        let n = 40_000;
        let run = simulate_particles(&ScalarField::uniform_density(g.clone()), &u, n, 11, 2).unwrap();
        let per_cell = n as f64 / g.len() as f64;
        let tol = 3.0 / per_cell.sqrt();
        for s in run.density.slices() {
            assert!((s.integral() - 1.0).abs() < 1e-12);
            assert!(s.values().iter().all(|&v| (v - 1.0).abs() < tol * 1.5));
        }
        assert!(run.snapshot.len() <= SNAPSHOT_MAX_ROWS);
    }

    #[test]
    fn particles_are_reproducible() {
        let g = grid(8);
        let u = value_path(&g, 4);
        let m0 = bump(&g, 0.5, 0.5, 0.2);
        let a = simulate_particles(&m0, &u, 10_000, 5, 1).unwrap();
        let b = simulate_particles(&m0, &u, 10_000, 5, 1).unwrap();
        assert_eq!(a.density.max_abs_diff(&b.density), 0.0);
        assert!(simulate_particles(&m0, &u, 100, 5, 1).is_err());
    }
}
