//! Backward solvers: the linear degenerate equation
//! `-d_t z - Delta_X z + V . D_X z = f`, and the Hamilton-Jacobi-Bellman
//! equation `-d_t u - Delta_X u + |D_X u|^2 / 2 = F(x, mu(t))` by direct
//! upwinding or through `w = exp(-u / 2)`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::coupling::Coupling;
use crate::diffusion::ImplicitDiffusion;
use crate::error::{Error, Result};
use crate::field::{ScalarField, SpaceTimeField};
use crate::grid::TorusGrid;
use crate::metric::CCDistanceTable;

/// Lower guard for `w` in the Hopf-Cole path.
pub const HOPF_COLE_FLOOR: f64 = 1e-300;

/// One-sided difference stencils.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stencil {
    /// Two-point differences `(u_i - u_{i-1}) / h`.
    FirstOrder,
    /// Three-point differences `(3 u_i - 4 u_{i-1} + u_{i-2}) / (2 h)`.
    SecondOrder,
}

/// Upwind transport `V . D_X z` in split form: along each coordinate,
/// `plus >= 0` multiplies the backward difference and `minus <= 0` the
/// forward difference. Coordinate 2 already carries the factor `a(x1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct UpwindDrift {
    pub plus: [ScalarField; 2],
    pub minus: [ScalarField; 2],
    pub stencil: Stencil,
}

impl UpwindDrift {
    pub fn zero(grid: &Arc<TorusGrid>) -> Self {
        let z = ScalarField::zeros(grid.clone());
        UpwindDrift {
            plus: [z.clone(), z.clone()],
            minus: [z.clone(), z],
            stencil: Stencil::FirstOrder,
        }
    }

    /// `V1 X1 + V2 X2` upwinded by the sign of the velocity.
    pub fn from_frame(v1: &ScalarField, v2: &ScalarField) -> Self {
        let g = v1.grid().clone();
        let n2 = g.n2();
        let w2: Vec<f64> = v2
            .values()
            .iter()
            .enumerate()
            .map(|(i, v)| g.a(i / n2) * v)
            .collect();
        let w2 = ScalarField::from_vec(g, w2);
        UpwindDrift {
            plus: [v1.map(|v| v.max(0.0)), w2.map(|v| v.max(0.0))],
            minus: [v1.map(|v| v.min(0.0)), w2.map(|v| v.min(0.0))],
            stencil: Stencil::FirstOrder,
        }
    }

    /// Derivative of the discrete Hamiltonian [`hamiltonian`] at `u`.
    pub fn hamiltonian_linearization(u: &ScalarField) -> Self {
        let g = u.grid().clone();
        let [dm1, dp1, dm2, dp2] = one_sided(u, HAMILTONIAN_STENCIL);
        let n2 = g.n2();
        let a2 = |i: usize| {
            let a = g.a(i / n2);
            a * a
        };
        let build = |d: &[f64], f: &dyn Fn(f64) -> f64, weight: bool| {
            let v = d
                .iter()
                .enumerate()
                .map(|(i, &x)| if weight { a2(i) * f(x) } else { f(x) })
                .collect();
            ScalarField::from_vec(g.clone(), v)
        };
        let pos = |x: f64| x.max(0.0);
        let neg = |x: f64| x.min(0.0);
        UpwindDrift {
            plus: [build(&dm1, &pos, false), build(&dm2, &pos, true)],
            minus: [build(&dp1, &neg, false), build(&dp2, &neg, true)],
            stencil: HAMILTONIAN_STENCIL,
        }
    }

    /// `sum_d plus_d D_d^- z + minus_d D_d^+ z`.
    pub fn apply(&self, z: &ScalarField) -> ScalarField {
        let [dm1, dp1, dm2, dp2] = one_sided(z, self.stencil);
        let out = (0..dm1.len())
            .map(|i| {
                self.plus[0].values()[i] * dm1[i]
                    + self.minus[0].values()[i] * dp1[i]
                    + self.plus[1].values()[i] * dm2[i]
                    + self.minus[1].values()[i] * dp2[i]
            })
            .collect();
        ScalarField::from_vec(z.grid().clone(), out)
    }

    /// Courant number `dt sum_d (plus_d - minus_d) / h_d` of the explicit transport.
    pub fn cfl(&self, dt: f64) -> f64 {
        let g = self.plus[0].grid();
        let (h1, h2) = (g.h1(), g.h2());
        (0..g.len())
            .map(|i| {
                (self.plus[0].values()[i] - self.minus[0].values()[i]) / h1
                    + (self.plus[1].values()[i] - self.minus[1].values()[i]) / h2
            })
            .fold(0.0, f64::max)
            * dt
    }
}

/// Stencil of the discrete Hamiltonian used by the direct HJB solver.
pub const HAMILTONIAN_STENCIL: Stencil = Stencil::SecondOrder;

/// Backward and forward differences `[D1^-, D1^+, D2^-, D2^+]` in the plain
/// coordinates.
pub fn one_sided(u: &ScalarField, stencil: Stencil) -> [Vec<f64>; 4] {
    let g = u.grid();
    let (n1, n2) = (g.n1(), g.n2());
    let (i1h, i2h) = (1.0 / g.h1(), 1.0 / g.h2());
    let v = u.values();
    let n = v.len();
    let mut out = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let diff = |c: f64, n1v: f64, n2v: f64| match stencil {
        Stencil::FirstOrder => c - n1v,
        Stencil::SecondOrder => 1.5 * c - 2.0 * n1v + 0.5 * n2v,
    };
    for i1 in 0..n1 {
        let r = |k: usize| (i1 + k) % n1 * n2;
        let (up, up2, dn, dn2) = (r(1), r(2), r(n1 - 1), r(n1 - 2));
        let row = i1 * n2;
        for i2 in 0..n2 {
            let c = v[row + i2];
            let idx = row + i2;
            let s = |k: usize| row + (i2 + k) % n2;
            out[0][idx] = diff(c, v[dn + i2], v[dn2 + i2]) * i1h;
            out[1][idx] = -diff(c, v[up + i2], v[up2 + i2]) * i1h;
            out[2][idx] = diff(c, v[s(n2 - 1)], v[s(n2 - 2)]) * i2h;
            out[3][idx] = -diff(c, v[s(1)], v[s(2)]) * i2h;
        }
    }
    out
}

/// Engquist-Osher discretization of `|D_X u|^2 / 2`:
/// `(max(D1^- u, 0)^2 + min(D1^+ u, 0)^2 + a^2 (max(D2^- u, 0)^2 + min(D2^+ u, 0)^2)) / 2`.
pub fn hamiltonian(u: &ScalarField) -> ScalarField {
    let g = u.grid();
    let n2 = g.n2();
    let [dm1, dp1, dm2, dp2] = one_sided(u, HAMILTONIAN_STENCIL);
    let out = (0..dm1.len())
        .map(|i| {
            let a = g.a(i / n2);
            let h1 = dm1[i].max(0.0).powi(2) + dp1[i].min(0.0).powi(2);
            let h2 = dm2[i].max(0.0).powi(2) + dp2[i].min(0.0).powi(2);
            0.5 * (h1 + a * a * h2)
        })
        .collect();
    ScalarField::from_vec(g.clone(), out)
}

/// Data of `-d_t z - Delta_X z + V . D_X z = f`, `z(T) = z_T` on the mesh of `f`.
#[derive(Debug, Clone)]
pub struct BackwardLinearProblem {
    /// One upwind drift per time slice; step `k` applies `drift[k]` to `z^{k+1}`.
    pub drift: Vec<UpwindDrift>,
    /// When present, step `k` is extrapolated as `2 S_{dt/2} S_{dt/2} - S_dt`
    /// and the second half step uses `midpoint_drift[k]`.
    pub midpoint_drift: Option<Vec<UpwindDrift>>,
    /// Step `k` uses the mean of `source[k]` and `source[k + 1]`.
    pub source: SpaceTimeField,
    pub terminal: ScalarField,
}

impl BackwardLinearProblem {
    /// Drift from frame components `V = (V1, V2)` given per slice.
    pub fn from_frame(v1: &SpaceTimeField, v2: &SpaceTimeField, source: SpaceTimeField, terminal: ScalarField) -> Result<Self> {
        v1.ensure_same_mesh(v2)?;
        v1.ensure_same_mesh(&source)?;
        let drift = v1
            .slices()
            .iter()
            .zip(v2.slices())
            .map(|(a, b)| UpwindDrift::from_frame(a, b))
            .collect();
        Ok(BackwardLinearProblem {
            drift,
            midpoint_drift: None,
            source,
            terminal,
        })
    }

    /// Exact derivative of the direct HJB scheme at `sol`.
    pub fn hamiltonian_linearization(sol: &DirectHjb, source: SpaceTimeField, terminal: ScalarField) -> Result<Self> {
        sol.u.ensure_same_mesh(&source)?;
        let nt = sol.u.nt();
        let mut drift: Vec<UpwindDrift> = (1..=nt)
            .map(|k| UpwindDrift::hamiltonian_linearization(sol.u.slice(k)))
            .collect();
        drift.push(UpwindDrift::zero(sol.u.grid()));
        let mut mid: Vec<UpwindDrift> = sol.midpoints.iter().map(UpwindDrift::hamiltonian_linearization).collect();
        mid.push(UpwindDrift::zero(sol.u.grid()));
        Ok(BackwardLinearProblem {
            drift,
            midpoint_drift: Some(mid),
            source,
            terminal,
        })
    }

    /// No drift.
    pub fn heat(source: SpaceTimeField, terminal: ScalarField) -> Self {
        let d = UpwindDrift::zero(source.grid());
        BackwardLinearProblem {
            drift: vec![d; source.nt() + 1],
            midpoint_drift: None,
            source,
            terminal,
        }
    }

    fn validate(&self) -> Result<()> {
        let g = self.source.grid();
        g.ensure_same(self.terminal.grid())?;
        if self.drift.len() != self.source.nt() + 1 {
            return Err(Error::InvalidInput(format!(
                "{} drift slices for {} time nodes",
                self.drift.len(),
                self.source.nt() + 1
            )));
        }
        if let Some(mid) = &self.midpoint_drift {
            if mid.len() != self.drift.len() {
                return Err(Error::InvalidInput(format!(
                    "{} midpoint drift slices for {} time nodes",
                    mid.len(),
                    self.drift.len()
                )));
            }
        }
        for d in self.drift.iter().chain(self.midpoint_drift.iter().flatten()) {
            g.ensure_same(d.plus[0].grid())?;
        }
        Ok(())
    }
}

/// Steps `z^k = (I - dt Delta_X)^-1 (z^{k+1} + dt (f^k - V^k . D_X z^{k+1}))`
/// from `T` down to `t0`, extrapolated when midpoint drifts are given.
pub fn solve_backward_linear(p: &BackwardLinearProblem) -> Result<SpaceTimeField> {
    p.validate()?;
    let dt = p.source.dt();
    for d in p.drift.iter().chain(p.midpoint_drift.iter().flatten()) {
        let number = d.cfl(dt);
        if number > 1.0 {
            return Err(Error::Cfl { number });
        }
    }
    let solver = ImplicitDiffusion::new(p.source.grid(), dt);
    let half = p.midpoint_drift.as_ref().map(|_| ImplicitDiffusion::new(p.source.grid(), 0.5 * dt));
    let step = |s: &ImplicitDiffusion, tau: f64, f: &ScalarField, d: &UpwindDrift, z: &ScalarField| {
        s.solve(&z.axpy(tau, f).axpy(-tau, &d.apply(z)))
    };
    let nt = p.source.nt();
    let mut slices = vec![p.terminal.clone(); nt + 1];
    for k in (0..nt).rev() {
        let next = &slices[k + 1];
        let f = &step_average(p.source.slice(k), p.source.slice(k + 1));
        let full = step(&solver, dt, f, &p.drift[k], next);
        slices[k] = match (&half, &p.midpoint_drift) {
            (Some(hs), Some(mid)) => {
                let a = step(hs, 0.5 * dt, f, &p.drift[k], next);
                let b = step(hs, 0.5 * dt, f, &mid[k], &a);
                b.scaled(2.0).axpy(-1.0, &full)
            }
            _ => full,
        };
    }
    SpaceTimeField::new(p.source.t0(), p.source.t_end(), slices)
}

/// Source frozen over step `k`: the mean of its values at both ends.
fn step_average(a: &ScalarField, b: &ScalarField) -> ScalarField {
    a.add(b).scaled(0.5)
}

/// Direct HJB solution with the intermediate half-step states of each
/// extrapolated step.
#[derive(Debug, Clone)]
pub struct DirectHjb {
    pub u: SpaceTimeField,
    /// `midpoints[k]` is the state after the first half step from `u^{k+1}`.
    pub midpoints: Vec<ScalarField>,
}

/// Direct scheme: `S_tau(u) = (I - tau Delta_X)^-1 (u + tau (F^{k+1/2} - H(u)))`
/// with `F^{k+1/2}` the mean of `F(m^k)` and `F(m^{k+1})`,
/// and `u^k = 2 S_{dt/2} S_{dt/2} u^{k+1} - S_dt u^{k+1}`.
pub fn solve_hjb_direct(mpath: &SpaceTimeField, c: &Coupling) -> Result<DirectHjb> {
    c.grid().ensure_same(mpath.grid())?;
    let dt = mpath.dt();
    let nt = mpath.nt();
    let solver = ImplicitDiffusion::new(mpath.grid(), dt);
    let half = ImplicitDiffusion::new(mpath.grid(), 0.5 * dt);
    let step = |s: &ImplicitDiffusion, tau: f64, f: &ScalarField, u: &ScalarField| -> Result<ScalarField> {
        let number = UpwindDrift::hamiltonian_linearization(u).cfl(dt);
        if number > 1.0 {
            return Err(Error::Cfl { number });
        }
        Ok(s.solve(&u.axpy(tau, f).axpy(-tau, &hamiltonian(u))))
    };
    let terminal = c.eval_g(mpath.last())?;
    let mut slices = vec![terminal; nt + 1];
    let mut midpoints = vec![ScalarField::zeros(mpath.grid().clone()); nt];
    let fs = mpath.slices().iter().map(|m| c.eval_f(m)).collect::<Result<Vec<_>>>()?;
    for k in (0..nt).rev() {
        let f = step_average(&fs[k], &fs[k + 1]);
        let next = &slices[k + 1];
        let full = step(&solver, dt, &f, next)?;
        let a = step(&half, 0.5 * dt, &f, next)?;
        let b = step(&half, 0.5 * dt, &f, &a)?;
        slices[k] = b.scaled(2.0).axpy(-1.0, &full);
        midpoints[k] = a;
    }
    Ok(DirectHjb {
        u: SpaceTimeField::new(mpath.t0(), mpath.t_end(), slices)?,
        midpoints,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HjbMode {
    Direct,
    HopfCole,
}

impl fmt::Display for HjbMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HjbMode::Direct => "Direct",
            HjbMode::HopfCole => "HopfCole",
        })
    }
}

impl FromStr for HjbMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Direct" | "direct" => Ok(HjbMode::Direct),
            "HopfCole" | "hopf-cole" => Ok(HjbMode::HopfCole),
            other => Err(Error::InvalidInput(format!("unknown HJB mode `{other}`"))),
        }
    }
}

/// Solves the HJB equation along a given measure path.
pub fn solve_hjb(mpath: &SpaceTimeField, c: &Coupling, mode: HjbMode) -> Result<SpaceTimeField> {
    match mode {
        HjbMode::Direct => Ok(solve_hjb_direct(mpath, c)?.u),
        HjbMode::HopfCole => solve_hjb_hopf_cole(mpath, c),
    }
}

/// Hopf-Cole scheme: `w = exp(-u / 2)` is advanced by Strang-split steps
/// extrapolated as `2 S_{dt/2} S_{dt/2} - S_dt`, then `u = -2 ln w`.
pub fn solve_hjb_hopf_cole(mpath: &SpaceTimeField, c: &Coupling) -> Result<SpaceTimeField> {
    c.grid().ensure_same(mpath.grid())?;
    let dt = mpath.dt();
    let nt = mpath.nt();
    let solver = ImplicitDiffusion::new(mpath.grid(), dt);
    let half = ImplicitDiffusion::new(mpath.grid(), 0.5 * dt);
    let terminal = c.eval_g(mpath.last())?;
    let mut w = terminal.map(|g| (-0.5 * g).exp());
    let mut slices = vec![terminal; nt + 1];
    let fs = mpath.slices().iter().map(|m| c.eval_f(m)).collect::<Result<Vec<_>>>()?;
    for k in (0..nt).rev() {
        let f = step_average(&fs[k], &fs[k + 1]);
        let full = strang_step(&solver, &f, dt, &w);
        let a = strang_step(&half, &f, 0.5 * dt, &w);
        let b = strang_step(&half, &f, 0.5 * dt, &a);
        w = b.scaled(2.0).axpy(-1.0, &full);
        if let Some(i) = w.values().iter().position(|&v| !(v > HOPF_COLE_FLOOR)) {
            return Err(Error::Positivity(format!(
                "w = {:e} at node {i}, time slice {k}",
                w.values()[i]
            )));
        }
        slices[k] = w.map(|v| -2.0 * v.ln());
    }
    SpaceTimeField::new(mpath.t0(), mpath.t_end(), slices)
}

/// One backward step of `-d_t w - Delta_X w + F w / 2 = 0`: half reaction,
/// implicit diffusion, half reaction.
fn strang_step(solver: &ImplicitDiffusion, f: &ScalarField, dt: f64, w: &ScalarField) -> ScalarField {
    let half = f.map(|v| (-0.25 * dt * v).exp());
    solver.solve(&w.zip_map(&half, |a, b| a * b)).zip_map(&half, |a, b| a * b)
}

/// Largest `|z(x) - z(y)| / d_cc(x, y)` over all node pairs.
pub fn lipschitz_constant(z: &ScalarField, dcc: &CCDistanceTable) -> f64 {
    crate::holder::pair_seminorm(z.values(), 1.0, dcc)
}

/// `sup_t Lip(z(t)) / Lip(z_T)` for the homogeneous problem with the given
/// drift; `0` when `z_T` is constant.
pub fn lipschitz_propagation_check(
    drift: Vec<UpwindDrift>,
    terminal: &ScalarField,
    mesh: &SpaceTimeField,
    dcc: &CCDistanceTable,
) -> Result<f64> {
    let l0 = lipschitz_constant(terminal, dcc);
    if l0 == 0.0 {
        return Ok(0.0);
    }
    let zero = SpaceTimeField::zeros(mesh.grid().clone(), mesh.t0(), mesh.t_end(), mesh.nt())?;
    let p = BackwardLinearProblem {
        drift,
        midpoint_drift: None,
        source: zero,
        terminal: terminal.clone(),
    };
    let z = solve_backward_linear(&p)?;
    Ok(z
        .slices()
        .iter()
        .map(|s| lipschitz_constant(s, dcc))
        .fold(0.0, f64::max)
        / l0)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::coupling::{CouplingSpec, Which};
    use crate::grid::Profile;
    use crate::metric::cc_all_pairs;

    fn grid(n: usize) -> Arc<TorusGrid> {
        Arc::new(TorusGrid::new(n, n, Profile::SinProfile).unwrap())
    }

    #[test]
    fn constants_are_invariant() {
        let g = grid(8);
        let f = SpaceTimeField::zeros(g.clone(), 0.0, 1.0, 8).unwrap();
        let z = solve_backward_linear(&BackwardLinearProblem::heat(f, ScalarField::constant(g, 3.0))).unwrap();
        assert!(z.slices().iter().all(|s| s.values().iter().all(|&v| (v - 3.0).abs() < 1e-12)));
    }

    #[test]
    fn unit_source_gives_remaining_time() {
        let g = grid(8);
        let one = ScalarField::constant(g.clone(), 1.0);
        let f = SpaceTimeField::constant_in_time(0.0, 1.0, 10, &one).unwrap();
        let z = solve_backward_linear(&BackwardLinearProblem::heat(f, ScalarField::zeros(g))).unwrap();
        for k in 0..=10 {
            let want = 1.0 - z.time(k);
            assert!(z.slice(k).values().iter().all(|&v| (v - want).abs() < 1e-12));
        }
    }

    #[test]
    fn maximum_principle_with_drift() {
        let g = grid(16);
        let v1 = ScalarField::from_fn(g.clone(), |x1, x2| (2.0 * PI * x2).sin() + x1);
        let v2 = ScalarField::from_fn(g.clone(), |x1, _| (2.0 * PI * x1).cos());
        let nt = 64;
        let f = SpaceTimeField::zeros(g.clone(), 0.0, 1.0, nt).unwrap();
        let p = BackwardLinearProblem::from_frame(
            &SpaceTimeField::constant_in_time(0.0, 1.0, nt, &v1).unwrap(),
            &SpaceTimeField::constant_in_time(0.0, 1.0, nt, &v2).unwrap(),
            f,
            ScalarField::from_fn(g, |x1, x2| (6.0 * x1).sin() * (2.0 * PI * x2).cos()),
        )
        .unwrap();
        let lo = p.terminal.min();
        let hi = p.terminal.max();
        let z = solve_backward_linear(&p).unwrap();
        for s in z.slices() {
            assert!(s.min() >= lo - 1e-10 && s.max() <= hi + 1e-10);
        }
    }

    #[test]
    fn zero_coupling_gives_zero_value() {
        let g = grid(8);
        let c = Coupling::zero(&g);
        let m = SpaceTimeField::constant_in_time(0.0, 1.0, 16, &ScalarField::uniform_density(g)).unwrap();
        for mode in [HjbMode::Direct, HjbMode::HopfCole] {
            assert!(solve_hjb(&m, &c, mode).unwrap().sup_norm() < 1e-12);
        }
    }

    #[test]
    fn direct_and_hopf_cole_agree_on_coarse_mesh() {
        let g = grid(16);
        let c = Coupling::from_spec(&g, &CouplingSpec::default()).unwrap();
        let m = SpaceTimeField::constant_in_time(0.0, 1.0, 32, &ScalarField::uniform_density(g)).unwrap();
        let a = solve_hjb(&m, &c, HjbMode::Direct).unwrap();
        let b = solve_hjb(&m, &c, HjbMode::HopfCole).unwrap();
        assert!(a.max_abs_diff(&b) < 5e-3, "{}", a.max_abs_diff(&b));
    }

    #[test]
    fn linearized_scheme_is_the_derivative_of_the_direct_scheme() {
        let g = grid(12);
        let c = Coupling::from_spec(&g, &CouplingSpec::default()).unwrap();
        let m = SpaceTimeField::constant_in_time(0.0, 1.0, 48, &ScalarField::uniform_density(g.clone())).unwrap();
        let base = solve_hjb_direct(&m, &c).unwrap();
        let dg = ScalarField::from_fn(g.clone(), |x1, x2| (2.0 * PI * x1).sin() * (4.0 * PI * x2).cos());
        let df = ScalarField::from_fn(g.clone(), |x1, x2| (2.0 * PI * (x1 - x2)).cos());
        let s = 1e-6;
        let spec = |c: &Coupling| {
            Coupling::with_kernels(
                c.base(Which::F).axpy(s, &df),
                c.base(Which::G).axpy(s, &dg),
                c.kernel(Which::F).clone(),
                c.kernel(Which::G).clone(),
                c.sigma(),
            )
            .unwrap()
        };
        let bumped = solve_hjb_direct(&m, &spec(&c)).unwrap();
        let source = SpaceTimeField::constant_in_time(0.0, 1.0, 48, &df).unwrap();
        let p = BackwardLinearProblem::hamiltonian_linearization(&base, source, dg).unwrap();
        let z = solve_backward_linear(&p).unwrap();
        let fd = bumped.u.zip_map(&base.u, move |a, b| (a - b) / s);
        assert!(fd.max_abs_diff(&z) < 1e-5, "{}", fd.max_abs_diff(&z));
    }

    #[test]
    fn linearization_matches_hamiltonian_derivative() {
        let g = grid(16);
        let u = ScalarField::from_fn(g.clone(), |x1, x2| 0.3 * (2.0 * PI * x1).sin() + 0.2 * (2.0 * PI * (x1 + x2)).cos());
        let dz = ScalarField::from_fn(g, |x1, x2| (4.0 * PI * x1).cos() * (2.0 * PI * x2).sin());
        let lin = UpwindDrift::hamiltonian_linearization(&u).apply(&dz);
        let s = 1e-7;
        let fd = hamiltonian(&u.axpy(s, &dz)).sub(&hamiltonian(&u.axpy(-s, &dz))).scaled(0.5 / s);
        assert!(fd.max_abs_diff(&lin) < 1e-5, "{}", fd.max_abs_diff(&lin));
    }

    #[test]
    fn constant_terminal_has_zero_lipschitz_ratio() {
        let g = grid(8);
        let t = cc_all_pairs(&g).unwrap();
        let mesh = SpaceTimeField::zeros(g.clone(), 0.0, 1.0, 8).unwrap();
        let r = lipschitz_propagation_check(vec![UpwindDrift::zero(&g); 9], &ScalarField::constant(g, 1.0), &mesh, &t).unwrap();
        assert_eq!(r, 0.0);
    }
}
