//! Forward-backward fixed point of the MFG system
//! `-d_t u - Delta_X u + |D_X u|^2 / 2 = F(x, m)`, `u(T) = G(x, m(T))`,
//! `d_t m - Delta_X m - div_X(m D_X u) = 0`, `m(t0) = m0`,
//! with uniqueness and Lipschitz diagnostics.

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coupling::Coupling;
use crate::dual_norm::path_distance;
use crate::error::{Error, Result};
use crate::field::{ScalarField, SpaceTimeField};
use crate::grid::TorusGrid;
use crate::hjb::{solve_hjb_direct, DirectHjb};
use crate::holder::holder_norm;
use crate::kfp::{solve_kfp, KFPProblem};
use crate::metric::{d1_distance, CCDistanceTable, TransportOptions};
use crate::ops::gradient;

pub const DEFAULT_THETA: f64 = 0.5;
pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 200;

/// Default initial density `1 + cos(2 pi x1) sin(2 pi x2) / 2`, normalized.
pub fn default_initial_density(grid: &Arc<TorusGrid>) -> ScalarField {
    ScalarField::from_fn(grid.clone(), |x1, x2| 1.0 + 0.5 * (2.0 * PI * x1).cos() * (2.0 * PI * x2).sin())
        .normalized_density()
        .expect("positive field")
}

/// Time horizon and mesh of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeMesh {
    pub t0: f64,
    pub t_end: f64,
    pub nt: usize,
}

impl TimeMesh {
    pub fn new(t0: f64, t_end: f64, nt: usize) -> Result<Self> {
        if !(t_end > t0) || nt < 2 {
            return Err(Error::InvalidInput(format!(
                "time mesh [{t0}, {t_end}] with {nt} steps"
            )));
        }
        Ok(TimeMesh { t0, t_end, nt })
    }

    pub fn dt(&self) -> f64 {
        (self.t_end - self.t0) / self.nt as f64
    }

    /// The same step size on `[t, t_end]`; `t` must sit on the mesh.
    pub fn restricted_to(&self, t: f64) -> Result<Self> {
        let steps = (self.t_end - t) / self.dt();
        let k = steps.round();
        if (steps - k).abs() > 1e-9 || k < 0.0 {
            return Err(Error::InvalidInput(format!("time {t} is not a mesh node")));
        }
        TimeMesh::new(t, self.t_end, k as usize)
    }

    pub fn constant_path(&self, f: &ScalarField) -> Result<SpaceTimeField> {
        SpaceTimeField::constant_in_time(self.t0, self.t_end, self.nt, f)
    }
}

/// Damped Picard parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MfgOptions {
    pub theta: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for MfgOptions {
    fn default() -> Self {
        MfgOptions {
            theta: DEFAULT_THETA,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

impl MfgOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(Error::InvalidInput(format!("damping {} outside (0, 1]", self.theta)));
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::InvalidInput("tolerance and iteration cap must be positive".into()));
        }
        Ok(())
    }
}

/// Starting measure path of the fixed-point iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitialGuess {
    Uniform,
    /// `m0` at every time.
    Frozen,
}

#[derive(Debug, Clone)]
pub struct MFGSolution {
    pub u: SpaceTimeField,
    pub m: SpaceTimeField,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    pub damping: f64,
    /// Direct HJB solve of the last iterate, kept for linearization.
    pub hjb: DirectHjb,
    /// Measure path that produced `u`.
    pub mu: SpaceTimeField,
    /// Residual increased after the third iteration.
    pub non_monotone: bool,
}

impl MFGSolution {
    pub fn grid(&self) -> &Arc<TorusGrid> {
        self.u.grid()
    }

    pub fn m0(&self) -> &ScalarField {
        self.m.slice(0)
    }

    pub fn mesh(&self) -> TimeMesh {
        TimeMesh {
            t0: self.u.t0(),
            t_end: self.u.t_end(),
            nt: self.u.nt(),
        }
    }

    pub fn final_residual(&self) -> f64 {
        self.residual_history.last().copied().unwrap_or(0.0)
    }
}

/// `mu <- (1 - theta) mu + theta Phi(mu)` with `Phi(mu)` the KFP solution
/// driven by `D_X u[mu]`, stopped when `sup_t` of the dictionary norm of the
/// update is at most `tol`.
pub fn solve_mfg(
    mesh: TimeMesh,
    m0: &ScalarField,
    c: &Coupling,
    opts: MfgOptions,
    guess: InitialGuess,
) -> Result<MFGSolution> {
    opts.validate()?;
    m0.check_density()?;
    c.grid().ensure_same(m0.grid())?;
    let start = match guess {
        InitialGuess::Uniform => ScalarField::uniform_density(m0.grid().clone()),
        InitialGuess::Frozen => m0.clone(),
    };
    let mut mu = mesh.constant_path(&start)?;
    let mut history = Vec::new();
    for it in 1..=opts.max_iter {
        let hjb = solve_hjb_direct(&mu, c)?;
        let m = solve_kfp(&KFPProblem::from_value(m0.clone(), &hjb.u)?)?;
        let residual = if c.is_decoupled() { 0.0 } else { path_distance(&m, &mu) };
        history.push(residual);
        if residual <= opts.tol {
            let non_monotone = history.windows(2).skip(3).any(|w| w[1] > w[0]);
            let mu = if c.is_decoupled() { m.clone() } else { mu };
            return Ok(MFGSolution {
                u: hjb.u.clone(),
                m,
                iterations: it,
                residual_history: history,
                damping: opts.theta,
                hjb,
                mu,
                non_monotone,
            });
        }
        mu = mu.zip_map(&m, |a, b| (1.0 - opts.theta) * a + opts.theta * b);
    }
    Err(Error::NotConverged {
        what: "MFG fixed point",
        iterations: opts.max_iter,
        residual: history.last().copied().unwrap_or(f64::NAN),
    })
}

/// Both sides of the monotonicity inequality
/// `int int |D_X u1 - D_X u2|^2 (m1 + m2) <= C ||D_X (u1 - u2)(t0)||_inf d1(m1(t0), m2(t0))`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LasryLionsReport {
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs / rhs`, `0` when both vanish.
    pub c_report: f64,
}

fn gradient_gap(u1: &ScalarField, u2: &ScalarField) -> ScalarField {
    let [a1, a2] = gradient(&u1.sub(u2));
    a1.zip_map(&a2, |x, y| x * x + y * y)
}

pub fn lasry_lions_gap(
    s1: &MFGSolution,
    s2: &MFGSolution,
    table: &CCDistanceTable,
    opts: TransportOptions,
) -> Result<LasryLionsReport> {
    s1.u.ensure_same_mesh(&s2.u)?;
    let nt = s1.u.nt();
    let dt = s1.u.dt();
    let lhs: f64 = (0..=nt)
        .map(|k| {
            let w = if k == 0 || k == nt { 0.5 } else { 1.0 };
            let sq = gradient_gap(s1.u.slice(k), s2.u.slice(k));
            w * dt * sq.pairing(&s1.m.slice(k).add(s2.m.slice(k)))
        })
        .sum();
    let grad0 = gradient_gap(s1.u.slice(0), s2.u.slice(0)).sup_norm().sqrt();
    let d1 = d1_distance(s1.m0(), s2.m0(), table, opts)?.cost();
    let rhs = grad0 * d1;
    let c_report = if rhs > 0.0 { lhs / rhs } else { 0.0 };
    Ok(LasryLionsReport { lhs, rhs, c_report })
}

/// One pair of the Lipschitz experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LipschitzPair {
    pub d1_initial: f64,
    /// `sup_t d1(m1(t), m2(t)) + ||u1(t) - u2(t)||_{2+alpha}`.
    pub numerator: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub pairs: Vec<LipschitzPair>,
    pub excluded: usize,
    pub max_ratio: f64,
    /// `max / min - 1` over the ratios.
    pub spread: f64,
}

/// Initial distances below this are excluded from the Lipschitz experiment.
pub const DEGENERATE_PAIR_D1: f64 = 1e-10;

/// Ratios `sup_t {d1(m1(t), m2(t)) + ||u1(t) - u2(t)||_{2+alpha}} / d1(m1(t0), m2(t0))`.
#[allow(clippy::too_many_arguments)]
pub fn lipschitz_experiment(
    pairs: &[(ScalarField, ScalarField)],
    mesh: TimeMesh,
    c: &Coupling,
    opts: MfgOptions,
    table: &CCDistanceTable,
    transport: TransportOptions,
    alpha: f64,
) -> Result<LipschitzReport> {
    let mut out = Vec::new();
    let mut excluded = 0;
    for (a, b) in pairs {
        let d0 = d1_distance(a, b, table, transport)?.cost();
        if d0 < DEGENERATE_PAIR_D1 {
            excluded += 1;
            continue;
        }
        let (s1, s2) = rayon::join(
            || solve_mfg(mesh, a, c, opts, InitialGuess::Frozen),
            || solve_mfg(mesh, b, c, opts, InitialGuess::Frozen),
        );
        let (s1, s2) = (s1?, s2?);
        let per_slice = (0..=mesh.nt)
            .into_par_iter()
            .map(|k| {
                let d = d1_distance(s1.m.slice(k), s2.m.slice(k), table, transport)?.cost();
                let h = holder_norm(&s1.u.slice(k).sub(s2.u.slice(k)), alpha, 2, table)?.norm();
                Ok(d + h)
            })
            .collect::<Result<Vec<f64>>>()?;
        let numerator = per_slice.into_iter().fold(0.0, f64::max);
        out.push(LipschitzPair {
            d1_initial: d0,
            numerator,
            ratio: numerator / d0,
        });
    }
    let ratios: Vec<f64> = out.iter().map(|p| p.ratio).collect();
    Ok(LipschitzReport {
        excluded,
        max_ratio: ratios.iter().copied().fold(0.0, f64::max),
        spread: if ratios.is_empty() { 0.0 } else { crate::stats::relative_spread(&ratios) },
        pairs: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::CouplingSpec;
    use crate::grid::Profile;

    fn grid(n: usize) -> Arc<TorusGrid> {
        Arc::new(TorusGrid::new(n, n, Profile::SinProfile).unwrap())
    }

    #[test]
    fn decoupled_game_is_one_heat_flow() {
        let g = grid(12);
        let c = Coupling::zero(&g);
        let m0 = default_initial_density(&g);
        let mesh = TimeMesh::new(0.0, 1.0, 24).unwrap();
        let s = solve_mfg(mesh, &m0, &c, MfgOptions::default(), InitialGuess::Uniform).unwrap();
        assert_eq!(s.iterations, 1);
        assert!(s.u.sup_norm() < 1e-12);
        let heat = solve_kfp(&KFPProblem::from_value(m0, &SpaceTimeField::zeros(g, 0.0, 1.0, 24).unwrap()).unwrap()).unwrap();
        assert!(s.m.max_abs_diff(&heat) < 1e-14);
    }

    #[test]
    fn two_starts_reach_the_same_equilibrium() {
        let g = grid(12);
        let c = Coupling::from_spec(&g, &CouplingSpec::default()).unwrap();
        let m0 = default_initial_density(&g);
        let mesh = TimeMesh::new(0.0, 1.0, 24).unwrap();
        let opts = MfgOptions::default();
        let a = solve_mfg(mesh, &m0, &c, opts, InitialGuess::Uniform).unwrap();
        let b = solve_mfg(mesh, &m0, &c, opts, InitialGuess::Frozen).unwrap();
        assert!(a.u.max_abs_diff(&b.u) <= 10.0 * opts.tol);
        assert!(path_distance(&a.m, &b.m) <= 10.0 * opts.tol);
        for s in a.m.slices() {
            s.check_density().unwrap();
        }
    }

    #[test]
    fn identical_solutions_have_zero_monotonicity_gap() {
        let g = grid(8);
        let c = Coupling::from_spec(&g, &CouplingSpec::default()).unwrap();
        let mesh = TimeMesh::new(0.0, 1.0, 16).unwrap();
        let s = solve_mfg(mesh, &default_initial_density(&g), &c, MfgOptions::default(), InitialGuess::Frozen).unwrap();
        let t = crate::metric::cc_all_pairs(&g).unwrap();
        let r = lasry_lions_gap(&s, &s, &t, TransportOptions::exact()).unwrap();
        assert_eq!((r.lhs, r.rhs, r.c_report), (0.0, 0.0, 0.0));
    }

    #[test]
    fn iteration_cap_is_reported() {
        let g = grid(8);
        let c = Coupling::from_spec(&g, &CouplingSpec::default()).unwrap();
        let mesh = TimeMesh::new(0.0, 1.0, 16).unwrap();
        let opts = MfgOptions {
            max_iter: 2,
            ..MfgOptions::default()
        };
        assert!(matches!(
            solve_mfg(mesh, &default_initial_density(&g), &c, opts, InitialGuess::Uniform),
            Err(Error::NotConverged { .. })
        ));
    }
}
