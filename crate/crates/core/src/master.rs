//! Master-equation layer:
//! `-d_t U - Delta_X U + |D_X U|^2 / 2 - int Delta_X^y dU/dm dm(y)
//!  + int D_X^y dU/dm . D_X U(y) dm(y) = F(x, m)`, `U(T, x, m) = G(x, m)`,
//! with `U(t0, x, m0) = u(t0, x)` taken from the MFG system started at `(t0, m0)`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coupling::Coupling;
use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::holder::holder_norm;
use crate::linearized::{build_kernel_k, solve_linearized, KernelK, LinearizedProblem};
use crate::metric::{d1_distance, CCDistanceTable, TransportOptions};
use crate::mfg::{solve_mfg, InitialGuess, MFGSolution, MfgOptions, TimeMesh};
use crate::ops::{apply_div, apply_laplacian, grad_norm_sq, gradient};
use crate::stats::relative_spread;

/// Perturbation sizes of [`MasterProblem::measure_derivative_fd`].
pub const DEFAULT_S_LIST: [f64; 3] = [0.2, 0.1, 0.05];

/// Hoelder exponent of the master-layer norms.
pub const MASTER_ALPHA: f64 = 0.5;

/// Coupling, horizon and time step shared by every evaluation of `U`.
#[derive(Debug, Clone)]
pub struct MasterProblem {
    pub coupling: Coupling,
    pub t_end: f64,
    pub dt: f64,
    pub opts: MfgOptions,
}

/// `U(t0, ., m0)` with the MFG solve behind it and, optionally, the kernel `K`.
#[derive(Debug, Clone)]
pub struct MasterPoint {
    pub t0: f64,
    pub m0: ScalarField,
    pub u: ScalarField,
    /// Absent at `t0 = T`.
    pub solution: Option<MFGSolution>,
    /// Normalized when present.
    pub kernel: Option<KernelK>,
}

/// How the measure integrals of the residual are assembled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IntegralRoute {
    /// Grid sums of `y`-derivatives of `K` against `m0`.
    Kernel,
    /// One linearized solve with `rho0 = -(Delta_X m0 + div_X(m0 D_X U))`,
    /// the discrete adjoint of the two kernel sums.
    Adjoint,
}

#[derive(Debug, Clone)]
pub struct ResidualReport {
    pub residual: ScalarField,
    pub sup: f64,
    pub dt_probe: f64,
    pub route: IntegralRoute,
    /// `-int Delta^y K dm0 + int D^y K . D_X U dm0`.
    pub integral_terms: ScalarField,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FlowReport {
    pub t0: f64,
    pub t1: f64,
    pub gap: f64,
}

#[derive(Debug, Clone)]
pub struct FdDerivative {
    pub s_list: Vec<f64>,
    pub quotients: Vec<ScalarField>,
    /// Quadratic extrapolation of the three smallest-`s` quotients to `s = 0`.
    pub limit: ScalarField,
    /// `sup |B| s_min^2` for the fitted `q(s) = L + A s + B s^2`.
    pub quadratic_term: f64,
    /// `||q(s_i) - q(s_{i+1})|| / ||q(s_{i+1}) - q(s_{i+2})||`.
    pub successive_ratios: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct C1Report {
    pub sup_error: f64,
    pub holder_error: f64,
    pub d1: f64,
    pub ratio_sup: f64,
    pub ratio_holder: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct KernelPairRatio {
    pub d1: f64,
    pub norm: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DerivativeLipschitzReport {
    pub pairs: Vec<KernelPairRatio>,
    pub excluded: usize,
    pub max_ratio: f64,
    pub spread: f64,
}

impl MasterProblem {
    pub fn new(coupling: Coupling, t_end: f64, dt: f64, opts: MfgOptions) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite() && t_end.is_finite()) {
            return Err(Error::InvalidInput(format!("time step {dt} or horizon {t_end} invalid")));
        }
        opts.validate()?;
        Ok(MasterProblem {
            coupling,
            t_end,
            dt,
            opts,
        })
    }

    /// Mesh of `[t0, T]` with step `dt`; `None` at `t0 = T`.
    pub fn mesh_from(&self, t0: f64) -> Result<Option<TimeMesh>> {
        let steps = (self.t_end - t0) / self.dt;
        let nt = steps.round();
        if (steps - nt).abs() > 1e-9 || nt < 0.0 {
            return Err(Error::InvalidInput(format!(
                "t0 = {t0} is not on the time grid of step {} ending at {}",
                self.dt, self.t_end
            )));
        }
        if nt == 0.0 {
            return Ok(None);
        }
        TimeMesh::new(t0, self.t_end, nt as usize).map(Some)
    }

    pub fn eval_u(&self, t0: f64, m0: &ScalarField) -> Result<MasterPoint> {
        m0.check_density()?;
        let Some(mesh) = self.mesh_from(t0)? else {
            return Ok(MasterPoint {
                t0,
                m0: m0.clone(),
                u: self.coupling.eval_g(m0)?,
                solution: None,
                kernel: None,
            });
        };
        let s = solve_mfg(mesh, m0, &self.coupling, self.opts, InitialGuess::Frozen)?;
        Ok(MasterPoint {
            t0,
            m0: m0.clone(),
            u: s.u.slice(0).clone(),
            solution: Some(s),
            kernel: None,
        })
    }

    /// Attaches the normalized kernel `K(t0, ., m0, .)`.
    pub fn with_kernel(&self, mut p: MasterPoint) -> Result<MasterPoint> {
        let s = p.solution.as_ref().ok_or(Error::Missing("MFG solution at t0 < T"))?;
        p.kernel = Some(build_kernel_k(s, &self.coupling, self.opts)?.normalize());
        Ok(p)
    }

    /// `int dU/dm(t0, ., m0, y) rho(y) dy` through `K` when present, else by a
    /// linearized solve. `rho` must have zero mass.
    pub fn derivative(&self, p: &MasterPoint, rho: &ScalarField) -> Result<ScalarField> {
        if let Some(k) = &p.kernel {
            return Ok(k.apply(rho));
        }
        match &p.solution {
            None => Ok(ScalarField::zeros(rho.grid().clone())),
            Some(s) => {
                let lin = solve_linearized(s, &self.coupling, &LinearizedProblem::initial(rho.clone()), self.opts)?;
                Ok(lin.z.slice(0).clone())
            }
        }
    }

    /// Gap between `U(t1, ., m(t1))` and `u(t1, .)` at the grid time nearest
    /// the midpoint of `[t0, T]`.
    pub fn flow_consistency(&self, p: &MasterPoint) -> Result<FlowReport> {
        let s = p.solution.as_ref().ok_or(Error::Missing("MFG solution at t0 < T"))?;
        let k1 = s.u.nt() / 2;
        let t1 = s.u.time(k1);
        let tail = self.eval_u(t1, s.m.slice(k1))?;
        Ok(FlowReport {
            t0: p.t0,
            t1,
            gap: tail.u.max_abs_diff(s.u.slice(k1)),
        })
    }

    /// Quotients `(U(t0, ., m0 + s rho) - U(t0, ., m0)) / s`.
    pub fn measure_derivative_fd(&self, p: &MasterPoint, rho: &ScalarField, s_list: &[f64]) -> Result<FdDerivative> {
        if s_list.len() < 3 {
            return Err(Error::InvalidInput("at least three perturbation sizes are needed".into()));
        }
        let perturbed = s_list
            .iter()
            .map(|&s| {
                let m = p.m0.axpy(s, rho);
                m.check_density()
                    .map_err(|e| Error::InvalidInput(format!("m0 + {s} rho is not a density: {e}")))?;
                Ok(m)
            })
            .collect::<Result<Vec<_>>>()?;
        let quotients = perturbed
            .par_iter()
            .zip(s_list)
            .map(|(m, &s)| Ok(self.eval_u(p.t0, m)?.u.sub(&p.u).scaled(1.0 / s)))
            .collect::<Result<Vec<_>>>()?;
        let mut order: Vec<usize> = (0..s_list.len()).collect();
        order.sort_by(|&a, &b| s_list[a].total_cmp(&s_list[b]));
        let (i0, i1, i2) = (order[0], order[1], order[2]);
        let (s0, s1, s2) = (s_list[i0], s_list[i1], s_list[i2]);
        let (l0, l1, l2) = (
            s1 * s2 / ((s0 - s1) * (s0 - s2)),
            s0 * s2 / ((s1 - s0) * (s1 - s2)),
            s0 * s1 / ((s2 - s0) * (s2 - s1)),
        );
        let limit = quotients[i0]
            .scaled(l0)
            .axpy(l1, &quotients[i1])
            .axpy(l2, &quotients[i2]);
        let dd1 = quotients[i1].sub(&quotients[i0]).scaled(1.0 / (s1 - s0));
        let dd2 = quotients[i2].sub(&quotients[i1]).scaled(1.0 / (s2 - s1));
        let b = dd2.sub(&dd1).scaled(1.0 / (s2 - s0));
        let successive_ratios = quotients
            .windows(3)
            .map(|w| w[0].max_abs_diff(&w[1]) / w[1].max_abs_diff(&w[2]))
            .collect();
        Ok(FdDerivative {
            s_list: s_list.to_vec(),
            quotients,
            limit,
            quadratic_term: b.sup_norm() * s0 * s0,
            successive_ratios,
        })
    }

    /// `U(m_hat) - U(m0) - int dU/dm d(m_hat - m0)` in sup and
    /// `C^{2 + alpha}` norms, divided by `d1(m0, m_hat)^2`.
    pub fn c1_expansion_error(
        &self,
        p: &MasterPoint,
        m_hat: &ScalarField,
        table: &CCDistanceTable,
        transport: TransportOptions,
    ) -> Result<C1Report> {
        let diff = m_hat.sub(&p.m0);
        if diff.sup_norm() == 0.0 {
            return Ok(C1Report {
                sup_error: 0.0,
                holder_error: 0.0,
                d1: 0.0,
                ratio_sup: 0.0,
                ratio_holder: 0.0,
            });
        }
        let u_hat = self.eval_u(p.t0, m_hat)?;
        let err = u_hat.u.sub(&p.u).sub(&self.derivative(p, &diff)?);
        let holder = holder_norm(&err, MASTER_ALPHA, 2, table)?.norm();
        let d1 = d1_distance(&p.m0, m_hat, table, transport)?.cost();
        let sup = err.sup_norm();
        Ok(C1Report {
            sup_error: sup,
            holder_error: holder,
            d1,
            ratio_sup: sup / (d1 * d1),
            ratio_holder: holder / (d1 * d1),
        })
    }

    /// Every term of the master equation at `(t0, ., m0)`, with `d_t U` the
    /// forward difference of `U` at `t0` and `t0 + dt_probe` for the same `m0`.
    pub fn master_residual(&self, p: &MasterPoint, dt_probe: f64, route: IntegralRoute) -> Result<ResidualReport> {
        let later = self.eval_u(p.t0 + dt_probe, &p.m0)?;
        let dtu = later.u.sub(&p.u).scaled(1.0 / dt_probe);
        let [d1u, d2u] = gradient(&p.u);
        let integral_terms = match route {
            IntegralRoute::Kernel => {
                let k = p.kernel.as_ref().ok_or(Error::Missing("measure-derivative kernel K"))?;
                kernel_integrals(k, &p.m0, [&d1u, &d2u])
            }
            IntegralRoute::Adjoint => {
                let flux = apply_div(&d1u.zip_map(&p.m0, |a, m| a * m), &d2u.zip_map(&p.m0, |a, m| a * m));
                let rho = apply_laplacian(&p.m0).add(&flux).scaled(-1.0);
                self.derivative(p, &rho)?
            }
        };
        let f = self.coupling.eval_f(&p.m0)?;
        let residual = dtu
            .scaled(-1.0)
            .sub(&apply_laplacian(&p.u))
            .axpy(0.5, &grad_norm_sq(&p.u))
            .add(&integral_terms)
            .sub(&f);
        Ok(ResidualReport {
            sup: residual.sup_norm(),
            residual,
            dt_probe,
            route,
            integral_terms,
        })
    }

    /// `||K1 - K2||_{(2 + alpha, 1 + alpha)} / d1(m1, m2)` for each pair, with
    /// the norm taken as the largest `C^{2 + alpha}` norm of a column in `x`
    /// plus the largest `C^{1 + alpha}` norm of a row in `y`.
    pub fn derivative_lipschitz_report(
        &self,
        t0: f64,
        pairs: &[(ScalarField, ScalarField)],
        table: &CCDistanceTable,
        transport: TransportOptions,
    ) -> Result<DerivativeLipschitzReport> {
        let mut out = Vec::new();
        let mut excluded = 0;
        for (a, b) in pairs {
            let d1 = d1_distance(a, b, table, transport)?.cost();
            if d1 < crate::mfg::DEGENERATE_PAIR_D1 {
                excluded += 1;
                continue;
            }
            let ka = self.with_kernel(self.eval_u(t0, a)?)?.kernel.expect("kernel attached");
            let kb = self.with_kernel(self.eval_u(t0, b)?)?.kernel.expect("kernel attached");
            let diff = KernelK {
                data: ka.data.iter().zip(&kb.data).map(|(x, y)| x - y).collect(),
                ..ka
            };
            let norm = kernel_mixed_norm(&diff, table)?;
            out.push(KernelPairRatio {
                d1,
                norm,
                ratio: norm / d1,
            });
        }
        let ratios: Vec<f64> = out.iter().map(|p| p.ratio).collect();
        Ok(DerivativeLipschitzReport {
            excluded,
            max_ratio: ratios.iter().copied().fold(0.0, f64::max),
            spread: if ratios.is_empty() { 0.0 } else { relative_spread(&ratios) },
            pairs: out,
        })
    }
}

/// `sum_y [-Delta^y K(x, y) + D^y K(x, y) . D_X U(y)] m0(y) h^2`.
fn kernel_integrals(k: &KernelK, m0: &ScalarField, du: [&ScalarField; 2]) -> ScalarField {
    let area = k.grid.cell_area();
    let out = (0..k.size())
        .into_par_iter()
        .map(|x| {
            let row = k.row(x);
            let [g1, g2] = gradient(&row);
            let lap = apply_laplacian(&row);
            let integrand = g1
                .zip_map(du[0], |a, b| a * b)
                .add(&g2.zip_map(du[1], |a, b| a * b))
                .sub(&lap);
            area * integrand.values().iter().zip(m0.values()).map(|(v, m)| v * m).sum::<f64>()
        })
        .collect();
    ScalarField::from_vec(Arc::clone(&k.grid), out)
}

fn kernel_mixed_norm(k: &KernelK, table: &CCDistanceTable) -> Result<f64> {
    let n = k.size();
    let cols = (0..n)
        .into_par_iter()
        .map(|y| Ok(holder_norm(&k.column(y), MASTER_ALPHA, 2, table)?.norm()))
        .collect::<Result<Vec<f64>>>()?;
    let rows = (0..n)
        .into_par_iter()
        .map(|x| Ok(holder_norm(&k.row(x), MASTER_ALPHA, 1, table)?.norm()))
        .collect::<Result<Vec<f64>>>()?;
    Ok(cols.into_iter().fold(0.0, f64::max) + rows.into_iter().fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::coupling::CouplingSpec;
    use crate::grid::{Profile, TorusGrid};
    use crate::metric::cc_all_pairs;

    fn grid(n: usize) -> Arc<TorusGrid> {
        Arc::new(TorusGrid::new(n, n, Profile::SinProfile).unwrap())
    }

    fn problem(g: &Arc<TorusGrid>, spec: &CouplingSpec) -> MasterProblem {
        let c = Coupling::from_spec(g, spec).unwrap();
        MasterProblem::new(c, 1.0, 0.5 / g.n1() as f64, MfgOptions::default()).unwrap()
    }

    fn m0(g: &Arc<TorusGrid>) -> ScalarField {
        ScalarField::from_fn(g.clone(), |x1, x2| 1.0 + 0.5 * (2.0 * PI * x1).cos() * (2.0 * PI * x2).sin())
            .normalized_density()
            .unwrap()
    }

    fn direction(g: &Arc<TorusGrid>, k: f64) -> ScalarField {
        ScalarField::from_fn(g.clone(), |x1, x2| 0.6 * (2.0 * PI * (x1 + k * x2)).sin())
    }

    #[test]
    fn terminal_value_is_the_terminal_cost() {
        let g = grid(8);
        let mp = problem(&g, &CouplingSpec::default());
        let p = mp.eval_u(1.0, &m0(&g)).unwrap();
        assert_eq!(p.u, mp.coupling.eval_g(&m0(&g)).unwrap());
    }

    #[test]
    fn off_grid_start_is_rejected() {
        let g = grid(8);
        let mp = problem(&g, &CouplingSpec::default());
        assert!(mp.eval_u(0.01, &m0(&g)).is_err());
    }

    #[test]
    fn decoupled_value_ignores_the_measure() {
        let g = grid(8);
        let mp = problem(&g, &CouplingSpec::zero());
        let a = mp.eval_u(0.0, &m0(&g)).unwrap();
        let b = mp.eval_u(0.0, &ScalarField::uniform_density(g.clone())).unwrap();
        assert!(a.u.max_abs_diff(&b.u) <= 10.0 * mp.opts.tol);
        let fd = mp.measure_derivative_fd(&a, &direction(&g, 1.0), &DEFAULT_S_LIST).unwrap();
        assert!(fd.quotients.iter().all(|q| q.sup_norm() <= 10.0 * mp.opts.tol));
    }

    #[test]
    fn flow_is_consistent() {
        let g = grid(8);
        let mp = problem(&g, &CouplingSpec::default());
        let p = mp.eval_u(0.0, &m0(&g)).unwrap();
        let r = mp.flow_consistency(&p).unwrap();
        assert!(r.gap <= 10.0 * mp.opts.tol, "{}", r.gap);
    }

    #[test]
    fn finite_differences_agree_with_the_kernel() {
        let g = grid(8);
        let mp = problem(&g, &CouplingSpec::default());
        let p = mp.with_kernel(mp.eval_u(0.0, &m0(&g)).unwrap()).unwrap();
        let rho = direction(&g, 1.0);
        let fd = mp.measure_derivative_fd(&p, &rho, &DEFAULT_S_LIST).unwrap();
        let gap = fd.limit.max_abs_diff(&mp.derivative(&p, &rho).unwrap());
        assert!(gap <= (10.0 * mp.opts.tol).max(fd.quadratic_term), "{gap} {}", fd.quadratic_term);
        assert!((fd.successive_ratios[0] - 2.0).abs() <= 0.3, "{:?}", fd.successive_ratios);
    }

    #[test]
    fn expansion_error_is_quadratic() {
        let g = grid(8);
        let mp = problem(&g, &CouplingSpec::default());
        let table = cc_all_pairs(&g).unwrap();
        let p = mp.eval_u(0.0, &m0(&g)).unwrap();
        let rho = direction(&g, 2.0);
        let e = |s: f64| mp.c1_expansion_error(&p, &p.m0.axpy(s, &rho), &table, TransportOptions::exact()).unwrap();
        let (a, b) = (e(0.1), e(0.05));
        let q = b.sup_error / a.sup_error;
        assert!((q - 0.25).abs() <= 0.1, "{q}");
        assert_eq!(mp.c1_expansion_error(&p, &p.m0, &table, TransportOptions::exact()).unwrap().sup_error, 0.0);
    }

    #[test]
    fn residual_routes_agree_and_ignore_normalization() {
        let g = grid(8);
        let mp = problem(&g, &CouplingSpec::default());
        let p = mp.with_kernel(mp.eval_u(0.0, &m0(&g)).unwrap()).unwrap();
        let dtp = 2.0 * mp.dt;
        let k = mp.master_residual(&p, dtp, IntegralRoute::Kernel).unwrap();
        let a = mp.master_residual(&p, dtp, IntegralRoute::Adjoint).unwrap();
        assert!(k.residual.max_abs_diff(&a.residual) < 1e-6, "{}", k.residual.max_abs_diff(&a.residual));
        let mut raw = p.clone();
        let kern = raw.kernel.take().unwrap();
        let shifted = KernelK {
            data: kern.data.iter().enumerate().map(|(i, v)| v + (i / kern.size()) as f64).collect(),
            ..kern
        };
        raw.kernel = Some(shifted);
        let s = mp.master_residual(&raw, dtp, IntegralRoute::Kernel).unwrap();
        assert!(s.residual.max_abs_diff(&k.residual) <= 1e-10);
    }

    #[test]
    fn decoupled_residual_is_the_hjb_residual() {
        let g = grid(16);
        let mp = problem(&g, &CouplingSpec::zero());
        let p = mp.eval_u(0.0, &m0(&g)).unwrap();
        let r = mp.master_residual(&p, 2.0 * mp.dt, IntegralRoute::Adjoint).unwrap();
        assert_eq!(r.integral_terms.sup_norm(), 0.0);
        assert!(r.sup < 0.05, "{}", r.sup);
    }

    #[test]
    fn decoupled_kernel_difference_vanishes() {
        let g = grid(8);
        let mp = problem(&g, &CouplingSpec::zero());
        let table = cc_all_pairs(&g).unwrap();
        let pair = (m0(&g), ScalarField::uniform_density(g.clone()));
        let r = mp.derivative_lipschitz_report(0.0, &[pair.clone(), (pair.0.clone(), pair.0)], &table, TransportOptions::exact()).unwrap();
        assert_eq!(r.excluded, 1);
        assert_eq!(r.max_ratio, 0.0);
    }
}
