//! Acceptance battery. Each numbered criterion is a list of named checks
//! holding the measured value and its bound; a criterion passes when every
//! check does and no solver failed.

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coupling::{random_density, Coupling, CouplingSpec};
use crate::dual_norm::path_distance;
use crate::error::{Error, Result};
use crate::field::{ScalarField, SpaceTimeField};
use crate::grid::{Profile, TorusGrid};
use crate::heisenberg::{
    cell_mass, cell_probability, chi, gaussian_fit, kernel_mass, mc_endpoints, sample_cells, DriftPath,
    HeisenbergPoint, KernelVariant, CALIBRATED_SHAPE,
};
use crate::hjb::{solve_backward_linear, solve_hjb_hopf_cole, BackwardLinearProblem};
use crate::kfp::{random_trig, simulate_particles, time_holder_check, verify_weak_solution, KFPProblem};
use crate::linearized::{build_kernel_k, solve_linearized, LinearizedProblem};
use crate::master::{IntegralRoute, MasterProblem, DEFAULT_S_LIST};
use crate::metric::{cc_all_pairs, cc_oracle, cc_sweep, d1_distance, d1_dual_gap, x2_axis_exponent, TransportOptions};
use crate::mfg::{
    default_initial_density, lasry_lions_gap, lipschitz_experiment, solve_mfg, InitialGuess, MFGSolution, MfgOptions,
    TimeMesh,
};
use crate::ops::{apply_laplacian, apply_x, Direction};

pub const VERIFY_SEED: u64 = 42;

/// Titles of the criteria run by [`run_criterion`].
pub const CRITERIA: [(usize, &str); 10] = [
    (1, "operator calculus"),
    (2, "CC metric"),
    (3, "transport"),
    (4, "Heisenberg kernel"),
    (5, "linear backward solver"),
    (6, "Hopf-Cole cross-validation"),
    (7, "KFP"),
    (8, "MFG fixed point"),
    (9, "linearized system and kernel"),
    (10, "master equation"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VerifyMode {
    /// Fewer samples and a 12x12 grid for the kernel sweeps.
    Quick,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub mode: VerifyMode,
    pub seed: u64,
}

impl VerifyOptions {
    pub fn new(mode: VerifyMode) -> Self {
        VerifyOptions { mode, seed: VERIFY_SEED }
    }

    fn quick(&self) -> bool {
        self.mode == VerifyMode::Quick
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(stream);
        r
    }

    /// Grid of the kernel sweeps.
    fn kernel_grid(&self) -> usize {
        if self.quick() {
            12
        } else {
            16
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: String,
    pub passed: bool,
}

impl Check {
    fn at_most(name: impl Into<String>, value: f64, bound: f64) -> Check {
        Check {
            name: name.into(),
            value,
            bound: format!("<= {bound:e}"),
            passed: value <= bound,
        }
    }

    fn at_least(name: impl Into<String>, value: f64, bound: f64) -> Check {
        Check {
            name: name.into(),
            value,
            bound: format!(">= {bound}"),
            passed: value >= bound,
        }
    }

    fn within(name: impl Into<String>, value: f64, target: f64, tol: f64) -> Check {
        Check {
            name: name.into(),
            value,
            bound: format!("{target} +- {tol}"),
            passed: (value - target).abs() <= tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionReport {
    pub id: usize,
    pub title: String,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub error: Option<String>,
}

impl CriterionReport {
    /// One line: `PASS 3 transport: worst check ...`.
    pub fn summary(&self) -> String {
        let status = if self.passed { "PASS" } else { "FAIL" };
        let detail = match &self.error {
            Some(e) => format!("error: {e}"),
            None => self
                .checks
                .iter()
                .map(|c| format!("{}{} = {:.4e} ({})", if c.passed { "" } else { "!" }, c.name, c.value, c.bound))
                .collect::<Vec<_>>()
                .join("; "),
        };
        format!("{status} {} {}: {detail}", self.id, self.title)
    }
}

/// Reports of all criteria; deterministic for a given mode and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub mode: VerifyMode,
    pub seed: u64,
    pub criteria: Vec<CriterionReport>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.criteria.iter().all(|c| c.passed)
    }
}

pub fn run_criterion(id: usize, o: &VerifyOptions) -> CriterionReport {
    let title = CRITERIA
        .iter()
        .find(|(i, _)| *i == id)
        .map(|(_, t)| t.to_string())
        .unwrap_or_else(|| format!("unknown criterion {id}"));
    let result = match id {
        1 => operator_calculus(o),
        2 => cc_metric(o),
        3 => transport(o),
        4 => heisenberg_kernel(o),
        5 => linear_backward(o),
        6 => hopf_cole(o),
        7 => kfp(o),
        8 => mfg_fixed_point(o),
        9 => linearized(o),
        10 => master(o),
        _ => Err(Error::InvalidInput(format!("no criterion {id}"))),
    };
    match result {
        Ok(checks) => CriterionReport {
            id,
            title,
            passed: !checks.is_empty() && checks.iter().all(|c| c.passed),
            checks,
            error: None,
        },
        Err(e) => CriterionReport {
            id,
            title,
            passed: false,
            checks: Vec::new(),
            error: Some(e.to_string()),
        },
    }
}

/// Runs every criterion in order, reporting each with its wall time.
pub fn run_all(o: &VerifyOptions, mut on_done: impl FnMut(&CriterionReport, Duration)) -> VerifyReport {
    let criteria = CRITERIA
        .iter()
        .map(|&(id, _)| {
            let start = Instant::now();
            let r = run_criterion(id, o);
            on_done(&r, start.elapsed());
            r
        })
        .collect();
    VerifyReport {
        mode: o.mode,
        seed: o.seed,
        criteria,
    }
}

fn grid(n: usize, p: Profile) -> Result<Arc<TorusGrid>> {
    Ok(Arc::new(TorusGrid::new(n, n, p)?))
}

fn random_field(g: &Arc<TorusGrid>, rng: &mut impl Rng) -> ScalarField {
    ScalarField::from_vec(g.clone(), (0..g.len()).map(|_| rng.random_range(-0.5..0.5)).collect())
}

fn zero_mass(g: &Arc<TorusGrid>, rng: &mut impl Rng) -> ScalarField {
    let f = random_trig(g, rng);
    let mean = f.integral();
    f.map(|v| v - mean)
}

fn ratios(errors: &[f64]) -> Vec<f64> {
    errors.windows(2).map(|w| w[0] / w[1]).collect()
}

/// Default game on `n x n x 2n` over `[0, 1]` with the default coupling.
fn default_game(n: usize, guess: InitialGuess) -> Result<(Coupling, MFGSolution)> {
    let g = grid(n, Profile::SinProfile)?;
    let c = Coupling::from_spec(&g, &CouplingSpec::default())?;
    let s = solve_mfg(TimeMesh::new(0.0, 1.0, 2 * n)?, &default_initial_density(&g), &c, MfgOptions::default(), guess)?;
    Ok((c, s))
}

/// Default game on the parabolic mesh `n x n x n^2`.
fn parabolic_game(n: usize) -> Result<MFGSolution> {
    let g = grid(n, Profile::SinProfile)?;
    let c = Coupling::from_spec(&g, &CouplingSpec::default())?;
    solve_mfg(TimeMesh::new(0.0, 1.0, n * n)?, &default_initial_density(&g), &c, MfgOptions::default(), InitialGuess::Uniform)
}

fn operator_calculus(o: &VerifyOptions) -> Result<Vec<Check>> {
    let mut rng = o.rng(1);
    let mut sbp = 0.0_f64;
    for p in [Profile::SinProfile, Profile::ChartGrushin] {
        let g = grid(16, p)?;
        for _ in 0..20 {
            let f = random_field(&g, &mut rng);
            let h = random_field(&g, &mut rng);
            for d in Direction::BOTH {
                sbp = sbp.max((apply_x(&f, d).pairing(&h) + f.pairing(&apply_x(&h, d))).abs());
            }
            sbp = sbp.max((apply_laplacian(&f).pairing(&h) - f.pairing(&apply_laplacian(&h))).abs());
        }
    }
    let mut errs = [Vec::new(), Vec::new(), Vec::new()];
    for n in [16, 32, 64] {
        let g = grid(n, Profile::SinProfile)?;
        let f = ScalarField::from_fn(g.clone(), |x1, x2| (2.0 * PI * x1).sin() * (2.0 * PI * x2).cos());
        let x1f = ScalarField::from_fn(g.clone(), |x1, x2| 2.0 * PI * (2.0 * PI * x1).cos() * (2.0 * PI * x2).cos());
        let x2f = ScalarField::from_fn(g.clone(), |x1, x2| -2.0 * PI * (2.0 * PI * x1).sin().powi(2) * (2.0 * PI * x2).sin());
        let lap = ScalarField::from_fn(g.clone(), |x1, x2| {
            let a = (2.0 * PI * x1).sin();
            -4.0 * PI * PI * (1.0 + a * a) * a * (2.0 * PI * x2).cos()
        });
        errs[0].push(apply_x(&f, Direction::X1).max_abs_diff(&x1f));
        errs[1].push(apply_x(&f, Direction::X2).max_abs_diff(&x2f));
        errs[2].push(apply_laplacian(&f).max_abs_diff(&lap));
    }
    let mut checks = vec![Check::at_most("summation-by-parts defect", sbp, 1e-12)];
    for (name, e) in ["X1", "X2", "Delta_X"].iter().zip(&errs) {
        for (k, r) in ratios(e).into_iter().enumerate() {
            checks.push(Check::within(format!("{name} error ratio {}->{}", 16 << k, 32 << k), r, 4.0, 0.8));
        }
    }
    Ok(checks)
}

fn cc_metric(o: &VerifyOptions) -> Result<Vec<Check>> {
    let mut rng = o.rng(2);
    let mut checks = Vec::new();
    for n in [16, 32] {
        let g = grid(n, Profile::SinProfile)?;
        let mut worst = 0.0_f64;
        for _ in 0..50 {
            let (s, t) = (rng.random_range(0..g.len()), rng.random_range(0..g.len()));
            let sweep = cc_sweep(&g, s)?.distance(s, t);
            worst = worst.max((sweep - cc_oracle(&g, s, t, 0.05)?).abs());
        }
        checks.push(Check::at_most(format!("sweep vs oracle gap {n}x{n}"), worst, 5.0 / n as f64));
    }
    let g = grid(64, Profile::ChartGrushin)?;
    let exponent = x2_axis_exponent(&cc_sweep(&g, g.index(0, 0))?, &[1, 2, 4, 8])?;
    checks.push(Check::within("x2-axis exponent ChartGrushin 64x64", exponent, 0.5, 0.05));
    Ok(checks)
}

fn transport(o: &VerifyOptions) -> Result<Vec<Check>> {
    let mut rng = o.rng(3);
    let g = grid(16, Profile::SinProfile)?;
    let table = cc_all_pairs(&g)?;
    let pairs = if o.quick() { 5 } else { 20 };
    let (mut gap, mut cert) = (0.0_f64, f64::INFINITY);
    for _ in 0..pairs {
        let a = random_density(&g, &mut rng);
        let b = random_density(&g, &mut rng);
        let lp = d1_distance(&a, &b, &table, TransportOptions::exact())?;
        let en = d1_distance(&a, &b, &table, TransportOptions::entropic())?;
        gap = gap.max((en.cost() - lp.cost()).abs() / lp.cost());
        let phi = lp.potential().ok_or(Error::Missing("Kantorovich potential"))?;
        cert = cert.min(d1_dual_gap(&a, &b, phi, &table)?);
    }
    Ok(vec![
        Check::at_most(format!("LP vs entropic relative gap, {pairs} pairs"), gap, 1e-2),
        Check::at_least("weak-duality certificate", cert, -1e-8),
    ])
}

fn heisenberg_kernel(o: &VerifyOptions) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let mut mass_err = 0.0_f64;
    for t in [0.25, 0.5, 1.0] {
        mass_err = mass_err.max((kernel_mass(t, KernelVariant::OracleCalibrated)? - 1.0).abs());
    }
    checks.push(Check::at_most("normalization error", mass_err, 1e-3));
    let t = 0.5;
    let pts = mc_endpoints(t, 100_000, o.seed)?;
    let mut worst = 0.0_f64;
    for cell in sample_cells(t, 20, o.seed) {
        let (p, se) = cell_probability(&pts, cell);
        worst = worst.max((p - cell_mass(t, cell, CALIBRATED_SHAPE)?).abs() / se);
    }
    checks.push(Check::at_most("Monte Carlo cell gap in standard errors", worst, 3.0));
    let mut rng = o.rng(4);
    let point = |r: &mut ChaCha8Rng| HeisenbergPoint::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-2.0..2.0));
    let mut defect = 0.0_f64;
    for _ in 0..20 {
        let v = DriftPath::constant(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let (p, q) = (point(&mut rng), point(&mut rng));
        let tt = rng.random_range(0.05..1.0);
        let lhs = chi(tt, p.compose(q), &v);
        defect = defect.max((lhs - chi(tt, p, &v) * chi(tt, q, &v)).abs() / lhs.abs());
    }
    checks.push(Check::at_most("chi homomorphism defect", defect, 1e-14));
    let t_list = [0.1, 0.3, 1.0];
    let p_list = [
        HeisenbergPoint::new(0.5, 0.3, 0.2),
        HeisenbergPoint::new(1.0, 0.0, 0.5),
        HeisenbergPoint::new(0.2, -0.7, 1.0),
    ];
    let f0 = gaussian_fit(KernelVariant::OracleCalibrated, 0, &t_list, &p_list)?;
    let f1 = gaussian_fit(KernelVariant::OracleCalibrated, 1, &t_list, &p_list)?;
    checks.push(Check::within("Gaussian exponent of Gamma", f0.exponent, 2.0, 0.05));
    checks.push(Check::within("Gaussian exponent of D Gamma", f1.exponent, 2.5, 0.1));
    Ok(checks)
}

/// Smooth solution `z = cos(pi t) (sin(2 pi x1) cos(2 pi x2) + 1/2)` of the
/// backward equation with frame drift `V = (cos(2 pi x2) / 2, 3 sin(2 pi x1) / 10)`.
fn manufactured_error(n: usize) -> Result<f64> {
    let g = grid(n, Profile::SinProfile)?;
    let nt = 2 * n;
    let mesh = TimeMesh::new(0.0, 1.0, nt)?;
    let v1 = ScalarField::from_fn(g.clone(), |_, x2| 0.5 * (2.0 * PI * x2).cos());
    let v2 = ScalarField::from_fn(g.clone(), |x1, _| 0.3 * (2.0 * PI * x1).sin());
    let exact = |t: f64| {
        ScalarField::from_fn(g.clone(), move |x1, x2| (PI * t).cos() * ((2.0 * PI * x1).sin() * (2.0 * PI * x2).cos() + 0.5))
    };
    let source = |t: f64| {
        ScalarField::from_fn(g.clone(), move |x1, x2| {
            let (s1, c1) = ((2.0 * PI * x1).sin(), (2.0 * PI * x1).cos());
            let (s2, c2) = ((2.0 * PI * x2).sin(), (2.0 * PI * x2).cos());
            let shape = s1 * c2 + 0.5;
            let dt = -PI * (PI * t).sin() * shape;
            let ct = (PI * t).cos();
            let lap = -4.0 * PI * PI * (1.0 + s1 * s1) * s1 * c2 * ct;
            let dx1 = 2.0 * PI * c1 * c2 * ct;
            let dx2 = -2.0 * PI * s1 * s1 * s2 * ct;
            -dt - lap + 0.5 * c2 * dx1 + 0.3 * s1 * dx2
        })
    };
    let times: Vec<f64> = (0..=nt).map(|k| k as f64 * mesh.dt()).collect();
    let f = SpaceTimeField::new(0.0, 1.0, times.iter().map(|&t| source(t)).collect())?;
    let v1p = mesh.constant_path(&v1)?;
    let v2p = mesh.constant_path(&v2)?;
    let z = solve_backward_linear(&BackwardLinearProblem::from_frame(&v1p, &v2p, f, exact(1.0))?)?;
    Ok(times
        .iter()
        .enumerate()
        .map(|(k, &t)| z.slice(k).max_abs_diff(&exact(t)))
        .fold(0.0, f64::max))
}

fn linear_backward(_: &VerifyOptions) -> Result<Vec<Check>> {
    let g = grid(16, Profile::SinProfile)?;
    let mesh = TimeMesh::new(0.0, 1.0, 32)?;
    let v1 = mesh.constant_path(&ScalarField::from_fn(g.clone(), |_, x2| 0.5 * (2.0 * PI * x2).cos()))?;
    let v2 = mesh.constant_path(&ScalarField::from_fn(g.clone(), |x1, _| 0.3 * (2.0 * PI * x1).sin()))?;
    let zero = mesh.constant_path(&ScalarField::zeros(g.clone()))?;
    let one = mesh.constant_path(&ScalarField::constant(g.clone(), 1.0))?;
    let c = solve_backward_linear(&BackwardLinearProblem::from_frame(&v1, &v2, zero, ScalarField::constant(g.clone(), 1.3))?)?;
    let constant_err = c.slices().iter().map(|s| s.map(|v| v - 1.3).sup_norm()).fold(0.0, f64::max);
    let u = solve_backward_linear(&BackwardLinearProblem::from_frame(&v1, &v2, one, ScalarField::zeros(g.clone()))?)?;
    let source_err = (0..=u.nt())
        .map(|k| u.slice(k).map(|v| v - (1.0 - u.time(k))).sup_norm())
        .fold(0.0, f64::max);
    let errs = [manufactured_error(16)?, manufactured_error(32)?, manufactured_error(64)?];
    let mut checks = vec![
        Check::at_most("constant terminal, zero source", constant_err, 1e-12),
        Check::at_most("unit source, zero terminal", source_err, 1e-12),
    ];
    for (k, r) in ratios(&errs).into_iter().enumerate() {
        checks.push(Check::at_least(format!("manufactured error ratio {}->{}", 16 << k, 32 << k), r, 1.8));
    }
    Ok(checks)
}

fn hopf_cole(_: &VerifyOptions) -> Result<Vec<Check>> {
    let (c, s) = default_game(32, InitialGuess::Uniform)?;
    let hc = solve_hjb_hopf_cole(&s.mu, &c)?;
    Ok(vec![Check::at_most("Direct vs Hopf-Cole 32x32x64", hc.max_abs_diff(&s.u), 1e-3)])
}

fn kfp(o: &VerifyOptions) -> Result<Vec<Check>> {
    let (_, coarse) = default_game(16, InitialGuess::Uniform)?;
    let (_, fine) = default_game(32, InitialGuess::Uniform)?;
    let mass = fine
        .m
        .slices()
        .iter()
        .map(|s| (s.integral() - 1.0).abs())
        .fold(0.0, f64::max);
    let defect = |n: usize| -> Result<f64> {
        let s = parabolic_game(n)?;
        verify_weak_solution(&s.m, &KFPProblem::from_value(s.m0().clone(), &s.u)?, 5, o.seed)
    };
    let (d16, d32) = (defect(16)?, defect(32)?);
    let particles = simulate_particles(fine.m0(), &fine.u, 100_000, o.seed, 4)?;
    let table32 = cc_all_pairs(fine.grid())?;
    let gap = d1_distance(particles.density.last(), fine.m.last(), &table32, TransportOptions::exact())?.cost();
    let table16 = cc_all_pairs(coarse.grid())?;
    let holder = time_holder_check(&coarse.m, &coarse.u, &table16, &TransportOptions::exact())?;
    Ok(vec![
        Check::at_most("mass drift 32x32x64", mass, 1e-12),
        Check::at_least("weak defect ratio 16x16x256->32x32x1024", d16 / d32, 1.8),
        Check::at_most("particle vs PDE d1 at T, n = 1e5", gap, 5e-2),
        Check::at_most(format!("time-Hoelder worst ratio, {} pairs 16x16x32", holder.pairs), holder.worst_ratio, 1.0),
    ])
}

fn mfg_fixed_point(o: &VerifyOptions) -> Result<Vec<Check>> {
    let tol = MfgOptions::default().tol;
    let (_, a) = default_game(32, InitialGuess::Uniform)?;
    let (_, b) = default_game(32, InitialGuess::Frozen)?;
    let mut checks = vec![Check::at_most("multi-start measure gap 32x32x64", path_distance(&a.m, &b.m), 10.0 * tol)];
    let rng = o.rng(8);
    let mut c_reports = Vec::new();
    for n in [16, 32] {
        let g = grid(n, Profile::SinProfile)?;
        let c = Coupling::from_spec(&g, &CouplingSpec::default())?;
        let mesh = TimeMesh::new(0.0, 1.0, 2 * n)?;
        let mut r = rng.clone();
        let other = random_density(&g, &mut r);
        let s1 = solve_mfg(mesh, &default_initial_density(&g), &c, MfgOptions::default(), InitialGuess::Frozen)?;
        let s2 = solve_mfg(mesh, &other, &c, MfgOptions::default(), InitialGuess::Frozen)?;
        c_reports.push(lasry_lions_gap(&s1, &s2, &cc_all_pairs(&g)?, TransportOptions::exact())?.c_report);
    }
    checks.push(Check::at_most(
        "Lasry-Lions C_report change 16->32",
        (c_reports[1] / c_reports[0] - 1.0).abs(),
        0.25,
    ));
    let g = grid(16, Profile::SinProfile)?;
    let c = Coupling::from_spec(&g, &CouplingSpec::default())?;
    let m0 = default_initial_density(&g);
    let rho = ScalarField::from_fn(g.clone(), |x1, x2| 0.6 * (2.0 * PI * (x1 + x2)).sin());
    let pairs: Vec<(ScalarField, ScalarField)> = DEFAULT_S_LIST.iter().map(|&s| (m0.clone(), m0.axpy(s, &rho))).collect();
    let report = lipschitz_experiment(
        &pairs,
        TimeMesh::new(0.0, 1.0, 32)?,
        &c,
        MfgOptions::default(),
        &cc_all_pairs(&g)?,
        TransportOptions::exact(),
        0.5,
    )?;
    checks.push(Check::at_most("Lipschitz ratio spread over s in {0.2, 0.1, 0.05}", report.spread, 0.3));
    Ok(checks)
}

fn linearized(o: &VerifyOptions) -> Result<Vec<Check>> {
    let tol = MfgOptions::default().tol;
    let n = o.kernel_grid();
    let (c, base) = default_game(n, InitialGuess::Frozen)?;
    let g = base.grid().clone();
    let solve = |r: &ScalarField| solve_linearized(&base, &c, &LinearizedProblem::initial(r.clone()), MfgOptions::default());
    let mut rng = o.rng(9);
    let (ra, rb) = (zero_mass(&g, &mut rng), zero_mass(&g, &mut rng));
    let (za, zb) = (solve(&ra)?, solve(&rb)?);
    let zab = solve(&ra.scaled(2.0).axpy(-0.5, &rb))?;
    let superposition = zab.z.max_abs_diff(&za.z.zip_map(&zb.z, |x, y| 2.0 * x - 0.5 * y));
    let k = build_kernel_k(&base, &c, MfgOptions::default())?.normalize();
    let mut representation = 0.0_f64;
    for _ in 0..10 {
        let r = zero_mass(&g, &mut rng);
        representation = representation.max(solve(&r)?.z.slice(0).max_abs_diff(&k.apply(&r)));
    }
    let zc = Coupling::from_spec(&g, &CouplingSpec::zero())?;
    let zs = solve_mfg(base.mesh(), base.m0(), &zc, MfgOptions::default(), InitialGuess::Frozen)?;
    let zero_k = build_kernel_k(&zs, &zc, MfgOptions::default())?.max_abs();
    Ok(vec![
        Check::at_most(format!("superposition defect {n}x{n}"), superposition, 10.0 * tol),
        Check::at_most("representation formula, 10 zero-mass rho0", representation, 10.0 * tol),
        Check::at_most("zero-coupling kernel", zero_k, 0.0),
    ])
}

fn master(o: &VerifyOptions) -> Result<Vec<Check>> {
    let opts = MfgOptions::default();
    let n = o.kernel_grid();
    let g = grid(n, Profile::SinProfile)?;
    let c = Coupling::from_spec(&g, &CouplingSpec::default())?;
    let mp = MasterProblem::new(c, 1.0, 0.5 / n as f64, opts)?;
    let m0 = default_initial_density(&g);
    let p = mp.with_kernel(mp.eval_u(0.0, &m0)?)?;
    let rho = ScalarField::from_fn(g.clone(), |x1, x2| 0.6 * (2.0 * PI * (x1 + x2)).sin());
    let fd = mp.measure_derivative_fd(&p, &rho, &DEFAULT_S_LIST)?;
    let two_route = fd.limit.max_abs_diff(&mp.derivative(&p, &rho)?);
    let allowance = (10.0 * opts.tol).max(fd.quadratic_term);
    let table = cc_all_pairs(&g)?;
    let direction = ScalarField::from_fn(g.clone(), |x1, x2| 0.6 * (2.0 * PI * (x1 - 2.0 * x2)).cos());
    let e = |s: f64| mp.c1_expansion_error(&p, &m0.axpy(s, &direction), &table, TransportOptions::exact());
    let quadratic = e(0.05)?.sup_error / e(0.1)?.sup_error;
    let flow = mp.flow_consistency(&p)?;
    let terminal = mp.eval_u(1.0, &m0)?.u.max_abs_diff(&mp.coupling.eval_g(&m0)?);
    let mut residual = Vec::new();
    for n in [16, 32] {
        let g = grid(n, Profile::SinProfile)?;
        let h = 1.0 / n as f64;
        let mp = MasterProblem::new(Coupling::from_spec(&g, &CouplingSpec::default())?, 1.0, h * h, opts)?;
        let p = mp.eval_u(0.0, &default_initial_density(&g))?;
        residual.push(mp.master_residual(&p, 2.0 * mp.dt, IntegralRoute::Adjoint)?.sup);
    }
    Ok(vec![
        Check::at_most(format!("two-route dU/dm gap {n}x{n} (allowance {allowance:.2e})"), two_route, allowance),
        Check::within("C1 error ratio error(s/2) / error(s)", quadratic, 0.25, 0.1),
        Check::at_least("master residual ratio 16->32", residual[0] / residual[1], 1.8),
        Check::at_most("flow-consistency gap", flow.gap, 10.0 * opts.tol),
        Check::at_most("terminal identity U(T) - G", terminal, 0.0),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checks_compare_against_their_bounds() {
        assert!(Check::at_most("a", 1.0, 1.0).passed);
        assert!(!Check::at_most("a", f64::NAN, 1.0).passed);
        assert!(Check::within("b", 2.04, 2.0, 0.05).passed);
        assert!(!Check::at_least("c", 1.7, 1.8).passed);
    }

    #[test]
    fn unknown_criterion_fails_with_an_error() {
        let r = run_criterion(99, &VerifyOptions::new(VerifyMode::Quick));
        assert!(!r.passed);
        assert!(r.error.is_some());
    }

    #[test]
    fn operator_calculus_passes() {
        let r = run_criterion(1, &VerifyOptions::new(VerifyMode::Quick));
        assert!(r.passed, "{}", r.summary());
    }
}
