//! One function per subcommand. Each writes its artifacts into the run
//! directory and returns the empirical constants for the manifest.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use grushin_mfg::coupling::random_density;
use grushin_mfg::heisenberg::{gaussian_fit, kernel_mass, write_kernel_csv, HeisenbergPoint, KernelVariant};
use grushin_mfg::hjb::{solve_hjb_direct, solve_hjb_hopf_cole};
use grushin_mfg::kfp::{random_trig, solve_kfp, verify_weak_solution, KFPProblem};
use grushin_mfg::linearized::{solve_linearized, LinearizedProblem, KERNEL_MAX_NODES};
use grushin_mfg::master::{IntegralRoute, MasterProblem};
use grushin_mfg::metric::{cc_all_pairs, cc_sweep, comparison_constants, d1_distance, d1_dual_gap, x2_axis_exponent, TransportOptions};
use grushin_mfg::mfg::{default_initial_density, solve_mfg, InitialGuess};
use grushin_mfg::verify::{run_all, VerifyMode, VerifyOptions};
use grushin_mfg::{ScalarField, SpaceTimeField};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::config::{ConfigError, RunConfig};

#[derive(Debug)]
pub enum CommandError {
    Config(ConfigError),
    Solver(grushin_mfg::Error),
    Io(std::io::Error),
}

impl From<grushin_mfg::Error> for CommandError {
    fn from(e: grushin_mfg::Error) -> Self {
        CommandError::Solver(e)
    }
}

impl From<std::io::Error> for CommandError {
    fn from(e: std::io::Error) -> Self {
        CommandError::Io(e)
    }
}

impl From<ConfigError> for CommandError {
    fn from(e: ConfigError) -> Self {
        CommandError::Config(e)
    }
}

/// Result of a subcommand: manifest constants, and whether its checks held.
pub struct Outcome {
    pub constants: Value,
    pub passed: bool,
    /// Wall times of named phases, in seconds.
    pub phases: Vec<(String, f64)>,
}

impl Outcome {
    fn ok(constants: Value) -> Self {
        Outcome {
            constants,
            passed: true,
            phases: Vec::new(),
        }
    }
}

type CmdResult = Result<Outcome, CommandError>;

fn write_field(dir: &Path, name: &str, f: &ScalarField) -> Result<(), CommandError> {
    f.write_csv(BufWriter::new(File::create(dir.join(name))?))?;
    Ok(())
}

fn mass_drift(m: &SpaceTimeField) -> f64 {
    m.slices().iter().map(|s| (s.integral() - 1.0).abs()).fold(0.0, f64::max)
}

pub fn kernel(_: &RunConfig, dir: &Path) -> CmdResult {
    let variant = KernelVariant::OracleCalibrated;
    let mut masses = Vec::new();
    for t in [0.25, 0.5, 1.0] {
        masses.push(json!({ "t": t, "mass": kernel_mass(t, variant)? }));
    }
    let t_list = [0.1, 0.3, 1.0];
    let p_list = [
        HeisenbergPoint::new(0.5, 0.3, 0.2),
        HeisenbergPoint::new(1.0, 0.0, 0.5),
        HeisenbergPoint::new(0.2, -0.7, 1.0),
    ];
    let fit0 = gaussian_fit(variant, 0, &t_list, &p_list)?;
    let fit1 = gaussian_fit(variant, 1, &t_list, &p_list)?;
    let horizontal: Vec<HeisenbergPoint> = (0..=40).map(|i| HeisenbergPoint::new(-2.0 + 0.1 * i as f64, 0.0, 0.0)).collect();
    let vertical: Vec<HeisenbergPoint> = (0..=40).map(|i| HeisenbergPoint::new(0.0, 0.0, -2.0 + 0.1 * i as f64)).collect();
    write_kernel_csv(BufWriter::new(File::create(dir.join("gamma_x_axis.csv"))?), 0.5, &horizontal, variant)?;
    write_kernel_csv(BufWriter::new(File::create(dir.join("gamma_z_axis.csv"))?), 0.5, &vertical, variant)?;
    Ok(Outcome::ok(json!({
        "variant": format!("{variant:?}"),
        "masses": masses,
        "gaussian_exponent_order0": fit0.exponent,
        "gaussian_exponent_order1": fit1.exponent,
        "bound_constant_order0": fit0.bound_constant,
        "bound_constant_order1": fit1.bound_constant,
    })))
}

pub fn ccdist(cfg: &RunConfig, dir: &Path) -> CmdResult {
    let g = cfg.grid();
    let origin = g.index(0, 0);
    let table = cc_sweep(&g, origin)?;
    write_field(dir, "dcc_origin.csv", &ScalarField::new(g.clone(), table.row(origin))?)?;
    let offsets: Vec<usize> = (0..).map(|k| 1 << k).take_while(|&k| k < g.n2() / 2).collect();
    let mut csv = BufWriter::new(File::create(dir.join("x2_scaling.csv"))?);
    writeln!(csv, "offset,d_torus,d_cc,d_cc_over_sqrt_d_torus")?;
    println!("{:>6} {:>12} {:>12} {:>12}", "offset", "d_torus", "d_cc", "d_cc/sqrt");
    let mut rows = Vec::new();
    for &k in &offsets {
        let d_t = k as f64 * g.h2();
        let d_cc = table.distance(origin, g.index(0, k));
        writeln!(csv, "{k},{d_t},{d_cc},{}", d_cc / d_t.sqrt())?;
        println!("{k:>6} {d_t:>12.6} {d_cc:>12.6} {:>12.6}", d_cc / d_t.sqrt());
        rows.push(json!({ "offset": k, "d_torus": d_t, "d_cc": d_cc }));
    }
    csv.flush()?;
    let exponent = x2_axis_exponent(&table, &offsets)?;
    let (lower, upper) = comparison_constants(&table);
    println!("fitted x2-axis exponent {exponent:.4}");
    Ok(Outcome::ok(json!({
        "x2_axis_exponent": exponent,
        "scaling": rows,
        "comparison_lower": lower,
        "comparison_upper": upper,
        "sweeps": table.sweeps(),
    })))
}

pub fn wasserstein(cfg: &RunConfig, dir: &Path) -> CmdResult {
    let g = cfg.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let a = random_density(&g, &mut rng);
    let b = random_density(&g, &mut rng);
    let table = cc_all_pairs(&g)?;
    let lp = d1_distance(&a, &b, &table, cfg.transport(TransportOptions::exact()))?;
    let en = d1_distance(&a, &b, &table, cfg.transport(TransportOptions::entropic()))?;
    let phi = lp
        .potential()
        .ok_or(grushin_mfg::Error::Missing("Kantorovich potential"))?;
    let gap = d1_dual_gap(&a, &b, phi, &table)?;
    write_field(dir, "density_a.csv", &a)?;
    write_field(dir, "density_b.csv", &b)?;
    write_field(dir, "potential.csv", phi)?;
    println!("d1 exact {:.6e}  entropic {:.6e}", lp.cost(), en.cost());
    Ok(Outcome::ok(json!({
        "d1_exact": lp.cost(),
        "d1_entropic": en.cost(),
        "relative_gap": (en.cost() - lp.cost()).abs() / lp.cost(),
        "dual_gap": gap,
        "marginal_error_entropic": en.marginal_error(&a, &b),
    })))
}

pub fn hjb(cfg: &RunConfig, dir: &Path) -> CmdResult {
    let g = cfg.grid();
    let c = cfg.coupling(&g);
    let mpath = cfg.mesh().constant_path(&default_initial_density(&g))?;
    let direct = solve_hjb_direct(&mpath, &c)?;
    let hopf_cole = solve_hjb_hopf_cole(&mpath, &c)?;
    direct.u.write_series(&dir.join("u"), "u")?;
    Ok(Outcome::ok(json!({
        "measure_path": "frozen initial density",
        "direct_vs_hopf_cole": direct.u.max_abs_diff(&hopf_cole),
        "u_sup": direct.u.sup_norm(),
    })))
}

pub fn kfp(cfg: &RunConfig, dir: &Path) -> CmdResult {
    let g = cfg.grid();
    let c = cfg.coupling(&g);
    let m0 = default_initial_density(&g);
    let u = solve_hjb_direct(&cfg.mesh().constant_path(&m0)?, &c)?.u;
    let p = KFPProblem::from_value(m0, &u)?;
    let m = solve_kfp(&p)?;
    m.write_series(&dir.join("m"), "m")?;
    Ok(Outcome::ok(json!({
        "value_path": "HJB along the frozen initial density",
        "mass_drift": mass_drift(&m),
        "min_density": m.slices().iter().map(|s| s.min()).fold(f64::INFINITY, f64::min),
        "weak_defect": verify_weak_solution(&m, &p, 5, cfg.seed)?,
        "cfl": p.cfl(),
    })))
}

pub fn mfg(cfg: &RunConfig, dir: &Path) -> CmdResult {
    let g = cfg.grid();
    let c = cfg.coupling(&g);
    let s = solve_mfg(cfg.mesh(), &default_initial_density(&g), &c, cfg.solver, InitialGuess::Uniform)?;
    s.u.write_series(&dir.join("u"), "u")?;
    s.m.write_series(&dir.join("m"), "m")?;
    println!("converged in {} iterations, residual {:.3e}", s.iterations, s.final_residual());
    Ok(Outcome::ok(json!({
        "iterations": s.iterations,
        "residual_history": s.residual_history,
        "final_residual": s.final_residual(),
        "non_monotone": s.non_monotone,
        "mass_drift": mass_drift(&s.m),
    })))
}

pub fn linearize(cfg: &RunConfig, dir: &Path) -> CmdResult {
    let g = cfg.grid();
    let c = cfg.coupling(&g);
    let base = solve_mfg(cfg.mesh(), &default_initial_density(&g), &c, cfg.solver, InitialGuess::Frozen)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let shape = random_trig(&g, &mut rng);
    let mean = shape.integral();
    let rho0 = shape.map(|v| v - mean);
    let lin = solve_linearized(&base, &c, &LinearizedProblem::initial(rho0), cfg.solver)?;
    lin.z.write_series(&dir.join("z"), "z")?;
    lin.rho.write_series(&dir.join("rho"), "rho")?;
    Ok(Outcome::ok(json!({
        "base_iterations": base.iterations,
        "iterations": lin.iterations,
        "residual_history": lin.residual_history,
        "z_t0_sup": lin.z.slice(0).sup_norm(),
    })))
}

fn master_problem(cfg: &RunConfig) -> Result<MasterProblem, CommandError> {
    let g = cfg.grid();
    Ok(MasterProblem::new(cfg.coupling(&g), cfg.t_end, cfg.mesh().dt(), cfg.solver)?)
}

/// Size limit of the dense kernel, checked before any output is written.
pub fn master_kernel_precheck(cfg: &RunConfig) -> Result<(), ConfigError> {
    if cfg.n1 * cfg.n2 > KERNEL_MAX_NODES {
        return Err(ConfigError::new("grid.n1", format!("kernel needs n1 * n2 <= {KERNEL_MAX_NODES}")));
    }
    Ok(())
}

pub fn master_kernel(cfg: &RunConfig, dir: &Path) -> CmdResult {
    master_kernel_precheck(cfg)?;
    let mp = master_problem(cfg)?;
    let m0 = default_initial_density(&cfg.grid());
    let p = mp.with_kernel(mp.eval_u(cfg.t0, &m0)?)?;
    let k = p.kernel.as_ref().ok_or(grushin_mfg::Error::Missing("kernel"))?;
    k.export(dir, "kernel_k")?;
    write_field(dir, "u_t0.csv", &p.u)?;
    Ok(Outcome::ok(json!({
        "nodes": k.size(),
        "max_abs": k.max_abs(),
        "normalization_defect": k.normalization_defect(),
    })))
}

pub fn master_residual(cfg: &RunConfig, dir: &Path) -> CmdResult {
    let mp = master_problem(cfg)?;
    let m0 = default_initial_density(&cfg.grid());
    let p = mp.eval_u(cfg.t0, &m0)?;
    let r = mp.master_residual(&p, 2.0 * mp.dt, IntegralRoute::Adjoint)?;
    write_field(dir, "residual.csv", &r.residual)?;
    write_field(dir, "integral_terms.csv", &r.integral_terms)?;
    write_field(dir, "u_t0.csv", &p.u)?;
    println!("master residual sup {:.4e}", r.sup);
    Ok(Outcome::ok(json!({
        "residual_sup": r.sup,
        "dt_probe": r.dt_probe,
        "route": format!("{:?}", r.route),
    })))
}

pub fn verify(cfg: &RunConfig, quick: bool) -> CmdResult {
    let opts = VerifyOptions {
        mode: if quick { VerifyMode::Quick } else { VerifyMode::Full },
        seed: cfg.seed,
    };
    let mut phases = Vec::new();
    let report = run_all(&opts, |r, elapsed| {
        println!("{} [{:.1} s]", r.summary(), elapsed.as_secs_f64());
        phases.push((format!("criterion {}", r.id), elapsed.as_secs_f64()));
    });
    Ok(Outcome {
        passed: report.passed(),
        constants: serde_json::to_value(&report).expect("report serializes"),
        phases,
    })
}
