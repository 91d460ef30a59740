//! Heat kernel of the sub-Laplacian on the first Heisenberg group, with and
//! without a time-dependent horizontal drift, and a Monte Carlo oracle for it.

use std::f64::consts::PI;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::linear_fit;

/// Homogeneous dimension of the first Heisenberg group.
pub const HOMOGENEOUS_DIMENSION: f64 = 4.0;
/// Largest cutoff of the spectral integral before giving up.
pub const MAX_CUTOFF: f64 = 200.0;
/// Required bound on the integrand beyond the cutoff.
pub const TAIL_TOL: f64 = 1e-12;
/// Euler-Maruyama step of the Monte Carlo oracle.
pub const MC_STEP: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeisenbergPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl HeisenbergPoint {
    pub const IDENTITY: HeisenbergPoint = HeisenbergPoint { x: 0.0, y: 0.0, z: 0.0 };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        HeisenbergPoint { x, y, z }
    }

    /// `(x, y, z) o (x', y', z') = (x + x', y + y', z + z' + 2(y x' - x y'))`.
    pub fn compose(self, q: HeisenbergPoint) -> HeisenbergPoint {
        HeisenbergPoint {
            x: self.x + q.x,
            y: self.y + q.y,
            z: self.z + q.z + 2.0 * (self.y * q.x - self.x * q.y),
        }
    }

    pub fn inverse(self) -> HeisenbergPoint {
        HeisenbergPoint::new(-self.x, -self.y, -self.z)
    }

    /// Homogeneous norm `((x^2 + y^2)^2 + z^2)^(1/4)`.
    pub fn norm(self) -> f64 {
        let r2 = self.x * self.x + self.y * self.y;
        (r2 * r2 + self.z * self.z).sqrt().sqrt()
    }

    /// Anisotropic dilation `(s x, s y, s^2 z)`.
    pub fn dilate(self, s: f64) -> HeisenbergPoint {
        HeisenbergPoint::new(s * self.x, s * self.y, s * s * self.z)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

/// What multiplies `i lambda / (4 t)` in the phase of the spectral integral.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    /// The time argument itself, as printed.
    Time,
    /// The vertical coordinate `z`.
    Vertical,
}

/// Weight of `|p|^2 lambda / (4 t)` in the Gaussian factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Weight {
    Cosh,
    Coth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FormulaShape {
    pub phase: Phase,
    pub weight: Weight,
}

impl fmt::Display for FormulaShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "phase={:?},weight={:?}", self.phase, self.weight)
    }
}

/// The shape chosen by [`calibrate`]; the test suite re-derives it.
pub const CALIBRATED_SHAPE: FormulaShape = FormulaShape {
    phase: Phase::Vertical,
    weight: Weight::Coth,
};

/// The shape exactly as printed: phase `i t`, weight `cosh`.
pub const PRINTED_SHAPE: FormulaShape = FormulaShape {
    phase: Phase::Time,
    weight: Weight::Cosh,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelVariant {
    PaperFormula,
    OracleCalibrated,
}

impl KernelVariant {
    pub fn shape(self) -> FormulaShape {
        match self {
            KernelVariant::PaperFormula => PRINTED_SHAPE,
            KernelVariant::OracleCalibrated => CALIBRATED_SHAPE,
        }
    }
}

/// Piecewise-linear drift `v(t) = (a(t), b(t), 0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftPath {
    times: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl DriftPath {
    pub fn new(times: Vec<f64>, a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if times.is_empty() || times.len() != a.len() || times.len() != b.len() {
            return Err(Error::InvalidInput("drift tabulation lengths differ".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput("drift times must increase".into()));
        }
        if times.iter().chain(&a).chain(&b).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite drift".into()));
        }
        Ok(DriftPath { times, a, b })
    }

    pub fn constant(a: f64, b: f64) -> Self {
        DriftPath {
            times: vec![0.0],
            a: vec![a],
            b: vec![b],
        }
    }

    pub fn zero() -> Self {
        Self::constant(0.0, 0.0)
    }

    /// `(a(t), b(t))`, held constant outside the tabulated range.
    pub fn at(&self, t: f64) -> (f64, f64) {
        let n = self.times.len();
        if t <= self.times[0] {
            return (self.a[0], self.b[0]);
        }
        if t >= self.times[n - 1] {
            return (self.a[n - 1], self.b[n - 1]);
        }
        let k = self.times.partition_point(|&s| s <= t) - 1;
        let w = (t - self.times[k]) / (self.times[k + 1] - self.times[k]);
        (
            self.a[k] + w * (self.a[k + 1] - self.a[k]),
            self.b[k] + w * (self.b[k + 1] - self.b[k]),
        )
    }

    /// `int_t^s |v|^2`, exact for the piecewise-linear path (Simpson per piece).
    pub fn energy(&self, t: f64, s: f64) -> f64 {
        if s <= t {
            return 0.0;
        }
        let mut knots = vec![t];
        knots.extend(self.times.iter().copied().filter(|&k| k > t && k < s));
        knots.push(s);
        knots
            .windows(2)
            .map(|w| {
                let sq = |u: f64| {
                    let (a, b) = self.at(u);
                    a * a + b * b
                };
                (w[1] - w[0]) / 6.0 * (sq(w[0]) + 4.0 * sq(0.5 * (w[0] + w[1])) + sq(w[1]))
            })
            .sum()
    }
}

/// `chi(t, p) = exp((a(t) x + b(t) y) / 2)`.
pub fn chi(t: f64, p: HeisenbergPoint, v: &DriftPath) -> f64 {
    let (a, b) = v.at(t);
    (0.5 * (a * p.x + b * p.y)).exp()
}

const GK_NODES: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const GK_WEIGHTS_K: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const GK_WEIGHTS_G: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

/// One Gauss-Kronrod 7-15 panel: `(kronrod, |kronrod - gauss|)`.
fn gk15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = fc * GK_WEIGHTS_K[7];
    let mut g = fc * GK_WEIGHTS_G[3];
    for i in 0..7 {
        let dx = h * GK_NODES[i];
        let s = f(c - dx) + f(c + dx);
        k += GK_WEIGHTS_K[i] * s;
        if i % 2 == 1 {
            g += GK_WEIGHTS_G[i / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Adaptive Gauss-Kronrod on `[a, b]` starting from `panels` equal panels.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize, tol: f64) -> Result<f64> {
    let mut stack: Vec<(f64, f64, usize)> = (0..panels)
        .map(|k| {
            let w = (b - a) / panels as f64;
            (a + k as f64 * w, a + (k + 1) as f64 * w, 0)
        })
        .collect();
    let mut total = 0.0;
    let local_tol = tol / panels as f64;
    while let Some((l, r, depth)) = stack.pop() {
        let (v, err) = gk15(&f, l, r);
        if !v.is_finite() {
            return Err(Error::Quadrature {
                cutoff: b,
                tail: f64::INFINITY,
            });
        }
        if err <= local_tol.max(1e-15 * v.abs()) || depth >= 30 {
            total += v;
        } else {
            let m = 0.5 * (l + r);
            stack.push((l, m, depth + 1));
            stack.push((m, r, depth + 1));
        }
    }
    Ok(total)
}

fn integrand(shape: FormulaShape, t: f64, p: HeisenbergPoint, lambda: f64) -> f64 {
    let r2 = p.x * p.x + p.y * p.y;
    let phase = match shape.phase {
        Phase::Time => t,
        Phase::Vertical => p.z,
    };
    let (ratio, gauss) = if lambda == 0.0 {
        (1.0, r2)
    } else {
        let w = match shape.weight {
            Weight::Cosh => lambda * lambda.cosh(),
            Weight::Coth => lambda / lambda.tanh(),
        };
        (lambda / lambda.sinh(), r2 * w)
    };
    let amp = (-gauss / (4.0 * t)).exp() * ratio;
    if amp == 0.0 {
        return 0.0;
    }
    (lambda * phase / (4.0 * t)).cos() * amp
}

/// `Gamma(t, p)` for the sub-Laplacian `Y1^2 + Y2^2` with the given formula
/// shape: `(1 / (2 (4 pi t)^2)) int_R Re exp(lambda (i phase - |p|^2 w(lambda)) / (4 t)) lambda / sinh(lambda) d lambda`.
pub fn gamma_shape(t: f64, p: HeisenbergPoint, shape: FormulaShape) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::InvalidInput(format!("kernel time {t} must be positive")));
    }
    if !p.is_finite() {
        return Err(Error::InvalidInput("non-finite point".into()));
    }
    let f = |l: f64| integrand(shape, t, p, l);
    let mut cutoff = 32.0;
    while f(cutoff).abs().max(f(-cutoff).abs()) > TAIL_TOL
        || !f(cutoff).is_finite()
        || !f(-cutoff).is_finite()
    {
        cutoff *= 1.25;
        if cutoff > MAX_CUTOFF {
            let tail = f(MAX_CUTOFF).abs().max(f(-MAX_CUTOFF).abs());
            return Err(Error::Quadrature {
                cutoff: MAX_CUTOFF,
                tail: if tail.is_finite() { tail } else { f64::INFINITY },
            });
        }
    }
    let freq = match shape.phase {
        Phase::Time => 0.25,
        Phase::Vertical => p.z.abs() / (4.0 * t),
    };
    let mut panels = 16;
    if freq > 1.0 {
        panels *= 2;
    }
    panels = panels.max((cutoff * freq / PI).ceil() as usize * 2);
    let prefactor = 1.0 / (2.0 * (4.0 * PI * t).powi(2));
    let value = integrate(f, -cutoff, cutoff, 2 * panels, 1e-14 / prefactor)?;
    Ok(prefactor * value)
}

/// The drift-free kernel in the requested variant.
pub fn gamma0(t: f64, p: HeisenbergPoint, variant: KernelVariant) -> Result<f64> {
    gamma_shape(t, p, variant.shape())
}

/// `Gamma_v(t, s, p) = exp(-1/4 int_t^s |v|^2) chi(t, p^-1) Gamma(s - t, p)`,
/// zero for `t >= s`. Here `p` stands for `eta^-1 o xi`.
pub fn gamma_drift(t: f64, s: f64, p: HeisenbergPoint, v: &DriftPath) -> Result<f64> {
    if t >= s {
        return Ok(0.0);
    }
    let damp = (-0.25 * v.energy(t, s)).exp();
    Ok(damp * chi(t, p.inverse(), v) * gamma0(s - t, p, KernelVariant::OracleCalibrated)?)
}

/// Gauss-Legendre nodes and weights on `[-1, 1]` by Newton iteration.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let (pn, pm) = (p1, p0);
            dp = n as f64 * (z * pn - pm) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Axis-aligned box `[lo, hi]` in coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl Cell {
    pub fn contains(&self, q: [f64; 3]) -> bool {
        (0..3).all(|k| q[k] >= self.lo[k] && q[k] < self.hi[k])
    }

    pub fn centered(side: [f64; 3]) -> Cell {
        Cell {
            lo: [-0.5 * side[0], -0.5 * side[1], -0.5 * side[2]],
            hi: [0.5 * side[0], 0.5 * side[1], 0.5 * side[2]],
        }
    }
}

/// Tensor Gauss-Legendre integral of `f` over a box, parallel over the
/// outermost coordinate.
pub fn integrate_box(
    cell: Cell,
    nodes: [usize; 3],
    f: impl Fn(HeisenbergPoint) -> Result<f64> + Sync,
) -> Result<f64> {
    let rules: Vec<(Vec<f64>, Vec<f64>)> = (0..3)
        .map(|k| {
            let (x, w) = gauss_legendre(nodes[k]);
            let c = 0.5 * (cell.lo[k] + cell.hi[k]);
            let h = 0.5 * (cell.hi[k] - cell.lo[k]);
            (x.iter().map(|u| c + h * u).collect(), w.iter().map(|u| h * u).collect())
        })
        .collect();
    let parts: Result<Vec<f64>> = (0..nodes[0])
        .into_par_iter()
        .map(|i| {
            let mut acc = 0.0;
            for j in 0..nodes[1] {
                for k in 0..nodes[2] {
                    let p = HeisenbergPoint::new(rules[0].0[i], rules[1].0[j], rules[2].0[k]);
                    acc += rules[0].1[i] * rules[1].1[j] * rules[2].1[k] * f(p)?;
                }
            }
            Ok(acc)
        })
        .collect();
    Ok(parts?.iter().sum())
}

/// Box of `k` standard deviations of the kernel at time `t` in each coordinate.
pub fn sigma_box(t: f64, k: f64) -> Cell {
    let sxy = (2.0 * t).sqrt();
    let sz = 4.0 * t;
    Cell {
        lo: [-k * sxy, -k * sxy, -k * sz],
        hi: [k * sxy, k * sxy, k * sz],
    }
}

/// `int_R3 Gamma(t, .)` over the box of `6` standard deviations horizontally
/// and `8` vertically, folded onto one octant by the symmetries
/// `x -> -x`, `y -> -y`, `z -> -z` of the kernel.
pub fn kernel_mass(t: f64, variant: KernelVariant) -> Result<f64> {
    let full = Cell {
        lo: [0.0; 3],
        hi: [6.0 * (2.0 * t).sqrt(), 6.0 * (2.0 * t).sqrt(), 8.0 * 4.0 * t],
    };
    Ok(8.0 * integrate_box(full, [24, 24, 48], |p| gamma0(t, p, variant))?)
}

/// Endpoints of Monte Carlo paths of the diffusion generated by the
/// sub-Laplacian, started at the identity.
pub fn mc_endpoints(t: f64, n_samples: usize, seed: u64) -> Result<Vec<[f64; 3]>> {
    if !(t > 0.0) {
        return Err(Error::InvalidInput(format!("time {t} must be positive")));
    }
    let steps = (t / MC_STEP).ceil() as usize;
    let dt = t / steps as f64;
    let sd = (2.0 * dt).sqrt();
    Ok((0..n_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let (mut x, mut y, mut z) = (0.0_f64, 0.0_f64, 0.0_f64);
            for _ in 0..steps {
                let dx = sd * rng.sample::<f64, _>(StandardNormal);
                let dy = sd * rng.sample::<f64, _>(StandardNormal);
                z += 2.0 * (y * dx - x * dy);
                x += dx;
                y += dy;
            }
            [x, y, z]
        })
        .collect())
}

/// Empirical probability of `cell` at time `t` with its binomial standard error.
pub fn mc_oracle(t: f64, cell: Cell, n_samples: usize, seed: u64) -> Result<(f64, f64)> {
    if n_samples < 10_000 {
        return Err(Error::InvalidInput(format!("{n_samples} samples, need at least 1e4")));
    }
    let pts = mc_endpoints(t, n_samples, seed)?;
    Ok(cell_probability(&pts, cell))
}

/// Fraction of `pts` inside `cell` and its standard error.
pub fn cell_probability(pts: &[[f64; 3]], cell: Cell) -> (f64, f64) {
    let n = pts.len() as f64;
    let hits = pts.iter().filter(|q| cell.contains(**q)).count() as f64;
    let p = hits / n;
    (p, (p * (1.0 - p) / n).sqrt().max(1.0 / n))
}

/// Kernel integral over a cell.
pub fn cell_mass(t: f64, cell: Cell, shape: FormulaShape) -> Result<f64> {
    integrate_box(cell, [8, 8, 8], |p| gamma_shape(t, p, shape))
}

/// Deterministic random cells inside the bulk of the law at time `t`.
pub fn sample_cells(t: f64, count: usize, seed: u64) -> Vec<Cell> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sxy = (2.0 * t).sqrt();
    let sz = 4.0 * t;
    (0..count)
        .map(|_| {
            let c = [
                rng.random_range(-1.5..1.5) * sxy,
                rng.random_range(-1.5..1.5) * sxy,
                rng.random_range(-1.5..1.5) * sz,
            ];
            let side = [
                rng.random_range(0.4..1.0) * sxy,
                rng.random_range(0.4..1.0) * sxy,
                rng.random_range(0.4..1.0) * sz,
            ];
            Cell {
                lo: [c[0] - 0.5 * side[0], c[1] - 0.5 * side[1], c[2] - 0.5 * side[2]],
                hi: [c[0] + 0.5 * side[0], c[1] + 0.5 * side[1], c[2] + 0.5 * side[2]],
            }
        })
        .collect()
}

/// One line of the calibration table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShapeScore {
    pub shape: FormulaShape,
    /// Sum of squared standardized residuals over the cells, or `None` when
    /// the formula could not be evaluated.
    pub chi_square: Option<f64>,
    /// Largest standardized residual.
    pub max_z: Option<f64>,
    pub error: Option<String>,
}

/// Calibration record: every shape's agreement with the Monte Carlo oracle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub variant: FormulaShape,
    pub t: f64,
    pub n_samples: usize,
    pub cells: usize,
    pub seed: u64,
    pub scores: Vec<ShapeScore>,
}

impl CalibrationRecord {
    pub fn score(&self, shape: FormulaShape) -> Option<&ShapeScore> {
        self.scores.iter().find(|s| s.shape == shape)
    }
}

/// Scores all four formula shapes against Monte Carlo cell probabilities and
/// picks the one with the smallest chi-square.
pub fn calibrate(t: f64, n_cells: usize, n_samples: usize, seed: u64) -> Result<CalibrationRecord> {
    let pts = mc_endpoints(t, n_samples, seed)?;
    let cells = sample_cells(t, n_cells, seed ^ 0x5eed);
    let mut scores = Vec::new();
    for phase in [Phase::Time, Phase::Vertical] {
        for weight in [Weight::Cosh, Weight::Coth] {
            let shape = FormulaShape { phase, weight };
            let mut chi2 = 0.0;
            let mut max_z = 0.0_f64;
            let mut error = None;
            for &cell in &cells {
                match cell_mass(t, cell, shape) {
                    Ok(q) => {
                        let (p, se) = cell_probability(&pts, cell);
                        let z = (q - p) / se;
                        chi2 += z * z;
                        max_z = max_z.max(z.abs());
                    }
                    Err(e) => {
                        error = Some(e.to_string());
                        break;
                    }
                }
            }
            scores.push(ShapeScore {
                shape,
                chi_square: error.is_none().then_some(chi2),
                max_z: error.is_none().then_some(max_z),
                error,
            });
        }
    }
    let best = scores
        .iter()
        .filter_map(|s| s.chi_square.map(|c| (c, s.shape)))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, s)| s)
        .ok_or_else(|| Error::DegenerateFit("no kernel shape could be evaluated".into()))?;
    Ok(CalibrationRecord {
        variant: best,
        t,
        n_samples,
        cells: n_cells,
        seed,
        scores,
    })
}

/// Horizontal gradient `(Y1 f, Y2 f)` with `Y1 = d_x + 2 y d_z` and
/// `Y2 = d_y - 2 x d_z`, by centered differences along the group flow.
pub fn horizontal_gradient(
    f: impl Fn(HeisenbergPoint) -> Result<f64>,
    p: HeisenbergPoint,
    step: f64,
) -> Result<[f64; 2]> {
    let e1 = HeisenbergPoint::new(step, 0.0, 0.0);
    let e2 = HeisenbergPoint::new(0.0, step, 0.0);
    let y1 = (f(p.compose(e1))? - f(p.compose(e1.inverse()))?) / (2.0 * step);
    let y2 = (f(p.compose(e2))? - f(p.compose(e2.inverse()))?) / (2.0 * step);
    Ok([y1, y2])
}

/// Gaussian upper bound fitted to the kernel or to its horizontal gradient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    pub order: usize,
    /// Fitted power `e` in `|D^k Gamma(t, delta_sqrt(t) p)| ~ c t^-e`.
    pub exponent: f64,
    /// Prefactor `c` of that power law (geometric mean over the sample points).
    pub prefactor: f64,
    /// Smallest `C` with `|D^k Gamma| <= C t^-(k+Q)/2 exp(-|p|^2 / (C t))` on all samples.
    pub bound_constant: f64,
    /// Largest `log(|D^k Gamma| / bound)` at the fitted `C`; at most zero.
    pub max_violation: f64,
}

fn bound_log(c: f64, e: f64, t: f64, norm2: f64) -> f64 {
    c.ln() - e * t.ln() - norm2 / (c * t)
}

/// Fits the exponent along dilated rays `p_t = delta_sqrt(t) p` and the
/// Gaussian bound constant over all `(t, p_t)` samples.
pub fn gaussian_fit(variant: KernelVariant, order: usize, t_list: &[f64], p_list: &[HeisenbergPoint]) -> Result<GaussianFit> {
    if order > 1 {
        return Err(Error::InvalidInput(format!("derivative order {order} > 1")));
    }
    if t_list.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::InvalidInput("times must be positive".into()));
    }
    let distinct = t_list.iter().any(|&t| (t - t_list[0]).abs() > 1e-12);
    if !distinct || p_list.is_empty() {
        return Err(Error::DegenerateFit("need at least two distinct times and one point".into()));
    }
    let e_template = (order as f64 + HOMOGENEOUS_DIMENSION) / 2.0;
    let mut samples = Vec::new();
    let mut exps = Vec::new();
    let mut pref = Vec::new();
    for &p in p_list {
        let mut pts = Vec::new();
        for &t in t_list {
            let q = p.dilate(t.sqrt());
            let val = match order {
                0 => gamma0(t, q, variant)?.abs(),
                _ => {
                    let g = horizontal_gradient(|u| gamma0(t, u, variant), q, 1e-4 * t.sqrt())?;
                    g[0].hypot(g[1])
                }
            };
            if val > 0.0 {
                pts.push((t.ln(), val.ln()));
                samples.push((t, q.norm().powi(2), val.ln()));
            }
        }
        if pts.len() >= 2 {
            let (slope, icpt) = linear_fit(&pts)?;
            exps.push(-slope);
            pref.push(icpt);
        }
    }
    if exps.is_empty() {
        return Err(Error::DegenerateFit("all samples vanish".into()));
    }
    let exponent = exps.iter().sum::<f64>() / exps.len() as f64;
    let prefactor = (pref.iter().sum::<f64>() / pref.len() as f64).exp();
    let mut c_max = 0.0_f64;
    for &(t, n2, lv) in &samples {
        let (mut lo, mut hi) = (1e-8_f64, 1.0_f64);
        while bound_log(hi, e_template, t, n2) < lv {
            hi *= 2.0;
            if hi > 1e12 {
                return Err(Error::DegenerateFit("Gaussian bound constant diverges".into()));
            }
        }
        for _ in 0..200 {
            let mid = (lo * hi).sqrt();
            if bound_log(mid, e_template, t, n2) >= lv {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        c_max = c_max.max(hi);
    }
    let max_violation = samples
        .iter()
        .map(|&(t, n2, lv)| lv - bound_log(c_max, e_template, t, n2))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(GaussianFit {
        order,
        exponent,
        prefactor,
        bound_constant: c_max,
        max_violation,
    })
}

/// `int Gamma(t, q) Gamma(s, q^-1 o p) dq` over a box around the identity.
pub fn chapman_kolmogorov(t: f64, s: f64, p: HeisenbergPoint, nodes: usize) -> Result<f64> {
    let k = 6.0;
    let sxy = (2.0 * t.max(s)).sqrt();
    let sz = 4.0 * t.max(s);
    let cell = Cell {
        lo: [-k * sxy, -k * sxy, -k * sz],
        hi: [k * sxy, k * sxy, k * sz],
    };
    integrate_box(cell, [nodes, nodes, 2 * nodes], |q| {
        let a = gamma0(t, q, KernelVariant::OracleCalibrated)?;
        if a < 1e-300 {
            return Ok(0.0);
        }
        Ok(a * gamma0(s, q.inverse().compose(p), KernelVariant::OracleCalibrated)?)
    })
}

/// Residual of `(-d_t - Delta_Y - v . D_Y) Gamma_v(., s, .)` at `(t, p)` by
/// centered differences with steps `dt` and `h`.
pub fn drift_residual(t: f64, s: f64, p: HeisenbergPoint, v: &DriftPath, dt: f64, h: f64) -> Result<f64> {
    let g = |tt: f64, q: HeisenbergPoint| gamma_drift(tt, s, q, v);
    let dtg = (g(t + dt, p)? - g(t - dt, p)?) / (2.0 * dt);
    let c = g(t, p)?;
    let mut lap = 0.0;
    let mut grad = [0.0; 2];
    for (k, e) in [HeisenbergPoint::new(h, 0.0, 0.0), HeisenbergPoint::new(0.0, h, 0.0)]
        .into_iter()
        .enumerate()
    {
        let fwd = g(t, p.compose(e))?;
        let bwd = g(t, p.compose(e.inverse()))?;
        lap += (fwd - 2.0 * c + bwd) / (h * h);
        grad[k] = (fwd - bwd) / (2.0 * h);
    }
    let (a, b) = v.at(t);
    Ok(-dtg - lap - (a * grad[0] + b * grad[1]))
}

/// CSV rows `x,y,z,t,gamma` for a list of points.
pub fn write_kernel_csv<W: std::io::Write>(
    mut w: W,
    t: f64,
    points: &[HeisenbergPoint],
    variant: KernelVariant,
) -> Result<()> {
    use crate::field::fmt_f64;
    writeln!(w, "x,y,z,t,gamma")?;
    for p in points {
        let g = gamma0(t, *p, variant)?;
        writeln!(
            w,
            "{},{},{},{},{}",
            fmt_f64(p.x),
            fmt_f64(p.y),
            fmt_f64(p.z),
            fmt_f64(t),
            fmt_f64(g)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const CAL: KernelVariant = KernelVariant::OracleCalibrated;

    #[test]
    fn group_law_and_inverse() {
        let p = HeisenbergPoint::new(0.3, -1.2, 0.7);
        let q = HeisenbergPoint::new(-0.4, 0.5, 2.0);
        let e = p.compose(p.inverse());
        assert_eq!(e, HeisenbergPoint::IDENTITY);
        let lhs = p.compose(q).compose(p);
        let rhs = p.compose(q.compose(p));
        assert!((lhs.z - rhs.z).abs() < 1e-14);
    }

    #[test]
    fn chi_is_a_homomorphism() {
        let v = DriftPath::constant(0.7, -1.3);
        let p = HeisenbergPoint::new(0.3, -1.2, 0.7);
        let q = HeisenbergPoint::new(-0.4, 0.5, 2.0);
        assert_eq!(chi(0.2, HeisenbergPoint::IDENTITY, &v), 1.0);
        let lhs = chi(0.2, p.compose(q), &v);
        let rhs = chi(0.2, p, &v) * chi(0.2, q, &v);
        assert!((lhs - rhs).abs() <= 1e-14 * lhs);
        assert_eq!(chi(0.2, p, &DriftPath::zero()), 1.0);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(7);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(12)).sum();
        assert!((s - 2.0 / 13.0).abs() < 1e-14);
    }

    #[test]
    fn kernel_at_identity_has_closed_form() {
        // int_R lambda / sinh(lambda) = pi^2 / 2
        for t in [0.25, 1.0] {
            let exact = PI * PI / 2.0 / (2.0 * (4.0 * PI * t).powi(2));
            let g = gamma0(t, HeisenbergPoint::IDENTITY, CAL).unwrap();
            assert!((g - exact).abs() < 1e-12 * exact);
        }
    }

    #[test]
    fn printed_formula_diverges_off_the_center() {
        let p = HeisenbergPoint::new(0.3, 0.1, 0.0);
        assert!(matches!(
            gamma0(0.5, p, KernelVariant::PaperFormula),
            Err(Error::Quadrature { .. })
        ));
        let g = gamma0(0.5, HeisenbergPoint::IDENTITY, KernelVariant::PaperFormula).unwrap();
        let c = gamma0(0.5, HeisenbergPoint::IDENTITY, CAL).unwrap();
        assert!((g / c - 1.0 / (PI / 8.0).cosh().powi(2)).abs() < 1e-10);
    }

    #[test]
    fn rotation_invariance() {
        let p = HeisenbergPoint::new(0.4, -0.3, 0.9);
        let r = HeisenbergPoint::new(p.y, -p.x, p.z);
        let a = gamma0(0.5, p, CAL).unwrap();
        let b = gamma0(0.5, r, CAL).unwrap();
        assert!((a - b).abs() <= 1e-10 * a);
    }

    #[test]
    fn kernel_is_positive_on_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let p = HeisenbergPoint::new(
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-6.0..6.0),
            );
            assert!(gamma0(0.5, p, CAL).unwrap() > 0.0, "{p:?}");
        }
    }

    #[test]
    fn drift_vanishes_after_s_and_reduces_without_drift() {
        let p = HeisenbergPoint::new(0.2, 0.1, -0.3);
        let v = DriftPath::constant(1.0, 0.0);
        assert_eq!(gamma_drift(1.0, 1.0, p, &v).unwrap(), 0.0);
        assert_eq!(gamma_drift(1.5, 1.0, p, &v).unwrap(), 0.0);
        let a = gamma_drift(0.5, 1.0, p, &DriftPath::zero()).unwrap();
        assert_eq!(a, gamma0(0.5, p, CAL).unwrap());
    }

    #[test]
    fn drift_path_energy_is_exact_for_linear_pieces() {
        let v = DriftPath::new(vec![0.0, 1.0], vec![0.0, 1.0], vec![0.0, 0.0]).unwrap();
        assert!((v.energy(0.0, 1.0) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(v.at(0.5), (0.5, 0.0));
    }

    #[test]
    fn monte_carlo_is_reproducible_and_centered() {
        let a = mc_endpoints(0.1, 2000, 9).unwrap();
        let b = mc_endpoints(0.1, 2000, 9).unwrap();
        assert_eq!(a, b);
        let n = a.len() as f64;
        for k in 0..3 {
            let mean = a.iter().map(|q| q[k]).sum::<f64>() / n;
            let var = a.iter().map(|q| (q[k] - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 3.0 * (var / n).sqrt() + 1e-12);
        }
    }

    #[test]
    fn short_time_mass_stays_near_identity() {
        let (p, _) = mc_oracle(1e-3, Cell::centered([0.5, 0.5, 0.5]), 10_000, 1).unwrap();
        assert_eq!(p, 1.0);
    }

    #[test]
    fn drift_residual_is_small_for_constant_drift() {
        let v = DriftPath::constant(0.8, -0.5);
        let p = HeisenbergPoint::new(0.3, -0.2, 0.1);
        let r = drift_residual(0.5, 1.0, p, &v, 1e-4, 1e-3).unwrap();
        let scale = gamma_drift(0.5, 1.0, p, &v).unwrap();
        assert!(r.abs() < 1e-4 * scale.max(1.0), "{r} vs {scale}");
    }

    #[test]
    fn zero_time_exponent_from_homogeneity() {
        let f = gaussian_fit(CAL, 0, &[0.1, 0.3, 1.0], &[HeisenbergPoint::IDENTITY]).unwrap();
        assert!((f.exponent - 2.0).abs() < 1e-8);
        assert!(f.max_violation <= 1e-6);
        assert!(gaussian_fit(CAL, 0, &[0.5, 0.5], &[HeisenbergPoint::IDENTITY]).is_err());
    }
}
