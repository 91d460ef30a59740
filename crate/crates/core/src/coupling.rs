//! Running and terminal costs `F(x, m)`, `G(x, m)` given by smooth
//! positive semidefinite kernels, and checks of the monotonicity hypotheses.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::grid::TorusGrid;
use crate::holder::holder_norm;
use crate::metric::CCDistanceTable;

pub const DEFAULT_SIGMA: f64 = 0.15;
pub const SYMMETRY_TOL: f64 = 1e-12;
pub const PSD_TOL: f64 = 1e-10;

/// The `m`-independent part of the costs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaseShape {
    /// `(cos 2 pi x1 + cos 2 pi x2) / 2`, sup-norm one.
    Cosine,
    Zero,
}

impl fmt::Display for BaseShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaseShape::Cosine => "cosine",
            BaseShape::Zero => "zero",
        })
    }
}

impl FromStr for BaseShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(BaseShape::Cosine),
            "zero" => Ok(BaseShape::Zero),
            other => Err(Error::InvalidInput(format!("unknown base shape `{other}`"))),
        }
    }
}

impl BaseShape {
    pub fn field(self, grid: &Arc<TorusGrid>) -> ScalarField {
        match self {
            BaseShape::Cosine => ScalarField::from_fn(grid.clone(), |x1, x2| {
                0.5 * ((2.0 * PI * x1).cos() + (2.0 * PI * x2).cos())
            }),
            BaseShape::Zero => ScalarField::zeros(grid.clone()),
        }
    }
}

/// Which cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Which {
    F,
    G,
}

/// Dense symmetric kernel over grid nodes, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    n: usize,
    data: Vec<f64>,
}

impl Kernel {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::InvalidInput(format!("kernel needs {} entries", n * n)));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite kernel entry".into()));
        }
        let k = Kernel { n, data };
        let asym = k.asymmetry();
        if asym > SYMMETRY_TOL * k.max_abs().max(1.0) {
            return Err(Error::InvalidInput(format!("kernel asymmetric by {asym:.3e}")));
        }
        Ok(k)
    }

    pub fn zeros(n: usize) -> Self {
        Kernel {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn entry(&self, x: usize, y: usize) -> f64 {
        self.data[x * self.n + y]
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.data[x * self.n..(x + 1) * self.n]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    pub fn asymmetry(&self) -> f64 {
        let n = self.n;
        let mut worst = 0.0_f64;
        for x in 0..n {
            for y in (x + 1)..n {
                worst = worst.max((self.data[x * n + y] - self.data[y * n + x]).abs());
            }
        }
        worst
    }

    /// `x -> sum_y K(x, y) rho(y) h1 h2`.
    pub fn apply(&self, rho: &ScalarField) -> ScalarField {
        let area = rho.grid().cell_area();
        let r = rho.values();
        let out = self
            .data
            .par_chunks(self.n)
            .map(|row| row.iter().zip(r).map(|(k, v)| k * v).sum::<f64>() * area)
            .collect();
        ScalarField::from_vec(rho.grid().clone(), out)
    }

    pub fn scaled(&self, s: f64) -> Kernel {
        Kernel {
            n: self.n,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// Eigen-decomposition of the symmetric matrix `K h1 h2` (the operator
    /// acting on grid functions).
    pub fn spectrum(&self, area: f64) -> SymmetricEigen<f64, nalgebra::Dyn> {
        let m = DMatrix::from_row_slice(self.n, self.n, &self.data) * area;
        SymmetricEigen::new(m)
    }
}

/// Periodic Gaussian of width `sigma` normalized to unit integral on the grid,
/// as a function of the node offset.
fn periodic_gaussian(grid: &TorusGrid, sigma: f64) -> Vec<f64> {
    let g: Vec<f64> = (0..grid.len())
        .map(|idx| {
            let (d1, d2) = grid.point(idx);
            let d1 = crate::grid::periodic_gap(d1);
            let d2 = crate::grid::periodic_gap(d2);
            (-(d1 * d1 + d2 * d2) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let mass: f64 = g.iter().sum::<f64>() * grid.cell_area();
    g.into_iter().map(|v| v / mass).collect()
}

/// `S S^T` for the periodic Gaussian smoothing operator `S`, i.e. the
/// translation-invariant kernel `k = s * s`.
pub fn double_mollifier(grid: &TorusGrid, sigma: f64) -> Kernel {
    let s = periodic_gaussian(grid, sigma);
    let (n1, n2) = (grid.n1(), grid.n2());
    let area = grid.cell_area();
    let n = grid.len();
    let conv: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|d| {
            let (d1, d2) = grid.coords(d);
            let mut acc = 0.0;
            for z in 0..n {
                let (z1, z2) = grid.coords(z);
                let w = grid.index((d1 + n1 - z1) % n1, (d2 + n2 - z2) % n2);
                acc += s[w] * s[z];
            }
            acc * area
        })
        .collect();
    let mut data = vec![0.0; n * n];
    data.par_chunks_mut(n).enumerate().for_each(|(x, row)| {
        let (x1, x2) = grid.coords(x);
        for (y, r) in row.iter_mut().enumerate() {
            let (y1, y2) = grid.coords(y);
            *r = conv[grid.index((x1 + n1 - y1) % n1, (x2 + n2 - y2) % n2)];
        }
    });
    Kernel { n, data }
}

/// Coupling parameters as they appear in a run configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingSpec {
    pub sigma: f64,
    pub scale_f: f64,
    pub scale_g: f64,
    pub base: BaseShape,
}

impl Default for CouplingSpec {
    fn default() -> Self {
        CouplingSpec {
            sigma: DEFAULT_SIGMA,
            scale_f: 1.0,
            scale_g: 0.2,
            base: BaseShape::Cosine,
        }
    }
}

impl CouplingSpec {
    pub fn zero() -> Self {
        CouplingSpec {
            sigma: DEFAULT_SIGMA,
            scale_f: 0.0,
            scale_g: 0.0,
            base: BaseShape::Zero,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma <= 0.5) {
            return Err(Error::InvalidInput(format!("coupling.sigma {} outside (0, 0.5]", self.sigma)));
        }
        for (k, v) in [("coupling.scale_f", self.scale_f), ("coupling.scale_g", self.scale_g)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!("{k} = {v} must be finite and nonnegative")));
            }
        }
        Ok(())
    }
}

/// `F(x, m) = base_f(x) + sum_y K_F(x, y) m(y) h^2`, `G` likewise.
#[derive(Debug, Clone)]
pub struct Coupling {
    grid: Arc<TorusGrid>,
    base_f: ScalarField,
    base_g: ScalarField,
    kernel_f: Arc<Kernel>,
    kernel_g: Arc<Kernel>,
    sigma: f64,
}

impl Coupling {
    /// Builds `F = scale_f (base + S S^T m)` and `G = scale_g (base + S S^T m)`.
    pub fn from_spec(grid: &Arc<TorusGrid>, spec: &CouplingSpec) -> Result<Self> {
        spec.validate()?;
        let base = spec.base.field(grid);
        let k = double_mollifier(grid, spec.sigma);
        Ok(Coupling {
            grid: grid.clone(),
            base_f: base.scaled(spec.scale_f),
            base_g: base.scaled(spec.scale_g),
            kernel_f: Arc::new(k.scaled(spec.scale_f)),
            kernel_g: Arc::new(k.scaled(spec.scale_g)),
            sigma: spec.sigma,
        })
    }

    /// Arbitrary symmetric kernels; positivity is not enforced so that
    /// [`check_hypotheses`] can be exercised on violating data.
    pub fn with_kernels(base_f: ScalarField, base_g: ScalarField, kernel_f: Kernel, kernel_g: Kernel, sigma: f64) -> Result<Self> {
        base_f.grid().ensure_same(base_g.grid())?;
        let n = base_f.grid().len();
        if kernel_f.size() != n || kernel_g.size() != n {
            return Err(Error::InvalidInput("kernel size differs from the grid".into()));
        }
        Ok(Coupling {
            grid: base_f.grid().clone(),
            base_f,
            base_g,
            kernel_f: Arc::new(kernel_f),
            kernel_g: Arc::new(kernel_g),
            sigma,
        })
    }

    pub fn zero(grid: &Arc<TorusGrid>) -> Self {
        Coupling::from_spec(grid, &CouplingSpec::zero()).expect("zero coupling is valid")
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        &self.grid
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn base(&self, which: Which) -> &ScalarField {
        match which {
            Which::F => &self.base_f,
            Which::G => &self.base_g,
        }
    }

    pub fn kernel(&self, which: Which) -> &Kernel {
        match which {
            Which::F => &self.kernel_f,
            Which::G => &self.kernel_g,
        }
    }

    /// Both kernels vanish: the costs do not depend on the measure.
    pub fn is_decoupled(&self) -> bool {
        self.kernel_f.is_zero() && self.kernel_g.is_zero()
    }

    fn eval(&self, which: Which, m: &ScalarField) -> Result<ScalarField> {
        self.grid.ensure_same(m.grid())?;
        Ok(self.base(which).add(&self.kernel(which).apply(m)))
    }

    /// Linear in `m`; `m` is not required to be a density so that the
    /// linearized system can reuse it on signed perturbations.
    pub fn eval_f(&self, m: &ScalarField) -> Result<ScalarField> {
        self.eval(Which::F, m)
    }

    pub fn eval_g(&self, m: &ScalarField) -> Result<ScalarField> {
        self.eval(Which::G, m)
    }

    /// Applies only the kernel part `sum_y K(x, y) rho(y) h^2`.
    pub fn apply_kernel(&self, which: Which, rho: &ScalarField) -> Result<ScalarField> {
        self.grid.ensure_same(rho.grid())?;
        Ok(self.kernel(which).apply(rho))
    }
}

/// Flat derivative `K` together with its normalization at a measure.
#[derive(Debug, Clone)]
pub struct FlatDerivative {
    pub kernel: Kernel,
    /// `K(x, y) - sum_y' K(x, y') m(y') h^2`.
    pub normalized: Kernel,
}

pub fn flat_derivative(c: &Coupling, which: Which, m: &ScalarField) -> Result<FlatDerivative> {
    c.grid.ensure_same(m.grid())?;
    let k = c.kernel(which).clone();
    let offset = k.apply(m);
    let n = k.size();
    let mut data = k.data().to_vec();
    for x in 0..n {
        let o = offset.values()[x];
        data[x * n..(x + 1) * n].iter_mut().for_each(|v| *v -= o);
    }
    Ok(FlatDerivative {
        kernel: k,
        normalized: Kernel { n, data },
    })
}

/// Smooth random density `exp(sum of a few random Fourier modes)`.
pub fn random_density(grid: &Arc<TorusGrid>, rng: &mut impl Rng) -> ScalarField {
    let modes: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.random_range(-2i32..=2) as f64,
                rng.random_range(-2i32..=2) as f64,
                rng.random_range(-1.0..1.0),
                rng.random_range(0.0..2.0 * PI),
            )
        })
        .collect();
    ScalarField::from_fn(grid.clone(), |x1, x2| {
        modes
            .iter()
            .map(|&(k1, k2, a, ph)| a * (2.0 * PI * (k1 * x1 + k2 * x2) + ph).cos())
            .sum::<f64>()
            .exp()
    })
    .normalized_density()
    .expect("positive field")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonotonicityWitness {
    pub which: String,
    /// Smallest eigenvalue of `K h^2`.
    pub eigenvalue: f64,
    /// Quadratic form `<rho, K rho>` along the eigenvector.
    pub quadratic_form: f64,
    /// Densities `m = u + s rho`, `m' = u - s rho` realizing a negative pairing.
    pub pairing: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub pairs_checked: usize,
    /// Smallest `int (F(m) - F(m')) d(m - m')` over sampled pairs.
    pub min_pairing_f: f64,
    pub min_pairing_g: f64,
    pub min_eigenvalue_f: f64,
    pub min_eigenvalue_g: f64,
    pub asymmetry: f64,
    /// Largest discrete `C^{1+alpha}` norm of `F(., m)` over sampled `m`.
    pub f_holder_sup: f64,
    /// Largest discrete `C^{2+alpha}` norm of a row of `K_G`.
    pub kg_row_holder_sup: f64,
    pub witnesses: Vec<MonotonicityWitness>,
    pub passed: bool,
}

/// Checks monotonicity on sampled density pairs, positivity of both kernels
/// by eigenvalues, and reports discrete Hölder norms.
pub fn check_hypotheses(
    c: &Coupling,
    n_samples: usize,
    seed: u64,
    alpha: f64,
    dcc: &CCDistanceTable,
) -> Result<HypothesisReport> {
    let grid = c.grid.clone();
    let area = grid.cell_area();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut min_f = f64::INFINITY;
    let mut min_g = f64::INFINITY;
    let mut f_holder = 0.0_f64;
    for _ in 0..n_samples {
        let m1 = random_density(&grid, &mut rng);
        let m2 = random_density(&grid, &mut rng);
        let d = m1.sub(&m2);
        min_f = min_f.min(c.eval_f(&m1)?.sub(&c.eval_f(&m2)?).pairing(&d));
        min_g = min_g.min(c.eval_g(&m1)?.sub(&c.eval_g(&m2)?).pairing(&d));
        f_holder = f_holder.max(holder_norm(&c.eval_f(&m1)?, alpha, 1, dcc)?.norm());
    }
    let mut witnesses = Vec::new();
    let mut eig = [0.0; 2];
    for (slot, (name, which)) in [("F", Which::F), ("G", Which::G)].into_iter().enumerate() {
        let k = c.kernel(which);
        let spec = k.spectrum(area);
        let (imin, &lmin) = spec
            .eigenvalues
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("nonempty spectrum");
        eig[slot] = lmin;
        if lmin < -PSD_TOL {
            // rho along the eigenvector, made zero-mass and scaled so that
            // uniform +- rho stays a density
            let v = spec.eigenvectors.column(imin);
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let vals: Vec<f64> = v.iter().map(|x| x - mean).collect();
            let rho = ScalarField::new(grid.clone(), vals)?;
            let s = 0.5 / rho.sup_norm().max(1e-300);
            let u = ScalarField::uniform_density(grid.clone());
            let m1 = u.axpy(s, &rho);
            let m2 = u.axpy(-s, &rho);
            let diff = m1.sub(&m2);
            let pairing = c.eval(which, &m1)?.sub(&c.eval(which, &m2)?).pairing(&diff);
            let quadratic_form = k.apply(&rho).pairing(&rho);
            witnesses.push(MonotonicityWitness {
                which: name.to_string(),
                eigenvalue: lmin,
                quadratic_form,
                pairing,
            });
        }
    }
    let kg = c.kernel(Which::G);
    let rows: Vec<usize> = (0..kg.size()).step_by((kg.size() / 8).max(1)).collect();
    let mut kg_holder = 0.0_f64;
    for x in rows {
        let row = ScalarField::new(grid.clone(), kg.row(x).to_vec())?;
        kg_holder = kg_holder.max(holder_norm(&row, alpha, 2, dcc)?.norm());
    }
    let asymmetry = c.kernel_f.asymmetry().max(c.kernel_g.asymmetry());
    let passed = min_f >= -1e-10 && min_g >= -1e-10 && witnesses.is_empty() && asymmetry <= SYMMETRY_TOL;
    Ok(HypothesisReport {
        pairs_checked: n_samples,
        min_pairing_f: min_f,
        min_pairing_g: min_g,
        min_eigenvalue_f: eig[0],
        min_eigenvalue_g: eig[1],
        asymmetry,
        f_holder_sup: f_holder,
        kg_row_holder_sup: kg_holder,
        witnesses,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Profile;
    use crate::metric::cc_all_pairs;

    fn grid() -> Arc<TorusGrid> {
        Arc::new(TorusGrid::new(8, 8, Profile::SinProfile).unwrap())
    }

    #[test]
    fn zero_kernel_gives_base() {
        let g = grid();
        let spec = CouplingSpec {
            scale_f: 1.0,
            ..CouplingSpec::default()
        };
        let c = Coupling::from_spec(&g, &spec).unwrap();
        let c0 = Coupling::with_kernels(
            c.base(Which::F).clone(),
            c.base(Which::G).clone(),
            Kernel::zeros(g.len()),
            Kernel::zeros(g.len()),
            0.15,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_density(&g, &mut rng);
        assert_eq!(c0.eval_f(&m).unwrap(), *c.base(Which::F));
    }

    #[test]
    fn uniform_measure_gives_row_means() {
        let g = grid();
        let c = Coupling::from_spec(&g, &CouplingSpec::default()).unwrap();
        let u = ScalarField::uniform_density(g.clone());
        let f = c.eval_f(&u).unwrap().sub(c.base(Which::F));
        let k = c.kernel(Which::F);
        for x in 0..g.len() {
            let mean = k.row(x).iter().sum::<f64>() / g.len() as f64;
            assert!((f.values()[x] - mean).abs() < 1e-13);
        }
    }

    #[test]
    fn costs_are_linear_in_the_measure() {
        let g = grid();
        let c = Coupling::from_spec(&g, &CouplingSpec::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m1 = random_density(&g, &mut rng);
        let m2 = random_density(&g, &mut rng);
        let mid = m1.add(&m2).scaled(0.5);
        let lhs = c.eval_f(&mid).unwrap();
        let rhs = c.eval_f(&m1).unwrap().add(&c.eval_f(&m2).unwrap()).scaled(0.5);
        assert!(lhs.max_abs_diff(&rhs) < 1e-14);
    }

    #[test]
    fn normalized_kernel_has_zero_mean_against_m() {
        let g = grid();
        let c = Coupling::from_spec(&g, &CouplingSpec::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_density(&g, &mut rng);
        let fd = flat_derivative(&c, Which::F, &m).unwrap();
        assert!(fd.normalized.apply(&m).sup_norm() < 1e-12);
        let rho = random_density(&g, &mut rng).sub(&m);
        assert!(fd.normalized.apply(&rho).max_abs_diff(&fd.kernel.apply(&rho)) < 1e-12);
        for s in [1e-3, 0.1, 1.0] {
            let q = c.eval_f(&m.axpy(s, &rho)).unwrap().sub(&c.eval_f(&m).unwrap()).scaled(1.0 / s);
            assert!(q.max_abs_diff(&fd.kernel.apply(&rho)) < 1e-10);
        }
    }

    #[test]
    fn default_kernels_are_psd_and_monotone() {
        let g = grid();
        let t = cc_all_pairs(&g).unwrap();
        let c = Coupling::from_spec(&g, &CouplingSpec::default()).unwrap();
        let r = check_hypotheses(&c, 10, 4, 0.5, &t).unwrap();
        assert!(r.passed, "{r:?}");
        assert!(r.min_eigenvalue_f >= -PSD_TOL);
    }

    #[test]
    fn gram_matrix_passes_and_negative_eigenvalue_is_caught() {
        let g = grid();
        let t = cc_all_pairs(&g).unwrap();
        let n = g.len();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = DMatrix::<f64>::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let gram = &m * m.transpose();
        let kg = Kernel::new(n, gram.transpose().as_slice().to_vec()).unwrap();
        let zero = ScalarField::zeros(g.clone());
        let c = Coupling::with_kernels(zero.clone(), zero.clone(), kg.clone(), kg, 0.15).unwrap();
        assert!(check_hypotheses(&c, 5, 1, 0.5, &t).unwrap().passed);

        // inject eigenvalue -0.1 of K h^2 along a zero-mean direction
        let v: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let norm2: f64 = v.iter().map(|x| x * x).sum();
        let area = g.cell_area();
        let base = double_mollifier(&g, 0.15);
        let vf = ScalarField::new(g.clone(), v.clone()).unwrap();
        let lambda = base.apply(&vf).values().iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() / norm2;
        let mut data = base.data().to_vec();
        for x in 0..n {
            for y in 0..n {
                data[x * n + y] -= (lambda + 0.1) / area * v[x] * v[y] / norm2;
            }
        }
        let bad = Kernel::new(n, data).unwrap();
        let c = Coupling::with_kernels(zero.clone(), zero, bad, base, 0.15).unwrap();
        let r = check_hypotheses(&c, 5, 1, 0.5, &t).unwrap();
        assert!(!r.passed);
        let w = &r.witnesses[0];
        assert_eq!(w.which, "F");
        assert!((w.eigenvalue + 0.1).abs() < 1e-9, "{}", w.eigenvalue);
        assert!(w.quadratic_form < 0.0 && w.pairing < 0.0);
    }

    #[test]
    fn base_only_coupling_is_monotone_with_equality() {
        let g = grid();
        let t = cc_all_pairs(&g).unwrap();
        let base = BaseShape::Cosine.field(&g);
        let c = Coupling::with_kernels(base.clone(), base, Kernel::zeros(g.len()), Kernel::zeros(g.len()), 0.15).unwrap();
        let r = check_hypotheses(&c, 5, 1, 0.5, &t).unwrap();
        assert!(r.passed);
        assert_eq!(r.min_pairing_f, 0.0);
    }
}
