//! Implicit Grushin heat step `(I - dt Delta_X) u = r`, diagonalized by the
//! discrete Fourier transform in `x2` into one periodic tridiagonal system in
//! `x1` per mode.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::field::ScalarField;
use crate::grid::TorusGrid;

/// Factorized periodic tridiagonal matrix with constant off-diagonal `-c`
/// (Sherman-Morrison on a Thomas factorization).
#[derive(Debug, Clone)]
struct CyclicTridiagonal {
    c: f64,
    gamma: f64,
    /// Thomas pivots of the modified matrix.
    pivot: Vec<f64>,
    /// Solution of the modified system for the correction vector.
    z: Vec<f64>,
    denom: f64,
}

impl CyclicTridiagonal {
    fn new(diag: &[f64], c: f64) -> Self {
        let n = diag.len();
        let gamma = -diag[0];
        let mut d = diag.to_vec();
        d[0] -= gamma;
        d[n - 1] -= c * c / gamma;
        let mut pivot = vec![0.0; n];
        pivot[0] = d[0];
        for i in 1..n {
            pivot[i] = d[i] - c * c / pivot[i - 1];
        }
        let mut m = CyclicTridiagonal {
            c,
            gamma,
            pivot,
            z: Vec::new(),
            denom: 0.0,
        };
        let mut u = vec![0.0; n];
        u[0] = gamma;
        u[n - 1] = -c;
        m.thomas(&mut u);
        m.denom = 1.0 + u[0] - c * u[n - 1] / gamma;
        m.z = u;
        m
    }

    /// In-place solve with the modified (non-periodic) matrix.
    fn thomas(&self, r: &mut [f64]) {
        let n = r.len();
        let c = self.c;
        for i in 1..n {
            r[i] += c * r[i - 1] / self.pivot[i - 1];
        }
        r[n - 1] /= self.pivot[n - 1];
        for i in (0..n - 1).rev() {
            r[i] = (r[i] + c * r[i + 1]) / self.pivot[i];
        }
    }

    fn solve(&self, r: &mut [f64]) {
        let n = r.len();
        self.thomas(r);
        let f = (r[0] - self.c * r[n - 1] / self.gamma) / self.denom;
        for (ri, zi) in r.iter_mut().zip(&self.z) {
            *ri -= f * zi;
        }
    }
}

/// Prefactored solver for `(I - dt Delta_X) u = r` on one grid.
pub struct ImplicitDiffusion {
    grid: Arc<TorusGrid>,
    dt: f64,
    modes: Vec<CyclicTridiagonal>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for ImplicitDiffusion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ImplicitDiffusion")
            .field("grid", &self.grid.describe())
            .field("dt", &self.dt)
            .finish()
    }
}

impl ImplicitDiffusion {
    pub fn new(grid: &Arc<TorusGrid>, dt: f64) -> Self {
        let (n1, n2) = (grid.n1(), grid.n2());
        let c = dt / (grid.h1() * grid.h1());
        let h2 = grid.h2();
        let modes = (0..n2)
            .map(|k| {
                let s = (PI * k as f64 / n2 as f64).sin();
                let lambda = 4.0 * s * s / (h2 * h2);
                let diag: Vec<f64> = (0..n1)
                    .map(|i1| 1.0 + 2.0 * c + dt * grid.a(i1) * grid.a(i1) * lambda)
                    .collect();
                CyclicTridiagonal::new(&diag, c)
            })
            .collect();
        let mut planner = FftPlanner::new();
        ImplicitDiffusion {
            grid: grid.clone(),
            dt,
            modes,
            forward: planner.plan_fft_forward(n2),
            inverse: planner.plan_fft_inverse(n2),
        }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        &self.grid
    }

    /// Returns `u` with `(I - dt Delta_X) u = r`.
    pub fn solve(&self, r: &ScalarField) -> ScalarField {
        debug_assert!(self.grid.same_as(r.grid()));
        let (n1, n2) = (self.grid.n1(), self.grid.n2());
        let mut spec: Vec<Complex64> = r.values().iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward.process(&mut spec);
        let mut re = vec![0.0; n1];
        let mut im = vec![0.0; n1];
        for (k, m) in self.modes.iter().enumerate() {
            for i1 in 0..n1 {
                let z = spec[i1 * n2 + k];
                re[i1] = z.re;
                im[i1] = z.im;
            }
            m.solve(&mut re);
            m.solve(&mut im);
            for i1 in 0..n1 {
                spec[i1 * n2 + k] = Complex64::new(re[i1], im[i1]);
            }
        }
        self.inverse.process(&mut spec);
        let scale = 1.0 / n2 as f64;
        let out = spec.iter().map(|z| z.re * scale).collect();
        ScalarField::from_vec(self.grid.clone(), out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Profile;
    use crate::ops::apply_laplacian;

    #[test]
    fn inverts_the_shifted_laplacian() {
        for p in [Profile::SinProfile, Profile::ChartGrushin] {
            let g = Arc::new(TorusGrid::new(16, 12, p).unwrap());
            let u = ScalarField::from_fn(g.clone(), |x1, x2| {
                (2.0 * PI * x1).sin() * (4.0 * PI * x2).cos() + x1 * x2 * (1.0 - x1)
            });
            let dt = 0.03;
            let r = u.axpy(-dt, &apply_laplacian(&u));
            let solver = ImplicitDiffusion::new(&g, dt);
            assert!(solver.solve(&r).max_abs_diff(&u) < 1e-12);
        }
    }

    #[test]
    fn preserves_constants_and_mass() {
        let g = Arc::new(TorusGrid::new(8, 8, Profile::SinProfile).unwrap());
        let solver = ImplicitDiffusion::new(&g, 0.1);
        let c = ScalarField::constant(g.clone(), 2.5);
        assert!(solver.solve(&c).max_abs_diff(&c) < 1e-14);
        let bump = ScalarField::from_fn(g, |x1, x2| (-(x1 - 0.3).powi(2) * 40.0 - (x2 - 0.6).powi(2) * 30.0).exp());
        assert!((solver.solve(&bump).integral() - bump.integral()).abs() < 1e-15);
    }
}
