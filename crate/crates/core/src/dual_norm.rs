//! Negative-norm surrogate `||rho||_{-(1+alpha)} = sup <rho, psi> / ||psi||_{1+alpha}`
//! over the frozen dictionary of trigonometric modes `|k|_inf <= 8`.

use std::f64::consts::PI;

use crate::field::{ScalarField, SpaceTimeField};

/// Largest frequency per axis in the dictionary.
pub const DICTIONARY_MAX_MODE: i32 = 8;

/// Hoelder exponent of the dictionary norm.
pub const DICTIONARY_ALPHA: f64 = 0.5;

/// `||cos(2 pi k . x + phase)||_{1+alpha}`: sup norm, first derivatives and
/// the Hoelder quotient of the first derivatives.
pub fn mode_weight(k1: i32, k2: i32, alpha: f64) -> f64 {
    let w = 2.0 * PI * ((k1 * k1 + k2 * k2) as f64).sqrt();
    1.0 + w * (1.0 + w.powf(alpha))
}

/// `|sum_x rho(x) exp(-2 pi i k . x) h1 h2|` for `k1 in 0..=K`, `k2 in -K..=K`.
pub fn fourier_moduli(rho: &ScalarField) -> Vec<(i32, i32, f64)> {
    let g = rho.grid();
    let (n1, n2) = (g.n1(), g.n2());
    let km = DICTIONARY_MAX_MODE;
    let nk = (2 * km + 1) as usize;
    let v = rho.values();
    // Transform along x2 first: row[i1][k2 + K] = sum_i2 rho e^{-2 pi i k2 x2}.
    let mut row = vec![(0.0, 0.0); n1 * nk];
    let tw2: Vec<(f64, f64)> = (0..nk)
        .flat_map(|j| {
            let k2 = j as i32 - km;
            (0..n2).map(move |i2| {
                let th = 2.0 * PI * k2 as f64 * i2 as f64 / n2 as f64;
                (th.cos(), -th.sin())
            })
        })
        .collect();
    for i1 in 0..n1 {
        let r = &v[i1 * n2..(i1 + 1) * n2];
        for j in 0..nk {
            let tw = &tw2[j * n2..(j + 1) * n2];
            let (mut re, mut im) = (0.0, 0.0);
            for (x, (c, s)) in r.iter().zip(tw) {
                re += x * c;
                im += x * s;
            }
            row[i1 * nk + j] = (re, im);
        }
    }
    let area = g.cell_area();
    let mut out = Vec::with_capacity((km as usize + 1) * nk);
    for k1 in 0..=km {
        for j in 0..nk {
            let (mut re, mut im) = (0.0, 0.0);
            for i1 in 0..n1 {
                let th = 2.0 * PI * k1 as f64 * i1 as f64 / n1 as f64;
                let (c, s) = (th.cos(), -th.sin());
                let (a, b) = row[i1 * nk + j];
                re += a * c - b * s;
                im += a * s + b * c;
            }
            out.push((k1, j as i32 - km, area * (re * re + im * im).sqrt()));
        }
    }
    out
}

/// Dictionary norm with a given Hoelder exponent.
pub fn dual_norm_with(rho: &ScalarField, alpha: f64) -> f64 {
    fourier_moduli(rho)
        .into_iter()
        .map(|(k1, k2, m)| m / mode_weight(k1, k2, alpha))
        .fold(0.0, f64::max)
}

/// Dictionary norm with [`DICTIONARY_ALPHA`].
pub fn dual_norm(rho: &ScalarField) -> f64 {
    dual_norm_with(rho, DICTIONARY_ALPHA)
}

/// `sup_t ||a(t) - b(t)||` in the dictionary norm.
pub fn path_distance(a: &SpaceTimeField, b: &SpaceTimeField) -> f64 {
    a.slices()
        .iter()
        .zip(b.slices())
        .map(|(x, y)| dual_norm(&x.sub(y)))
        .fold(0.0, f64::max)
}

/// `sup_t ||a(t)||` in the dictionary norm.
pub fn path_norm(a: &SpaceTimeField) -> f64 {
    a.slices().iter().map(dual_norm).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::grid::{Profile, TorusGrid};

    fn grid() -> Arc<TorusGrid> {
        Arc::new(TorusGrid::new(16, 12, Profile::SinProfile).unwrap())
    }

    #[test]
    fn single_mode_is_detected_with_its_weight() {
        let g = grid();
        let rho = ScalarField::from_fn(g, |x1, x2| (2.0 * PI * (2.0 * x1 - 3.0 * x2) + 0.4).cos());
        // The mode contributes 1/2 at k and at -k.
        let want = 0.5 / mode_weight(2, -3, DICTIONARY_ALPHA);
        assert!((dual_norm(&rho) - want).abs() < 1e-12);
    }

    #[test]
    fn unit_mass_sees_the_constant_mode() {
        let g = grid();
        let m = ScalarField::uniform_density(g);
        assert!((dual_norm(&m) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn norm_is_homogeneous_and_subadditive() {
        let g = grid();
        let a = ScalarField::from_fn(g.clone(), |x1, x2| (x1 - 0.4).powi(2) - x2 * x2 * x1);
        let b = ScalarField::from_fn(g, |x1, x2| (6.0 * x1 * x2).sin());
        assert!((dual_norm(&a.scaled(-3.0)) - 3.0 * dual_norm(&a)).abs() < 1e-12);
        assert!(dual_norm(&a.add(&b)) <= dual_norm(&a) + dual_norm(&b) + 1e-15);
    }
}
