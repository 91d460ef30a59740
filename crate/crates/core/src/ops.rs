//! Centered periodic finite differences for the Grushin frame
//! `X1 = d/dx1`, `X2 = a(x1) d/dx2`.

use crate::field::ScalarField;

/// Which field of the frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    X1,
    X2,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::X1, Direction::X2];
}

/// `X1 f` or `X2 f` by second-order centered differences.
pub fn apply_x(f: &ScalarField, which: Direction) -> ScalarField {
    let g = f.grid();
    let (n1, n2) = (g.n1(), g.n2());
    let v = f.values();
    let mut out = vec![0.0; v.len()];
    match which {
        Direction::X1 => {
            let s = 0.5 / g.h1();
            for i1 in 0..n1 {
                let up = (i1 + 1) % n1 * n2;
                let dn = (i1 + n1 - 1) % n1 * n2;
                let row = i1 * n2;
                for i2 in 0..n2 {
                    out[row + i2] = s * (v[up + i2] - v[dn + i2]);
                }
            }
        }
        Direction::X2 => {
            let s = 0.5 / g.h2();
            for i1 in 0..n1 {
                let a = g.a(i1) * s;
                let row = &v[i1 * n2..(i1 + 1) * n2];
                let dst = &mut out[i1 * n2..(i1 + 1) * n2];
                for i2 in 0..n2 {
                    let r = row[(i2 + 1) % n2];
                    let l = row[(i2 + n2 - 1) % n2];
                    dst[i2] = a * (r - l);
                }
            }
        }
    }
    ScalarField::from_vec(g.clone(), out)
}

/// `D_X f = (X1 f, X2 f)`.
pub fn gradient(f: &ScalarField) -> [ScalarField; 2] {
    [apply_x(f, Direction::X1), apply_x(f, Direction::X2)]
}

/// Compact `Delta_X f = d11 f + a(x1)^2 d22 f` with 3-point stencils.
pub fn apply_laplacian(f: &ScalarField) -> ScalarField {
    let g = f.grid();
    let (n1, n2) = (g.n1(), g.n2());
    let v = f.values();
    let c1 = 1.0 / (g.h1() * g.h1());
    let c2 = 1.0 / (g.h2() * g.h2());
    let mut out = vec![0.0; v.len()];
    for i1 in 0..n1 {
        let up = (i1 + 1) % n1 * n2;
        let dn = (i1 + n1 - 1) % n1 * n2;
        let row = i1 * n2;
        let a2 = g.a(i1) * g.a(i1) * c2;
        for i2 in 0..n2 {
            let c = v[row + i2];
            let r = v[row + (i2 + 1) % n2];
            let l = v[row + (i2 + n2 - 1) % n2];
            out[row + i2] = c1 * (v[up + i2] - 2.0 * c + v[dn + i2]) + a2 * (r - 2.0 * c + l);
        }
    }
    ScalarField::from_vec(g.clone(), out)
}

/// `div_X (g1, g2) = X1 g1 + X2 g2` with centered differences; the adjoint of
/// `-D_X` in the discrete pairing.
pub fn apply_div(g1: &ScalarField, g2: &ScalarField) -> ScalarField {
    apply_x(g1, Direction::X1).add(&apply_x(g2, Direction::X2))
}

/// `X^J f` for a multi-index `J` read left to right (`[X1, X2]` is `X1 X2 f`).
pub fn apply_multi(f: &ScalarField, word: &[Direction]) -> ScalarField {
    word.iter()
        .rev()
        .fold(f.clone(), |acc, &d| apply_x(&acc, d))
}

/// All multi-indices of length `order`.
pub fn words(order: usize) -> Vec<Vec<Direction>> {
    let mut out = vec![Vec::new()];
    for _ in 0..order {
        out = out
            .into_iter()
            .flat_map(|w| {
                Direction::BOTH.iter().map(move |&d| {
                    let mut w = w.clone();
                    w.push(d);
                    w
                })
            })
            .collect();
    }
    out
}

/// `|D_X f|^2` by centered differences.
pub fn grad_norm_sq(f: &ScalarField) -> ScalarField {
    let [g1, g2] = gradient(f);
    g1.zip_map(&g2, |a, b| a * a + b * b)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;
    use std::sync::Arc;

    use proptest::prelude::*;

    use super::*;
    use crate::grid::{Profile, TorusGrid};

    fn grid(n: usize, p: Profile) -> Arc<TorusGrid> {
        Arc::new(TorusGrid::new(n, n, p).unwrap())
    }

    fn random_field(g: &Arc<TorusGrid>, seed: u64) -> ScalarField {
        // small LCG keeps the test free of RNG plumbing
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        let values = (0..g.len())
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
            })
            .collect();
        ScalarField::new(g.clone(), values).unwrap()
    }

    #[test]
    fn constants_are_annihilated() {
        for p in [Profile::SinProfile, Profile::ChartGrushin] {
            let g = grid(16, p);
            let f = ScalarField::constant(g, 3.7);
            assert!(apply_x(&f, Direction::X1).sup_norm() == 0.0);
            assert!(apply_x(&f, Direction::X2).sup_norm() == 0.0);
            assert!(apply_laplacian(&f).sup_norm() < 1e-9);
        }
    }

    #[test]
    fn x2_ignores_x1_dependence() {
        let g = grid(16, Profile::SinProfile);
        let f = ScalarField::from_fn(g, |x1, _| (2.0 * PI * x1).sin());
        assert_eq!(apply_x(&f, Direction::X2).sup_norm(), 0.0);
    }

    #[test]
    fn x2_of_sin_x2_matches_chain_rule() {
        let mut errs = Vec::new();
        for n in [16, 32, 64] {
            let g = grid(n, Profile::SinProfile);
            let f = ScalarField::from_fn(g.clone(), |_, x2| (2.0 * PI * x2).sin());
            let exact = ScalarField::from_fn(g, |x1, x2| {
                2.0 * PI * (2.0 * PI * x1).sin() * (2.0 * PI * x2).cos()
            });
            errs.push(apply_x(&f, Direction::X2).max_abs_diff(&exact));
        }
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((ratio - 4.0).abs() < 0.8, "ratio {ratio}");
        }
    }

    #[test]
    fn laplacian_of_sin_x2() {
        let g = grid(64, Profile::SinProfile);
        let f = ScalarField::from_fn(g.clone(), |_, x2| (2.0 * PI * x2).sin());
        let exact = ScalarField::from_fn(g, |x1, x2| {
            let a = (2.0 * PI * x1).sin();
            -4.0 * PI * PI * a * a * (2.0 * PI * x2).sin()
        });
        assert!(apply_laplacian(&f).max_abs_diff(&exact) < 0.05);
    }

    #[test]
    fn degenerate_rows_see_no_x2_diffusion() {
        let g = grid(16, Profile::SinProfile);
        let f = ScalarField::from_fn(g.clone(), |_, x2| (2.0 * PI * x2).cos() + x2 * x2);
        let lap = apply_laplacian(&f);
        for i2 in 0..16 {
            assert!(lap.at(0, i2).abs() < 1e-9);
            assert!(lap.at(8, i2).abs() < 1e-9);
        }
    }

    #[test]
    fn divergence_sums_to_zero() {
        let g = grid(16, Profile::ChartGrushin);
        let a = random_field(&g, 1);
        let b = random_field(&g, 2);
        assert!(apply_div(&a, &b).integral().abs() < 1e-13);
        let zero = ScalarField::zeros(g);
        assert_eq!(apply_div(&zero, &zero).sup_norm(), 0.0);
    }

    #[test]
    fn divergence_form_matches_composed_frame() {
        let g = grid(16, Profile::SinProfile);
        let f = random_field(&g, 7);
        let [g1, g2] = gradient(&f);
        let div = apply_div(&g1, &g2);
        let composed = apply_multi(&f, &[Direction::X1, Direction::X1])
            .add(&apply_multi(&f, &[Direction::X2, Direction::X2]));
        assert!(div.max_abs_diff(&composed) <= 1e-12 * f.sup_norm().max(1.0) * 1e3);
    }

    #[test]
    fn words_enumerate_multi_indices() {
        assert_eq!(words(0).len(), 1);
        assert_eq!(words(2).len(), 4);
    }

    proptest! {
        #[test]
        fn summation_by_parts(seed_f in 0u64..1000, seed_g in 1000u64..2000, chart in any::<bool>()) {
            let p = if chart { Profile::ChartGrushin } else { Profile::SinProfile };
            let g = grid(16, p);
            let f = random_field(&g, seed_f);
            let h = random_field(&g, seed_g);
            for d in Direction::BOTH {
                let lhs = apply_x(&f, d).pairing(&h);
                let rhs = -f.pairing(&apply_x(&h, d));
                prop_assert!((lhs - rhs).abs() < 1e-12);
            }
        }

        #[test]
        fn laplacian_has_zero_mean(seed in 0u64..1000) {
            let g = grid(16, Profile::SinProfile);
            let f = random_field(&g, seed);
            prop_assert!(apply_laplacian(&f).integral().abs() < 1e-13);
        }
    }
}
