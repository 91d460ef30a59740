//! Discrete weighted Hölder norms measured with the Carnot-Caratheodory
//! distance and derivatives along the frame.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::metric::CCDistanceTable;
use crate::ops::{apply_multi, words};

/// Above this many nodes the pair scan visits a deterministic subsample.
pub const FULL_SCAN_MAX_NODES: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HolderReport {
    pub alpha: f64,
    pub sup_norm: f64,
    pub seminorm: f64,
    pub order: usize,
}

impl HolderReport {
    /// `sup_norm + seminorm`, the full `C^{n + alpha}` norm.
    pub fn norm(&self) -> f64 {
        self.sup_norm + self.seminorm
    }
}

/// `sup_{x != y} |f(x) - f(y)| / d(x, y)^alpha` over the scanned pairs.
pub fn pair_seminorm(values: &[f64], alpha: f64, dcc: &CCDistanceTable) -> f64 {
    let n = values.len();
    let stride = if n > FULL_SCAN_MAX_NODES { n / FULL_SCAN_MAX_NODES + 1 } else { 1 };
    let mut best = 0.0_f64;
    for a in (0..n).step_by(stride) {
        let row = dcc.row(a);
        for b in 0..n {
            if b == a {
                continue;
            }
            let d = row[b];
            if d > 0.0 {
                best = best.max((values[a] - values[b]).abs() / d.powf(alpha));
            }
        }
    }
    best
}

/// `sum_{|J| <= order} sup |X^J f|` and the `alpha`-seminorm of the
/// top-order derivatives.
pub fn holder_norm(f: &ScalarField, alpha: f64, order: usize, dcc: &CCDistanceTable) -> Result<HolderReport> {
    if order > 2 {
        return Err(Error::InvalidInput(format!("Hölder order {order} > 2")));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidInput(format!("Hölder exponent {alpha} outside (0, 1]")));
    }
    if !dcc.covers_all_pairs() {
        return Err(Error::InvalidInput("Hölder scan needs an all-pairs table".into()));
    }
    f.grid().ensure_same(dcc.grid())?;
    let mut sup_norm = 0.0;
    let mut seminorm = 0.0_f64;
    for k in 0..=order {
        for w in words(k) {
            let d = apply_multi(f, &w);
            sup_norm += d.sup_norm();
            if k == order {
                seminorm = seminorm.max(pair_seminorm(d.values(), alpha, dcc));
            }
        }
    }
    Ok(HolderReport {
        alpha,
        sup_norm,
        seminorm,
        order,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::grid::{Profile, TorusGrid};
    use crate::metric::cc_all_pairs;

    #[test]
    fn constants_have_zero_seminorm() {
        let g = Arc::new(TorusGrid::new(8, 8, Profile::SinProfile).unwrap());
        let t = cc_all_pairs(&g).unwrap();
        let r = holder_norm(&ScalarField::constant(g, 5.0), 0.5, 0, &t).unwrap();
        assert_eq!(r.sup_norm, 5.0);
        assert_eq!(r.seminorm, 0.0);
    }

    #[test]
    fn seminorm_is_homogeneous() {
        let g = Arc::new(TorusGrid::new(8, 8, Profile::SinProfile).unwrap());
        let t = cc_all_pairs(&g).unwrap();
        let f = ScalarField::from_fn(g, |x1, x2| (6.0 * x1).sin() * (2.0 * x2).cos());
        let r1 = holder_norm(&f, 0.5, 1, &t).unwrap();
        let r2 = holder_norm(&f.scaled(2.0), 0.5, 1, &t).unwrap();
        assert!((r2.seminorm - 2.0 * r1.seminorm).abs() < 1e-12 * r1.seminorm.max(1.0));
    }

    #[test]
    fn distance_function_is_one_lipschitz() {
        let g = Arc::new(TorusGrid::new(16, 16, Profile::SinProfile).unwrap());
        let t = cc_all_pairs(&g).unwrap();
        let x0 = g.index(3, 5);
        let f = ScalarField::new(g, t.row(x0)).unwrap();
        let r = holder_norm(&f, 1.0, 0, &t).unwrap();
        assert!(r.seminorm <= 1.0 + 1e-9, "{}", r.seminorm);
    }

    #[test]
    fn order_three_rejected() {
        let g = Arc::new(TorusGrid::new(8, 8, Profile::SinProfile).unwrap());
        let t = cc_all_pairs(&g).unwrap();
        assert!(holder_norm(&ScalarField::zeros(g), 0.5, 3, &t).is_err());
    }
}
