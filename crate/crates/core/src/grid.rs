//! Periodic grids on the two-torus and the coefficient profile of the
//! second Grushin field `X2 = a(x1) d/dx2`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Globalization of the coefficient `x1` of `X2` on the torus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Profile {
    /// `a(x1) = sin(2 pi x1)`: smooth, periodic, vanishing to first order at 0 and 1/2.
    SinProfile,
    /// `a(x1)` = representative of `x1` in `[-1/2, 1/2)`; jumps across the seam `x1 = 1/2`.
    ChartGrushin,
}

impl Profile {
    pub fn coefficient(self, x1: f64) -> f64 {
        match self {
            Profile::SinProfile => (2.0 * PI * x1).sin(),
            Profile::ChartGrushin => {
                let r = x1 - x1.floor();
                if r >= 0.5 {
                    r - 1.0
                } else {
                    r
                }
            }
        }
    }

    /// Derivative of the coefficient, used only for the bracket-generating check.
    pub fn coefficient_slope(self, x1: f64) -> f64 {
        match self {
            Profile::SinProfile => 2.0 * PI * (2.0 * PI * x1).cos(),
            Profile::ChartGrushin => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Profile::SinProfile => "SinProfile",
            Profile::ChartGrushin => "ChartGrushin",
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "SinProfile" | "sin" => Ok(Profile::SinProfile),
            "ChartGrushin" | "chart" => Ok(Profile::ChartGrushin),
            other => Err(Error::InvalidInput(format!("unknown profile `{other}`"))),
        }
    }
}

/// Uniform periodic `n1 x n2` grid on the unit torus. Node `(i1, i2)` sits at
/// `(i1 h1, i2 h2)` and is stored at flat index `i1 * n2 + i2`.
#[derive(Debug, Clone, PartialEq)]
pub struct TorusGrid {
    n1: usize,
    n2: usize,
    profile: Profile,
    coeff: Vec<f64>,
}

impl TorusGrid {
    pub fn new(n1: usize, n2: usize, profile: Profile) -> Result<Self> {
        if n1 < 8 || n2 < 8 || n1 % 2 != 0 || n2 % 2 != 0 {
            return Err(Error::InvalidInput(format!(
                "grid sizes must be even and at least 8, got {n1}x{n2}"
            )));
        }
        let coeff = (0..n1)
            .map(|i1| profile.coefficient(i1 as f64 / n1 as f64))
            .collect();
        Ok(TorusGrid {
            n1,
            n2,
            profile,
            coeff,
        })
    }

    #[inline]
    pub fn n1(&self) -> usize {
        self.n1
    }

    #[inline]
    pub fn n2(&self) -> usize {
        self.n2
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n1 * self.n2
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn h1(&self) -> f64 {
        1.0 / self.n1 as f64
    }

    #[inline]
    pub fn h2(&self) -> f64 {
        1.0 / self.n2 as f64
    }

    /// Area element `h1 * h2` of one cell.
    #[inline]
    pub fn cell_area(&self) -> f64 {
        self.h1() * self.h2()
    }

    pub fn profile(&self) -> Profile {
        self.profile
    }

    #[inline]
    pub fn index(&self, i1: usize, i2: usize) -> usize {
        i1 * self.n2 + i2
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx / self.n2, idx % self.n2)
    }

    #[inline]
    pub fn point(&self, idx: usize) -> (f64, f64) {
        let (i1, i2) = self.coords(idx);
        (i1 as f64 * self.h1(), i2 as f64 * self.h2())
    }

    /// `a(x1)` at row `i1`.
    #[inline]
    pub fn a(&self, i1: usize) -> f64 {
        self.coeff[i1]
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coeff
    }

    #[inline]
    pub fn wrap1(&self, i: isize) -> usize {
        i.rem_euclid(self.n1 as isize) as usize
    }

    #[inline]
    pub fn wrap2(&self, i: isize) -> usize {
        i.rem_euclid(self.n2 as isize) as usize
    }

    /// Node-wise check of the bracket condition `|a| + |a'| > 0`.
    pub fn is_bracket_generating(&self) -> bool {
        (0..self.n1).all(|i1| {
            let x1 = i1 as f64 * self.h1();
            self.profile.coefficient(x1).abs() + self.profile.coefficient_slope(x1).abs() > 0.0
        })
    }

    /// Same nodes, same profile.
    pub fn same_as(&self, other: &TorusGrid) -> bool {
        self.n1 == other.n1 && self.n2 == other.n2 && self.profile == other.profile
    }

    pub fn ensure_same(&self, other: &TorusGrid) -> Result<()> {
        if self.same_as(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch {
                left: self.describe(),
                right: other.describe(),
            })
        }
    }

    pub fn describe(&self) -> String {
        format!("{}x{} {}", self.n1, self.n2, self.profile)
    }

    /// Torus distance between two nodes in the flat metric.
    pub fn torus_distance(&self, a: usize, b: usize) -> f64 {
        let (p1, p2) = self.point(a);
        let (q1, q2) = self.point(b);
        let d1 = periodic_gap(p1 - q1);
        let d2 = periodic_gap(q2 - p2);
        (d1 * d1 + d2 * d2).sqrt()
    }
}

/// Length of the shortest representative of `d` modulo 1.
#[inline]
pub fn periodic_gap(d: f64) -> f64 {
    let r = d - d.round();
    r.abs()
}
