//! Carnot-Caratheodory distance on the grid as the viscosity solution of
//! `(d1 d)^2 + a(x1)^2 (d2 d)^2 = 1`, computed by Godunov fast sweeping.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::TorusGrid;

/// Sweep stops when the largest update of a full sweep (four orderings) drops below this.
pub const SWEEP_TOL: f64 = 1e-10;
pub const MAX_SWEEPS: usize = 200;

/// Grids up to this many nodes get their all-pairs table closed under the
/// triangle inequality.
pub const CLOSURE_MAX_NODES: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Node(usize),
    AllPairs,
}

/// Distances from one node, or between all pairs of nodes.
///
/// All-pairs tables exploit invariance under `x2`-translations (the frame
/// only depends on `x1`): only the `n1` sources `(i1, 0)` are stored.
#[derive(Debug, Clone)]
pub struct CCDistanceTable {
    grid: Arc<TorusGrid>,
    source: Source,
    dist: Vec<f64>,
    sweeps: usize,
    closed: bool,
}

impl CCDistanceTable {
    pub fn grid(&self) -> &Arc<TorusGrid> {
        &self.grid
    }

    pub fn source(&self) -> Source {
        self.source
    }

    /// Sweeps used by the slowest source.
    pub fn sweeps(&self) -> usize {
        self.sweeps
    }

    /// Whether the table was closed under the triangle inequality.
    pub fn is_metric_closed(&self) -> bool {
        self.closed
    }

    /// Distances from the source of a single-source table.
    pub fn from_source(&self) -> &[f64] {
        match self.source {
            Source::Node(_) => &self.dist,
            Source::AllPairs => panic!("from_source on an all-pairs table"),
        }
    }

    /// Distance between two nodes. Single-source tables only answer pairs
    /// that contain the source.
    pub fn distance(&self, a: usize, b: usize) -> f64 {
        match self.source {
            Source::Node(s) => {
                if a == s {
                    self.dist[b]
                } else if b == s {
                    self.dist[a]
                } else {
                    panic!("single-source table queried for pair ({a}, {b})")
                }
            }
            Source::AllPairs => {
                let g = &self.grid;
                let n = g.len();
                let (i1, i2) = g.coords(a);
                let (j1, j2) = g.coords(b);
                let shifted = g.index(j1, (j2 + g.n2() - i2) % g.n2());
                self.dist[i1 * n + shifted]
            }
        }
    }

    /// Full row `d(a, .)` of an all-pairs table (or the single-source row).
    pub fn row(&self, a: usize) -> Vec<f64> {
        (0..self.grid.len()).map(|b| self.distance(a, b)).collect()
    }

    pub fn covers_all_pairs(&self) -> bool {
        self.source == Source::AllPairs
    }

    /// Writes `i1,i2,dist` rows for a single-source table, or for the rows of
    /// source `(0, 0)` of an all-pairs table.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        let src = match self.source {
            Source::Node(s) => s,
            Source::AllPairs => 0,
        };
        writeln!(w, "i1,i2,dist")?;
        for b in 0..self.grid.len() {
            let (i1, i2) = self.grid.coords(b);
            writeln!(w, "{i1},{i2},{}", crate::field::fmt_f64(self.distance(src, b)))?;
        }
        Ok(())
    }
}

/// Godunov update at one node given the smallest neighbor values along
/// `x1` (`a1`) and `x2` (`a2`) and the speed `beta = |a(x1)| / h2` along `x2`.
#[inline]
fn local_solve(a1: f64, a2: f64, h1: f64, beta: f64) -> f64 {
    let t1 = a1 + h1;
    if beta == 0.0 || !a2.is_finite() {
        return t1;
    }
    let t2 = a2 + 1.0 / beta;
    let one_sided = t1.min(t2);
    if one_sided <= a1.max(a2) {
        return one_sided;
    }
    let p = 1.0 / (h1 * h1);
    let q = beta * beta;
    let disc = (p + q) - p * q * (a1 - a2) * (a1 - a2);
    if disc < 0.0 {
        return one_sided;
    }
    let t = (p * a1 + q * a2 + disc.sqrt()) / (p + q);
    if t >= a1.max(a2) {
        t.min(one_sided)
    } else {
        one_sided
    }
}

/// Distances from `source` to every node. Fails with the last update size
/// when the sweeps do not settle.
pub fn cc_sweep(grid: &Arc<TorusGrid>, source: usize) -> Result<CCDistanceTable> {
    let (dist, sweeps) = sweep_from(grid, source)?;
    Ok(CCDistanceTable {
        grid: grid.clone(),
        source: Source::Node(source),
        dist,
        sweeps,
        closed: false,
    })
}

fn sweep_from(grid: &TorusGrid, source: usize) -> Result<(Vec<f64>, usize)> {
    let (n1, n2) = (grid.n1(), grid.n2());
    let h1 = grid.h1();
    let betas: Vec<f64> = (0..n1).map(|i1| grid.a(i1).abs() / grid.h2()).collect();
    let mut d = vec![f64::INFINITY; grid.len()];
    d[source] = 0.0;

    let mut last_change = f64::INFINITY;
    for sweep in 1..=MAX_SWEEPS {
        let mut change = 0.0_f64;
        for order in 0..4 {
            let rev1 = order & 1 == 1;
            let rev2 = order & 2 == 2;
            for s1 in 0..n1 {
                let i1 = if rev1 { n1 - 1 - s1 } else { s1 };
                let up = (i1 + 1) % n1 * n2;
                let dn = (i1 + n1 - 1) % n1 * n2;
                let row = i1 * n2;
                let beta = betas[i1];
                for s2 in 0..n2 {
                    let i2 = if rev2 { n2 - 1 - s2 } else { s2 };
                    let idx = row + i2;
                    if idx == source {
                        continue;
                    }
                    let a1 = d[up + i2].min(d[dn + i2]);
                    let a2 = d[row + (i2 + 1) % n2].min(d[row + (i2 + n2 - 1) % n2]);
                    if !a1.is_finite() && !a2.is_finite() {
                        continue;
                    }
                    let t = if a1.is_finite() {
                        local_solve(a1, a2, h1, beta)
                    } else if beta > 0.0 {
                        a2 + 1.0 / beta
                    } else {
                        continue;
                    };
                    let old = d[idx];
                    if t < old {
                        d[idx] = t;
                        let delta = if old.is_finite() { old - t } else { f64::INFINITY };
                        change = change.max(delta);
                    }
                }
            }
        }
        last_change = change;
        if change < SWEEP_TOL {
            return Ok((d, sweep));
        }
    }
    Err(Error::NotConverged {
        what: "fast sweeping",
        iterations: MAX_SWEEPS,
        residual: last_change,
    })
}

/// Symmetric all-pairs table; closed under the triangle inequality when the
/// grid has at most [`CLOSURE_MAX_NODES`] nodes.
pub fn cc_all_pairs(grid: &Arc<TorusGrid>) -> Result<CCDistanceTable> {
    let n = grid.len();
    let (n1, n2) = (grid.n1(), grid.n2());
    let rows: Vec<(Vec<f64>, usize)> = (0..n1)
        .into_par_iter()
        .map(|i1| sweep_from(grid, grid.index(i1, 0)))
        .collect::<Result<_>>()?;
    let sweeps = rows.iter().map(|r| r.1).max().unwrap_or(0);
    let raw: Vec<f64> = rows.into_iter().flat_map(|r| r.0).collect();

    // min(d(x, y), d(y, x)) in the translation-reduced layout
    let mut dist = vec![0.0; n1 * n];
    for i1 in 0..n1 {
        for b in 0..n {
            let (j1, j2) = grid.coords(b);
            let back = raw[j1 * n + grid.index(i1, (n2 - j2) % n2)];
            dist[i1 * n + b] = raw[i1 * n + b].min(back);
        }
    }

    let mut table = CCDistanceTable {
        grid: grid.clone(),
        source: Source::AllPairs,
        dist,
        sweeps,
        closed: false,
    };
    if n <= CLOSURE_MAX_NODES {
        close_triangle(&mut table);
    }
    Ok(table)
}

/// Repeated min-plus relaxation `d(s, t) <- min_y d(s, y) + d(y, t)` until no
/// entry moves.
fn close_triangle(table: &mut CCDistanceTable) {
    let g = table.grid.clone();
    let n = g.len();
    let (n1, n2) = (g.n1(), g.n2());
    for _ in 0..64 {
        let snapshot = table.dist.clone();
        let lookup = |a: usize, b: usize| {
            let (i1, i2) = g.coords(a);
            let (j1, j2) = g.coords(b);
            snapshot[i1 * n + g.index(j1, (j2 + n2 - i2) % n2)]
        };
        let updated: Vec<Vec<f64>> = (0..n1)
            .into_par_iter()
            .map(|i1| {
                let ds = &snapshot[i1 * n..(i1 + 1) * n];
                (0..n)
                    .map(|t| {
                        let mut best = ds[t];
                        for y in 0..n {
                            let c = ds[y] + lookup(y, t);
                            if c < best {
                                best = c;
                            }
                        }
                        best
                    })
                    .collect()
            })
            .collect();
        let new: Vec<f64> = updated.into_iter().flatten().collect();
        let moved = new
            .iter()
            .zip(&snapshot)
            .fold(0.0_f64, |m, (a, b)| m.max(b - a));
        table.dist = new;
        if moved <= 0.0 {
            break;
        }
    }
    table.closed = true;
}

/// Least-squares slope of `log d` against `log |dx2|` for targets on the
/// `x2`-axis through `source` at the given offsets (in nodes).
pub fn x2_axis_exponent(table: &CCDistanceTable, offsets: &[usize]) -> Result<f64> {
    let Source::Node(src) = table.source else {
        return Err(Error::InvalidInput("exponent fit needs a single-source table".into()));
    };
    let g = &table.grid;
    let (i1, i2) = g.coords(src);
    let pts: Vec<(f64, f64)> = offsets
        .iter()
        .map(|&k| {
            let b = g.index(i1, (i2 + k) % g.n2());
            ((k as f64 * g.h2()).ln(), table.dist[b].ln())
        })
        .collect();
    crate::stats::linear_fit(&pts).map(|(slope, _)| slope)
}

/// Fitted constants of the comparison `C^-1 d_T <= d_cc <= C d_T^(1/2)`:
/// returns `(lower, upper)` with `lower = max d_T / d_cc` and
/// `upper = max d_cc / d_T^(1/2)` over all distinct pairs.
pub fn comparison_constants(table: &CCDistanceTable) -> (f64, f64) {
    let g = &table.grid;
    let n = g.len();
    let sources: Vec<usize> = match table.source {
        Source::Node(s) => vec![s],
        Source::AllPairs => (0..g.n1()).map(|i1| g.index(i1, 0)).collect(),
    };
    let mut lower = 0.0_f64;
    let mut upper = 0.0_f64;
    for &s in &sources {
        for b in 0..n {
            if b == s {
                continue;
            }
            let dt = g.torus_distance(s, b);
            let dc = table.distance(s, b);
            lower = lower.max(dt / dc);
            upper = upper.max(dc / dt.sqrt());
        }
    }
    (lower, upper)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Profile;

    #[test]
    fn source_is_zero_and_x1_axis_is_flat() {
        let g = Arc::new(TorusGrid::new(32, 32, Profile::SinProfile).unwrap());
        let src = g.index(3, 5);
        let t = cc_sweep(&g, src).unwrap();
        assert_eq!(t.distance(src, src), 0.0);
        for k in 1..16 {
            let b = g.index(3 + k, 5);
            let exact = crate::grid::periodic_gap(k as f64 / 32.0);
            assert!((t.distance(src, b) - exact).abs() <= 2.0 * g.h1(), "k={k}");
        }
    }

    #[test]
    fn degenerate_row_needs_detour() {
        // on the row where a vanishes, moving along x2 is only possible by leaving the row
        let g = Arc::new(TorusGrid::new(32, 32, Profile::SinProfile).unwrap());
        let src = g.index(0, 0);
        let t = cc_sweep(&g, src).unwrap();
        let along = t.distance(src, g.index(0, 4));
        let across = t.distance(src, g.index(8, 4));
        assert!(along > 0.0 && across > 0.0);
        assert!(along > g.torus_distance(src, g.index(0, 4)));
    }

    #[test]
    fn all_pairs_table_is_a_metric() {
        let g = Arc::new(TorusGrid::new(8, 8, Profile::SinProfile).unwrap());
        let t = cc_all_pairs(&g).unwrap();
        assert!(t.is_metric_closed());
        let n = g.len();
        for a in 0..n {
            assert_eq!(t.distance(a, a), 0.0);
            for b in 0..n {
                assert!((t.distance(a, b) - t.distance(b, a)).abs() < 1e-12);
                for c in (0..n).step_by(7) {
                    assert!(t.distance(a, b) <= t.distance(a, c) + t.distance(c, b) + 1e-6);
                }
            }
        }
    }
}
