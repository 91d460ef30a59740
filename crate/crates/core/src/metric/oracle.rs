//! Brute-force reference for the Carnot-Caratheodory distance: Dijkstra on
//! the 8-neighbor grid graph under the regularized Riemannian metric
//! `diag(1, 1 / (a^2 + eps^2))`, extrapolated in `eps`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::grid::TorusGrid;

#[derive(Copy, Clone, PartialEq)]
struct Entry {
    dist: f64,
    node: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| self.node.cmp(&other.node))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

const NEIGHBORS: [(isize, isize); 8] = [
    (1, 0),
    (-1, 0),
    (0, 1),
    (0, -1),
    (1, 1),
    (1, -1),
    (-1, 1),
    (-1, -1),
];

/// Single-source Dijkstra distances at one regularization.
pub fn regularized_distances(grid: &TorusGrid, source: usize, epsilon: f64) -> Vec<f64> {
    let n = grid.len();
    let (h1, h2) = (grid.h1(), grid.h2());
    let profile = grid.profile();
    let mut dist = vec![f64::INFINITY; n];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(Entry { dist: 0.0, node: source });
    while let Some(Entry { dist: d, node }) = heap.pop() {
        if d > dist[node] {
            continue;
        }
        let (i1, i2) = grid.coords(node);
        for (di1, di2) in NEIGHBORS {
            let j1 = grid.wrap1(i1 as isize + di1);
            let j2 = grid.wrap2(i2 as isize + di2);
            let mid = (i1 as f64 + 0.5 * di1 as f64) * h1;
            let a = profile.coefficient(mid);
            let dx1 = di1 as f64 * h1;
            let dx2 = di2 as f64 * h2;
            let w = (dx1 * dx1 + dx2 * dx2 / (a * a + epsilon * epsilon)).sqrt();
            let next = grid.index(j1, j2);
            let nd = d + w;
            if nd < dist[next] {
                dist[next] = nd;
                heap.push(Entry { dist: nd, node: next });
            }
        }
    }
    dist
}

/// Richardson-extrapolated distances `2 d(eps / 2) - d(eps)` from `source`.
pub fn cc_oracle_from(grid: &TorusGrid, source: usize, epsilon: f64) -> Result<Vec<f64>> {
    if !(epsilon > 0.0 && epsilon <= 0.1) {
        return Err(Error::InvalidInput(format!("epsilon {epsilon} outside (0, 0.1]")));
    }
    let coarse = regularized_distances(grid, source, epsilon);
    let fine = regularized_distances(grid, source, 0.5 * epsilon);
    Ok(coarse
        .iter()
        .zip(&fine)
        .map(|(c, f)| (2.0 * f - c).max(0.0))
        .collect())
}

pub fn cc_oracle(grid: &TorusGrid, source: usize, target: usize, epsilon: f64) -> Result<f64> {
    Ok(cc_oracle_from(grid, source, epsilon)?[target])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Profile;

    #[test]
    fn zero_at_source_and_symmetric() {
        let g = TorusGrid::new(16, 16, Profile::SinProfile).unwrap();
        let (a, b) = (g.index(2, 3), g.index(11, 9));
        assert_eq!(cc_oracle(&g, a, a, 0.05).unwrap(), 0.0);
        let ab = cc_oracle(&g, a, b, 0.05).unwrap();
        let ba = cc_oracle(&g, b, a, 0.05).unwrap();
        assert!((ab - ba).abs() < 1e-12, "{ab} vs {ba}");
    }

    #[test]
    fn rejects_large_epsilon() {
        let g = TorusGrid::new(8, 8, Profile::SinProfile).unwrap();
        assert!(cc_oracle(&g, 0, 1, 0.5).is_err());
    }
}
