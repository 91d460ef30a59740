//! Kantorovich-Rubinstein distance between grid densities with the
//! Carnot-Caratheodory distance as ground cost.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::metric::eikonal::CCDistanceTable;

/// Largest grid (in nodes) the exact solver accepts.
pub const LP_MAX_NODES: usize = 32 * 32;
pub const SINKHORN_EPS_START: f64 = 1e-1;
pub const SINKHORN_EPS_FINAL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransportMethod {
    ExactLP,
    Entropic,
}

impl fmt::Display for TransportMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TransportMethod::ExactLP => "ExactLP",
            TransportMethod::Entropic => "Entropic",
        })
    }
}

impl FromStr for TransportMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ExactLP" | "lp" => Ok(TransportMethod::ExactLP),
            "Entropic" | "sinkhorn" => Ok(TransportMethod::Entropic),
            other => Err(Error::InvalidInput(format!("unknown transport method `{other}`"))),
        }
    }
}

/// Options for [`d1_distance`].
#[derive(Debug, Clone, Copy)]
pub struct TransportOptions {
    pub method: TransportMethod,
    pub lp_cap: usize,
    pub eps_final: f64,
}

impl Default for TransportOptions {
    fn default() -> Self {
        TransportOptions {
            method: TransportMethod::ExactLP,
            lp_cap: LP_MAX_NODES,
            eps_final: SINKHORN_EPS_FINAL,
        }
    }
}

impl TransportOptions {
    pub fn exact() -> Self {
        Self::default()
    }

    pub fn entropic() -> Self {
        TransportOptions {
            method: TransportMethod::Entropic,
            ..Self::default()
        }
    }
}

/// A coupling of two grid measures. `plan[i * n + j]` is the mass moved from
/// node `i` to node `j`.
#[derive(Debug, Clone)]
pub struct TransportPlan {
    n: usize,
    plan: Vec<f64>,
    cost: f64,
    method: TransportMethod,
    potential: Option<ScalarField>,
}

impl TransportPlan {
    pub fn cost(&self) -> f64 {
        self.cost
    }

    pub fn method(&self) -> TransportMethod {
        self.method
    }

    pub fn nodes(&self) -> usize {
        self.n
    }

    pub fn mass(&self, src: usize, dst: usize) -> f64 {
        self.plan[src * self.n + dst]
    }

    /// A 1-Lipschitz Kantorovich potential certifying the cost (exact solver only).
    pub fn potential(&self) -> Option<&ScalarField> {
        self.potential.as_ref()
    }

    /// Row and column sums of the plan (cell masses, not densities).
    pub fn marginals(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.n;
        let mut rows = vec![0.0; n];
        let mut cols = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                let p = self.plan[i * n + j];
                rows[i] += p;
                cols[j] += p;
            }
        }
        (rows, cols)
    }

    /// Largest deviation of the plan marginals from the two densities.
    pub fn marginal_error(&self, m1: &ScalarField, m2: &ScalarField) -> f64 {
        let area = m1.grid().cell_area();
        let (rows, cols) = self.marginals();
        let r = rows
            .iter()
            .zip(m1.values())
            .map(|(p, m)| (p / area - m).abs());
        let c = cols
            .iter()
            .zip(m2.values())
            .map(|(p, m)| (p / area - m).abs());
        r.chain(c).fold(0.0, f64::max)
    }

    /// Sparse CSV `src,dst,mass` of the nonzero entries.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "src,dst,mass")?;
        for i in 0..self.n {
            for j in 0..self.n {
                let p = self.plan[i * self.n + j];
                if p > 0.0 {
                    writeln!(w, "{i},{j},{}", crate::field::fmt_f64(p))?;
                }
            }
        }
        Ok(())
    }
}

fn check_inputs(m1: &ScalarField, m2: &ScalarField, table: &CCDistanceTable) -> Result<()> {
    m1.grid().ensure_same(m2.grid())?;
    m1.grid().ensure_same(table.grid())?;
    if !table.covers_all_pairs() {
        return Err(Error::InvalidInput("transport needs an all-pairs distance table".into()));
    }
    m1.check_density()?;
    m2.check_density()?;
    Ok(())
}

/// `d_1(m1, m2)` with the ground cost read from an all-pairs table.
pub fn d1_distance(
    m1: &ScalarField,
    m2: &ScalarField,
    table: &CCDistanceTable,
    opts: TransportOptions,
) -> Result<TransportPlan> {
    check_inputs(m1, m2, table)?;
    let n = m1.grid().len();
    let area = m1.grid().cell_area();
    let a: Vec<f64> = m1.values().iter().map(|v| v * area).collect();
    let mut b: Vec<f64> = m2.values().iter().map(|v| v * area).collect();
    let (sa, sb) = (a.iter().sum::<f64>(), b.iter().sum::<f64>());
    b.iter_mut().for_each(|v| *v *= sa / sb);
    let cost: Vec<f64> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| table.distance(i, j))
        .collect();
    match opts.method {
        TransportMethod::ExactLP => {
            if n > opts.lp_cap {
                return Err(Error::Budget(format!(
                    "exact transport limited to {} nodes, grid has {n}; use Entropic",
                    opts.lp_cap
                )));
            }
            let (plan, pot) = shortest_path_flow(&a, &b, &cost);
            let total = plan.iter().zip(&cost).map(|(p, c)| p * c).sum();
            let potential = kantorovich_potential(&pot[n..], &cost, n);
            Ok(TransportPlan {
                n,
                plan,
                cost: total,
                method: TransportMethod::ExactLP,
                potential: Some(ScalarField::new(m1.grid().clone(), potential)?),
            })
        }
        TransportMethod::Entropic => {
            if !(opts.eps_final > 0.0 && opts.eps_final <= SINKHORN_EPS_START) {
                return Err(Error::InvalidInput(format!(
                    "sinkhorn final epsilon {} outside (0, {SINKHORN_EPS_START}]",
                    opts.eps_final
                )));
            }
            let plan = round_to_marginals(sinkhorn(&a, &b, &cost, opts.eps_final), &a, &b);
            let total = plan.iter().zip(&cost).map(|(p, c)| p * c).sum();
            Ok(TransportPlan {
                n,
                plan,
                cost: total,
                method: TransportMethod::Entropic,
                potential: None,
            })
        }
    }
}

/// `d_1(m1, m2) - int phi d(m1 - m2)` after checking that `phi` is
/// 1-Lipschitz for the table within `1e-6`.
pub fn d1_dual_gap(
    m1: &ScalarField,
    m2: &ScalarField,
    potential: &ScalarField,
    table: &CCDistanceTable,
) -> Result<f64> {
    check_inputs(m1, m2, table)?;
    m1.grid().ensure_same(potential.grid())?;
    let n = m1.grid().len();
    let phi = potential.values();
    for i in 0..n {
        for j in (i + 1)..n {
            let d = table.distance(i, j);
            let diff = (phi[i] - phi[j]).abs();
            if diff > d + 1e-6 {
                return Err(Error::NotLipschitz {
                    a: i,
                    b: j,
                    ratio: diff / d,
                });
            }
        }
    }
    let d1 = d1_distance(m1, m2, table, TransportOptions::exact())?.cost();
    Ok(d1 - potential.pairing(&m1.sub(m2)))
}

/// `phi(x) = min_j (c(x, j) + psi_j)`: the c-transform of the sink
/// potentials, 1-Lipschitz whenever the cost is a metric.
fn kantorovich_potential(sink: &[f64], cost: &[f64], n: usize) -> Vec<f64> {
    (0..n)
        .map(|x| {
            (0..n)
                .map(|j| cost[x * n + j] - sink[j])
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

#[derive(Copy, Clone, PartialEq)]
struct Item {
    d: f64,
    node: usize,
}

impl Eq for Item {}

impl Ord for Item {
    fn cmp(&self, other: &Self) -> Ordering {
        other.d.total_cmp(&self.d).then_with(|| self.node.cmp(&other.node))
    }
}

impl PartialOrd for Item {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Successive shortest paths on the bipartite transportation network with
/// node potentials. Nodes `0..n` are sources, `n..2n` sinks. Returns the
/// optimal plan and the final potentials.
fn shortest_path_flow(a: &[f64], b: &[f64], cost: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = a.len();
    let total: f64 = a.iter().sum();
    let tiny = 1e-15 * total.max(1e-300);
    let mut flow = vec![0.0; n * n];
    let mut supply = a.to_vec();
    let mut demand = b.to_vec();
    // sources carrying positive flow into each sink
    let mut inflow: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut pot = vec![0.0; 2 * n];
    for j in 0..n {
        pot[n + j] = (0..n).map(|i| cost[i * n + j]).fold(f64::INFINITY, f64::min);
    }
    let mut dist = vec![f64::INFINITY; 2 * n];
    let mut prev = vec![usize::MAX; 2 * n];
    let mut done = vec![false; 2 * n];
    let mut touched: Vec<usize> = Vec::with_capacity(2 * n);
    let mut heap = BinaryHeap::new();
    loop {
        if supply.iter().all(|&s| s <= tiny) {
            break;
        }
        for &v in &touched {
            dist[v] = f64::INFINITY;
            prev[v] = usize::MAX;
            done[v] = false;
        }
        touched.clear();
        heap.clear();
        for i in 0..n {
            if supply[i] > tiny {
                dist[i] = 0.0;
                touched.push(i);
                heap.push(Item { d: 0.0, node: i });
            }
        }
        let mut target = None;
        while let Some(Item { d, node }) = heap.pop() {
            if done[node] || d > dist[node] {
                continue;
            }
            done[node] = true;
            if node >= n {
                let j = node - n;
                if demand[j] > tiny {
                    target = Some(node);
                    break;
                }
                for &i in &inflow[j] {
                    let r = (pot[node] - pot[i] - cost[i * n + j]).max(0.0);
                    let nd = d + r;
                    if nd < dist[i] {
                        if dist[i].is_infinite() {
                            touched.push(i);
                        }
                        dist[i] = nd;
                        prev[i] = node;
                        heap.push(Item { d: nd, node: i });
                    }
                }
            } else {
                let row = &cost[node * n..(node + 1) * n];
                for j in 0..n {
                    let v = n + j;
                    if done[v] {
                        continue;
                    }
                    let r = (row[j] + pot[node] - pot[v]).max(0.0);
                    let nd = d + r;
                    if nd < dist[v] {
                        if dist[v].is_infinite() {
                            touched.push(v);
                        }
                        dist[v] = nd;
                        prev[v] = node;
                        heap.push(Item { d: nd, node: v });
                    }
                }
            }
        }
        let Some(t) = target else { break };
        let reach = dist[t];
        for &v in &touched {
            if done[v] {
                pot[v] += dist[v] - reach;
            }
        }
        // bottleneck along the path
        let mut amount = demand[t - n];
        let mut v = t;
        loop {
            let u = prev[v];
            if u == usize::MAX {
                amount = amount.min(supply[v]);
                break;
            }
            if u >= n {
                amount = amount.min(flow[v * n + (u - n)]);
            }
            v = u;
        }
        let mut v = t;
        loop {
            let u = prev[v];
            if u == usize::MAX {
                supply[v] -= amount;
                break;
            }
            if u < n {
                let j = v - n;
                let f = &mut flow[u * n + j];
                if *f == 0.0 {
                    inflow[j].push(u);
                }
                *f += amount;
            } else {
                let j = u - n;
                let f = &mut flow[v * n + j];
                *f -= amount;
                if *f <= tiny * 1e-3 {
                    *f = 0.0;
                    inflow[j].retain(|&s| s != v);
                }
            }
            v = u;
        }
        demand[t - n] -= amount;
    }
    (flow, pot)
}

fn log_sum_exp(it: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = it.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + it.map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Iteration cap per regularization level.
const SINKHORN_MAX_ITER: usize = 5000;

/// Scalings leaving `[e^-50, e^50]` are absorbed into the potentials.
const SINKHORN_ABSORB: f64 = 50.0;

/// Sinkhorn scaling on the stabilized Gibbs kernel
/// `exp((f_i + g_j - c_ij) / eps)`, with the scalings absorbed into the
/// potentials `(f, g)` when they grow and at the end of each level, and
/// geometric annealing of the regularization.
fn sinkhorn(a: &[f64], b: &[f64], cost: &[f64], eps_final: f64) -> Vec<f64> {
    let n = a.len();
    let la: Vec<f64> = a.iter().map(|v| v.max(1e-300).ln()).collect();
    let lb: Vec<f64> = b.iter().map(|v| v.max(1e-300).ln()).collect();
    let cost_t: Vec<f64> = (0..n * n).map(|k| cost[(k % n) * n + k / n]).collect();
    let gibbs = |f: &[f64], g: &[f64], eps: f64| -> Vec<f64> {
        (0..n * n).map(|k| ((f[k / n] + g[k % n] - cost[k]) / eps).exp()).collect()
    };
    let log_update = |pot: &mut [f64], other: &[f64], c: &[f64], logm: &[f64], eps: f64| {
        for (i, p) in pot.iter_mut().enumerate() {
            let row = &c[i * n..(i + 1) * n];
            *p = eps * (logm[i] - log_sum_exp(other.iter().zip(row).map(|(o, c)| (o - c) / eps)));
        }
    };
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; n];
    let mut eps = SINKHORN_EPS_START;
    loop {
        let tol = if eps <= eps_final { 1e-9 } else { 1e-6 };
        let mut k = gibbs(&f, &g, eps);
        let mut u = vec![1.0; n];
        let mut v = vec![1.0; n];
        let mut col = vec![0.0; n];
        for it in 0..SINKHORN_MAX_ITER {
            for i in 0..n {
                let row = &k[i * n..(i + 1) * n];
                u[i] = a[i] / row.iter().zip(&v).map(|(x, y)| x * y).sum::<f64>();
            }
            col.iter_mut().for_each(|c| *c = 0.0);
            for i in 0..n {
                let ui = u[i];
                for (c, x) in col.iter_mut().zip(&k[i * n..(i + 1) * n]) {
                    *c += x * ui;
                }
            }
            for j in 0..n {
                v[j] = b[j] / col[j];
            }
            let finite = u.iter().chain(&v).all(|x| x.is_finite() && *x > 0.0);
            if !finite {
                // an underflowed row or column: one log-domain sweep repairs the potentials
                log_update(&mut f, &g, cost, &la, eps);
                log_update(&mut g, &f, &cost_t, &lb, eps);
                k = gibbs(&f, &g, eps);
                u.iter_mut().chain(v.iter_mut()).for_each(|x| *x = 1.0);
                continue;
            }
            if u.iter().chain(&v).any(|x| x.ln().abs() > SINKHORN_ABSORB) {
                f.iter_mut().zip(&u).for_each(|(p, x)| *p += eps * x.ln());
                g.iter_mut().zip(&v).for_each(|(p, x)| *p += eps * x.ln());
                k = gibbs(&f, &g, eps);
                u.iter_mut().chain(v.iter_mut()).for_each(|x| *x = 1.0);
                continue;
            }
            if it % 10 != 9 {
                continue;
            }
            // after the v update the columns are exact; check the rows
            let err: f64 = (0..n)
                .map(|i| {
                    let row = &k[i * n..(i + 1) * n];
                    (u[i] * row.iter().zip(&v).map(|(x, y)| x * y).sum::<f64>() - a[i]).abs()
                })
                .sum();
            if err < tol {
                break;
            }
        }
        f.iter_mut().zip(&u).for_each(|(p, x)| *p += eps * x.ln());
        g.iter_mut().zip(&v).for_each(|(p, x)| *p += eps * x.ln());
        if eps <= eps_final {
            break;
        }
        eps = (eps * 0.5).max(eps_final);
    }
    gibbs(&f, &g, eps)
}

/// Projects a nonnegative matrix onto the transport polytope of `(a, b)`:
/// scale rows and columns down to their targets, then distribute the
/// remaining deficits as a rank-one correction.
fn round_to_marginals(mut plan: Vec<f64>, a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = a.len();
    for i in 0..n {
        let s: f64 = plan[i * n..(i + 1) * n].iter().sum();
        if s > a[i] {
            let x = a[i] / s;
            plan[i * n..(i + 1) * n].iter_mut().for_each(|p| *p *= x);
        }
    }
    for j in 0..n {
        let s: f64 = (0..n).map(|i| plan[i * n + j]).sum();
        if s > b[j] {
            let y = b[j] / s;
            (0..n).for_each(|i| plan[i * n + j] *= y);
        }
    }
    let ea: Vec<f64> = (0..n)
        .map(|i| (a[i] - plan[i * n..(i + 1) * n].iter().sum::<f64>()).max(0.0))
        .collect();
    let eb: Vec<f64> = (0..n)
        .map(|j| (b[j] - (0..n).map(|i| plan[i * n + j]).sum::<f64>()).max(0.0))
        .collect();
    let mass: f64 = ea.iter().sum();
    if mass > 0.0 {
        for i in 0..n {
            for j in 0..n {
                plan[i * n + j] += ea[i] * eb[j] / mass;
            }
        }
    }
    plan
}
