//! Exact discrete optimal transport between two finite distributions.
//!
//! Solved as a min-cost flow on the bipartite transport network with
//! successive shortest augmenting paths (Bellman-Ford on the residual graph).
//! Supports here are tiny (random-walk neighborhoods), so the cubic-ish cost is
//! irrelevant while the answer is an exact vertex of the transport polytope.

use crate::error::{Error, Result};

/// Masses below this are treated as exhausted.
const MASS_EPS: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub cost: f64,
    /// `flow[k][l]`: mass moved from supply point `k` to demand point `l`.
    pub flow: Vec<Vec<f64>>,
}

/// Minimum-cost coupling of `supply` and `demand` under `cost[k][l]`.
///
/// Both marginals must be non-negative with equal totals (to 1e-9).
pub fn solve(supply: &[f64], demand: &[f64], cost: &[Vec<f64>]) -> Result<TransportPlan> {
    let m = supply.len();
    let n = demand.len();
    if cost.len() != m || cost.iter().any(|row| row.len() != n) {
        return Err(Error::DimensionMismatch(format!(
            "cost matrix must be {m}x{n}"
        )));
    }
    if supply.iter().chain(demand).any(|&x| !(x >= 0.0 && x.is_finite())) {
        return Err(Error::Transport("marginals must be finite and non-negative".into()));
    }
    if cost.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::Transport("non-finite ground cost".into()));
    }
    let total_s: f64 = supply.iter().sum();
    let total_d: f64 = demand.iter().sum();
    if (total_s - total_d).abs() > 1e-9 {
        return Err(Error::Transport(format!(
            "unbalanced marginals: {total_s} vs {total_d}"
        )));
    }

    let mut left = supply.to_vec();
    let mut right = demand.to_vec();
    let mut flow = vec![vec![0.0; n]; m];

    // Residual nodes: 0..m supply points, m..m+n demand points. The virtual
    // source/sink arcs are handled implicitly through `left` / `right`.
    let max_iter = 4 * (m + n + 1) * (m + n + 1);
    for _ in 0..max_iter {
        if left.iter().all(|&x| x <= MASS_EPS) || right.iter().all(|&x| x <= MASS_EPS) {
            let total = flow
                .iter()
                .zip(cost)
                .map(|(f, c)| f.iter().zip(c).map(|(a, b)| a * b).sum::<f64>())
                .sum();
            return Ok(TransportPlan { cost: total, flow });
        }
        let (dist, pred) = bellman_ford(&left, &flow, cost, m, n);
        // Cheapest reachable demand point that still needs mass.
        let target = (0..n)
            .filter(|&l| right[l] > MASS_EPS && dist[m + l].is_finite())
            .min_by(|&a, &b| dist[m + a].total_cmp(&dist[m + b]));
        let Some(target) = target else {
            return Err(Error::Transport("no augmenting path".into()));
        };

        // Walk back to find the bottleneck.
        let mut bottleneck = right[target];
        let mut v = m + target;
        let mut path = Vec::new();
        loop {
            let u = pred[v].expect("path predecessor");
            path.push((u, v));
            if u >= m {
                // backward arc demand u-m -> supply v
                bottleneck = bottleneck.min(flow[v][u - m]);
            }
            if u < m && pred[u].is_none() {
                bottleneck = bottleneck.min(left[u]);
                break;
            }
            v = u;
        }
        if !(bottleneck > 0.0) {
            return Err(Error::Transport("degenerate augmentation".into()));
        }
        for &(u, v) in &path {
            if u < m {
                flow[u][v - m] += bottleneck;
            } else {
                flow[v][u - m] -= bottleneck;
                if flow[v][u - m] < MASS_EPS {
                    flow[v][u - m] = 0.0;
                }
            }
        }
        let root = path.last().expect("non-empty path").0;
        left[root] -= bottleneck;
        right[target] -= bottleneck;
    }
    Err(Error::Transport("iteration limit reached".into()))
}

fn is_root(u: usize, left: &[f64]) -> bool {
    left[u] > MASS_EPS
}

/// Shortest residual distances from the virtual source. Supply points with
/// remaining mass start at distance zero.
fn bellman_ford(
    left: &[f64],
    flow: &[Vec<f64>],
    cost: &[Vec<f64>],
    m: usize,
    n: usize,
) -> (Vec<f64>, Vec<Option<usize>>) {
    let mut dist = vec![f64::INFINITY; m + n];
    let mut pred = vec![None; m + n];
    for k in 0..m {
        if is_root(k, left) {
            dist[k] = 0.0;
        }
    }
    for _ in 0..(m + n) {
        let mut changed = false;
        for k in 0..m {
            if !dist[k].is_finite() {
                continue;
            }
            for l in 0..n {
                let d = dist[k] + cost[k][l];
                if d < dist[m + l] - 1e-12 {
                    dist[m + l] = d;
                    pred[m + l] = Some(k);
                    changed = true;
                }
            }
        }
        for l in 0..n {
            if !dist[m + l].is_finite() {
                continue;
            }
            for k in 0..m {
                if flow[k][l] > 0.0 {
                    let d = dist[m + l] - cost[k][l];
                    if d < dist[k] - 1e-12 {
                        dist[k] = d;
                        pred[k] = Some(m + l);
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
    (dist, pred)
}
