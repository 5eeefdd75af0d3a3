//! Ollivier-Ricci curvature with exact Wasserstein-1 transport, node-level
//! aggregation and percentile bottleneck selection.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::graph::MeshGraph;
use crate::transport;

/// One-step random-walk distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkDistribution {
    pub support: Vec<(usize, f64)>,
}

impl WalkDistribution {
    /// Validates positivity, distinct ids and unit total mass (1e-12).
    pub fn new(support: Vec<(usize, f64)>) -> Result<Self> {
        let mut ids: Vec<usize> = support.iter().map(|&(i, _)| i).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invariant("walk distribution", "repeated node id"));
        }
        if support.iter().any(|&(_, p)| !(p > 0.0 && p.is_finite())) {
            return Err(Error::invariant("walk distribution", "probabilities must be positive"));
        }
        let total: f64 = support.iter().map(|&(_, p)| p).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invariant("walk distribution", format!("total mass {total}")));
        }
        Ok(WalkDistribution { support })
    }

    pub fn probability(&self, node: usize) -> f64 {
        self.support
            .iter()
            .find(|&&(i, _)| i == node)
            .map_or(0.0, |&(_, p)| p)
    }
}

/// Uniform distribution over the neighbors of `i`; no mass stays on `i`.
pub fn walk_distribution(graph: &MeshGraph, i: usize) -> Result<WalkDistribution> {
    graph.check_node(i)?;
    let deg = graph.degree(i);
    if deg == 0 {
        return Err(Error::IsolatedNode(i));
    }
    let p = 1.0 / deg as f64;
    Ok(WalkDistribution {
        support: graph.neighbors(i).iter().map(|&j| (j, p)).collect(),
    })
}

/// Exact Wasserstein-1 distance with hop distance as ground cost.
pub fn wasserstein1(graph: &MeshGraph, p: &WalkDistribution, q: &WalkDistribution) -> Result<f64> {
    let mut cost = Vec::with_capacity(p.support.len());
    for &(a, _) in &p.support {
        graph.check_node(a)?;
        let dist = graph.hop_distances(a, None);
        let mut row = Vec::with_capacity(q.support.len());
        for &(b, _) in &q.support {
            graph.check_node(b)?;
            match dist[b] {
                Some(d) => row.push(d as f64),
                None => return Err(Error::InfiniteDistance(a, b)),
            }
        }
        cost.push(row);
    }
    let supply: Vec<f64> = p.support.iter().map(|&(_, m)| m).collect();
    let demand: Vec<f64> = q.support.iter().map(|&(_, m)| m).collect();
    Ok(transport::solve(&supply, &demand, &cost)?.cost)
}

/// `κ(i, j) = 1 − W1(P_i, P_j)` for an edge `(i, j)` (hop distance 1).
pub fn edge_curvature(graph: &MeshGraph, i: usize, j: usize) -> Result<f64> {
    graph.check_node(i)?;
    graph.check_node(j)?;
    if !graph.has_edge(i, j) {
        return Err(Error::NotAnEdge(i, j));
    }
    // Solve in a fixed orientation so κ(i, j) and κ(j, i) agree bitwise.
    let (a, b) = (i.min(j), i.max(j));
    let pa = walk_distribution(graph, a)?;
    let pb = walk_distribution(graph, b)?;
    Ok(1.0 - wasserstein1(graph, &pa, &pb)?)
}

/// Edge curvatures keyed by `(min, max)` endpoint pair.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EdgeCurvatures(BTreeMap<(usize, usize), f64>);

impl EdgeCurvatures {
    fn key(i: usize, j: usize) -> (usize, usize) {
        (i.min(j), i.max(j))
    }

    pub fn insert(&mut self, i: usize, j: usize, kappa: f64) {
        self.0.insert(Self::key(i, j), kappa);
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.0.get(&Self::key(i, j)).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
        self.0.iter().map(|(&k, &v)| (k, v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Curvature of every undirected edge. The computation runs in the `(i, j)`
/// orientation with `i < j`; the value is symmetric.
pub fn all_edge_curvatures(graph: &MeshGraph) -> Result<EdgeCurvatures> {
    let mut out = EdgeCurvatures::default();
    for (i, j) in graph.undirected_edges() {
        out.insert(i, j, edge_curvature(graph, i, j)?);
    }
    Ok(out)
}

/// Mean curvature over the edges incident to `i`.
pub fn node_curvature(graph: &MeshGraph, i: usize, kappa: &EdgeCurvatures) -> Result<f64> {
    graph.check_node(i)?;
    let nb = graph.neighbors(i);
    if nb.is_empty() {
        return Err(Error::IsolatedNode(i));
    }
    let mut sum = 0.0;
    for &j in nb {
        sum += kappa.get(i, j).ok_or_else(|| {
            Error::invariant("edge curvature map", format!("missing incident edge ({i}, {j})"))
        })?;
    }
    Ok(sum / nb.len() as f64)
}

/// `a`-th percentile of `values` by linear interpolation between order
/// statistics at index `(a / 100)(n − 1)` of the ascending sort.
pub fn percentile(values: &[f64], a: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Config("percentile of an empty array".into()));
    }
    if !(a > 0.0 && a <= 100.0) {
        return Err(Error::Config(format!("percentile {a} outside (0, 100]")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("curvature values".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = a / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Ok(sorted[lo] + frac * (sorted[hi] - sorted[lo]))
}

/// Nodes whose curvature is at most the `a`-th percentile, ascending by id.
/// Ties at the threshold are all included.
pub fn bottleneck_nodes(gamma: &[f64], a: f64) -> Result<Vec<usize>> {
    let threshold = percentile(gamma, a)?;
    Ok(gamma
        .iter()
        .enumerate()
        .filter(|&(_, &g)| g <= threshold)
        .map(|(i, _)| i)
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureReport {
    pub edge_kappa: EdgeCurvatures,
    pub node_gamma: Vec<f64>,
    pub bottleneck_set: Vec<usize>,
    pub percentile_a: f64,
}

impl CurvatureReport {
    pub fn compute(graph: &MeshGraph, percentile_a: f64) -> Result<Self> {
        let edge_kappa = all_edge_curvatures(graph)?;
        let node_gamma = (0..graph.node_count())
            .map(|i| node_curvature(graph, i, &edge_kappa))
            .collect::<Result<Vec<_>>>()?;
        let bottleneck_set = bottleneck_nodes(&node_gamma, percentile_a)?;
        Ok(CurvatureReport {
            edge_kappa,
            node_gamma,
            bottleneck_set,
            percentile_a,
        })
    }

    /// One table: `edge` rows carry `κ_ij`, `node` rows carry `γ_i`, and
    /// `bottleneck` rows repeat `γ_i` for the selected nodes.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("record,i,j,value\n");
        for ((i, j), k) in self.edge_kappa.iter() {
            out.push_str(&format!("edge,{i},{j},{k}\n"));
        }
        for (i, g) in self.node_gamma.iter().enumerate() {
            out.push_str(&format!("node,{i},,{g}\n"));
        }
        for &b in &self.bottleneck_set {
            out.push_str(&format!("bottleneck,{b},,{}\n", self.node_gamma[b]));
        }
        out
    }
}
