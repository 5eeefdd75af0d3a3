//! Sensitivity of node and edge embeddings to distant inputs.
//!
//! A scalar-width processor runs the `Â`-weighted scheme
//!
//! ```text
//! e_ij ← φ(a·e_ij + b·h_i + c·h_j + d)
//! h_i  ← φ(p·h_i + q·Σ_j Â_ij e_ij + w)
//! ```
//!
//! over every mesh edge plus a self-loop per node, starting from `h = x` and
//! a constant initial edge state. Jacobians `∂h_i/∂x_s` and `∂e_ij/∂x_s` are
//! measured by central differences and, exactly, by forward-mode
//! propagation of the derivative along the recursion. They are compared with
//! `(α_e β_h)^r (Â^r)_is` and `α_e^{r−1} β_h^r (Â^{r−1})_js`, where
//! `α_e = |q|` and `β_h = |c|` bound the partials of the update maps.

use std::collections::BTreeSet;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{DenseMatrix, MeshGraph};

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-6;
/// Zero-pattern tolerance.
pub const TOL_ZERO: f64 = 1e-8;
/// Bound tolerance for exact (forward-mode) Jacobians.
pub const TOL_BOUND_EXACT: f64 = 1e-9;
/// Bound tolerance for finite-difference Jacobians.
pub const TOL_BOUND_FD: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phi {
    Identity,
    Tanh,
}

impl Phi {
    fn apply(self, x: f64) -> (f64, f64) {
        match self {
            Phi::Identity => (x, 1.0),
            Phi::Tanh => {
                let y = x.tanh();
                (y, 1.0 - y * y)
            }
        }
    }
}

/// `f_E(e, h_i, h_j) = φ(a·e + b·h_i + c·h_j + d)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeCoeffs {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

/// `f_V(h, z) = φ(p·h + q·z + w)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeCoeffs {
    pub p: f64,
    pub q: f64,
    pub w: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisProcessor {
    pub edge: EdgeCoeffs,
    pub node: NodeCoeffs,
    pub phi: Phi,
    pub depth: usize,
    /// Initial state of every edge, including self-loops.
    pub edge_init: f64,
}

impl AnalysisProcessor {
    /// Bound on `|∂f_V/∂z|`. Exact for affine maps; `sup |tanh'| = 1` otherwise.
    pub fn alpha_e(&self) -> f64 {
        self.node.q.abs()
    }

    /// Bound on `|∂f_E/∂h_j|`.
    pub fn beta_h(&self) -> f64 {
        self.edge.c.abs()
    }

    pub fn with_depth(mut self, depth: usize) -> Self {
        self.depth = depth;
        self
    }

    fn validate(&self) -> Result<()> {
        let e = self.edge;
        let n = self.node;
        let all = [e.a, e.b, e.c, e.d, n.p, n.q, n.w, self.edge_init];
        if all.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite("analysis processor coefficient".into()))
        }
    }
}

/// Mesh edges plus self-loops, sorted, with their `Â` weights.
struct Scheme {
    a_hat: DenseMatrix,
    edges: Vec<(usize, usize)>,
}

impl Scheme {
    fn new(graph: &MeshGraph) -> Self {
        let mut edges = graph.edges().to_vec();
        edges.extend((0..graph.node_count()).map(|i| (i, i)));
        edges.sort_unstable();
        Scheme {
            a_hat: graph.normalized_adjacency(),
            edges,
        }
    }

    fn index(&self, i: usize, j: usize) -> Option<usize> {
        self.edges.binary_search(&(i, j)).ok()
    }
}

/// Final embeddings, and optionally their derivatives with respect to one
/// input.
struct Pass {
    h: Vec<f64>,
    e: Vec<f64>,
    dh: Vec<f64>,
    de: Vec<f64>,
}

fn propagate(ap: &AnalysisProcessor, scheme: &Scheme, x: &[f64], source: Option<usize>) -> Result<Pass> {
    let n = x.len();
    let m = scheme.edges.len();
    let mut h = x.to_vec();
    let mut dh = vec![0.0; n];
    if let Some(s) = source {
        dh[s] = 1.0;
    }
    let mut e = vec![ap.edge_init; m];
    let mut de = vec![0.0; m];
    let (ec, nc) = (ap.edge, ap.node);
    for layer in 0..ap.depth {
        let mut e_new = vec![0.0; m];
        let mut de_new = vec![0.0; m];
        for (k, &(i, j)) in scheme.edges.iter().enumerate() {
            let (y, slope) = ap.phi.apply(ec.a * e[k] + ec.b * h[i] + ec.c * h[j] + ec.d);
            e_new[k] = y;
            de_new[k] = slope * (ec.a * de[k] + ec.b * dh[i] + ec.c * dh[j]);
        }
        let mut z = vec![0.0; n];
        let mut dz = vec![0.0; n];
        for (k, &(i, j)) in scheme.edges.iter().enumerate() {
            let w = scheme.a_hat.get(i, j);
            z[i] += w * e_new[k];
            dz[i] += w * de_new[k];
        }
        let mut h_new = vec![0.0; n];
        let mut dh_new = vec![0.0; n];
        for i in 0..n {
            let (y, slope) = ap.phi.apply(nc.p * h[i] + nc.q * z[i] + nc.w);
            h_new[i] = y;
            dh_new[i] = slope * (nc.p * dh[i] + nc.q * dz[i]);
        }
        if h_new.iter().chain(&e_new).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("embedding at layer {}", layer + 1)));
        }
        h = h_new;
        dh = dh_new;
        e = e_new;
        de = de_new;
    }
    Ok(Pass { h, e, dh, de })
}

fn check_inputs(graph: &MeshGraph, x: &[f64], nodes: &[usize]) -> Result<()> {
    if x.len() != graph.node_count() {
        return Err(Error::DimensionMismatch(format!(
            "{} inputs for {} nodes",
            x.len(),
            graph.node_count()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("input feature".into()));
    }
    for &v in nodes {
        graph.check_node(v)?;
    }
    Ok(())
}

/// Central differences of both embeddings with respect to `x_s`.
fn finite_difference(ap: &AnalysisProcessor, scheme: &Scheme, x: &[f64], s: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut up = x.to_vec();
    up[s] += FD_STEP;
    let mut down = x.to_vec();
    down[s] -= FD_STEP;
    let hi = propagate(ap, scheme, &up, None)?;
    let lo = propagate(ap, scheme, &down, None)?;
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| (u - v) / (2.0 * FD_STEP)).collect();
    Ok((diff(&hi.h, &lo.h), diff(&hi.e, &lo.e)))
}

/// Nodes within `r` hops of `i`, including `i`.
pub fn receptive_field(graph: &MeshGraph, i: usize, r: usize) -> Result<BTreeSet<usize>> {
    Ok(graph.shortest_paths(i, Some(r))?.into_keys().collect())
}

/// `∂h_i/∂x_s` after `ap.depth` layers, by central differences.
pub fn jacobian_node(ap: &AnalysisProcessor, graph: &MeshGraph, x: &[f64], i: usize, s: usize) -> Result<f64> {
    ap.validate()?;
    check_inputs(graph, x, &[i, s])?;
    Ok(finite_difference(ap, &Scheme::new(graph), x, s)?.0[i])
}

/// `∂h_i/∂x_s` by forward-mode propagation.
pub fn jacobian_node_exact(ap: &AnalysisProcessor, graph: &MeshGraph, x: &[f64], i: usize, s: usize) -> Result<f64> {
    ap.validate()?;
    check_inputs(graph, x, &[i, s])?;
    Ok(propagate(ap, &Scheme::new(graph), x, Some(s))?.dh[i])
}

fn edge_index(graph: &MeshGraph, scheme: &Scheme, i: usize, j: usize) -> Result<usize> {
    if i == j || !graph.has_edge(i, j) {
        return Err(Error::NotAnEdge(i, j));
    }
    Ok(scheme.index(i, j).expect("mesh edge is in the scheme"))
}

/// `∂e_ij/∂x_s` after `ap.depth` layers, by central differences.
pub fn jacobian_edge(ap: &AnalysisProcessor, graph: &MeshGraph, x: &[f64], i: usize, j: usize, s: usize) -> Result<f64> {
    ap.validate()?;
    check_inputs(graph, x, &[i, j, s])?;
    let scheme = Scheme::new(graph);
    let k = edge_index(graph, &scheme, i, j)?;
    Ok(finite_difference(ap, &scheme, x, s)?.1[k])
}

/// `∂e_ij/∂x_s` by forward-mode propagation.
pub fn jacobian_edge_exact(ap: &AnalysisProcessor, graph: &MeshGraph, x: &[f64], i: usize, j: usize, s: usize) -> Result<f64> {
    ap.validate()?;
    check_inputs(graph, x, &[i, j, s])?;
    let scheme = Scheme::new(graph);
    let k = edge_index(graph, &scheme, i, j)?;
    Ok(propagate(ap, &scheme, x, Some(s))?.de[k])
}

/// `((α_e β_h)^r (Â^r)_is, α_e^{r−1} β_h^r (Â^{r−1})_js)`. The edge bound is
/// zero at `r = 0`, where edge states do not depend on the inputs.
pub fn lemma_bounds(ap: &AnalysisProcessor, graph: &MeshGraph, i: usize, j: usize, s: usize, r: usize) -> Result<(f64, f64)> {
    for v in [i, j, s] {
        graph.check_node(v)?;
    }
    let a_hat = graph.normalized_adjacency();
    Ok(bounds_with(ap, &a_hat, i, j, s, r)?)
}

fn bounds_with(ap: &AnalysisProcessor, a_hat: &DenseMatrix, i: usize, j: usize, s: usize, r: usize) -> Result<(f64, f64)> {
    let (alpha, beta) = (ap.alpha_e(), ap.beta_h());
    let node = (alpha * beta).powi(r as i32) * a_hat.power_entry(r, i, s)?;
    let edge = if r == 0 {
        0.0
    } else {
        alpha.powi(r as i32 - 1) * beta.powi(r as i32) * a_hat.power_entry(r - 1, j, s)?
    };
    Ok((node, edge))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum RowKind {
    NodeAffine,
    EdgeAffine,
    NodeTanh,
    EdgeTanh,
}

impl RowKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RowKind::NodeAffine => "node_affine",
            RowKind::EdgeAffine => "edge_affine",
            RowKind::NodeTanh => "node_tanh",
            RowKind::EdgeTanh => "edge_tanh",
        }
    }

    fn is_affine(self) -> bool {
        matches!(self, RowKind::NodeAffine | RowKind::EdgeAffine)
    }
}

impl fmt::Display for RowKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One checked Jacobian. For node rows `hop = d(i, s)`; for edge rows
/// `hop = d(j, s)`, the distance that decides the edge bound. `None` means
/// unreachable.
#[derive(Debug, Clone, PartialEq)]
pub struct LemmaRow {
    pub graph_id: usize,
    pub kind: RowKind,
    pub i: usize,
    pub j: Option<usize>,
    pub s: usize,
    pub r: usize,
    pub hop: Option<usize>,
    pub jac: f64,
    pub bound: f64,
    pub zero_expected: bool,
    pub pass: bool,
}

impl LemmaRow {
    fn finish(mut self) -> Self {
        let tol = if self.kind.is_affine() { TOL_BOUND_EXACT } else { TOL_BOUND_FD };
        let zero_ok = !self.zero_expected || self.jac <= TOL_ZERO;
        self.pass = zero_ok && self.jac <= self.bound + tol;
        self
    }

    pub fn csv(&self) -> String {
        let j = self.j.map_or(String::new(), |j| j.to_string());
        let hop = self.hop.map_or("inf".to_string(), |h| h.to_string());
        format!(
            "{},{},{},{},{},{},{},{:e},{:e},{},{}",
            self.graph_id, self.kind, self.i, j, self.s, self.r, hop, self.jac, self.bound, self.zero_expected, self.pass
        )
    }
}

/// Mean and maximum of `jac / bound` over rows with a positive bound.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayRow {
    pub kind: RowKind,
    pub r: usize,
    pub rows: usize,
    pub mean_bound: f64,
    pub mean_jac: f64,
    pub mean_ratio: f64,
    pub max_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LemmaReport {
    pub rows: Vec<LemmaRow>,
    /// Largest `|J_fd − J_exact| / max(|J_exact|, REL_FLOOR)` over the
    /// affine rows.
    pub fd_exact_rel_error: f64,
}

/// Denominator floor of the finite-difference agreement measure.
pub const REL_FLOOR: f64 = 1e-2;

impl LemmaReport {
    pub const CSV_HEADER: &'static str = "graph_id,kind,i,j,s,r,hop,jac,bound,zero_expected,pass";

    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| !r.pass).count()
    }

    /// An affine node row at exactly `r` hops whose Jacobian equals a
    /// positive bound within `tol`.
    pub fn tightness_witness(&self, tol: f64) -> Option<&LemmaRow> {
        self.rows.iter().find(|row| {
            row.kind == RowKind::NodeAffine && row.hop == Some(row.r) && row.bound > 0.0 && (row.jac - row.bound).abs() <= tol
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.csv());
            out.push('\n');
        }
        out
    }

    pub fn decay(&self) -> Vec<DecayRow> {
        let mut groups: std::collections::BTreeMap<(RowKind, usize), Vec<&LemmaRow>> = Default::default();
        for row in self.rows.iter().filter(|r| r.bound > 0.0) {
            groups.entry((row.kind, row.r)).or_default().push(row);
        }
        groups
            .into_iter()
            .map(|((kind, r), rows)| {
                let k = rows.len() as f64;
                let ratios: Vec<f64> = rows.iter().map(|x| x.jac / x.bound).collect();
                DecayRow {
                    kind,
                    r,
                    rows: rows.len(),
                    mean_bound: rows.iter().map(|x| x.bound).sum::<f64>() / k,
                    mean_jac: rows.iter().map(|x| x.jac).sum::<f64>() / k,
                    mean_ratio: ratios.iter().sum::<f64>() / k,
                    max_ratio: ratios.iter().cloned().fold(0.0, f64::max),
                }
            })
            .collect()
    }

    pub fn decay_csv(&self) -> String {
        let mut out = String::from("kind,r,rows,mean_bound,mean_jac,mean_ratio,max_ratio\n");
        for d in self.decay() {
            out.push_str(&format!(
                "{},{},{},{:e},{:e},{},{}\n",
                d.kind, d.r, d.rows, d.mean_bound, d.mean_jac, d.mean_ratio, d.max_ratio
            ));
        }
        out
    }
}

/// Random-graph sweep settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleConfig {
    pub graphs: usize,
    pub min_nodes: usize,
    pub max_nodes: usize,
    pub max_radius: usize,
    /// Probability of each extra edge beyond a random spanning tree.
    pub edge_probability: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            graphs: 6,
            min_nodes: 4,
            max_nodes: 10,
            max_radius: 4,
            edge_probability: 0.2,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.graphs == 0 {
            return Err(Error::Config("ensemble needs at least one graph".into()));
        }
        if self.min_nodes < 2 || self.min_nodes > self.max_nodes || self.max_nodes > 12 {
            return Err(Error::Config("node counts must satisfy 2 <= min <= max <= 12".into()));
        }
        if self.max_radius == 0 || self.max_radius > 5 {
            return Err(Error::Config("radius must be in 1..=5".into()));
        }
        if !(0.0..=1.0).contains(&self.edge_probability) {
            return Err(Error::Config("edge probability must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Connected graph on `n` nodes: a random spanning tree plus independent
/// extra edges.
pub fn random_connected_graph<R: Rng>(n: usize, edge_probability: f64, rng: &mut R) -> Result<MeshGraph> {
    let mut edges = BTreeSet::new();
    for v in 1..n {
        let u = rng.gen_range(0..v);
        edges.insert((u, v));
    }
    for u in 0..n {
        for v in u + 1..n {
            if !edges.contains(&(u, v)) && rng.gen_bool(edge_probability) {
                edges.insert((u, v));
            }
        }
    }
    MeshGraph::from_edges(n, &edges.into_iter().collect::<Vec<_>>())
}

fn random_processor<R: Rng>(phi: Phi, rng: &mut R) -> AnalysisProcessor {
    let mut coeff = |lo: f64, hi: f64| {
        let v = rng.gen_range(lo..hi);
        if rng.gen_bool(0.5) {
            v
        } else {
            -v
        }
    };
    AnalysisProcessor {
        edge: EdgeCoeffs {
            a: coeff(0.1, 0.5),
            b: coeff(0.1, 0.5),
            c: coeff(0.4, 1.0),
            d: coeff(0.0, 0.3),
        },
        node: NodeCoeffs {
            p: coeff(0.1, 0.5),
            q: coeff(0.4, 1.0),
            w: coeff(0.0, 0.3),
        },
        phi,
        depth: 1,
        edge_init: coeff(0.0, 0.5),
    }
}

/// Rows of one graph. Only sources at `r` or more hops from `i` are checked:
/// closer sources fall outside the bound's hypothesis.
fn graph_rows(
    graph_id: usize,
    graph: &MeshGraph,
    x: &[f64],
    processors: &[(RowKind, RowKind, AnalysisProcessor)],
    max_radius: usize,
    rel_error: &mut f64,
) -> Result<Vec<LemmaRow>> {
    let n = graph.node_count();
    let scheme = Scheme::new(graph);
    let hops: Vec<Vec<Option<usize>>> = (0..n).map(|v| graph.hop_distances(v, None)).collect();
    let mut rows = Vec::new();
    for r in 1..=max_radius {
        for &(node_kind, edge_kind, base) in processors {
            let ap = base.with_depth(r);
            let mut per_source = Vec::with_capacity(n);
            for s in 0..n {
                let exact = propagate(&ap, &scheme, x, Some(s))?;
                let (fd_h, fd_e) = finite_difference(&ap, &scheme, x, s)?;
                per_source.push((exact, fd_h, fd_e));
            }
            for i in 0..n {
                for s in 0..n {
                    let hop_is = hops[i][s];
                    if hop_is.is_some_and(|h| h < r) {
                        continue;
                    }
                    let (exact, fd_h, fd_e) = &per_source[s];
                    let mut pick = |kind: RowKind, ex: f64, fd: f64| {
                        if kind.is_affine() {
                            *rel_error = rel_error.max((fd - ex).abs() / ex.abs().max(REL_FLOOR));
                            ex
                        } else {
                            fd
                        }
                    };
                    let (node_bound, _) = bounds_with(&ap, &scheme.a_hat, i, i, s, r)?;
                    rows.push(
                        LemmaRow {
                            graph_id,
                            kind: node_kind,
                            i,
                            j: None,
                            s,
                            r,
                            hop: hop_is,
                            jac: pick(node_kind, exact.dh[i], fd_h[i]).abs(),
                            bound: node_bound,
                            zero_expected: hop_is.is_none_or(|h| h > r),
                            pass: false,
                        }
                        .finish(),
                    );
                    for &j in graph.neighbors(i) {
                        let k = scheme.index(i, j).expect("mesh edge");
                        let (_, edge_bound) = bounds_with(&ap, &scheme.a_hat, i, j, s, r)?;
                        let hop_js = hops[j][s];
                        rows.push(
                            LemmaRow {
                                graph_id,
                                kind: edge_kind,
                                i,
                                j: Some(j),
                                s,
                                r,
                                hop: hop_js,
                                jac: pick(edge_kind, exact.de[k], fd_e[k]).abs(),
                                bound: edge_bound,
                                zero_expected: hop_js.is_none_or(|h| h + 1 > r),
                                pass: false,
                            }
                            .finish(),
                        );
                    }
                }
            }
        }
    }
    Ok(rows)
}

/// Sweeps random connected graphs plus one two-component graph with affine
/// and tanh processors.
pub fn verify_lemma(config: &EnsembleConfig, seed: u64) -> Result<LemmaReport> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut graphs = Vec::with_capacity(config.graphs + 1);
    for _ in 0..config.graphs {
        let n = rng.gen_range(config.min_nodes..=config.max_nodes);
        graphs.push(random_connected_graph(n, config.edge_probability, &mut rng)?);
    }
    // Two paths with no edge between them.
    graphs.push(MeshGraph::from_edges(6, &[(0, 1), (1, 2), (3, 4), (4, 5)])?);

    let mut rows = Vec::new();
    let mut rel_error: f64 = 0.0;
    for (graph_id, graph) in graphs.iter().enumerate() {
        let x: Vec<f64> = (0..graph.node_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let affine = random_processor(Phi::Identity, &mut rng);
        let tanh = random_processor(Phi::Tanh, &mut rng);
        let processors = [
            (RowKind::NodeAffine, RowKind::EdgeAffine, affine),
            (RowKind::NodeTanh, RowKind::EdgeTanh, tanh),
        ];
        rows.extend(graph_rows(graph_id, graph, &x, &processors, config.max_radius, &mut rel_error)?);
    }
    // Deterministic (graph, i, s, r) order.
    rows.sort_by(|a, b| {
        (a.graph_id, a.i, a.s, a.r, a.kind, a.j).cmp(&(b.graph_id, b.i, b.s, b.r, b.kind, b.j))
    });
    Ok(LemmaReport {
        rows,
        fd_exact_rel_error: rel_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn affine(q: f64, c: f64, depth: usize) -> AnalysisProcessor {
        AnalysisProcessor {
            edge: EdgeCoeffs { a: 0.0, b: 0.0, c, d: 0.0 },
            node: NodeCoeffs { p: 0.0, q, w: 0.0 },
            phi: Phi::Identity,
            depth,
            edge_init: 0.0,
        }
    }

    fn path(n: usize) -> MeshGraph {
        let edges: Vec<_> = (0..n - 1).map(|k| (k, k + 1)).collect();
        MeshGraph::from_edges(n, &edges).unwrap()
    }

    #[test]
    fn receptive_fields() {
        let g = path(4);
        assert_eq!(receptive_field(&g, 0, 2).unwrap(), BTreeSet::from([0, 1, 2]));
        assert_eq!(receptive_field(&g, 2, 0).unwrap(), BTreeSet::from([2]));
        let k4 = MeshGraph::from_edges(4, &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]).unwrap();
        assert_eq!(receptive_field(&k4, 3, 1).unwrap().len(), 4);
        assert!(receptive_field(&g, 9, 1).is_err());
    }

    #[test]
    fn one_layer_affine() {
        let g = path(3);
        let a_hat = g.normalized_adjacency();
        let ap = affine(0.7, 1.3, 1);
        let x = [0.2, -0.4, 0.9];
        let j = jacobian_node_exact(&ap, &g, &x, 0, 1).unwrap();
        assert!((j - 0.7 * 1.3 * a_hat.get(0, 1)).abs() < 1e-15);
        let fd = jacobian_node(&ap, &g, &x, 0, 1).unwrap();
        assert!((fd - j).abs() < 1e-9);
        // Edge state after one layer depends on x_j only through c.
        assert!((jacobian_edge_exact(&ap, &g, &x, 0, 1, 1).unwrap() - 1.3).abs() < 1e-15);
        assert_eq!(jacobian_edge_exact(&ap, &g, &x, 0, 1, 2).unwrap(), 0.0);
        assert!(jacobian_edge(&ap, &g, &x, 0, 2, 1).is_err());
    }

    #[test]
    fn two_layer_path_matches_power() {
        let g = path(3);
        let ap = affine(0.8, 1.1, 2);
        let x = [0.5, 0.1, -0.3];
        let j = jacobian_node_exact(&ap, &g, &x, 0, 2).unwrap();
        let want = (0.8f64 * 1.1).powi(2) * g.normalized_adjacency().power_entry(2, 0, 2).unwrap();
        assert!((j - want).abs() < 1e-15);
        let (node_bound, _) = lemma_bounds(&ap, &g, 0, 1, 2, 2).unwrap();
        assert!((node_bound - want).abs() < 1e-15);
    }

    #[test]
    fn outside_receptive_field_is_zero() {
        let g = path(5);
        let ap = AnalysisProcessor {
            phi: Phi::Tanh,
            ..affine(0.9, 1.2, 2)
        };
        let x = [0.1, 0.2, 0.3, 0.4, 0.5];
        assert!(jacobian_node(&ap, &g, &x, 0, 3).unwrap().abs() < 1e-9);
        assert!(jacobian_node(&ap, &g, &x, 0, 2).unwrap().abs() > 1e-6);
        // d(1, 4) = 3 > r − 1.
        assert!(jacobian_edge(&ap, &g, &x, 0, 1, 4).unwrap().abs() < 1e-9);
    }

    #[test]
    fn bound_examples() {
        let tri = MeshGraph::from_edges(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        let ap = affine(1.0, 1.0, 2);
        let (node, _) = lemma_bounds(&ap, &tri, 0, 1, 2, 2).unwrap();
        assert!((node - 1.0 / 3.0).abs() < 1e-15);
        let g = path(5);
        assert_eq!(lemma_bounds(&ap, &g, 0, 1, 4, 2).unwrap(), (0.0, 0.0));
        let dead = affine(0.0, 1.0, 1);
        for r in 1..4 {
            assert_eq!(lemma_bounds(&dead, &g, 0, 1, 1, r).unwrap().0, 0.0);
        }
    }

    #[test]
    fn small_sweep_passes() {
        let cfg = EnsembleConfig {
            graphs: 2,
            max_nodes: 6,
            max_radius: 3,
            ..EnsembleConfig::default()
        };
        let report = verify_lemma(&cfg, 1).unwrap();
        assert!(report.all_pass(), "{} failures", report.failures());
        assert!(report.tightness_witness(1e-9).is_some());
        assert_eq!(report, verify_lemma(&cfg, 1).unwrap());
        // Unreachable pairs from the two-component graph are present.
        assert!(report.rows.iter().any(|r| r.hop.is_none() && r.zero_expected && r.jac == 0.0));
    }
}
