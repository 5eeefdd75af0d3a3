//! Mesh graph data model, trajectory files, hop distances and the normalized
//! augmented adjacency matrix.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeType {
    Fluid,
    Wall,
    Inflow,
    Outflow,
}

impl NodeType {
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        match self {
            NodeType::Fluid => 0,
            NodeType::Wall => 1,
            NodeType::Inflow => 2,
            NodeType::Outflow => 3,
        }
    }

    pub fn one_hot(self) -> [f64; 4] {
        let mut v = [0.0; 4];
        v[self.index()] = 1.0;
        v
    }
}

impl fmt::Display for NodeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            NodeType::Fluid => "fluid",
            NodeType::Wall => "wall",
            NodeType::Inflow => "inflow",
            NodeType::Outflow => "outflow",
        };
        f.write_str(s)
    }
}

/// Static mesh topology and geometry.
///
/// Edges are kept as directed pairs: every undirected mesh edge `{i, j}` is
/// present as both `(i, j)` and `(j, i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshGraph {
    node_type: Vec<NodeType>,
    position: Vec<[f64; 2]>,
    adjacency: Vec<Vec<usize>>,
    edges: Vec<(usize, usize)>,
}

impl MeshGraph {
    /// Builds a graph from undirected edges, each listed once in either
    /// orientation.
    pub fn new(
        node_type: Vec<NodeType>,
        position: Vec<[f64; 2]>,
        undirected_edges: &[(usize, usize)],
    ) -> Result<Self> {
        let n = node_type.len();
        if position.len() != n {
            return Err(Error::invariant(
                "position",
                format!("length mismatch: {} positions for {} nodes", position.len(), n),
            ));
        }
        for (k, p) in position.iter().enumerate() {
            if !p[0].is_finite() || !p[1].is_finite() {
                return Err(Error::invariant(format!("nodes[{k}].pos"), "non-finite coordinate"));
            }
        }
        let mut adjacency = vec![Vec::new(); n];
        for (k, &(a, b)) in undirected_edges.iter().enumerate() {
            if a >= n || b >= n {
                return Err(Error::invariant(
                    format!("edges[{k}]"),
                    format!("index out of range: ({a}, {b}) with node_count {n}"),
                ));
            }
            if a == b {
                return Err(Error::invariant(format!("edges[{k}]"), format!("self-loop ({a}, {b})")));
            }
            if adjacency[a].contains(&b) {
                return Err(Error::invariant(
                    format!("edges[{k}]"),
                    format!("duplicate edge ({a}, {b})"),
                ));
            }
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        let edges = adjacency
            .iter()
            .enumerate()
            .flat_map(|(i, nb)| nb.iter().map(move |&j| (i, j)))
            .collect();
        Ok(MeshGraph {
            node_type,
            position,
            adjacency,
            edges,
        })
    }

    /// Graph with every node of fluid type placed at the origin. Handy for
    /// purely topological work.
    pub fn from_edges(node_count: usize, undirected_edges: &[(usize, usize)]) -> Result<Self> {
        MeshGraph::new(
            vec![NodeType::Fluid; node_count],
            vec![[0.0, 0.0]; node_count],
            undirected_edges,
        )
    }

    pub fn node_count(&self) -> usize {
        self.node_type.len()
    }

    /// Directed edges, sorted lexicographically.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Each undirected edge once, as `(i, j)` with `i < j`, sorted.
    pub fn undirected_edges(&self) -> Vec<(usize, usize)> {
        self.edges.iter().copied().filter(|&(i, j)| i < j).collect()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        i < self.node_count() && self.adjacency[i].binary_search(&j).is_ok()
    }

    pub fn node_type(&self, i: usize) -> NodeType {
        self.node_type[i]
    }

    pub fn node_types(&self) -> &[NodeType] {
        &self.node_type
    }

    pub fn position(&self, i: usize) -> [f64; 2] {
        self.position[i]
    }

    pub fn positions(&self) -> &[[f64; 2]] {
        &self.position
    }

    pub fn check_node(&self, id: usize) -> Result<()> {
        if id < self.node_count() {
            Ok(())
        } else {
            Err(Error::InvalidNode {
                id,
                node_count: self.node_count(),
            })
        }
    }

    /// Breadth-first hop distances from `source`. Nodes beyond `cutoff` or
    /// unreachable are absent.
    pub fn shortest_paths(&self, source: usize, cutoff: Option<usize>) -> Result<BTreeMap<usize, usize>> {
        self.check_node(source)?;
        Ok(self
            .hop_distances(source, cutoff)
            .into_iter()
            .enumerate()
            .filter_map(|(v, d)| d.map(|d| (v, d)))
            .collect())
    }

    /// Dense variant of [`shortest_paths`](Self::shortest_paths); panics on an
    /// invalid source.
    pub fn hop_distances(&self, source: usize, cutoff: Option<usize>) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.node_count()];
        dist[source] = Some(0);
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap_or_default();
            if cutoff.is_some_and(|c| du >= c) {
                continue;
            }
            for &v in &self.adjacency[u] {
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    pub fn hop_distance(&self, i: usize, j: usize) -> Option<usize> {
        self.hop_distances(i, None)[j]
    }

    /// `D̃^{-1/2} (A + I) D̃^{-1/2}` with `D̃ = D + I`.
    pub fn normalized_adjacency(&self) -> DenseMatrix {
        let n = self.node_count();
        let scale: Vec<f64> = (0..n).map(|i| 1.0 / ((self.degree(i) + 1) as f64).sqrt()).collect();
        let mut m = DenseMatrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, scale[i] * scale[i]);
            for &j in &self.adjacency[i] {
                m.set(i, j, scale[i] * scale[j]);
            }
        }
        m
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            entries: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = DenseMatrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch("ragged rows".into()));
        }
        Ok(DenseMatrix {
            rows: rows.len(),
            cols,
            entries: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.entries[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.cols..(i + 1) * self.cols]
    }

    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.entries[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        Ok(out)
    }

    /// Row `i` of the `r`-th matrix power, computed by repeated
    /// vector-matrix products.
    pub fn power_row(&self, r: usize, i: usize) -> Result<Vec<f64>> {
        if self.rows != self.cols {
            return Err(Error::DimensionMismatch(format!(
                "matrix power of non-square {}x{}",
                self.rows, self.cols
            )));
        }
        if i >= self.rows {
            return Err(Error::DimensionMismatch(format!("row {i} of {}x{}", self.rows, self.cols)));
        }
        let n = self.rows;
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        for _ in 0..r {
            let mut next = vec![0.0; n];
            for (k, &vk) in v.iter().enumerate() {
                if vk == 0.0 {
                    continue;
                }
                for (nj, &a) in next.iter_mut().zip(self.row(k)) {
                    *nj += vk * a;
                }
            }
            v = next;
        }
        Ok(v)
    }

    /// Entry `(i, s)` of the `r`-th power; `r = 0` gives the identity.
    pub fn power_entry(&self, r: usize, i: usize, s: usize) -> Result<f64> {
        if s >= self.cols {
            return Err(Error::DimensionMismatch(format!("column {s} of {}x{}", self.rows, self.cols)));
        }
        Ok(self.power_row(r, i)?[s])
    }
}

/// Free-function form of [`DenseMatrix::power_entry`].
pub fn adjacency_power_entry(a_hat: &DenseMatrix, r: usize, i: usize, s: usize) -> Result<f64> {
    a_hat.power_entry(r, i, s)
}

/// Dynamic per-node quantities at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameState {
    pub time_index: usize,
    pub velocity: Vec<[f64; 2]>,
    pub pressure: Option<Vec<f64>>,
    pub density: Option<Vec<f64>>,
}

impl FrameState {
    pub fn new(time_index: usize, velocity: Vec<[f64; 2]>) -> Self {
        FrameState {
            time_index,
            velocity,
            pressure: None,
            density: None,
        }
    }

    pub fn node_count(&self) -> usize {
        self.velocity.len()
    }

    /// Checks lengths against `node_count` and that all entries are finite.
    pub fn validate(&self, node_count: usize, location: &str) -> Result<()> {
        if self.velocity.len() != node_count {
            return Err(Error::invariant(
                format!("{location}.velocity"),
                format!("length mismatch: {} entries for {} nodes", self.velocity.len(), node_count),
            ));
        }
        if let Some(k) = self.velocity.iter().position(|v| !v[0].is_finite() || !v[1].is_finite()) {
            return Err(Error::invariant(format!("{location}.velocity[{k}]"), "non-finite value"));
        }
        for (name, field) in [("pressure", &self.pressure), ("density", &self.density)] {
            if let Some(values) = field {
                if values.len() != node_count {
                    return Err(Error::invariant(
                        format!("{location}.{name}"),
                        format!("length mismatch: {} entries for {} nodes", values.len(), node_count),
                    ));
                }
                if let Some(k) = values.iter().position(|v| !v.is_finite()) {
                    return Err(Error::invariant(format!("{location}.{name}[{k}]"), "non-finite value"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub graph: MeshGraph,
    pub frames: Vec<FrameState>,
}

impl Trajectory {
    pub fn new(graph: MeshGraph, frames: Vec<FrameState>) -> Result<Self> {
        let traj = Trajectory { graph, frames };
        traj.validate()?;
        Ok(traj)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::invariant("frames", "trajectory has no frames"));
        }
        let n = self.graph.node_count();
        let first = self.frames[0].time_index;
        let has_p = self.frames[0].pressure.is_some();
        let has_rho = self.frames[0].density.is_some();
        for (k, frame) in self.frames.iter().enumerate() {
            let loc = format!("frames[{k}]");
            frame.validate(n, &loc)?;
            if frame.time_index != first + k {
                return Err(Error::invariant(
                    format!("{loc}.t"),
                    format!("expected t = {}, found {}", first + k, frame.time_index),
                ));
            }
            if frame.pressure.is_some() != has_p || frame.density.is_some() != has_rho {
                return Err(Error::invariant(loc, "optional fields differ from frame 0"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: TrajectoryFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        file.into_trajectory()
    }

    pub fn to_json_string(&self) -> String {
        // Serialization of plain numbers and strings cannot fail.
        serde_json::to_string(&TrajectoryFile::from(self)).expect("trajectory serialization")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Trajectory::from_json_str(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.to_json_string();
        text.push('\n');
        std::fs::write(path, text).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

pub fn load_trajectory(path: impl AsRef<Path>) -> Result<Trajectory> {
    Trajectory::load(path)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrajectoryFile {
    nodes: Vec<NodeRecord>,
    edges: Vec<[usize; 2]>,
    frames: Vec<FrameRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeRecord {
    id: usize,
    pos: [f64; 2],
    #[serde(rename = "type")]
    kind: NodeType,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameRecord {
    t: usize,
    velocity: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pressure: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    density: Option<Vec<f64>>,
}

impl TrajectoryFile {
    fn into_trajectory(self) -> Result<Trajectory> {
        for (k, node) in self.nodes.iter().enumerate() {
            if node.id != k {
                return Err(Error::invariant(
                    format!("nodes[{k}].id"),
                    format!("expected id {k}, found {}", node.id),
                ));
            }
        }
        let node_type = self.nodes.iter().map(|n| n.kind).collect();
        let position = self.nodes.iter().map(|n| n.pos).collect();
        let edges: Vec<(usize, usize)> = self.edges.iter().map(|e| (e[0], e[1])).collect();
        let graph = MeshGraph::new(node_type, position, &edges)?;
        let frames = self
            .frames
            .into_iter()
            .map(|f| FrameState {
                time_index: f.t,
                velocity: f.velocity,
                pressure: f.pressure,
                density: f.density,
            })
            .collect();
        Trajectory::new(graph, frames)
    }
}

impl From<&Trajectory> for TrajectoryFile {
    fn from(traj: &Trajectory) -> Self {
        let g = &traj.graph;
        TrajectoryFile {
            nodes: (0..g.node_count())
                .map(|i| NodeRecord {
                    id: i,
                    pos: g.position(i),
                    kind: g.node_type(i),
                })
                .collect(),
            edges: g.undirected_edges().into_iter().map(|(i, j)| [i, j]).collect(),
            frames: traj
                .frames
                .iter()
                .map(|f| FrameRecord {
                    t: f.time_index,
                    velocity: f.velocity.clone(),
                    pressure: f.pressure.clone(),
                    density: f.density.clone(),
                })
                .collect(),
        }
    }
}
