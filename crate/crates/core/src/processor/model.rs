//! Encoder, adaptive message-passing processor and decoder.
//!
//! Directed edge `(i, j)` carries latent `e_ij` which is aggregated at node
//! `i`. Its geometric input is `[d_i − d_j, |d_i − d_j|]`. Block `l` (1-based)
//! updates every edge active at `l`:
//!
//! ```text
//! e_ij ← e_ij + f_E([e_ij, h_i, h_j])
//! h_i  ← h_i  + f_V([h_i, Σ_j w_ij e_ij])
//! ```
//!
//! with the residual terms dropped when `residual` is off. Rewired edges are
//! encoded when they first become active.

use std::ops::Range;

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{Activation, Mlp, MlpCache};
use crate::error::{Error, Result};
use crate::graph::{FrameState, MeshGraph, NodeType};
use crate::rewiring::RewireSchedule;

pub const EDGE_INPUT_DIM: usize = 3;

/// Which dynamic fields beyond velocity are modelled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub pressure: bool,
    pub density: bool,
}

impl FeatureLayout {
    pub fn of_frame(frame: &FrameState) -> Self {
        FeatureLayout {
            pressure: frame.pressure.is_some(),
            density: frame.density.is_some(),
        }
    }

    /// Velocity components plus optional pressure and density.
    pub fn dynamic_dim(&self) -> usize {
        2 + usize::from(self.pressure) + usize::from(self.density)
    }

    pub fn node_input_dim(&self) -> usize {
        self.dynamic_dim() + NodeType::COUNT
    }

    pub fn output_dim(&self) -> usize {
        self.dynamic_dim()
    }

    fn check(&self, frame: &FrameState) -> Result<()> {
        if self.pressure && frame.pressure.is_none() {
            return Err(Error::DimensionMismatch("model expects pressure but frame has none".into()));
        }
        if self.density && frame.density.is_none() {
            return Err(Error::DimensionMismatch("model expects density but frame has none".into()));
        }
        Ok(())
    }

    /// Dynamic state row of node `i`: `[vx, vy, p?, rho?]`.
    fn dynamic(&self, frame: &FrameState, i: usize) -> Vec<f64> {
        let mut out = frame.velocity[i].to_vec();
        if self.pressure {
            out.push(frame.pressure.as_ref().expect("checked")[i]);
        }
        if self.density {
            out.push(frame.density.as_ref().expect("checked")[i]);
        }
        out
    }

    pub fn field_names(&self) -> Vec<&'static str> {
        let mut names = vec!["vx", "vy"];
        if self.pressure {
            names.push("pressure");
        }
        if self.density {
            names.push("density");
        }
        names
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layout: FeatureLayout,
    pub hidden_dim: usize,
    /// Number of message-passing blocks `L`.
    pub layers: usize,
    /// Hidden layers inside each MLP.
    pub mlp_depth: usize,
    pub activation: Activation,
    pub residual: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layout: FeatureLayout::default(),
            hidden_dim: 32,
            layers: 6,
            mlp_depth: 1,
            activation: Activation::Tanh,
            residual: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::Config("at least one message-passing block is required".into()));
        }
        if self.hidden_dim == 0 {
            return Err(Error::Config("hidden_dim must be positive".into()));
        }
        Ok(())
    }

    fn dims(&self, input: usize, output: usize) -> Vec<usize> {
        let mut d = vec![input];
        d.extend(std::iter::repeat_n(self.hidden_dim, self.mlp_depth));
        d.push(output);
        d
    }
}

/// Frozen per-feature z-score statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub node_mean: Vec<f64>,
    pub node_std: Vec<f64>,
    pub edge_mean: Vec<f64>,
    pub edge_std: Vec<f64>,
    pub target_mean: Vec<f64>,
    pub target_std: Vec<f64>,
}

pub const STD_FLOOR: f64 = 1e-8;

impl Normalizer {
    pub fn identity(layout: FeatureLayout) -> Self {
        Normalizer {
            node_mean: vec![0.0; layout.node_input_dim()],
            node_std: vec![1.0; layout.node_input_dim()],
            edge_mean: vec![0.0; EDGE_INPUT_DIM],
            edge_std: vec![1.0; EDGE_INPUT_DIM],
            target_mean: vec![0.0; layout.output_dim()],
            target_std: vec![1.0; layout.output_dim()],
        }
    }

    /// Fits statistics on consecutive frame pairs. Targets use fluid nodes
    /// only, matching the loss mask.
    pub fn fit(layout: FeatureLayout, pairs: &[(&MeshGraph, &FrameState, &FrameState)]) -> Result<Self> {
        let mut node_rows = Vec::new();
        let mut edge_rows = Vec::new();
        let mut target_rows = Vec::new();
        let mut seen_graphs: Vec<*const MeshGraph> = Vec::new();
        for &(graph, now, next) in pairs {
            layout.check(now)?;
            layout.check(next)?;
            node_rows.push(raw_node_features(layout, graph, now));
            if !seen_graphs.contains(&(graph as *const _)) {
                seen_graphs.push(graph as *const _);
                edge_rows.push(raw_edge_features(graph, graph.edges()));
            }
            let (t, mask) = raw_targets(layout, graph, now, next);
            let rows: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
            target_rows.push(t.select(Axis(0), &rows));
        }
        let stats = |blocks: &[Array2<f64>], width: usize| -> (Vec<f64>, Vec<f64>) {
            let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
            let all = if views.is_empty() {
                Array2::zeros((0, width))
            } else {
                ndarray::concatenate(Axis(0), &views).expect("equal widths")
            };
            if all.nrows() == 0 {
                return (vec![0.0; width], vec![1.0; width]);
            }
            let mean = all.mean_axis(Axis(0)).expect("non-empty").to_vec();
            let std = all.std_axis(Axis(0), 0.0).mapv(|s| s.max(STD_FLOOR)).to_vec();
            (mean, std)
        };
        let (node_mean, node_std) = stats(&node_rows, layout.node_input_dim());
        let (edge_mean, edge_std) = stats(&edge_rows, EDGE_INPUT_DIM);
        let (target_mean, target_std) = stats(&target_rows, layout.output_dim());
        Ok(Normalizer {
            node_mean,
            node_std,
            edge_mean,
            edge_std,
            target_mean,
            target_std,
        })
    }

    fn apply(values: &mut Array2<f64>, mean: &[f64], std: &[f64]) {
        for mut row in values.rows_mut() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = (*v - mean[c]) / std[c];
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub edge_mlp: Mlp,
    pub node_mlp: Mlp,
}

/// All trainable weights plus the frozen normalization statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessorParams {
    pub config: ModelConfig,
    pub normalizer: Normalizer,
    pub node_encoder: Mlp,
    pub edge_encoder: Mlp,
    pub blocks: Vec<Block>,
    pub decoder: Mlp,
}

impl ProcessorParams {
    /// Glorot-initialized parameters, deterministic in `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = config.hidden_dim;
        let act = config.activation;
        let node_encoder = Mlp::init(&config.dims(config.layout.node_input_dim(), h), act, false, &mut rng);
        let edge_encoder = Mlp::init(&config.dims(EDGE_INPUT_DIM, h), act, false, &mut rng);
        let blocks = (0..config.layers)
            .map(|_| Block {
                edge_mlp: Mlp::init(&config.dims(3 * h, h), act, false, &mut rng),
                node_mlp: Mlp::init(&config.dims(2 * h, h), act, false, &mut rng),
            })
            .collect();
        let decoder = Mlp::init(&config.dims(h, config.layout.output_dim()), act, false, &mut rng);
        Ok(ProcessorParams {
            config,
            normalizer: Normalizer::identity(config.layout),
            node_encoder,
            edge_encoder,
            blocks,
            decoder,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        c.validate()?;
        if self.blocks.len() != c.layers {
            return Err(Error::DimensionMismatch(format!(
                "{} blocks for {} layers",
                self.blocks.len(),
                c.layers
            )));
        }
        let h = c.hidden_dim;
        let check = |m: &Mlp, input: usize, output: usize, what: &str| -> Result<()> {
            m.validate()?;
            if m.input_dim() != input || m.output_dim() != output {
                return Err(Error::DimensionMismatch(format!(
                    "{what} maps {} -> {}, expected {input} -> {output}",
                    m.input_dim(),
                    m.output_dim()
                )));
            }
            Ok(())
        };
        check(&self.node_encoder, c.layout.node_input_dim(), h, "node encoder")?;
        check(&self.edge_encoder, EDGE_INPUT_DIM, h, "edge encoder")?;
        for (k, b) in self.blocks.iter().enumerate() {
            check(&b.edge_mlp, 3 * h, h, &format!("block {k} edge MLP"))?;
            check(&b.node_mlp, 2 * h, h, &format!("block {k} node MLP"))?;
        }
        check(&self.decoder, h, c.layout.output_dim(), "decoder")?;
        let n = &self.normalizer;
        if n.node_mean.len() != c.layout.node_input_dim()
            || n.node_std.len() != c.layout.node_input_dim()
            || n.edge_mean.len() != EDGE_INPUT_DIM
            || n.edge_std.len() != EDGE_INPUT_DIM
            || n.target_mean.len() != c.layout.output_dim()
            || n.target_std.len() != c.layout.output_dim()
        {
            return Err(Error::DimensionMismatch("normalizer widths".into()));
        }
        Ok(())
    }

    fn mlps(&self) -> Vec<&Mlp> {
        let mut v = vec![&self.node_encoder, &self.edge_encoder];
        for b in &self.blocks {
            v.push(&b.edge_mlp);
            v.push(&b.node_mlp);
        }
        v.push(&self.decoder);
        v
    }

    fn mlps_mut(&mut self) -> Vec<&mut Mlp> {
        let mut v = vec![&mut self.node_encoder, &mut self.edge_encoder];
        for b in &mut self.blocks {
            v.push(&mut b.edge_mlp);
            v.push(&mut b.node_mlp);
        }
        v.push(&mut self.decoder);
        v
    }

    /// Same shapes and configuration, all weights zero.
    pub fn zeros_like(&self) -> Self {
        ProcessorParams {
            config: self.config,
            normalizer: self.normalizer.clone(),
            node_encoder: self.node_encoder.zeros_like(),
            edge_encoder: self.edge_encoder.zeros_like(),
            blocks: self
                .blocks
                .iter()
                .map(|b| Block {
                    edge_mlp: b.edge_mlp.zeros_like(),
                    node_mlp: b.node_mlp.zeros_like(),
                })
                .collect(),
            decoder: self.decoder.zeros_like(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.mlps().iter().map(|m| m.param_count()).sum()
    }

    /// Trainable parameters in a fixed order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for m in self.mlps() {
            m.visit(&mut |xs| out.extend_from_slice(xs));
        }
        out
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::DimensionMismatch(format!(
                "{} values for {} parameters",
                values.len(),
                self.param_count()
            )));
        }
        let mut offset = 0;
        for m in self.mlps_mut() {
            m.visit_mut(&mut |xs| {
                xs.copy_from_slice(&values[offset..offset + xs.len()]);
                offset += xs.len();
            });
        }
        Ok(())
    }

    /// `self += scale * other`, parameter-wise.
    pub fn add_scaled(&mut self, other: &ProcessorParams, scale: f64) {
        let flat = other.to_flat();
        let mut offset = 0;
        for m in self.mlps_mut() {
            m.visit_mut(&mut |xs| {
                for (x, g) in xs.iter_mut().zip(&flat[offset..]) {
                    *x += scale * g;
                }
                offset += xs.len();
            });
        }
    }

    pub fn all_finite(&self) -> bool {
        self.to_flat().iter().all(|x| x.is_finite())
    }
}

fn raw_node_features(layout: FeatureLayout, graph: &MeshGraph, frame: &FrameState) -> Array2<f64> {
    let n = graph.node_count();
    let mut x = Array2::zeros((n, layout.node_input_dim()));
    for i in 0..n {
        let mut row = layout.dynamic(frame, i);
        row.extend_from_slice(&graph.node_type(i).one_hot());
        for (c, v) in row.into_iter().enumerate() {
            x[[i, c]] = v;
        }
    }
    x
}

/// `[d_i − d_j, |d_i − d_j|]` for each directed edge `(i, j)`.
pub fn raw_edge_features(graph: &MeshGraph, edges: &[(usize, usize)]) -> Array2<f64> {
    let mut x = Array2::zeros((edges.len(), EDGE_INPUT_DIM));
    for (r, &(i, j)) in edges.iter().enumerate() {
        let (a, b) = (graph.position(i), graph.position(j));
        let d = [a[0] - b[0], a[1] - b[1]];
        x[[r, 0]] = d[0];
        x[[r, 1]] = d[1];
        x[[r, 2]] = d[0].hypot(d[1]);
    }
    x
}

/// Per-node state difference `next − now` and the fluid mask.
fn raw_targets(layout: FeatureLayout, graph: &MeshGraph, now: &FrameState, next: &FrameState) -> (Array2<f64>, Vec<bool>) {
    let n = graph.node_count();
    let mut t = Array2::zeros((n, layout.output_dim()));
    for i in 0..n {
        let a = layout.dynamic(now, i);
        let b = layout.dynamic(next, i);
        for c in 0..a.len() {
            t[[i, c]] = b[c] - a[c];
        }
    }
    let mask = (0..n).map(|i| graph.node_type(i) == NodeType::Fluid).collect();
    (t, mask)
}

/// Directed edges in activation order: mesh edges first, then rewired ones
/// sorted by activation block. The edges active at block `b` are a prefix.
#[derive(Debug, Clone)]
pub(crate) struct EdgePlan {
    pub edges: Vec<(usize, usize)>,
    pub weight: Vec<f64>,
    /// `active[b]`: number of edges active in block `b + 1`.
    pub active: Vec<usize>,
}

impl EdgePlan {
    pub fn build(graph: &MeshGraph, schedule: &RewireSchedule, layers: usize) -> Result<Self> {
        if schedule.layers != layers {
            return Err(Error::Config(format!(
                "schedule built for {} layers, model has {}",
                schedule.layers, layers
            )));
        }
        let mut edges = graph.edges().to_vec();
        let mut weight = vec![1.0; edges.len()];
        let base = edges.len();
        let mut rewired: Vec<_> = schedule
            .directed_edges()
            .into_iter()
            .filter(|e| !graph.has_edge(e.target, e.neighbor))
            .collect();
        for e in &rewired {
            graph.check_node(e.target)?;
            graph.check_node(e.neighbor)?;
        }
        rewired.sort_by_key(|e| (e.activation_layer, e.target, e.neighbor));
        let mut active = vec![base; layers];
        for e in &rewired {
            let first = e.activation_layer.clamp(1, layers) - 1;
            for count in &mut active[first..] {
                *count += 1;
            }
            edges.push((e.target, e.neighbor));
            weight.push(e.weight);
        }
        Ok(EdgePlan { edges, weight, active })
    }
}

/// Normalized model inputs for one (graph, frame, schedule).
#[derive(Debug, Clone)]
pub(crate) struct GraphInputs {
    pub node_x: Array2<f64>,
    pub edge_x: Array2<f64>,
    pub plan: EdgePlan,
}

impl GraphInputs {
    pub fn build(params: &ProcessorParams, graph: &MeshGraph, frame: &FrameState, schedule: &RewireSchedule) -> Result<Self> {
        frame.validate(graph.node_count(), "frame")?;
        let layout = params.config.layout;
        layout.check(frame)?;
        let plan = EdgePlan::build(graph, schedule, params.config.layers)?;
        let norm = &params.normalizer;
        let mut node_x = raw_node_features(layout, graph, frame);
        Normalizer::apply(&mut node_x, &norm.node_mean, &norm.node_std);
        let mut edge_x = raw_edge_features(graph, &plan.edges);
        Normalizer::apply(&mut edge_x, &norm.edge_mean, &norm.edge_std);
        Ok(GraphInputs { node_x, edge_x, plan })
    }
}

/// Edge of a [`LatentState`]: latent row `k` belongs to `(target, neighbor)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentEdge {
    pub target: usize,
    pub neighbor: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    /// `n × hidden`.
    pub node: Array2<f64>,
    pub edges: Vec<LatentEdge>,
    /// `edges.len() × hidden`.
    pub edge: Array2<f64>,
}

impl LatentState {
    pub fn edge_latent(&self, target: usize, neighbor: usize) -> Option<ArrayView2<'_, f64>> {
        self.edges
            .iter()
            .position(|e| e.target == target && e.neighbor == neighbor)
            .map(|k| self.edge.slice(s![k..k + 1, ..]))
    }
}

/// Decoder output in physical units (state change per step).
#[derive(Debug, Clone, PartialEq)]
pub struct NodeOutput {
    pub layout: FeatureLayout,
    /// `n × layout.output_dim()`.
    pub values: Array2<f64>,
}

impl NodeOutput {
    pub fn node_count(&self) -> usize {
        self.values.nrows()
    }
}

/// Node latents and latents for the mesh edges. Rewired edges are added
/// when they activate.
pub fn encode(params: &ProcessorParams, graph: &MeshGraph, frame: &FrameState) -> Result<LatentState> {
    params.validate()?;
    let schedule = RewireSchedule::empty(params.config.layers, crate::rewiring::Variant::None);
    let inputs = GraphInputs::build(params, graph, frame, &schedule)?;
    let node = params.node_encoder.forward_batch(inputs.node_x.view())?;
    let edge = params.edge_encoder.forward_batch(inputs.edge_x.view())?;
    let edges = inputs
        .plan
        .edges
        .iter()
        .map(|&(target, neighbor)| LatentEdge {
            target,
            neighbor,
            weight: 1.0,
        })
        .collect();
    Ok(LatentState { node, edges, edge })
}

struct BlockCache {
    edge: MlpCache,
    node: MlpCache,
}

/// One edge update followed by one node update over the first `k` edges.
fn block_forward(
    block: &Block,
    residual: bool,
    h: &Array2<f64>,
    e: ArrayView2<f64>,
    edges: &[(usize, usize)],
    weight: &[f64],
    record: bool,
) -> (Array2<f64>, Array2<f64>, Option<BlockCache>) {
    let n = h.nrows();
    let hid = h.ncols();
    let k = e.nrows();
    let mut x = Array2::zeros((k, 3 * hid));
    for (r, &(t, nb)) in edges.iter().enumerate() {
        x.slice_mut(s![r, ..hid]).assign(&e.row(r));
        x.slice_mut(s![r, hid..2 * hid]).assign(&h.row(t));
        x.slice_mut(s![r, 2 * hid..]).assign(&h.row(nb));
    }
    let (m, edge_cache) = if record {
        let (y, c) = block.edge_mlp.forward_cached(x.view());
        (y, Some(c))
    } else {
        (block.edge_mlp.forward_batch(x.view()).expect("checked widths"), None)
    };
    let e_new = if residual { &e + &m } else { m };

    let mut y = Array2::zeros((n, 2 * hid));
    y.slice_mut(s![.., ..hid]).assign(h);
    for (r, &(t, _)) in edges.iter().enumerate() {
        let mut agg = y.slice_mut(s![t, hid..]);
        agg.scaled_add(weight[r], &e_new.row(r));
    }
    let (u, node_cache) = if record {
        let (u, c) = block.node_mlp.forward_cached(y.view());
        (u, Some(c))
    } else {
        (block.node_mlp.forward_batch(y.view()).expect("checked widths"), None)
    };
    let h_new = if residual { h + &u } else { u };
    let cache = match (edge_cache, node_cache) {
        (Some(edge), Some(node)) => Some(BlockCache { edge, node }),
        _ => None,
    };
    (h_new, e_new, cache)
}

/// Applies one block's edge and node update using every edge in `latents`.
pub fn message_passing_block(block: &Block, residual: bool, latents: &LatentState) -> Result<LatentState> {
    let hid = latents.node.ncols();
    if latents.edge.nrows() != latents.edges.len() {
        return Err(Error::invariant("latent state", "edge rows do not match edge list"));
    }
    if latents.edge.ncols() != hid && !latents.edges.is_empty() {
        return Err(Error::DimensionMismatch("edge and node latent widths differ".into()));
    }
    if block.edge_mlp.input_dim() != 3 * hid || block.node_mlp.input_dim() != 2 * hid {
        return Err(Error::DimensionMismatch(format!("block does not accept latent width {hid}")));
    }
    let n = latents.node.nrows();
    let pairs: Vec<(usize, usize)> = latents.edges.iter().map(|e| (e.target, e.neighbor)).collect();
    if let Some(&(t, nb)) = pairs.iter().find(|&&(t, nb)| t >= n || nb >= n) {
        return Err(Error::InvalidNode {
            id: t.max(nb),
            node_count: n,
        });
    }
    let weight: Vec<f64> = latents.edges.iter().map(|e| e.weight).collect();
    let edge_view = if latents.edges.is_empty() {
        Array2::zeros((0, hid))
    } else {
        latents.edge.clone()
    };
    let (node, edge, _) = block_forward(block, residual, &latents.node, edge_view.view(), &pairs, &weight, false);
    Ok(LatentState {
        node,
        edges: latents.edges.clone(),
        edge,
    })
}

pub(crate) struct Trace {
    node_encoder: MlpCache,
    edge_encoder: Vec<(Range<usize>, MlpCache)>,
    blocks: Vec<BlockCache>,
    decoder: MlpCache,
}

/// Full pass in normalized output units.
pub(crate) fn run(params: &ProcessorParams, inputs: &GraphInputs, record: bool) -> (Array2<f64>, Option<Trace>) {
    let hid = params.config.hidden_dim;
    let residual = params.config.residual;
    let plan = &inputs.plan;
    let (mut h, node_cache) = if record {
        let (h, c) = params.node_encoder.forward_cached(inputs.node_x.view());
        (h, Some(c))
    } else {
        (params.node_encoder.forward_batch(inputs.node_x.view()).expect("checked widths"), None)
    };
    let mut e = Array2::zeros((plan.edges.len(), hid));
    let mut encoded = 0;
    let mut edge_caches = Vec::new();
    let mut block_caches = Vec::new();
    for (b, block) in params.blocks.iter().enumerate() {
        let k = plan.active[b];
        if k > encoded {
            let xs = inputs.edge_x.slice(s![encoded..k, ..]);
            let enc = if record {
                let (y, c) = params.edge_encoder.forward_cached(xs);
                edge_caches.push((encoded..k, c));
                y
            } else {
                params.edge_encoder.forward_batch(xs).expect("checked widths")
            };
            e.slice_mut(s![encoded..k, ..]).assign(&enc);
            encoded = k;
        }
        let (h_new, e_new, cache) = block_forward(
            block,
            residual,
            &h,
            e.slice(s![..k, ..]),
            &plan.edges[..k],
            &plan.weight[..k],
            record,
        );
        e.slice_mut(s![..k, ..]).assign(&e_new);
        h = h_new;
        if let Some(c) = cache {
            block_caches.push(c);
        }
    }
    let (out, dec_cache) = if record {
        let (y, c) = params.decoder.forward_cached(h.view());
        (y, Some(c))
    } else {
        (params.decoder.forward_batch(h.view()).expect("checked widths"), None)
    };
    let trace = match (node_cache, dec_cache) {
        (Some(node_encoder), Some(decoder)) => Some(Trace {
            node_encoder,
            edge_encoder: edge_caches,
            blocks: block_caches,
            decoder,
        }),
        _ => None,
    };
    (out, trace)
}

/// Reverse pass: gradient of a scalar loss given `d_out` (normalized output
/// units) with respect to every trainable parameter.
pub(crate) fn backward(params: &ProcessorParams, inputs: &GraphInputs, trace: &Trace, d_out: ArrayView2<f64>) -> ProcessorParams {
    let hid = params.config.hidden_dim;
    let residual = params.config.residual;
    let plan = &inputs.plan;
    let mut grads = params.zeros_like();
    let mut dh = params.decoder.backward(&trace.decoder, d_out, &mut grads.decoder);
    let mut de = Array2::<f64>::zeros((plan.edges.len(), hid));
    for b in (0..params.blocks.len()).rev() {
        let block = &params.blocks[b];
        let cache = &trace.blocks[b];
        let k = plan.active[b];
        let gblock = &mut grads.blocks[b];

        let dy = block.node_mlp.backward(&cache.node, dh.view(), &mut gblock.node_mlp);
        let mut dh_prev = if residual { dh } else { Array2::zeros((dy.nrows(), hid)) };
        dh_prev += &dy.slice(s![.., ..hid]);
        let dagg = dy.slice(s![.., hid..]);

        let mut de_new = de.slice(s![..k, ..]).to_owned();
        for (r, &(t, _)) in plan.edges[..k].iter().enumerate() {
            de_new.row_mut(r).scaled_add(plan.weight[r], &dagg.row(t));
        }
        let dx = block.edge_mlp.backward(&cache.edge, de_new.view(), &mut gblock.edge_mlp);
        let mut de_prev = if residual { de_new } else { Array2::zeros((k, hid)) };
        de_prev += &dx.slice(s![.., ..hid]);
        de.slice_mut(s![..k, ..]).assign(&de_prev);
        for (r, &(t, nb)) in plan.edges[..k].iter().enumerate() {
            let mut row = dh_prev.row_mut(t);
            row += &dx.slice(s![r, hid..2 * hid]);
            let mut row = dh_prev.row_mut(nb);
            row += &dx.slice(s![r, 2 * hid..]);
        }
        dh = dh_prev;
    }
    for (range, cache) in &trace.edge_encoder {
        params
            .edge_encoder
            .backward(cache, de.slice(s![range.clone(), ..]), &mut grads.edge_encoder);
    }
    params.node_encoder.backward(&trace.node_encoder, dh.view(), &mut grads.node_encoder);
    grads
}

/// Encoder, `L` blocks with the scheduled neighbor sets, then the decoder.
pub fn forward(params: &ProcessorParams, graph: &MeshGraph, frame: &FrameState, schedule: &RewireSchedule) -> Result<NodeOutput> {
    params.validate()?;
    let inputs = GraphInputs::build(params, graph, frame, schedule)?;
    let (out, _) = run(params, &inputs, false);
    Ok(denormalize(params, out))
}

fn denormalize(params: &ProcessorParams, mut out: Array2<f64>) -> NodeOutput {
    let norm = &params.normalizer;
    for mut row in out.rows_mut() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = *v * norm.target_std[c] + norm.target_mean[c];
        }
    }
    NodeOutput {
        layout: params.config.layout,
        values: out,
    }
}

/// A training example with normalized inputs and targets.
#[derive(Debug, Clone)]
pub(crate) struct Sample {
    pub inputs: GraphInputs,
    pub target: Array2<f64>,
    pub mask: Vec<bool>,
}

impl Sample {
    pub fn build(
        params: &ProcessorParams,
        graph: &MeshGraph,
        now: &FrameState,
        next: &FrameState,
        schedule: &RewireSchedule,
    ) -> Result<Self> {
        let inputs = GraphInputs::build(params, graph, now, schedule)?;
        next.validate(graph.node_count(), "next frame")?;
        params.config.layout.check(next)?;
        let (mut target, mask) = raw_targets(params.config.layout, graph, now, next);
        let norm = &params.normalizer;
        Normalizer::apply(&mut target, &norm.target_mean, &norm.target_std);
        if !mask.iter().any(|&m| m) {
            return Err(Error::Config("no fluid nodes to train on".into()));
        }
        Ok(Sample { inputs, target, mask })
    }

    /// Masked MSE without the backward pass.
    pub fn loss(&self, params: &ProcessorParams) -> f64 {
        let (out, _) = run(params, &self.inputs, false);
        masked_mse(&out, &self.target, &self.mask)
    }

    /// Masked MSE and its gradient.
    pub fn loss_and_grad(&self, params: &ProcessorParams, names: &[&str]) -> Result<(f64, ProcessorParams)> {
        let (out, trace) = run(params, &self.inputs, true);
        let trace = trace.expect("recorded trace");
        let width = out.ncols();
        let count = (self.mask.iter().filter(|&&m| m).count() * width) as f64;
        let mut d_out = Array2::zeros(out.raw_dim());
        let mut loss = 0.0;
        for (i, &fluid) in self.mask.iter().enumerate() {
            if !fluid {
                continue;
            }
            for c in 0..width {
                let diff = out[[i, c]] - self.target[[i, c]];
                if !diff.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "prediction error at node {i}, feature {}",
                        names.get(c).copied().unwrap_or("?")
                    )));
                }
                loss += diff * diff;
                d_out[[i, c]] = 2.0 * diff / count;
            }
        }
        loss /= count;
        let grads = backward(params, &self.inputs, &trace, d_out.view());
        Ok((loss, grads))
    }
}

fn masked_mse(out: &Array2<f64>, target: &Array2<f64>, mask: &[bool]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        for (a, b) in out.row(i).iter().zip(target.row(i)) {
            total += (a - b) * (a - b);
            count += 1;
        }
    }
    total / count as f64
}

/// Mean squared error between the normalized prediction and the normalized
/// state difference over fluid nodes, with its analytic gradient.
pub fn loss_and_grad(
    params: &ProcessorParams,
    graph: &MeshGraph,
    now: &FrameState,
    next: &FrameState,
    schedule: &RewireSchedule,
) -> Result<(f64, ProcessorParams)> {
    params.validate()?;
    let sample = Sample::build(params, graph, now, next, schedule)?;
    sample.loss_and_grad(params, &params.config.layout.field_names())
}

/// Loss only, for finite-difference probes.
pub fn loss(
    params: &ProcessorParams,
    graph: &MeshGraph,
    now: &FrameState,
    next: &FrameState,
    schedule: &RewireSchedule,
) -> Result<f64> {
    params.validate()?;
    Ok(Sample::build(params, graph, now, next, schedule)?.loss(params))
}
