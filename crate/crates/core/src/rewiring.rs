//! Partner selection, rewiring-delay scores and the layer-indexed neighbor
//! schedule.
//!
//! Every bottleneck node `i` is paired with the node whose velocity differs
//! most from its own. The pair is connected after a delay
//! `s = min(β·d(i, i*) / ‖v_i − v_i*‖, L)`: it joins the neighbor sets at
//! block `⌈s⌉` and stays there for every later block. Rewired edges are
//! symmetric.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::curvature::CurvatureReport;
use crate::error::{Error, Result};
use crate::graph::{FrameState, MeshGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Delay from hop distance and velocity gap.
    Adaptive,
    /// Every pair active from the first block.
    StaticAllAtFirstLayer,
    /// Hop distance replaced by 1 in the delay.
    NoDistance,
    /// Velocity gap replaced by 1 in the delay.
    NoVelocity,
    /// Active from the first block, aggregated with weight `1/d`.
    WeightedEdges,
    /// No rewiring.
    None,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Adaptive,
        Variant::StaticAllAtFirstLayer,
        Variant::NoDistance,
        Variant::NoVelocity,
        Variant::WeightedEdges,
        Variant::None,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Adaptive => "adaptive",
            Variant::StaticAllAtFirstLayer => "static_all_at_first_layer",
            Variant::NoDistance => "no_distance",
            Variant::NoVelocity => "no_velocity",
            Variant::WeightedEdges => "weighted_edges",
            Variant::None => "none",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant '{s}'")))
    }
}

/// Hyperparameters of the rewiring stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewireParams {
    /// Percentile `a` selecting the lowest-curvature nodes.
    pub alpha_percent: f64,
    pub beta: f64,
    pub layers: usize,
    pub variant: Variant,
}

impl RewireParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_percent > 0.0 && self.alpha_percent <= 100.0) {
            return Err(Error::Config(format!("alpha {} outside (0, 100]", self.alpha_percent)));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta must be positive, got {}", self.beta)));
        }
        if self.layers == 0 {
            return Err(Error::Config("layers must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewirePair {
    pub source: usize,
    pub partner: usize,
    pub hop_distance: usize,
    pub velocity_gap: f64,
    pub delay: f64,
    pub activation_layer: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewireSchedule {
    pub pairs: Vec<RewirePair>,
    pub layers: usize,
    pub variant: Variant,
}

/// A directed rewired edge as seen by the processor: `target` aggregates the
/// message from `neighbor` from block `activation_layer` on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewiredEdge {
    pub target: usize,
    pub neighbor: usize,
    pub activation_layer: usize,
    pub weight: f64,
}

impl RewireSchedule {
    pub fn empty(layers: usize, variant: Variant) -> Self {
        RewireSchedule {
            pairs: Vec::new(),
            layers,
            variant,
        }
    }

    /// Both directions of every scheduled pair. When two pairs connect the
    /// same nodes the earlier activation wins.
    pub fn directed_edges(&self) -> Vec<RewiredEdge> {
        let mut map: BTreeMap<(usize, usize), RewiredEdge> = BTreeMap::new();
        for p in &self.pairs {
            let weight = match self.variant {
                Variant::WeightedEdges => 1.0 / p.hop_distance as f64,
                _ => 1.0,
            };
            for (t, nb) in [(p.source, p.partner), (p.partner, p.source)] {
                let edge = RewiredEdge {
                    target: t,
                    neighbor: nb,
                    activation_layer: p.activation_layer,
                    weight,
                };
                map.entry((t, nb))
                    .and_modify(|e| {
                        if edge.activation_layer < e.activation_layer {
                            *e = edge;
                        }
                    })
                    .or_insert(edge);
            }
        }
        map.into_values().collect()
    }

    /// CSV `source,partner,hop_distance,velocity_gap,delay,activation_layer`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("source,partner,hop_distance,velocity_gap,delay,activation_layer\n");
        for p in &self.pairs {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                p.source, p.partner, p.hop_distance, p.velocity_gap, p.delay, p.activation_layer
            ));
        }
        out
    }
}

/// The node with the largest velocity gap to `i`; ties go to the smallest id.
pub fn optimal_partner(graph: &MeshGraph, frame: &FrameState, i: usize) -> Result<usize> {
    graph.check_node(i)?;
    let n = graph.node_count();
    if n < 2 {
        return Err(Error::Config("partner selection needs at least two nodes".into()));
    }
    frame.validate(n, "frame")?;
    let vi = frame.velocity[i];
    let mut best: Option<(usize, f64)> = None;
    for (j, vj) in frame.velocity.iter().enumerate() {
        if j == i {
            continue;
        }
        let gap = velocity_gap(vi, *vj);
        if best.is_none_or(|(_, g)| gap > g) {
            best = Some((j, gap));
        }
    }
    match best {
        Some((j, gap)) if gap > 0.0 => Ok(j),
        _ => Err(Error::NoInformativePartner(i)),
    }
}

fn velocity_gap(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// `min(β·d / gap, L)`.
pub fn delay_score(hop_distance: usize, velocity_gap: f64, beta: f64, layers: usize) -> Result<f64> {
    if !(velocity_gap > 0.0) {
        return Err(Error::Config(format!("velocity gap must be positive, got {velocity_gap}")));
    }
    if hop_distance == 0 || !(beta > 0.0) || layers == 0 {
        return Err(Error::Config("delay score needs d >= 1, beta > 0, L >= 1".into()));
    }
    Ok((beta * hop_distance as f64 / velocity_gap).min(layers as f64))
}

/// The unique block `l + 1` with `l < s ≤ l + 1`, clamped to `[1, L]`.
pub fn activation_layer(delay: f64, layers: usize) -> usize {
    (delay.ceil() as usize).clamp(1, layers)
}

/// Runs curvature, bottleneck selection, partner choice and delay scoring.
pub fn build_schedule(
    graph: &MeshGraph,
    frame: &FrameState,
    a: f64,
    beta: f64,
    layers: usize,
    variant: Variant,
) -> Result<RewireSchedule> {
    let params = RewireParams {
        alpha_percent: a,
        beta,
        layers,
        variant,
    };
    params.validate()?;
    if variant == Variant::None {
        return Ok(RewireSchedule::empty(layers, variant));
    }
    let report = CurvatureReport::compute(graph, a)?;
    build_schedule_with(graph, &report.bottleneck_set, frame, &params)
}

/// Like [`build_schedule`] with the bottleneck set already known. Curvature
/// depends only on the graph, so rollouts compute it once.
pub fn build_schedule_with(
    graph: &MeshGraph,
    bottlenecks: &[usize],
    frame: &FrameState,
    params: &RewireParams,
) -> Result<RewireSchedule> {
    params.validate()?;
    frame.validate(graph.node_count(), "frame")?;
    let layers = params.layers;
    let mut pairs = Vec::new();
    if params.variant != Variant::None {
        let mut sources = bottlenecks.to_vec();
        sources.sort_unstable();
        sources.dedup();
        for source in sources {
            let partner = match optimal_partner(graph, frame, source) {
                Ok(p) => p,
                Err(Error::NoInformativePartner(_)) => continue,
                Err(e) => return Err(e),
            };
            if graph.has_edge(source, partner) {
                continue;
            }
            let Some(hop_distance) = graph.hop_distance(source, partner) else {
                // Different components: no finite delay.
                continue;
            };
            let velocity_gap = velocity_gap(frame.velocity[source], frame.velocity[partner]);
            let (d, gap) = match params.variant {
                Variant::NoDistance => (1, velocity_gap),
                Variant::NoVelocity => (hop_distance, 1.0),
                _ => (hop_distance, velocity_gap),
            };
            let delay = delay_score(d, gap, params.beta, layers)?;
            let activation_layer = match params.variant {
                Variant::StaticAllAtFirstLayer | Variant::WeightedEdges => 1,
                _ => activation_layer(delay, layers),
            };
            pairs.push(RewirePair {
                source,
                partner,
                hop_distance,
                velocity_gap,
                delay,
                activation_layer,
            });
        }
    }
    Ok(RewireSchedule {
        pairs,
        layers,
        variant: params.variant,
    })
}

/// Bottleneck set of a fixed mesh, reused to rebuild schedules as the
/// velocity field changes.
#[derive(Debug, Clone, PartialEq)]
pub struct Rewirer {
    pub params: RewireParams,
    pub bottlenecks: Vec<usize>,
}

impl Rewirer {
    pub fn new(graph: &MeshGraph, params: RewireParams) -> Result<Self> {
        params.validate()?;
        let bottlenecks = if params.variant == Variant::None {
            Vec::new()
        } else {
            CurvatureReport::compute(graph, params.alpha_percent)?.bottleneck_set
        };
        Ok(Rewirer { params, bottlenecks })
    }

    pub fn schedule(&self, graph: &MeshGraph, frame: &FrameState) -> Result<RewireSchedule> {
        build_schedule_with(graph, &self.bottlenecks, frame, &self.params)
    }
}

/// Neighbors of `i` used by block `l` (1-based): mesh neighbors plus every
/// rewired partner active at or before `l`, ascending.
pub fn neighbor_set(schedule: &RewireSchedule, graph: &MeshGraph, i: usize, l: usize) -> Result<Vec<usize>> {
    graph.check_node(i)?;
    if l == 0 || l > schedule.layers {
        return Err(Error::Config(format!("layer {l} outside [1, {}]", schedule.layers)));
    }
    let mut out = graph.neighbors(i).to_vec();
    for p in &schedule.pairs {
        if p.activation_layer > l {
            continue;
        }
        if p.source == i {
            out.push(p.partner);
        } else if p.partner == i {
            out.push(p.source);
        }
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(v: &[[f64; 2]]) -> FrameState {
        FrameState::new(0, v.to_vec())
    }

    fn path(n: usize) -> MeshGraph {
        let edges: Vec<_> = (0..n - 1).map(|i| (i, i + 1)).collect();
        MeshGraph::from_edges(n, &edges).unwrap()
    }

    #[test]
    fn partner_is_largest_gap() {
        let g = path(3);
        assert_eq!(optimal_partner(&g, &frame(&[[0.0, 0.0], [3.0, 4.0], [1.0, 0.0]]), 0).unwrap(), 1);
        assert_eq!(optimal_partner(&g, &frame(&[[1.0, 1.0], [1.0, 1.0], [2.0, 1.0]]), 0).unwrap(), 2);
        let err = optimal_partner(&g, &frame(&[[0.0, 0.0]; 3]), 0).unwrap_err();
        assert!(err.to_string().contains("no informative partner"));
    }

    #[test]
    fn partner_ties_take_smallest_id() {
        let g = path(4);
        let f = frame(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]]);
        assert_eq!(optimal_partner(&g, &f, 0).unwrap(), 1);
    }

    #[test]
    fn delay_examples() {
        assert_eq!(delay_score(5, 2.0, 1.0, 15).unwrap(), 2.5);
        assert_eq!(delay_score(100, 1.0, 1.0, 15).unwrap(), 15.0);
        assert_eq!(delay_score(3, 3.0, 2.0, 15).unwrap(), 2.0);
        assert!(delay_score(3, 0.0, 1.0, 15).is_err());
    }

    #[test]
    fn activation_layers() {
        assert_eq!(activation_layer(2.5, 15), 3);
        assert_eq!(activation_layer(1.0, 15), 1);
        assert_eq!(activation_layer(0.2, 15), 1);
        assert_eq!(activation_layer(2.0, 15), 2);
        assert_eq!(activation_layer(15.0, 15), 15);
    }

    fn manual(pairs: Vec<(usize, usize, usize)>, layers: usize) -> RewireSchedule {
        RewireSchedule {
            pairs: pairs
                .into_iter()
                .map(|(source, partner, activation_layer)| RewirePair {
                    source,
                    partner,
                    hop_distance: 3,
                    velocity_gap: 1.0,
                    delay: activation_layer as f64,
                    activation_layer,
                })
                .collect(),
            layers,
            variant: Variant::Adaptive,
        }
    }

    #[test]
    fn neighbor_set_accumulates() {
        let g = path(4);
        let s = manual(vec![(0, 3, 2)], 4);
        assert_eq!(neighbor_set(&s, &g, 0, 1).unwrap(), vec![1]);
        assert_eq!(neighbor_set(&s, &g, 0, 2).unwrap(), vec![1, 3]);
        assert_eq!(neighbor_set(&s, &g, 3, 2).unwrap(), vec![0, 2]);
        let empty = RewireSchedule::empty(4, Variant::None);
        assert_eq!(neighbor_set(&empty, &g, 1, 3).unwrap(), vec![0, 2]);
        let capped = manual(vec![(0, 3, 4)], 4);
        assert_eq!(neighbor_set(&capped, &g, 0, 4).unwrap(), vec![1, 3]);
        assert!(neighbor_set(&s, &g, 0, 0).is_err());
        assert!(neighbor_set(&s, &g, 0, 5).is_err());
    }

    fn long_path_frame(n: usize) -> (MeshGraph, FrameState) {
        let g = path(n);
        let v: Vec<[f64; 2]> = (0..n).map(|i| [i as f64 * 0.5, 0.0]).collect();
        (g, FrameState::new(0, v))
    }

    #[test]
    fn schedule_on_path_graph() {
        // Every path edge has zero curvature, so all nodes tie as
        // bottlenecks and each pairs with the far end of the velocity ramp.
        let (g, f) = long_path_frame(8);
        let s = build_schedule(&g, &f, 10.0, 1.0, 6, Variant::Adaptive).unwrap();
        assert_eq!(s.pairs.len(), 8);
        let p = &s.pairs[0];
        assert_eq!((p.source, p.partner, p.hop_distance), (0, 7, 7));
        assert!((p.velocity_gap - 3.5).abs() < 1e-12);
        assert!((p.delay - 2.0).abs() < 1e-12);
        assert_eq!(p.activation_layer, 2);
        let csv = s.to_csv();
        assert!(csv.starts_with("source,partner,hop_distance,velocity_gap,delay,activation_layer\n0,7,7,3.5,2,2\n"));
    }

    #[test]
    fn variants() {
        let (g, f) = long_path_frame(8);
        let none = build_schedule(&g, &f, 10.0, 1.0, 6, Variant::None).unwrap();
        assert!(none.pairs.is_empty());
        let st = build_schedule(&g, &f, 10.0, 4.0, 6, Variant::StaticAllAtFirstLayer).unwrap();
        assert!(st.pairs.iter().all(|p| p.activation_layer == 1));
        let nd = build_schedule(&g, &f, 10.0, 1.0, 6, Variant::NoDistance).unwrap();
        assert!((nd.pairs[0].delay - 1.0 / 3.5).abs() < 1e-12);
        assert_eq!(nd.pairs[0].hop_distance, 7);
        let nv = build_schedule(&g, &f, 10.0, 1.0, 6, Variant::NoVelocity).unwrap();
        assert_eq!(nv.pairs[0].delay, 6.0);
        let we = build_schedule(&g, &f, 10.0, 1.0, 6, Variant::WeightedEdges).unwrap();
        assert!(we.pairs.iter().all(|p| p.activation_layer == 1));
        let w = we.directed_edges();
        for e in &w {
            let d = g.hop_distance(e.target, e.neighbor).unwrap() as f64;
            assert!((e.weight - 1.0 / d).abs() < 1e-15);
        }
    }

    #[test]
    fn neighbor_pairs_are_dropped_and_zero_gaps_skipped() {
        let g = path(3);
        // Node 0's largest gap is its neighbor 1.
        let f = frame(&[[0.0, 0.0], [5.0, 0.0], [1.0, 0.0]]);
        let s = build_schedule(&g, &f, 100.0, 1.0, 4, Variant::Adaptive).unwrap();
        assert!(s.pairs.iter().all(|p| !g.has_edge(p.source, p.partner)));
        let still = frame(&[[1.0, 1.0]; 3]);
        let s = build_schedule(&g, &still, 100.0, 1.0, 4, Variant::Adaptive).unwrap();
        assert!(s.pairs.is_empty());
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
        assert!("bogus".parse::<Variant>().is_err());
    }
}
