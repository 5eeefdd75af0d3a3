#![allow(dead_code)]

use meshrewire::{FrameState, MeshGraph, NodeType};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::VecDeque;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Connected undirected edge list (i < j) with every degree ≤ `max_degree`.
pub fn random_edges<R: Rng>(n: usize, max_degree: usize, extra: f64, rng: &mut R) -> Vec<(usize, usize)> {
    assert!(max_degree >= 2 || n <= 2);
    let mut deg = vec![0usize; n];
    let mut edges = Vec::new();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    for k in 1..n {
        let open: Vec<usize> = order[..k].iter().copied().filter(|&v| deg[v] < max_degree).collect();
        let parent = open[rng.gen_range(0..open.len())];
        let child = order[k];
        edges.push((parent.min(child), parent.max(child)));
        deg[parent] += 1;
        deg[child] += 1;
    }
    for i in 0..n {
        for j in i + 1..n {
            if edges.contains(&(i, j)) || deg[i] >= max_degree || deg[j] >= max_degree {
                continue;
            }
            if rng.gen_bool(extra) {
                edges.push((i, j));
                deg[i] += 1;
                deg[j] += 1;
            }
        }
    }
    edges.sort_unstable();
    edges
}

pub fn random_types<R: Rng>(n: usize, rng: &mut R) -> Vec<NodeType> {
    let mut types: Vec<NodeType> = (0..n)
        .map(|_| match rng.gen_range(0..8) {
            0 => NodeType::Wall,
            1 => NodeType::Inflow,
            2 => NodeType::Outflow,
            _ => NodeType::Fluid,
        })
        .collect();
    types[0] = NodeType::Fluid;
    types
}

pub fn random_positions<R: Rng>(n: usize, rng: &mut R) -> Vec<[f64; 2]> {
    (0..n).map(|_| [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]).collect()
}

/// Random connected graph with random node types and positions.
pub fn random_mesh<R: Rng>(n: usize, max_degree: usize, extra: f64, rng: &mut R) -> (MeshGraph, Vec<(usize, usize)>) {
    let edges = random_edges(n, max_degree, extra, rng);
    let graph = MeshGraph::new(random_types(n, rng), random_positions(n, rng), &edges).unwrap();
    (graph, edges)
}

pub fn random_frame<R: Rng>(n: usize, scale: f64, rng: &mut R) -> FrameState {
    FrameState::new(
        0,
        (0..n)
            .map(|_| [rng.gen_range(-scale..scale), rng.gen_range(-scale..scale)])
            .collect(),
    )
}

pub fn path_edges(n: usize) -> Vec<(usize, usize)> {
    (0..n - 1).map(|i| (i, i + 1)).collect()
}

pub fn adjacency(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    adj
}

/// Hop distances from `s`, computed from the raw edge list.
pub fn bfs(n: usize, edges: &[(usize, usize)], s: usize) -> Vec<Option<usize>> {
    let adj = adjacency(n, edges);
    let mut dist = vec![None; n];
    dist[s] = Some(0);
    let mut queue = VecDeque::from([s]);
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if dist[v].is_none() {
                dist[v] = Some(dist[u].unwrap() + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Minimum transport cost over every coupling with entries on the grid
/// `1/units`. Marginals are given in grid units and must each sum to `units`.
/// Transportation polytopes with integral marginals have integral vertices,
/// so this is the exact optimum.
pub fn brute_w1(p: &[(usize, u32)], q: &[(usize, u32)], units: u32, dist: &dyn Fn(usize, usize) -> f64) -> f64 {
    assert_eq!(p.iter().map(|x| x.1).sum::<u32>(), units);
    assert_eq!(q.iter().map(|x| x.1).sum::<u32>(), units);
    let cost: Vec<Vec<f64>> = p.iter().map(|&(a, _)| q.iter().map(|&(b, _)| dist(a, b)).collect()).collect();
    let mut row_left: Vec<u32> = p.iter().map(|x| x.1).collect();
    let mut col_left: Vec<u32> = q.iter().map(|x| x.1).collect();
    let mut best = f64::INFINITY;
    fn go(
        r: usize,
        c: usize,
        acc: f64,
        cost: &[Vec<f64>],
        row_left: &mut [u32],
        col_left: &mut [u32],
        best: &mut f64,
    ) {
        let rows = cost.len();
        let cols = cost[0].len();
        if r == rows {
            if col_left.iter().all(|&x| x == 0) && acc < *best {
                *best = acc;
            }
            return;
        }
        let (nr, nc) = if c + 1 == cols { (r + 1, 0) } else { (r, c + 1) };
        let hi = row_left[r].min(col_left[c]);
        let lo = if c + 1 == cols { row_left[r] } else { 0 };
        if lo > hi {
            return;
        }
        for x in lo..=hi {
            row_left[r] -= x;
            col_left[c] -= x;
            go(nr, nc, acc + x as f64 * cost[r][c], cost, row_left, col_left, best);
            row_left[r] += x;
            col_left[c] += x;
        }
    }
    go(0, 0, 0.0, &cost, &mut row_left, &mut col_left, &mut best);
    best / units as f64
}

/// Uniform walk distribution of `i` in units of 1/12 (degree ≤ 4).
pub fn walk_units(adj: &[Vec<usize>], i: usize) -> Vec<(usize, u32)> {
    let d = adj[i].len() as u32;
    assert!(d >= 1 && 12 % d == 0);
    adj[i].iter().map(|&j| (j, 12 / d)).collect()
}

/// `1 − W1(P_i, P_j)` from raw edges, by coupling enumeration.
pub fn orc_oracle(n: usize, edges: &[(usize, usize)], i: usize, j: usize) -> f64 {
    let adj = adjacency(n, edges);
    let table: Vec<Vec<Option<usize>>> = (0..n).map(|s| bfs(n, edges, s)).collect();
    let dist = |a: usize, b: usize| table[a][b].expect("same component") as f64;
    1.0 - brute_w1(&walk_units(&adj, i), &walk_units(&adj, j), 12, &dist)
}

pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub mod model {
    use super::*;
    use meshrewire::processor::{loss, loss_and_grad, Activation, FeatureLayout, ModelConfig, Normalizer, ProcessorParams};
    use meshrewire::rewiring::{build_schedule, RewireSchedule, Variant};

    pub struct ModelCase {
        pub params: ProcessorParams,
        pub graph: MeshGraph,
        pub now: FrameState,
        pub next: FrameState,
        pub schedule: RewireSchedule,
    }

    /// Random graph, frame pair, adaptive schedule and tanh model with a
    /// fitted normalizer.
    pub fn model_case(seed: u64, n: usize, layers: usize, hidden: usize, residual: bool, pressure: bool) -> ModelCase {
        let mut r = rng(seed);
        let (graph, _) = random_mesh(n, 4, 0.3, &mut r);
        let mut now = random_frame(n, 1.0, &mut r);
        let mut next = random_frame(n, 1.0, &mut r);
        next.time_index = 1;
        if pressure {
            now.pressure = Some((0..n).map(|_| r.gen_range(-1.0..1.0)).collect());
            next.pressure = Some((0..n).map(|_| r.gen_range(-1.0..1.0)).collect());
        }
        let layout = FeatureLayout::of_frame(&now);
        let config = ModelConfig {
            layout,
            hidden_dim: hidden,
            layers,
            mlp_depth: 1,
            activation: Activation::Tanh,
            residual,
        };
        let mut params = ProcessorParams::init(config, seed ^ 0xabc).unwrap();
        params.normalizer = Normalizer::fit(layout, &[(&graph, &now, &next)]).unwrap();
        // Nonzero biases so every parameter is exercised.
        let mut flat = params.to_flat();
        for x in flat.iter_mut() {
            *x += r.gen_range(-0.1..0.1);
        }
        params.set_flat(&flat).unwrap();
        let schedule = build_schedule(&graph, &now, 50.0, 0.7, layers, Variant::Adaptive).unwrap();
        ModelCase {
            params,
            graph,
            now,
            next,
            schedule,
        }
    }

    /// Largest `|analytic − central difference| / max(|analytic|, |fd|, floor)`.
    pub fn gradient_check(case: &ModelCase, step: f64, floor: f64) -> f64 {
        let (_, grad) = loss_and_grad(&case.params, &case.graph, &case.now, &case.next, &case.schedule).unwrap();
        let analytic = grad.to_flat();
        let base = case.params.to_flat();
        let mut probe = case.params.clone();
        let mut worst: f64 = 0.0;
        for k in 0..base.len() {
            let mut x = base.clone();
            x[k] = base[k] + step;
            probe.set_flat(&x).unwrap();
            let up = loss(&probe, &case.graph, &case.now, &case.next, &case.schedule).unwrap();
            x[k] = base[k] - step;
            probe.set_flat(&x).unwrap();
            let down = loss(&probe, &case.graph, &case.now, &case.next, &case.schedule).unwrap();
            let fd = (up - down) / (2.0 * step);
            worst = worst.max(rel_err(analytic[k], fd, floor));
        }
        worst
    }
}
