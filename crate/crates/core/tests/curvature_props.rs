mod common;

use common::*;
use meshrewire::curvature::{
    bottleneck_nodes, edge_curvature, node_curvature, percentile, walk_distribution, wasserstein1, CurvatureReport,
    WalkDistribution,
};
use meshrewire::{Error, MeshGraph};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn small_graph_examples() {
    let tri = MeshGraph::from_edges(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
    let p0 = walk_distribution(&tri, 0).unwrap();
    assert_eq!(p0.support, vec![(1, 0.5), (2, 0.5)]);
    let p1 = walk_distribution(&tri, 1).unwrap();
    assert!((wasserstein1(&tri, &p0, &p1).unwrap() - 0.5).abs() < 1e-12);
    assert_eq!(wasserstein1(&tri, &p0, &p0).unwrap(), 0.0);

    let path = MeshGraph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
    let a = walk_distribution(&path, 0).unwrap();
    let b = walk_distribution(&path, 1).unwrap();
    assert!((wasserstein1(&path, &a, &b).unwrap() - 1.0).abs() < 1e-12);
    assert!(edge_curvature(&path, 0, 1).unwrap().abs() < 1e-12);
    assert!(matches!(edge_curvature(&path, 0, 2), Err(Error::NotAnEdge(..))));

    let star = MeshGraph::from_edges(4, &[(0, 1), (0, 2), (0, 3)]).unwrap();
    let c = walk_distribution(&star, 0).unwrap();
    assert!(c.support.iter().all(|&(_, p)| (p - 1.0 / 3.0).abs() < 1e-15));

    let isolated = MeshGraph::from_edges(2, &[]).unwrap();
    let err = walk_distribution(&isolated, 0).unwrap_err();
    assert!(err.to_string().contains("isolated node"), "{err}");

    // Node curvature is the mean over incident edges.
    let report = CurvatureReport::compute(&path, 50.0).unwrap();
    assert!(node_curvature(&path, 1, &report.edge_kappa).unwrap().abs() < 1e-12);
    let tri_report = CurvatureReport::compute(&tri, 50.0).unwrap();
    assert!((tri_report.node_gamma[0] - 0.5).abs() < 1e-12);
}

#[test]
fn bottleneck_examples() {
    // Linear percentile: index 0.25·3 = 0.75 between −1.0 and 0.0.
    let gamma = [-1.0, 0.0, 0.2, 0.5];
    let expected = -1.0 + 0.75 * (0.0 - (-1.0));
    assert!((percentile(&gamma, 25.0).unwrap() - expected).abs() < 1e-15);
    assert_eq!(bottleneck_nodes(&gamma, 25.0).unwrap(), vec![0]);
    assert_eq!(bottleneck_nodes(&[0.1; 5], 1.0).unwrap(), vec![0, 1, 2, 3, 4]);
    assert_eq!(bottleneck_nodes(&[0.3], 50.0).unwrap(), vec![0]);
    assert!(bottleneck_nodes(&[], 50.0).is_err());
}

#[test]
fn invalid_walk_distributions() {
    assert!(WalkDistribution::new(vec![(0, 0.5), (1, 0.25)]).is_err());
    assert!(WalkDistribution::new(vec![(0, 0.5), (0, 0.5)]).is_err());
    assert!(WalkDistribution::new(vec![(0, 1.0), (1, 0.0)]).is_err());
}

fn mesh_strategy() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (2usize..=10, any::<u64>(), 0.0f64..0.6).prop_map(|(n, seed, extra)| {
        let mut r = rng(seed);
        (n, random_edges(n, 4, extra, &mut r))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn curvature_matches_coupling_enumeration((n, edges) in mesh_strategy()) {
        let g = MeshGraph::from_edges(n, &edges).unwrap();
        for &(i, j) in &edges {
            let kappa = edge_curvature(&g, i, j).unwrap();
            let oracle = orc_oracle(n, &edges, i, j);
            prop_assert!((kappa - oracle).abs() < 1e-9, "edge ({i},{j}): {kappa} vs {oracle}");
            prop_assert_eq!(kappa.to_bits(), edge_curvature(&g, j, i).unwrap().to_bits());
            prop_assert!((-2.0..=1.0).contains(&kappa));
            let w = wasserstein1(&g, &walk_distribution(&g, i).unwrap(), &walk_distribution(&g, j).unwrap()).unwrap();
            prop_assert_eq!(kappa, 1.0 - w);
        }
    }

    #[test]
    fn wasserstein_is_a_metric((n, edges) in mesh_strategy(), picks in proptest::collection::vec(0usize..100, 3)) {
        let g = MeshGraph::from_edges(n, &edges).unwrap();
        let nodes: Vec<usize> = picks.iter().map(|p| p % n).collect();
        let d: Vec<WalkDistribution> = nodes.iter().map(|&i| walk_distribution(&g, i).unwrap()).collect();
        let w = |a: usize, b: usize| wasserstein1(&g, &d[a], &d[b]).unwrap();
        for a in 0..3 {
            prop_assert!(w(a, a).abs() < 1e-12);
            for b in 0..3 {
                prop_assert!((w(a, b) - w(b, a)).abs() < 1e-12);
                prop_assert!(w(a, b) >= -1e-12);
                for c in 0..3 {
                    prop_assert!(w(a, c) <= w(a, b) + w(b, c) + 1e-12);
                }
            }
        }
    }

    #[test]
    fn report_invariants((n, edges) in mesh_strategy(), a in 1.0f64..=100.0) {
        let g = MeshGraph::from_edges(n, &edges).unwrap();
        let report = CurvatureReport::compute(&g, a).unwrap();
        for i in 0..n {
            let incident: Vec<f64> = g.neighbors(i).iter().map(|&j| report.edge_kappa.get(i, j).unwrap()).collect();
            let mean = incident.iter().sum::<f64>() / incident.len() as f64;
            prop_assert!((report.node_gamma[i] - mean).abs() < 1e-12);
        }
        let threshold = percentile(&report.node_gamma, a).unwrap();
        prop_assert!(report.bottleneck_set.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(!report.bottleneck_set.is_empty());
        for i in 0..n {
            prop_assert_eq!(report.bottleneck_set.contains(&i), report.node_gamma[i] <= threshold);
        }
    }

    #[test]
    fn bottlenecks_grow_with_percentile(gamma in proptest::collection::vec(-2.0f64..1.0, 1..30), a1 in 0.1f64..=100.0, a2 in 0.1f64..=100.0) {
        let (lo, hi) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
        let small = bottleneck_nodes(&gamma, lo).unwrap();
        let large = bottleneck_nodes(&gamma, hi).unwrap();
        prop_assert!(small.iter().all(|i| large.contains(i)));
    }

    #[test]
    fn percentile_matches_direct_interpolation(gamma in proptest::collection::vec(-2.0f64..1.0, 1..30), a in 0.1f64..=100.0) {
        let mut sorted = gamma.clone();
        sorted.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let pos = a / 100.0 * (sorted.len() - 1) as f64;
        let k = pos.floor() as usize;
        let expected = if k + 1 < sorted.len() { sorted[k] + (pos - k as f64) * (sorted[k + 1] - sorted[k]) } else { sorted[k] };
        prop_assert!((percentile(&gamma, a).unwrap() - expected).abs() < 1e-12);
    }
}

#[test]
fn random_supports_match_enumeration() {
    // Arbitrary marginals on a grid of 1/12, not only uniform walks.
    let mut r = rng(11);
    for _ in 0..40 {
        let n = r.gen_range(4..=9);
        let edges = random_edges(n, 4, 0.3, &mut r);
        let g = MeshGraph::from_edges(n, &edges).unwrap();
        let draw = |r: &mut rand_chacha::ChaCha8Rng| {
            let k = r.gen_range(1..=4.min(n));
            let mut nodes: Vec<usize> = (0..n).collect();
            rand::seq::SliceRandom::shuffle(&mut nodes[..], r);
            nodes.truncate(k);
            let mut units = vec![1u32; k];
            for _ in k..12 {
                units[r.gen_range(0..k)] += 1;
            }
            nodes.into_iter().zip(units).collect::<Vec<_>>()
        };
        let p = draw(&mut r);
        let q = draw(&mut r);
        let table: Vec<_> = (0..n).map(|s| bfs(n, &edges, s)).collect();
        let oracle = brute_w1(&p, &q, 12, &|a, b| table[a][b].unwrap() as f64);
        let to_dist = |v: &[(usize, u32)]| WalkDistribution::new(v.iter().map(|&(i, u)| (i, u as f64 / 12.0)).collect()).unwrap();
        let w = wasserstein1(&g, &to_dist(&p), &to_dist(&q)).unwrap();
        assert!((w - oracle).abs() < 1e-9, "{p:?} {q:?}: {w} vs {oracle}");
    }
}
