use std::collections::HashSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use congest_coloring::graph_io::{generate, verify_coloring, Graph, Model, PaletteAssignment};
use congest_coloring::small_degree::{
    color_small_degree, decompose_clusters, default_radius, flood_components, reduce_colorspace, shatter, ReductionJob,
};
use congest_coloring::{Color, Network, NodeId, SimConfig};

fn net(g: &Graph, pal: &PaletteAssignment, seed: u64, cfg: &SimConfig) -> Network {
    let mut n = Network::new(g.clone(), cfg, seed).unwrap();
    n.set_palettes(pal);
    n
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn carving_is_a_proper_decomposition(n in 1usize..120, p in 0.0f64..0.15, seed in any::<u64>(), radius in prop::option::of(1u32..6)) {
        let g = generate(&Model::Gnp { n, p }, seed).unwrap();
        let pal = PaletteAssignment::shared_prefix(&g);
        let mut nw = net(&g, &pal, seed, &SimConfig::default());
        let all: Vec<NodeId> = g.nodes().collect();
        for comp in flood_components(&mut nw, &all).unwrap() {
            let dc = decompose_clusters(&mut nw, &comp, radius, comp.len()).unwrap();
            prop_assert!(dc.audit(&g, &comp).is_ok(), "{:?}", dc.audit(&g, &comp));
            let r = radius.unwrap_or_else(|| default_radius(comp.len()));
            prop_assert!(dc.clusters().all(|c| c.diameter <= 2 * r));
            for class in &dc.classes {
                let owner: Vec<(NodeId, NodeId)> = class.iter().flat_map(|c| c.members.iter().map(move |&v| (v, c.root))).collect();
                let map: std::collections::HashMap<NodeId, NodeId> = owner.into_iter().collect();
                for (&v, &root) in &map {
                    for u in g.neighbors(v) {
                        if let Some(&other) = map.get(u) {
                            prop_assert_eq!(other, root, "edge {}-{} joins two clusters of one class", v, u);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn reduction_keeps_list_sizes(k in 1usize..9, log_u in 4u32..44, seed in any::<u64>()) {
        let universe = (1u64 << log_u).max(k as u64 * 2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lists: Vec<Vec<Color>> = (0..k)
            .map(|_| {
                let mut set = HashSet::new();
                while set.len() < k {
                    set.insert(rng.gen_range(1..=universe));
                }
                let mut l: Vec<Color> = set.into_iter().map(Color).collect();
                l.sort();
                l
            })
            .collect();
        let g = generate(&Model::Complete { n: k }, 0).unwrap();
        let pal = PaletteAssignment { universe, lists: lists.clone() };
        let mut nw = net(&g, &pal, seed, &SimConfig::default());
        let members: Vec<NodeId> = (0..k as NodeId).collect();
        let m = reduce_colorspace(&mut nw, &ReductionJob { root: 0, members, lists: lists.clone() }).unwrap();
        prop_assert_eq!(m.criterion(&lists), 0);
        for l in &lists {
            let mut img: Vec<u64> = l.iter().map(|&c| m.apply(c)).collect();
            img.sort_unstable();
            img.dedup();
            prop_assert_eq!(img.len(), l.len());
            prop_assert!(img.iter().all(|&x| x < m.p));
        }
        if m.p <= 1 << 13 {
            let cost = |g: u64| lists.iter().filter(|l| !m.preserves_at(l, g)).count();
            prop_assert_eq!(cost(m.g), (0..m.p).map(cost).min().unwrap());
        }
    }

    #[test]
    fn small_degree_colors_deg_plus_one_instances(n in 2usize..250, p in 0.005f64..0.08, seed in any::<u64>()) {
        let g = generate(&Model::Gnp { n, p }, seed).unwrap();
        let pal = PaletteAssignment::random_degree_plus_one(&g, (n * n) as u64, seed);
        let mut nw = net(&g, &pal, seed, &SimConfig::default());
        let all: Vec<NodeId> = g.nodes().collect();
        let s = color_small_degree(&mut nw, &all, &SimConfig::default()).unwrap();
        prop_assert!(verify_coloring(&g, &pal, &nw.coloring(), false).passed);
        prop_assert!(s.colormaps.iter().all(|m| m.p > 2));
        prop_assert!(nw.stats().max_edge_bits_per_round <= nw.bandwidth_bits());
    }
}

#[test]
fn single_node_cluster() {
    let g = Graph::from_edges(1, &[]).unwrap();
    let pal = PaletteAssignment::shared_prefix(&g);
    let mut nw = net(&g, &pal, 1, &SimConfig::default());
    let dc = decompose_clusters(&mut nw, &[0], None, 10).unwrap();
    assert_eq!(dc.classes.len(), 1);
    assert_eq!(dc.clusters().count(), 1);
    assert_eq!(dc.clusters().next().unwrap().diameter, 0);
}

#[test]
fn already_colored_h_has_no_components() {
    let g = generate(&Model::Path { n: 4 }, 0).unwrap();
    let pal = PaletteAssignment::shared_prefix(&g);
    let mut nw = net(&g, &pal, 1, &SimConfig::default());
    let all: Vec<NodeId> = g.nodes().collect();
    color_small_degree(&mut nw, &all, &SimConfig::default()).unwrap();
    let s = shatter(&mut nw, &all, &SimConfig::default()).unwrap();
    assert!(s.components.is_empty());
}

#[test]
fn matching_shatters_into_single_edges() {
    let edges: Vec<(NodeId, NodeId)> = (0..200).map(|i| (2 * i, 2 * i + 1)).collect();
    let g = Graph::from_edges(400, &edges).unwrap();
    let pal = PaletteAssignment::shared_prefix(&g);
    let mut nw = net(&g, &pal, 3, &SimConfig::default());
    let all: Vec<NodeId> = g.nodes().collect();
    let s = shatter(&mut nw, &all, &SimConfig::default()).unwrap();
    assert!(s.components.iter().all(|c| c.len() <= 2));
}

#[test]
fn shattered_components_are_small() {
    let n = 8192;
    let log_n = (n as f64).log2();
    let mut ok = 0;
    let seeds = 20;
    for seed in 0..seeds {
        let g = generate(&Model::Gnp { n, p: 8.0 / n as f64 }, seed).unwrap();
        let pal = PaletteAssignment::shared_prefix(&g);
        let mut nw = net(&g, &pal, seed, &SimConfig::default());
        let all: Vec<NodeId> = g.nodes().collect();
        let dh = g.delta() as f64;
        let s = shatter(&mut nw, &all, &SimConfig::default()).unwrap();
        let biggest = s.components.iter().map(Vec::len).max().unwrap_or(0) as f64;
        ok += usize::from(biggest <= dh * dh * log_n);
    }
    assert!(ok as f64 >= 0.95 * seeds as f64, "{ok} of {seeds}");
}

#[test]
fn fifty_node_cluster_needs_no_retry() {
    let mut cfg = SimConfig::default();
    // ceil(5.6 · log2 50) = 32 instances, and no shattering so one big cluster forms.
    cfg.cluster_a = 5.6;
    cfg.k6 = 0.0;
    for seed in 0..100 {
        let g = generate(&Model::Gnp { n: 50, p: 0.15 }, seed).unwrap();
        let pal = PaletteAssignment::random_degree_plus_one(&g, 2500, seed);
        let mut nw = net(&g, &pal, seed, &cfg);
        let all: Vec<NodeId> = g.nodes().collect();
        let s = color_small_degree(&mut nw, &all, &cfg).unwrap();
        assert_eq!(s.instances, 32);
        assert_eq!(s.retries, 0, "seed {seed}");
        assert!(verify_coloring(&g, &pal, &nw.coloring(), false).passed);
    }
}

#[test]
fn colors_a_sparse_random_graph_of_4096() {
    for seed in 0..3 {
        let g = generate(&Model::Gnp { n: 4096, p: 8.0 / 4096.0 }, seed).unwrap();
        let pal = PaletteAssignment::random_degree_plus_one(&g, 4096 * 4096, seed);
        let mut nw = net(&g, &pal, seed, &SimConfig::default());
        let all: Vec<NodeId> = g.nodes().collect();
        color_small_degree(&mut nw, &all, &SimConfig::default()).unwrap();
        assert!(verify_coloring(&g, &pal, &nw.coloring(), false).passed);
    }
}
