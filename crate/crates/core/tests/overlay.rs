use std::collections::BTreeMap;
use std::sync::Arc;

use proptest::prelude::*;

use congest_coloring::acd::compute_acd;
use congest_coloring::graph_io::{generate, Model, PaletteAssignment};
use congest_coloring::overlay::{compute_overlays, route, verify_overlay, RoutingRequest};
use congest_coloring::{run_pipeline, Color, Network, SimConfig};

fn setup(m: &Model, seed: u64) -> (Network, congest_coloring::acd::AlmostCliqueDecomposition, SimConfig) {
    let g = generate(m, seed).unwrap();
    let cfg = SimConfig::default();
    let mut net = Network::new(g.clone(), &cfg, seed).unwrap();
    net.set_palettes(&PaletteAssignment::shared_prefix(&g));
    let (acd, _) = compute_acd(&mut net, &cfg).unwrap();
    (net, acd, cfg)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn overlays_have_congestion_two_and_valid_relays(
        k in 2usize..5, delta in 30usize..90, removal in 0.0f64..0.12, seed in any::<u64>()
    ) {
        let (mut net, acd, cfg) = setup(&Model::PlantedAlmostCliques { k, delta, removal, inter_p: 0.0 }, seed);
        let set = compute_overlays(&mut net, &acd, &cfg).unwrap();
        prop_assert!(set.failures.is_empty());
        for (id, ov) in &set.overlays {
            let report = verify_overlay(net.graph(), &acd.cliques[id], ov);
            prop_assert!(report.passed, "{:?}", report);
            prop_assert!(report.max_congestion <= 2);
            for (&(u, v), &w) in &ov.relays {
                prop_assert!(net.graph().has_edge(u, w) && net.graph().has_edge(v, w));
            }
        }
    }

    #[test]
    fn route_delivers_each_request_once(seed in any::<u64>(), per_node in 1usize..4) {
        let (mut net, acd, cfg) = setup(&Model::PlantedAlmostCliques { k: 2, delta: 48, removal: 0.05, inter_p: 0.0 }, seed);
        let set = compute_overlays(&mut net, &acd, &cfg).unwrap();
        let mut requests = Vec::new();
        for members in acd.cliques.values() {
            for (i, &src) in members.iter().enumerate() {
                for j in 1..=per_node {
                    let dst = members[(i + j * 7) % members.len()];
                    if dst != src {
                        requests.push(RoutingRequest { src, dst, payload: vec![Color(j as u64)] });
                    }
                }
            }
        }
        let out = route(&mut net, &set.overlays, &requests, cfg.load_cap).unwrap();
        prop_assert_eq!(out.delivered, requests.len());
        prop_assert!(net.stats().max_edge_bits_per_round <= net.bandwidth_bits());
    }
}

#[test]
fn routing_examples() {
    let g = generate(&Model::Complete { n: 6 }, 0).unwrap();
    let mut net = Network::new(g, &SimConfig::default(), 1).unwrap();
    let none = BTreeMap::new();
    assert_eq!(route(&mut net, &none, &[], 4).unwrap().rounds, 0);
    let one_each: Vec<RoutingRequest> =
        (0..6).flat_map(|u| (0..6).filter(move |&v| v != u).map(move |v| RoutingRequest { src: u, dst: v, payload: vec![Color(1)] })).collect();
    let out = route(&mut net, &none, &one_each, 4).unwrap();
    assert_eq!(out.rounds, 1);
    assert_eq!(out.delivered, 30);
}

#[test]
fn load_cap_is_enforced() {
    let g = generate(&Model::Complete { n: 3 }, 0).unwrap();
    let mut net = Network::new(g, &SimConfig::default(), 1).unwrap();
    let heavy = vec![RoutingRequest { src: 0, dst: 1, payload: vec![Color(1); 100] }];
    assert!(route(&mut net, &BTreeMap::new(), &heavy, 1).is_err());
}

#[test]
fn sub_palette_gathers_stay_under_the_round_cap() {
    // Without the R_0 trials the gathers carry real sub-palettes.
    let mut cfg = SimConfig::default();
    cfg.k3 = 0.0;
    let m = Model::PlantedAlmostCliques { k: 4, delta: 128, removal: 0.02, inter_p: 0.0 };
    let mut worst = 0;
    for seed in 0..8 {
        let g = Arc::new(generate(&m, seed).unwrap());
        let r = run_pipeline(&g, &PaletteAssignment::shared_prefix(&g), &cfg, seed).unwrap();
        assert!(r.valid());
        if let Some(d) = &r.dense {
            worst = worst.max(d.max_route_rounds);
        }
    }
    assert!(worst <= cfg.r_cap, "worst gather took {worst} rounds");
}
