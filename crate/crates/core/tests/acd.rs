use num_rational::Ratio;
use proptest::prelude::*;

use congest_coloring::acd::{antidegree, compute_acd, external_degree, verify_acd};
use congest_coloring::graph_io::{friend_oracle, generate, Model, PaletteAssignment};
use congest_coloring::{Network, SimConfig};

fn planted() -> impl Strategy<Value = Model> {
    (2usize..6, 24usize..90, 0.0f64..0.08, 0.0f64..0.002)
        .prop_map(|(k, delta, removal, inter_p)| Model::PlantedAlmostCliques { k, delta, removal, inter_p })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn decomposition_is_valid_and_constant_round(m in planted(), seed in any::<u64>()) {
        let g = generate(&m, seed).unwrap();
        let cfg = SimConfig::default();
        let mut net = Network::new(g.clone(), &cfg, seed).unwrap();
        net.set_palettes(&PaletteAssignment::shared_prefix(&g));
        let (acd, stats) = compute_acd(&mut net, &cfg).unwrap();
        let report = verify_acd(&g, &acd);
        prop_assert!(report.passed, "{:?}", report);
        prop_assert_eq!(stats.double_adoptions, 0);
        prop_assert!(stats.rounds <= 20);
        // partition of V
        let mut seen = vec![0u8; g.n()];
        for v in acd.v_sparse.iter().chain(acd.cliques.values().flatten()) {
            seen[*v as usize] += 1;
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        let (lo, hi) = (Ratio::from_integer(1) - acd.epsilon, Ratio::from_integer(1) + acd.epsilon);
        let delta = Ratio::from_integer(g.delta() as i64);
        for (id, members) in &acd.cliques {
            prop_assert!(members.contains(id));
            let size = Ratio::from_integer(members.len() as i64);
            prop_assert!(lo * delta <= size && size <= hi * delta);
            for &v in members {
                let inside = g.neighbors(v).iter().filter(|u| members.binary_search(u).is_ok()).count();
                prop_assert!(Ratio::from_integer(inside as i64) >= lo * delta);
                let sparse = g.neighbors(v).iter().filter(|u| acd.v_sparse.contains(u)).count();
                prop_assert_eq!(external_degree(&g, &acd, v).unwrap() + inside + sparse, g.degree(v));
                prop_assert_eq!(antidegree(&g, &acd, v).unwrap(), members.len() - 1 - inside);
            }
        }
    }
}

/// Cross-group edges would raise Δ above the group degree and put honest
/// intra-group pairs right at the friend threshold, so none are planted here.
/// The gossip sample has about √Δ IDs, so higher removal needs larger Δ.
#[test]
fn detected_f_edges_are_friend_edges() {
    let cfg = SimConfig::default();
    for (delta, removal) in [(128, 0.002), (128, 0.005), (256, 0.01), (512, 0.01)] {
        let (mut total, mut friends) = (0usize, 0usize);
        for seed in 0..4 {
            let g = generate(&Model::PlantedAlmostCliques { k: 3, delta, removal, inter_p: 0.0 }, seed).unwrap();
            let mut net = Network::new(g.clone(), &cfg, seed).unwrap();
            net.set_palettes(&PaletteAssignment::shared_prefix(&g));
            let (_, stats) = compute_acd(&mut net, &cfg).unwrap();
            total += stats.f_edges.len();
            friends += stats.f_edges.iter().filter(|&&(u, v)| friend_oracle(&g, u, v, cfg.delta * 4)).count();
        }
        assert!(total > 0);
        assert!(friends as f64 >= 0.99 * total as f64, "Δ={delta} removal {removal}: {friends} of {total}");
    }
}

#[test]
fn sparse_graph_has_no_cliques() {
    let g = generate(&Model::Gnp { n: 600, p: 0.1 }, 1).unwrap();
    let cfg = SimConfig::default();
    let mut net = Network::new(g.clone(), &cfg, 1).unwrap();
    net.set_palettes(&PaletteAssignment::shared_prefix(&g));
    let (acd, _) = compute_acd(&mut net, &cfg).unwrap();
    assert!(acd.cliques.is_empty());
    assert_eq!(acd.v_sparse.len(), 600);
    assert!(verify_acd(&g, &acd).passed);
}
