use num_rational::Ratio;
use proptest::prelude::*;

use congest_coloring::graph_io::{generate, verify_coloring, Model, PaletteAssignment};
use congest_coloring::trials::{measure_slack, multi_trial, random_color_trial, slack_generation};
use congest_coloring::{Network, NodeId, SimConfig};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// Colors never change, slack never drops, and the partial coloring is
    /// proper after every iteration.
    #[test]
    fn trial_loop_invariants(n in 2usize..150, p in 0.02f64..0.4, seed in any::<u64>(), shared in any::<bool>()) {
        let g = generate(&Model::Gnp { n, p }, seed).unwrap();
        let pal = if shared {
            PaletteAssignment::shared_prefix(&g)
        } else {
            PaletteAssignment::random_degree_plus_one(&g, (2 * n) as u64, seed)
        };
        let mut net = Network::new(g.clone(), &SimConfig::default(), seed).unwrap();
        net.set_palettes(&pal);
        let mut colors = net.coloring();
        let mut slack: Vec<i64> = g.nodes().map(|v| measure_slack(&net, v, None)).collect();
        for _ in 0..12 {
            let live = net.uncolored();
            if live.is_empty() {
                break;
            }
            random_color_trial(&mut net, &live).unwrap();
            let now = net.coloring();
            for v in g.nodes() {
                let i = v as usize;
                if let Some(c) = colors[i] {
                    prop_assert_eq!(now[i], Some(c), "node {} changed color", v);
                }
                if now[i].is_none() {
                    let s = measure_slack(&net, v, None);
                    prop_assert!(s >= slack[i], "slack of {} fell from {} to {}", v, slack[i], s);
                    slack[i] = s;
                    for &u in g.neighbors(v) {
                        if let Some(c) = now[u as usize] {
                            prop_assert!(!net.states[i].has_color(c), "palette of {} still holds {}", v, c);
                        }
                    }
                }
            }
            prop_assert!(verify_coloring(&g, &pal, &now, true).passed);
            colors = now;
        }
    }

    #[test]
    fn slack_generation_keeps_coloring_proper(n in 2usize..200, seed in any::<u64>()) {
        let g = generate(&Model::Gnp { n, p: 0.1 }, seed).unwrap();
        let pal = PaletteAssignment::shared_prefix(&g);
        let mut net = Network::new(g.clone(), &SimConfig::default(), seed).unwrap();
        net.set_palettes(&pal);
        let sampled = slack_generation(&mut net, Ratio::new(1, 20)).unwrap();
        let coloring = net.coloring();
        // only sampled nodes try a color
        prop_assert!(g.nodes().all(|v| coloring[v as usize].is_none() || sampled.contains(&v)));
        prop_assert!(verify_coloring(&g, &pal, &coloring, true).passed);
    }
}

#[test]
fn k2_both_colored_about_half_the_time() {
    // Four equally likely pick pairs; (1,2) and (2,1) succeed.
    let g = generate(&Model::Complete { n: 2 }, 0).unwrap();
    let pal = PaletteAssignment::shared_prefix(&g);
    let trials = 4000;
    let mut both = 0;
    for seed in 0..trials {
        let mut net = Network::new(g.clone(), &SimConfig::default(), seed).unwrap();
        net.set_palettes(&pal);
        both += usize::from(random_color_trial(&mut net, &[0, 1]).unwrap().len() == 2);
    }
    let f = both as f64 / trials as f64;
    // 4 standard deviations of Binomial(4000, 1/2)
    assert!((f - 0.5).abs() < 4.0 * (0.25f64 / trials as f64).sqrt(), "frequency {f}");
}

#[test]
fn multi_trial_with_large_slack_colors_everyone() {
    let g = generate(&Model::Cycle { n: 30 }, 0).unwrap();
    let pal = PaletteAssignment::random(&g, 10_000, 1);
    let mut net = Network::new(g.clone(), &SimConfig::default(), 1).unwrap();
    net.set_palettes(&pal);
    let all: Vec<(NodeId, usize)> = g.nodes().map(|v| (v, 1)).collect();
    let got = multi_trial(&mut net, &all).unwrap();
    assert_eq!(got.len(), 30);
    assert!(verify_coloring(&g, &pal, &net.coloring(), false).passed);
}
