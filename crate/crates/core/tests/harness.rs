use std::collections::BTreeMap;
use std::sync::Arc;

use num_rational::Ratio;
use proptest::prelude::*;

use congest_coloring::graph_io::{coloring_from_text, generate, verify_coloring, Model, PaletteAssignment};
use congest_coloring::harness::{
    read_rows, stats_tests, sweep, write_report, write_rows, write_verdicts, Branch, ConfigError, HarnessError,
    PaletteKind, SweepItem, SweepSpec,
};
use congest_coloring::{run_pipeline, Mode, SimConfig};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn config_text_round_trip(
        theory in any::<bool>(),
        b_factor in 1u32..16,
        k3 in 0.0f64..10.0,
        num in 1i64..50,
        den in 51i64..400,
        retries in 0usize..20,
    ) {
        let mut cfg = if theory { SimConfig::theory() } else { SimConfig::practical() };
        cfg.b_factor = b_factor;
        cfg.k3 = k3;
        cfg.epsilon = Ratio::new(num, den);
        cfg.cluster_retries = retries;
        prop_assert_eq!(SimConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
    }
}

#[test]
fn config_errors() {
    assert!(matches!(SimConfig::from_kv("bogus=1"), Err(ConfigError::UnknownKey(_))));
    assert!(matches!(SimConfig::from_kv("k1=abc"), Err(ConfigError::BadValue { .. })));
    assert!(matches!(SimConfig::from_kv("k1"), Err(ConfigError::Malformed { line: 1, .. })));
}

#[test]
fn branch_choice_follows_degree() {
    let cfg = SimConfig::default();
    let small = Arc::new(generate(&Model::Cycle { n: 100 }, 0).unwrap());
    let r = run_pipeline(&small, &PaletteAssignment::shared_prefix(&small), &cfg, 1).unwrap();
    assert_eq!(r.branch, Branch::SmallDegree);
    assert_eq!(r.non_small_degree_rounds, 0);
    assert!(r.valid());
    let big = Arc::new(generate(&Model::CliqueUnion { k: 3, size: 90 }, 0).unwrap());
    let r = run_pipeline(&big, &PaletteAssignment::shared_prefix(&big), &cfg, 1).unwrap();
    assert_eq!(r.branch, Branch::Full);
    assert_eq!(r.cliques, 3);
    assert!(r.valid());
}

#[test]
fn reports_are_written_and_readable() {
    let dir = tempfile::tempdir().unwrap();
    let g = Arc::new(generate(&Model::PlantedAlmostCliques { k: 3, delta: 80, removal: 0.02, inter_p: 0.0 }, 4).unwrap());
    let pal = PaletteAssignment::random_default(&g, 4);
    let r = run_pipeline(&g, &pal, &SimConfig::default(), 4).unwrap();
    write_report(dir.path(), &r).unwrap();
    let files: Vec<String> =
        std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    assert!(files.iter().any(|f| f.ends_with(".json")));
    assert!(files.iter().any(|f| f.ends_with("_trajectory.csv")));
    let coloring_file = files.iter().find(|f| f.ends_with(".coloring")).unwrap();
    let text = std::fs::read_to_string(dir.path().join(coloring_file)).unwrap();
    let coloring = coloring_from_text(&text, g.n()).unwrap();
    assert!(verify_coloring(&g, &pal, &coloring, false).passed);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join(files.iter().find(|f| f.ends_with(".json")).unwrap())).unwrap())
            .unwrap();
    assert_eq!(json["seed"], 4);
}

#[test]
fn sweep_stats_round_trip() {
    let spec = SweepSpec {
        mode: Mode::Practical,
        overrides: BTreeMap::from([("b_factor".to_string(), "5".to_string())]),
        items: vec![
            SweepItem { model: Model::Gnp { n: 200, p: 0.05 }, seeds: vec![0, 1, 2], palettes: PaletteKind::Random },
            SweepItem {
                model: Model::PlantedAlmostCliques { k: 2, delta: 60, removal: 0.02, inter_p: 0.0 },
                seeds: vec![3, 4],
                palettes: PaletteKind::SharedPrefix,
            },
            SweepItem {
                model: Model::PlantedAlmostCliques { k: 4, delta: 120, removal: 0.02, inter_p: 0.0 },
                seeds: vec![5],
                palettes: PaletteKind::SharedPrefix,
            },
        ],
    };
    let rows = sweep(&spec).unwrap();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.valid && r.error.is_none()));
    assert!(rows.windows(2).all(|w| (&w[0].graph, w[0].seed) <= (&w[1].graph, w[1].seed)));
    let dir = tempfile::tempdir().unwrap();
    write_rows(dir.path(), &rows).unwrap();
    assert_eq!(read_rows(dir.path()).unwrap(), rows);
    let verdicts = stats_tests(&rows).unwrap();
    assert!(verdicts.iter().all(|v| v.passed), "{verdicts:?}");
    assert!(verdicts.iter().any(|v| v.criterion == "scaling"));
    write_verdicts(dir.path(), &verdicts).unwrap();
    assert!(dir.path().join("verdicts.json").exists());
    assert!(dir.path().join("results.csv").exists());
}

#[test]
fn stats_need_results() {
    assert!(matches!(stats_tests(&[]), Err(HarnessError::MissingResults)));
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(read_rows(dir.path()), Err(HarnessError::MissingResults)));
}
