use std::path::Path;
use std::process::{Command, Output};

fn ccolor(args: &[&str], out_env: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ccolor"));
    cmd.args(args);
    cmd.env_remove("CCOLOR_OUT");
    if let Some(dir) = out_env {
        cmd.env("CCOLOR_OUT", dir);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_then_verify() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = ccolor(
        &["run", "--gen", "planted", "--n", "600", "--delta", "40", "--seed", "2", "--palettes", "shared-prefix", "--out", out.to_str().unwrap()],
        None,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("valid=true"));
    let coloring = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|x| x == "coloring"))
        .expect("coloring written");
    assert!(out.join("palettes.txt").exists());
    assert!(out.join("config.txt").exists());

    // Verify against a graph file written by hand.
    let graph = dir.path().join("tri.txt");
    std::fs::write(&graph, "p edge 3 3\ne 1 2\ne 2 3\ne 1 3\n").unwrap();
    let good = dir.path().join("good.coloring");
    std::fs::write(&good, "1 1\n2 2\n3 3\n").unwrap();
    let bad = dir.path().join("bad.coloring");
    std::fs::write(&bad, "1 1\n2 1\n3 3\n").unwrap();
    let ok = ccolor(&["verify", "--graph", graph.to_str().unwrap(), "--coloring", good.to_str().unwrap()], None);
    assert!(ok.status.success());
    assert!(stdout(&ok).starts_with("PASS"));
    let no = ccolor(&["verify", "--graph", graph.to_str().unwrap(), "--coloring", bad.to_str().unwrap()], None);
    assert_eq!(no.status.code(), Some(1));
    assert!(stdout(&no).starts_with("FAIL"));
    assert!(coloring.exists());
}

#[test]
fn run_from_graph_file_with_config() {
    let dir = tempfile::tempdir().unwrap();
    let graph = dir.path().join("cycle.txt");
    let edges: String = (1..=20).map(|i| format!("e {} {}\n", i, i % 20 + 1)).collect();
    std::fs::write(&graph, format!("p edge 20 20\n{edges}")).unwrap();
    let cfg = dir.path().join("cfg.txt");
    std::fs::write(&cfg, "# wider messages\nb_factor = 6\n").unwrap();
    let out = dir.path().join("o");
    let o = ccolor(
        &["run", "--graph", graph.to_str().unwrap(), "--config", cfg.to_str().unwrap(), "--mode", "practical"],
        Some(&out),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(std::fs::read_to_string(out.join("config.txt")).unwrap().contains("b_factor=6"));
}

#[test]
fn bad_config_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.txt");
    std::fs::write(&cfg, "no_such_key=1\n").unwrap();
    let o = ccolor(&["run", "--gen", "cycle", "--n", "10", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sweep_and_stats() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(
        &spec,
        r#"{"mode":"practical","items":[
            {"model":{"model":"gnp","n":150,"p":0.05},"seeds":[0,1]},
            {"model":{"model":"clique_union","k":3,"size":50},"seeds":[0],"palettes":"shared_prefix"}]}"#,
    )
    .unwrap();
    let results = dir.path().join("res");
    let o = ccolor(&["sweep", "--spec", spec.to_str().unwrap()], Some(&results));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(results.join("results.csv").exists());
    let s = ccolor(&["stats", "--results", results.to_str().unwrap()], None);
    assert!(s.status.success(), "{}", stdout(&s));
    assert!(stdout(&s).contains("PASS validity"));
    assert!(results.join("verdicts.json").exists());
    let empty = ccolor(&["stats", "--results", dir.path().join("nothing").to_str().unwrap()], None);
    assert_eq!(empty.status.code(), Some(2));
}
