use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use congest_coloring::graph_io::{
    coloring_from_text, generate, load_edge_list, verify_coloring, Model, PaletteAssignment,
};
use congest_coloring::harness::{
    read_rows, stats_tests, sweep, write_report, write_rows, write_verdicts, PaletteKind, SweepSpec,
};
use congest_coloring::{run_pipeline, Graph, Mode, SimConfig};

#[derive(Parser)]
#[command(name = "ccolor", version, about = "CONGEST (Δ+1)-list-coloring simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Color one graph and write its report.
    Run(RunArgs),
    /// Check a coloring against a graph and its lists.
    Verify {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        coloring: PathBuf,
        /// List file (`v: c1 c2 ...`); defaults to {1..Δ+1} everywhere.
        #[arg(long)]
        palettes: Option<PathBuf>,
    },
    /// Run a JSON sweep spec and write results.csv / results.json.
    Sweep {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, env = "CCOLOR_OUT", default_value = "ccolor-out")]
        out: PathBuf,
    },
    /// Evaluate the statistical checks over a results directory.
    Stats {
        #[arg(long)]
        results: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Generator {
    Gnp,
    CliqueUnion,
    Planted,
    Path,
    Cycle,
    Star,
    Complete,
}

#[derive(Clone, Copy, ValueEnum)]
enum Lists {
    Random,
    SharedPrefix,
}

#[derive(Args)]
struct RunArgs {
    /// Edge-list file (`p edge n m` / `e u v`, 1-based).
    #[arg(long, conflicts_with = "gen", required_unless_present = "gen")]
    graph: Option<PathBuf>,
    #[arg(long, value_enum)]
    gen: Option<Generator>,
    #[arg(long, default_value_t = 1024)]
    n: usize,
    #[arg(long, default_value_t = 32)]
    delta: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "practical")]
    mode: Mode,
    /// key=value file applied on top of the mode defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "random")]
    palettes: Lists,
    #[arg(long, env = "CCOLOR_OUT", default_value = "ccolor-out")]
    out: PathBuf,
}

fn model_for(generator: Generator, n: usize, delta: usize) -> Result<Model> {
    if n == 0 {
        bail!("--n must be positive");
    }
    let groups = || (n / (delta + 1)).max(1);
    Ok(match generator {
        Generator::Gnp => Model::Gnp { n, p: (delta as f64 / n as f64).min(1.0) },
        Generator::CliqueUnion => Model::CliqueUnion { k: groups(), size: delta + 1 },
        Generator::Planted => Model::PlantedAlmostCliques { k: groups(), delta, removal: 0.02, inter_p: 0.5 / n as f64 },
        Generator::Path => Model::Path { n },
        Generator::Cycle => Model::Cycle { n },
        Generator::Star => Model::Star { n },
        Generator::Complete => Model::Complete { n },
    })
}

fn load_graph(path: &Path) -> Result<Graph> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(load_edge_list(&text).with_context(|| format!("parsing {}", path.display()))?)
}

fn run(args: RunArgs) -> Result<bool> {
    let (graph, label) = match (&args.graph, args.gen) {
        (Some(path), _) => (load_graph(path)?, path.display().to_string()),
        (None, Some(g)) => {
            let model = model_for(g, args.n, args.delta)?;
            (generate(&model, args.seed)?, model.label())
        }
        (None, None) => bail!("one of --graph or --gen is required"),
    };
    let mut cfg = SimConfig::for_mode(args.mode);
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').with_context(|| format!("{}:{}: expected key=value", path.display(), i + 1))?;
            cfg.set(k.trim(), v.trim())?;
        }
    }
    let kind = match args.palettes {
        Lists::Random => PaletteKind::Random,
        Lists::SharedPrefix => PaletteKind::SharedPrefix,
    };
    let palettes = kind.build(&graph, args.seed);
    let graph = Arc::new(graph);
    let mut report = run_pipeline(&graph, &palettes, &cfg, args.seed)?;
    report.graph.label = label;
    write_report(&args.out, &report)?;
    std::fs::write(args.out.join("palettes.txt"), palettes.to_text())?;
    std::fs::write(args.out.join("config.txt"), cfg.to_kv())?;
    println!(
        "{} seed={} branch={:?} rounds={} valid={} -> {}",
        report.graph.label,
        report.seed,
        report.branch,
        report.rounds.rounds,
        report.valid(),
        args.out.display()
    );
    Ok(report.valid())
}

fn verify(graph: &Path, coloring: &Path, palettes: Option<&Path>) -> Result<bool> {
    let g = load_graph(graph)?;
    let text = std::fs::read_to_string(coloring).with_context(|| format!("reading {}", coloring.display()))?;
    let colors = coloring_from_text(&text, g.n())?;
    let lists = match palettes {
        Some(p) => PaletteAssignment::from_text(&std::fs::read_to_string(p)?, g.n())?,
        None => PaletteAssignment::shared_prefix(&g),
    };
    let report = verify_coloring(&g, &lists, &colors, false);
    println!(
        "{}: {} monochromatic edges, {} off-list, {} uncolored",
        if report.passed { "PASS" } else { "FAIL" },
        report.monochromatic.len(),
        report.off_list.len(),
        report.uncolored.len()
    );
    Ok(report.passed)
}

fn main() -> ExitCode {
    let outcome = match Cli::parse().command {
        Command::Run(args) => run(args),
        Command::Verify { graph, coloring, palettes } => verify(&graph, &coloring, palettes.as_deref()),
        Command::Sweep { spec, out } => (|| {
            let text = std::fs::read_to_string(&spec).with_context(|| format!("reading {}", spec.display()))?;
            let spec: SweepSpec = serde_json::from_str(&text).context("parsing sweep spec")?;
            let rows = sweep(&spec)?;
            write_rows(&out, &rows)?;
            println!("{} runs -> {}", rows.len(), out.display());
            Ok(rows.iter().all(|r| r.valid))
        })(),
        Command::Stats { results } => (|| {
            let verdicts = stats_tests(&read_rows(&results)?)?;
            for v in &verdicts {
                println!("{} {}: observed {} (threshold {})", if v.passed { "PASS" } else { "FAIL" }, v.criterion, v.observed, v.threshold);
            }
            write_verdicts(&results, &verdicts)?;
            Ok(verdicts.iter().all(|v| v.passed))
        })(),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
