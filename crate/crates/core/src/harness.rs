//! Configuration, the full coloring pipeline, sweeps and verdict files.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use num_rational::Ratio;
use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acd::{compute_acd, verify_acd, AcdReport, AcdStats};
use crate::dense_sparse::{color_dense_nodes, color_sparse_nodes, DenseStats, SparseStats};
use crate::graph_io::{generate, verify_coloring, ColoringReport, Graph, Model, PaletteAssignment};
use crate::overlay::{compute_overlays, verify_overlay, OverlayStats};
use crate::sim_core::{Network, RoundStats};
use crate::small_degree::{color_small_degree, SmallDegreeStats};
use crate::trials::{slack_generation, Role};
use crate::util::log2n;
use crate::{Color, NodeId, SimError, Sparsity};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Literal constants; preconditions of the analysis are asserted.
    Theory,
    /// Desk-scale constants; runs regardless and relies on the validators.
    Practical,
}

impl FromStr for Mode {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s {
            "theory" => Ok(Mode::Theory),
            "practical" => Ok(Mode::Practical),
            _ => Err(ConfigError::BadValue { key: "mode".into(), value: s.into() }),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Theory => "theory",
            Mode::Practical => "practical",
        })
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected key=value, got {text:?}")]
    Malformed { line: usize, text: String },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("bad value {value:?} for {key}")]
    BadValue { key: String, value: String },
}

/// Every tunable of a run. Serialized verbatim into each report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub mode: Mode,
    /// Bandwidth is `b_factor · ceil(log2 n)` bits per edge per round.
    pub b_factor: u32,
    /// Per-node routing load cap, in multiples of Δ messages.
    pub load_cap: usize,
    /// Warm-up RCT iterations for sparse nodes.
    pub k1: f64,
    /// Sparse-node log log loop multiplier.
    pub k2: f64,
    /// RCT loop multiplier in layer 0.
    pub k3: f64,
    /// Warm-up RCT iterations per layer.
    pub k4: f64,
    /// Synchronized-trial loop multiplier per layer.
    pub k5: f64,
    /// Shattering multiplier.
    pub k6: f64,
    /// Layer floor constant: the last layer keeps p_t ≥ c·log n/Δ.
    pub c: f64,
    /// Sub-palette size constant.
    pub c_p: f64,
    /// Small-degree branch when Δ ≤ c_small·log⁴ n.
    pub c_small: Sparsity,
    /// Theory-mode ACD precondition Δ ≥ c_acd·log² n.
    pub c_acd: f64,
    pub epsilon: Sparsity,
    pub eta: Sparsity,
    pub delta: Sparsity,
    pub slack_p: Sparsity,
    /// Practical ACD: sample rate σ/√Δ instead of 1/√Δ.
    pub acd_sample_boost: f64,
    /// Practical ACD: gossip repetitions.
    pub acd_gossip_rounds: usize,
    /// Practical ACD: sampled IDs forwarded per gossip message.
    pub acd_fanout: usize,
    /// Practical ACD thresholds as fractions of the perfect-clique expectation.
    pub acd_similar_frac: f64,
    pub acd_dense_frac: f64,
    pub acd_adopt_frac: f64,
    /// Overlay construction gets `overlay_pairs · ceil(log2 log2 n)` paired rounds.
    pub overlay_pairs: f64,
    /// Cap on routed rounds for a sub-palette gather.
    pub r_cap: u64,
    /// Cluster coloring uses ceil(a·log2 n) instances for ceil(a·log2 N) iterations.
    pub cluster_a: f64,
    /// Shattered components above `n_max_factor · Δ_H² · log2 n` get more trials.
    pub n_max_factor: f64,
    /// Extra attempts for a cluster in which no instance succeeded.
    pub cluster_retries: usize,
    /// Widest value a tree aggregation may carry.
    pub max_aggregate_bits: u32,
    pub trace: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self::practical()
    }
}

impl SimConfig {
    pub fn practical() -> Self {
        let epsilon = Ratio::new(1, 3);
        SimConfig {
            mode: Mode::Practical,
            b_factor: 4,
            load_cap: 4,
            k1: 5.0,
            k2: 4.0,
            k3: 4.0,
            k4: 5.0,
            k5: 4.0,
            k6: 2.0,
            c: 1.0,
            c_p: 2.0,
            c_small: Ratio::new(1, 512),
            c_acd: 1.0,
            epsilon,
            eta: epsilon / 108,
            delta: epsilon / 27,
            slack_p: Ratio::new(1, 20),
            acd_sample_boost: 4.0,
            acd_gossip_rounds: 4,
            acd_fanout: 4,
            acd_similar_frac: 0.6,
            acd_dense_frac: 0.6,
            acd_adopt_frac: 0.45,
            overlay_pairs: 2.0,
            r_cap: 12,
            cluster_a: 2.0,
            n_max_factor: 4.0,
            cluster_retries: 8,
            max_aggregate_bits: 4096,
            trace: false,
        }
    }

    pub fn theory() -> Self {
        SimConfig { mode: Mode::Theory, c_small: Ratio::from_integer(1), cluster_retries: 0, ..Self::practical() }
    }

    pub fn for_mode(mode: Mode) -> Self {
        match mode {
            Mode::Theory => Self::theory(),
            Mode::Practical => Self::practical(),
        }
    }

    pub fn is_theory(&self) -> bool {
        self.mode == Mode::Theory
    }

    /// `key=value` lines, one per field.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            out.push_str(&format!("{k}={v}\n"));
        }
        out
    }

    fn entries(&self) -> BTreeMap<&'static str, String> {
        let r = |x: &Sparsity| x.to_string();
        BTreeMap::from([
            ("mode", self.mode.to_string()),
            ("b_factor", self.b_factor.to_string()),
            ("load_cap", self.load_cap.to_string()),
            ("k1", self.k1.to_string()),
            ("k2", self.k2.to_string()),
            ("k3", self.k3.to_string()),
            ("k4", self.k4.to_string()),
            ("k5", self.k5.to_string()),
            ("k6", self.k6.to_string()),
            ("c", self.c.to_string()),
            ("c_p", self.c_p.to_string()),
            ("c_small", r(&self.c_small)),
            ("c_acd", self.c_acd.to_string()),
            ("epsilon", r(&self.epsilon)),
            ("eta", r(&self.eta)),
            ("delta", r(&self.delta)),
            ("slack_p", r(&self.slack_p)),
            ("acd_sample_boost", self.acd_sample_boost.to_string()),
            ("acd_gossip_rounds", self.acd_gossip_rounds.to_string()),
            ("acd_fanout", self.acd_fanout.to_string()),
            ("acd_similar_frac", self.acd_similar_frac.to_string()),
            ("acd_dense_frac", self.acd_dense_frac.to_string()),
            ("acd_adopt_frac", self.acd_adopt_frac.to_string()),
            ("overlay_pairs", self.overlay_pairs.to_string()),
            ("r_cap", self.r_cap.to_string()),
            ("cluster_a", self.cluster_a.to_string()),
            ("n_max_factor", self.n_max_factor.to_string()),
            ("cluster_retries", self.cluster_retries.to_string()),
            ("max_aggregate_bits", self.max_aggregate_bits.to_string()),
            ("trace", self.trace.to_string()),
        ])
    }

    /// Parses `key=value` lines over the defaults of the mode named in the
    /// text (practical if absent). `#` starts a comment.
    pub fn from_kv(text: &str) -> Result<Self, ConfigError> {
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::Malformed { line: i + 1, text: raw.to_string() })?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        let mode = match pairs.iter().find(|(k, _)| k == "mode") {
            Some((_, v)) => v.parse()?,
            None => Mode::Practical,
        };
        let mut cfg = SimConfig::for_mode(mode);
        for (k, v) in pairs {
            cfg.set(&k, &v)?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn p<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
            value.parse().map_err(|_| ConfigError::BadValue { key: key.into(), value: value.into() })
        }
        match key {
            "mode" => self.mode = p(key, value)?,
            "b_factor" => self.b_factor = p(key, value)?,
            "load_cap" => self.load_cap = p(key, value)?,
            "k1" => self.k1 = p(key, value)?,
            "k2" => self.k2 = p(key, value)?,
            "k3" => self.k3 = p(key, value)?,
            "k4" => self.k4 = p(key, value)?,
            "k5" => self.k5 = p(key, value)?,
            "k6" => self.k6 = p(key, value)?,
            "c" => self.c = p(key, value)?,
            "c_p" => self.c_p = p(key, value)?,
            "c_small" => self.c_small = p(key, value)?,
            "c_acd" => self.c_acd = p(key, value)?,
            "epsilon" => self.epsilon = p(key, value)?,
            "eta" => self.eta = p(key, value)?,
            "delta" => self.delta = p(key, value)?,
            "slack_p" => self.slack_p = p(key, value)?,
            "acd_sample_boost" => self.acd_sample_boost = p(key, value)?,
            "acd_gossip_rounds" => self.acd_gossip_rounds = p(key, value)?,
            "acd_fanout" => self.acd_fanout = p(key, value)?,
            "acd_similar_frac" => self.acd_similar_frac = p(key, value)?,
            "acd_dense_frac" => self.acd_dense_frac = p(key, value)?,
            "acd_adopt_frac" => self.acd_adopt_frac = p(key, value)?,
            "overlay_pairs" => self.overlay_pairs = p(key, value)?,
            "r_cap" => self.r_cap = p(key, value)?,
            "cluster_a" => self.cluster_a = p(key, value)?,
            "n_max_factor" => self.n_max_factor = p(key, value)?,
            "cluster_retries" => self.cluster_retries = p(key, value)?,
            "max_aggregate_bits" => self.max_aggregate_bits = p(key, value)?,
            "trace" => self.trace = p(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// Δ ≤ c_small·log⁴ n: the whole graph goes to small-degree coloring.
    SmallDegree,
    Full,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphDescriptor {
    pub label: String,
    pub n: usize,
    pub m: usize,
    pub delta: usize,
}

impl GraphDescriptor {
    pub fn of(graph: &Graph) -> Self {
        let label = format!("graph(n={},m={})", graph.n(), graph.m());
        GraphDescriptor { label, n: graph.n(), m: graph.m(), delta: graph.delta() }
    }
}

/// Everything one run produced. Verdicts come from the validators only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: SimConfig,
    pub graph: GraphDescriptor,
    pub seed: u64,
    pub branch: Branch,
    pub rounds: RoundStats,
    /// Rounds outside every small-degree phase.
    pub non_small_degree_rounds: u64,
    pub bandwidth_bits: u32,
    pub acd: Option<AcdStats>,
    pub acd_verdict: Option<AcdReport>,
    pub cliques: usize,
    pub overlay: Option<OverlayStats>,
    pub overlay_max_congestion: u32,
    pub overlays_valid: bool,
    pub demoted_cliques: Vec<NodeId>,
    pub slack_sampled: usize,
    pub sparse: Option<SparseStats>,
    pub dense: Option<DenseStats>,
    pub small_degree: Option<SmallDegreeStats>,
    pub verdict: ColoringReport,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub coloring: Vec<Option<Color>>,
}

impl RunReport {
    pub fn valid(&self) -> bool {
        self.verdict.passed
    }
}

/// Δ ≤ c_small·log2⁴ n.
pub fn takes_small_branch(n: usize, delta: usize, cfg: &SimConfig) -> bool {
    let c = cfg.c_small.to_f64().unwrap_or(1.0);
    delta as f64 <= c * log2n(n).powi(4)
}

/// The whole pipeline on one instance.
pub fn run_pipeline(
    graph: &Arc<Graph>,
    palettes: &PaletteAssignment,
    cfg: &SimConfig,
    seed: u64,
) -> Result<RunReport, SimError> {
    let mut net = Network::from_arc(Arc::clone(graph), cfg, seed)?;
    net.set_palettes(palettes);
    let n = graph.n();
    let mut report = RunReport {
        config: cfg.clone(),
        graph: GraphDescriptor::of(graph),
        seed,
        branch: Branch::Full,
        rounds: RoundStats::default(),
        non_small_degree_rounds: 0,
        bandwidth_bits: net.bandwidth_bits(),
        acd: None,
        acd_verdict: None,
        cliques: 0,
        overlay: None,
        overlay_max_congestion: 0,
        overlays_valid: true,
        demoted_cliques: Vec::new(),
        slack_sampled: 0,
        sparse: None,
        dense: None,
        small_degree: None,
        verdict: ColoringReport::default(),
        warnings: Vec::new(),
        coloring: Vec::new(),
    };
    if takes_small_branch(n, graph.delta(), cfg) {
        report.branch = Branch::SmallDegree;
        let all: Vec<NodeId> = graph.nodes().collect();
        report.small_degree = Some(color_small_degree(&mut net, &all, cfg).map_err(|e| e.in_phase("small_degree"))?);
    } else {
        let (mut acd, acd_stats) = compute_acd(&mut net, cfg).map_err(|e| e.in_phase("acd"))?;
        report.acd_verdict = Some(verify_acd(graph, &acd));
        report.acd = Some(acd_stats);
        let mut set = compute_overlays(&mut net, &acd, cfg).map_err(|e| e.in_phase("overlay"))?;
        if let Some((_, e)) = set.failures.first() {
            if cfg.is_theory() {
                return Err(e.clone().in_phase("overlay"));
            }
        }
        for (id, e) in std::mem::take(&mut set.failures) {
            net.warn(format!("overlay: clique {id} demoted to sparse: {e}"));
            for &v in &acd.cliques[&id] {
                net.states[v as usize].role = Role::Sparse;
            }
            acd.dissolve(id);
            set.overlays.remove(&id);
            report.demoted_cliques.push(id);
        }
        report.cliques = acd.cliques.len();
        for (id, ov) in &set.overlays {
            let check = verify_overlay(graph, &acd.cliques[id], ov);
            report.overlays_valid &= check.passed;
            report.overlay_max_congestion = report.overlay_max_congestion.max(check.max_congestion);
        }
        report.overlay = Some(set.stats.clone());
        net.push_phase("slack");
        let sampled = slack_generation(&mut net, cfg.slack_p);
        net.pop_phase();
        report.slack_sampled = sampled.map_err(|e| e.in_phase("slack"))?.len();
        report.sparse = Some(color_sparse_nodes(&mut net, &acd, cfg).map_err(|e| e.in_phase("sparse"))?);
        report.dense = Some(color_dense_nodes(&mut net, &acd, &set.overlays, cfg).map_err(|e| e.in_phase("dense"))?);
    }
    net.record_histogram();
    report.coloring = net.coloring();
    report.verdict = verify_coloring(graph, palettes, &report.coloring, false);
    report.rounds = net.stats().clone();
    report.non_small_degree_rounds = report.rounds.rounds - report.rounds.rounds_in("small_degree");
    report.warnings = std::mem::take(&mut net.warnings);
    Ok(report)
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("graph: {0}")]
    Graph(String),
    #[error("no results to evaluate")]
    MissingResults,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PaletteKind {
    /// Δ+1 random colors from [1, max(n², Δ+1)].
    #[default]
    Random,
    /// {1, …, Δ+1} everywhere.
    SharedPrefix,
}

impl PaletteKind {
    pub fn build(self, graph: &Graph, seed: u64) -> PaletteAssignment {
        match self {
            PaletteKind::Random => PaletteAssignment::random_default(graph, seed),
            PaletteKind::SharedPrefix => PaletteAssignment::shared_prefix(graph),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepItem {
    pub model: Model,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub palettes: PaletteKind,
}

/// A sweep: one config (mode plus `key=value` overrides) over many instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default)]
    pub overrides: BTreeMap<String, String>,
    pub items: Vec<SweepItem>,
}

fn default_mode() -> Mode {
    Mode::Practical
}

impl SweepSpec {
    pub fn config(&self) -> Result<SimConfig, ConfigError> {
        let mut cfg = SimConfig::for_mode(self.mode);
        for (k, v) in &self.overrides {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }
}

/// One line of a sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub graph: String,
    pub n: usize,
    pub delta: usize,
    pub seed: u64,
    pub mode: Mode,
    pub branch: Option<Branch>,
    pub rounds: u64,
    pub non_small_degree_rounds: u64,
    pub acd_rounds: u64,
    pub max_edge_bits: u32,
    pub bandwidth: u32,
    pub overlay_max_congestion: u32,
    pub valid: bool,
    pub error: Option<String>,
}

impl SweepRow {
    pub fn from_report(r: &RunReport) -> Self {
        SweepRow {
            graph: r.graph.label.clone(),
            n: r.graph.n,
            delta: r.graph.delta,
            seed: r.seed,
            mode: r.config.mode,
            branch: Some(r.branch),
            rounds: r.rounds.rounds,
            non_small_degree_rounds: r.non_small_degree_rounds,
            acd_rounds: r.acd.as_ref().map_or(0, |a| a.rounds),
            max_edge_bits: r.rounds.max_edge_bits_per_round,
            bandwidth: r.bandwidth_bits,
            overlay_max_congestion: r.overlay_max_congestion,
            valid: r.valid(),
            error: None,
        }
    }
}

/// Runs every (instance, seed) pair across the available cores; rows come
/// back ordered by (graph, seed) whatever the completion order.
pub fn sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>, HarnessError> {
    let cfg = spec.config()?;
    let mut jobs: Vec<(usize, u64)> = Vec::new();
    let mut graphs: Vec<BTreeMap<u64, Arc<Graph>>> = Vec::new();
    for (i, item) in spec.items.iter().enumerate() {
        let mut per_seed = BTreeMap::new();
        for &s in &item.seeds {
            let g = generate(&item.model, s).map_err(|e| HarnessError::Graph(e.to_string()))?;
            per_seed.insert(s, Arc::new(g));
            jobs.push((i, s));
        }
        graphs.push(per_seed);
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(jobs.len().max(1));
    let mut rows: Vec<SweepRow> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                scope.spawn(|| {
                    let mut out = Vec::new();
                    loop {
                        let k = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                        let Some(&(i, s)) = jobs.get(k) else { break };
                        let g = &graphs[i][&s];
                        let pal = spec.items[i].palettes.build(g, s);
                        let label = spec.items[i].model.label();
                        out.push(match run_pipeline(g, &pal, &cfg, s) {
                            Ok(mut r) => {
                                r.graph.label = label;
                                SweepRow::from_report(&r)
                            }
                            Err(e) => SweepRow {
                                graph: label,
                                n: g.n(),
                                delta: g.delta(),
                                seed: s,
                                mode: cfg.mode,
                                branch: None,
                                rounds: 0,
                                non_small_degree_rounds: 0,
                                acd_rounds: 0,
                                max_edge_bits: 0,
                                bandwidth: 0,
                                overlay_max_congestion: 0,
                                valid: false,
                                error: Some(e.to_string()),
                            },
                        });
                    }
                    out
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("sweep worker panicked")).collect()
    });
    rows.sort_by(|a, b| (&a.graph, a.seed).cmp(&(&b.graph, b.seed)));
    Ok(rows)
}

/// One acceptance line: what was measured against which threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub criterion: String,
    pub threshold: String,
    pub observed: String,
    pub passed: bool,
}

/// Evaluates every criterion that can be read off sweep rows.
pub fn stats_tests(rows: &[SweepRow]) -> Result<Vec<Verdict>, HarnessError> {
    if rows.is_empty() {
        return Err(HarnessError::MissingResults);
    }
    let mut out = Vec::new();
    let failures = rows.iter().filter(|r| !r.valid).count();
    out.push(Verdict {
        criterion: "validity".into(),
        threshold: "0 failed runs".into(),
        observed: format!("{failures} of {}", rows.len()),
        passed: failures == 0,
    });
    let over = rows.iter().filter(|r| r.error.is_none() && r.max_edge_bits > r.bandwidth).count();
    out.push(Verdict {
        criterion: "bandwidth".into(),
        threshold: "max edge bits ≤ bandwidth in every run".into(),
        observed: format!("{over} runs over budget"),
        passed: over == 0,
    });
    let full: Vec<&SweepRow> = rows.iter().filter(|r| r.branch == Some(Branch::Full)).collect();
    if !full.is_empty() {
        let worst = full.iter().map(|r| r.acd_rounds).max().unwrap_or(0);
        out.push(Verdict {
            criterion: "acd_round_ceiling".into(),
            threshold: "≤ 20 rounds".into(),
            observed: worst.to_string(),
            passed: worst <= 20,
        });
        let congestion = full.iter().map(|r| r.overlay_max_congestion).max().unwrap_or(0);
        out.push(Verdict {
            criterion: "overlay_congestion".into(),
            threshold: "≤ 2".into(),
            observed: congestion.to_string(),
            passed: congestion <= 2,
        });
        let mut by_n: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for r in &full {
            by_n.entry(r.n).or_default().push(r.non_small_degree_rounds as f64);
        }
        if by_n.len() >= 2 {
            let mean = |v: &Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
            let (lo, hi) = (by_n.values().next().expect("two sizes"), by_n.values().last().expect("two sizes"));
            let ratio = mean(hi) / mean(lo).max(1.0);
            out.push(Verdict {
                criterion: "scaling".into(),
                threshold: "mean rounds at largest n / smallest n ≤ 2.0".into(),
                observed: format!("{ratio:.3}"),
                passed: ratio <= 2.0,
            });
        }
    }
    Ok(out)
}

fn file_stem(label: &str) -> String {
    label.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '_' }).collect()
}

/// JSON report, coloring and (for the full branch) the dense-phase trajectory.
pub fn write_report(dir: &Path, report: &RunReport) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;
    let stem = format!("{}_seed{}", file_stem(&report.graph.label), report.seed);
    std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(report)?)?;
    std::fs::write(dir.join(format!("{stem}.coloring")), crate::graph_io::coloring_to_text(&report.coloring))?;
    if let Some(d) = &report.dense {
        std::fs::write(dir.join(format!("{stem}_trajectory.csv")), d.trajectory_csv())?;
    }
    Ok(())
}

pub fn write_rows(dir: &Path, rows: &[SweepRow]) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("results.csv"))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    std::fs::write(dir.join("results.json"), serde_json::to_string_pretty(rows)?)?;
    Ok(())
}

pub fn read_rows(dir: &Path) -> Result<Vec<SweepRow>, HarnessError> {
    let path = dir.join("results.json");
    if !path.exists() {
        return Err(HarnessError::MissingResults);
    }
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

pub fn write_verdicts(dir: &Path, verdicts: &[Verdict]) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("verdicts.json"), serde_json::to_string_pretty(verdicts)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_round_trip() {
        let mut cfg = SimConfig::theory();
        cfg.b_factor = 6;
        cfg.epsilon = Ratio::new(1, 5);
        assert_eq!(SimConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
    }

    #[test]
    fn kv_errors() {
        assert_eq!(SimConfig::from_kv("nonsense").unwrap_err(), ConfigError::Malformed { line: 1, text: "nonsense".into() });
        assert_eq!(SimConfig::from_kv("zzz=1").unwrap_err(), ConfigError::UnknownKey("zzz".into()));
        assert!(matches!(SimConfig::from_kv("b_factor=x"), Err(ConfigError::BadValue { .. })));
    }

    #[test]
    fn defaults_match_pipeline_constants() {
        let cfg = SimConfig::default();
        assert_eq!(cfg.eta, Ratio::new(1, 324));
        assert_eq!(cfg.delta, Ratio::new(1, 81));
        assert_eq!(cfg.slack_p, Ratio::new(1, 20));
    }
}
