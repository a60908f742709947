//! Graph generation, DIMACS-style ingestion, palette assignment and the
//! brute-force oracles that tests use as ground truth.
//!
//! Nothing in here is shared with the distributed algorithms it audits.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use num_rational::Ratio;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{Color, NodeId, Sparsity};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("self-loop at node {0}")]
    SelfLoop(NodeId),
    #[error("duplicate edge {0}-{1}")]
    DuplicateEdge(NodeId, NodeId),
    #[error("node {node} out of range for n = {n}")]
    OutOfRange { node: NodeId, n: usize },
    #[error("invalid generator parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("malformed line {line}: {text}")]
    Malformed { line: usize, text: String },
    #[error("node id {id} out of range at line {line}")]
    OutOfRange { line: usize, id: u64 },
    #[error("duplicate edge at line {line}")]
    Duplicate { line: usize },
    #[error("self-loop at line {line}")]
    SelfLoop { line: usize },
}

/// Immutable simple undirected graph in compressed adjacency form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    offsets: Vec<usize>,
    targets: Vec<NodeId>,
    delta: usize,
}

impl Graph {
    /// Builds a graph, rejecting self-loops, duplicates and out-of-range endpoints.
    pub fn from_edges(n: usize, edges: &[(NodeId, NodeId)]) -> Result<Self, GraphError> {
        let mut deg = vec![0usize; n];
        for &(u, v) in edges {
            for x in [u, v] {
                if x as usize >= n {
                    return Err(GraphError::OutOfRange { node: x, n });
                }
            }
            if u == v {
                return Err(GraphError::SelfLoop(u));
            }
            deg[u as usize] += 1;
            deg[v as usize] += 1;
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for d in &deg {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut fill = offsets[..n].to_vec();
        let mut targets = vec![0 as NodeId; offsets[n]];
        for &(u, v) in edges {
            targets[fill[u as usize]] = v;
            fill[u as usize] += 1;
            targets[fill[v as usize]] = u;
            fill[v as usize] += 1;
        }
        for v in 0..n {
            let list = &mut targets[offsets[v]..offsets[v + 1]];
            list.sort_unstable();
            if let Some(w) = list.windows(2).find(|w| w[0] == w[1]) {
                let (a, b) = (v as NodeId, w[0]);
                return Err(GraphError::DuplicateEdge(a.min(b), a.max(b)));
            }
        }
        let delta = deg.iter().copied().max().unwrap_or(0);
        Ok(Graph { offsets, targets, delta })
    }

    pub fn n(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn m(&self) -> usize {
        self.targets.len() / 2
    }

    /// Maximum degree.
    pub fn delta(&self) -> usize {
        self.delta
    }

    pub fn degree(&self, v: NodeId) -> usize {
        self.offsets[v as usize + 1] - self.offsets[v as usize]
    }

    /// Sorted neighbor list.
    pub fn neighbors(&self, v: NodeId) -> &[NodeId] {
        &self.targets[self.offsets[v as usize]..self.offsets[v as usize + 1]]
    }

    pub fn has_edge(&self, u: NodeId, v: NodeId) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> {
        0..self.n() as NodeId
    }

    /// Edges with `u < v`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.nodes()
            .flat_map(move |u| self.neighbors(u).iter().filter(move |&&v| u < v).map(move |&v| (u, v)))
    }

    /// Induced subgraph on `keep`, relabelled to 0..keep.len() in the given order.
    pub fn induced(&self, keep: &[NodeId]) -> Graph {
        let mut index = vec![u32::MAX; self.n()];
        for (i, &v) in keep.iter().enumerate() {
            index[v as usize] = i as u32;
        }
        let mut edges = Vec::new();
        for &u in keep {
            for &v in self.neighbors(u) {
                if u < v && index[v as usize] != u32::MAX {
                    edges.push((index[u as usize], index[v as usize]));
                }
            }
        }
        Graph::from_edges(keep.len(), &edges).expect("induced subgraph of a simple graph is simple")
    }
}

/// Random-graph and fixed-shape generators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum Model {
    Gnp { n: usize, p: f64 },
    CliqueUnion { k: usize, size: usize },
    /// `k` groups of `delta + 1` nodes; each internal edge is dropped with
    /// probability `removal`, and each cross-group pair is joined with
    /// probability `inter_p`.
    PlantedAlmostCliques { k: usize, delta: usize, removal: f64, inter_p: f64 },
    Path { n: usize },
    Cycle { n: usize },
    Star { n: usize },
    Complete { n: usize },
}

impl Model {
    pub fn label(&self) -> String {
        match self {
            Model::Gnp { n, p } => format!("gnp(n={n},p={p})"),
            Model::CliqueUnion { k, size } => format!("clique_union(k={k},size={size})"),
            Model::PlantedAlmostCliques { k, delta, removal, inter_p } => {
                format!("planted(k={k},delta={delta},removal={removal},inter_p={inter_p})")
            }
            Model::Path { n } => format!("path(n={n})"),
            Model::Cycle { n } => format!("cycle(n={n})"),
            Model::Star { n } => format!("star(n={n})"),
            Model::Complete { n } => format!("complete(n={n})"),
        }
    }
}

fn check_prob(p: f64, what: &str) -> Result<(), GraphError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(GraphError::InvalidParams(format!("{what} = {p} is not a probability")))
    }
}

/// Pairs (i, j), i < j < n, each kept independently with probability `p`.
/// Uses geometric skipping so sparse graphs cost O(n + m).
fn bernoulli_pairs(n: usize, p: f64, rng: &mut ChaCha8Rng, mut keep: impl FnMut(usize, usize) -> bool, out: &mut Vec<(NodeId, NodeId)>) {
    if p <= 0.0 || n < 2 {
        return;
    }
    let total = n * (n - 1) / 2;
    if p >= 1.0 {
        for i in 0..n {
            for j in i + 1..n {
                if keep(i, j) {
                    out.push((i as NodeId, j as NodeId));
                }
            }
        }
        return;
    }
    let log_q = (1.0 - p).ln();
    let mut idx: usize = 0;
    // Row-major walk over the strict upper triangle.
    let (mut i, mut row_start) = (0usize, 0usize);
    loop {
        let r: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let skip = (r.ln() / log_q).floor() as usize;
        idx = match idx.checked_add(skip) {
            Some(x) if x < total => x,
            _ => break,
        };
        while idx >= row_start + (n - 1 - i) {
            row_start += n - 1 - i;
            i += 1;
        }
        let j = i + 1 + (idx - row_start);
        if keep(i, j) {
            out.push((i as NodeId, j as NodeId));
        }
        idx += 1;
        if idx >= total {
            break;
        }
    }
}

pub fn generate(model: &Model, seed: u64) -> Result<Graph, GraphError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    let n = match *model {
        Model::Gnp { n, p } => {
            if n == 0 {
                return Err(GraphError::InvalidParams("gnp needs n >= 1".into()));
            }
            check_prob(p, "p")?;
            bernoulli_pairs(n, p, &mut rng, |_, _| true, &mut edges);
            n
        }
        Model::CliqueUnion { k, size } => {
            if k == 0 || size == 0 {
                return Err(GraphError::InvalidParams("clique_union needs k, size >= 1".into()));
            }
            for g in 0..k {
                let base = g * size;
                for i in 0..size {
                    for j in i + 1..size {
                        edges.push(((base + i) as NodeId, (base + j) as NodeId));
                    }
                }
            }
            k * size
        }
        Model::PlantedAlmostCliques { k, delta, removal, inter_p } => {
            if k == 0 || delta == 0 {
                return Err(GraphError::InvalidParams("planted needs k, delta >= 1".into()));
            }
            check_prob(removal, "removal")?;
            check_prob(inter_p, "inter_p")?;
            if removal >= 1.0 / 3.0 {
                return Err(GraphError::InvalidParams(format!(
                    "removal fraction {removal} must stay below 1/3"
                )));
            }
            let size = delta + 1;
            for g in 0..k {
                let base = g * size;
                for i in 0..size {
                    for j in i + 1..size {
                        if removal == 0.0 || rng.gen::<f64>() >= removal {
                            edges.push(((base + i) as NodeId, (base + j) as NodeId));
                        }
                    }
                }
            }
            bernoulli_pairs(k * size, inter_p, &mut rng, |i, j| i / size != j / size, &mut edges);
            k * size
        }
        Model::Path { n } => {
            if n == 0 {
                return Err(GraphError::InvalidParams("path needs n >= 1".into()));
            }
            edges.extend((1..n).map(|i| ((i - 1) as NodeId, i as NodeId)));
            n
        }
        Model::Cycle { n } => {
            if n < 3 {
                return Err(GraphError::InvalidParams("cycle needs n >= 3".into()));
            }
            edges.extend((0..n).map(|i| (i as NodeId, ((i + 1) % n) as NodeId)));
            n
        }
        Model::Star { n } => {
            if n == 0 {
                return Err(GraphError::InvalidParams("star needs n >= 1".into()));
            }
            edges.extend((1..n).map(|i| (0, i as NodeId)));
            n
        }
        Model::Complete { n } => {
            if n == 0 {
                return Err(GraphError::InvalidParams("complete needs n >= 1".into()));
            }
            for i in 0..n {
                for j in i + 1..n {
                    edges.push((i as NodeId, j as NodeId));
                }
            }
            n
        }
    };
    Graph::from_edges(n, &edges)
}

/// Parses `p edge n m` / `e u v` text with 1-based IDs. Lines starting with
/// `c` and blank lines are ignored. Without a header, n is the largest ID seen.
pub fn load_edge_list(text: &str) -> Result<Graph, ParseError> {
    let mut declared_n: Option<u64> = None;
    let mut raw: Vec<(u64, u64, usize)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let mut it = line.split_whitespace();
        let malformed = || ParseError::Malformed { line: line_no, text: line.to_string() };
        match it.next() {
            None | Some("c") => continue,
            Some("p") => {
                let (kind, n, m) = (it.next(), it.next(), it.next());
                if kind != Some("edge") || it.next().is_some() {
                    return Err(malformed());
                }
                let n: u64 = n.and_then(|s| s.parse().ok()).ok_or_else(malformed)?;
                m.and_then(|s| s.parse::<u64>().ok()).ok_or_else(malformed)?;
                if declared_n.is_some() || !raw.is_empty() {
                    return Err(malformed());
                }
                declared_n = Some(n);
            }
            Some("e") => {
                let u: u64 = it.next().and_then(|s| s.parse().ok()).ok_or_else(malformed)?;
                let v: u64 = it.next().and_then(|s| s.parse().ok()).ok_or_else(malformed)?;
                if it.next().is_some() {
                    return Err(malformed());
                }
                raw.push((u, v, line_no));
            }
            Some(_) => return Err(malformed()),
        }
    }
    let n = declared_n.unwrap_or_else(|| raw.iter().map(|&(u, v, _)| u.max(v)).max().unwrap_or(0));
    let mut seen = BTreeSet::new();
    let mut edges = Vec::with_capacity(raw.len());
    for (u, v, line) in raw {
        for id in [u, v] {
            if id == 0 || id > n {
                return Err(ParseError::OutOfRange { line, id });
            }
        }
        if u == v {
            return Err(ParseError::SelfLoop { line });
        }
        let key = (u.min(v), u.max(v));
        if !seen.insert(key) {
            return Err(ParseError::Duplicate { line });
        }
        edges.push(((u - 1) as NodeId, (v - 1) as NodeId));
    }
    Ok(Graph::from_edges(n as usize, &edges).expect("validated above"))
}

/// Canonical text form: header plus edges sorted with the smaller endpoint first.
pub fn save_edge_list(graph: &Graph) -> String {
    let mut out = format!("p edge {} {}\n", graph.n(), graph.m());
    for (u, v) in graph.edges() {
        let _ = writeln!(out, "e {} {}", u + 1, v + 1);
    }
    out
}

/// Per-node color lists over the colorspace `[1, universe]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaletteAssignment {
    pub universe: u64,
    pub lists: Vec<Vec<Color>>,
}

impl PaletteAssignment {
    /// Δ+1 colors per node, drawn uniformly without replacement from `[1, universe]`.
    pub fn random(graph: &Graph, universe: u64, seed: u64) -> Self {
        let k = graph.delta() + 1;
        assert!(universe >= k as u64, "colorspace smaller than Δ+1");
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_0F_C010_u64);
        let lists = (0..graph.n())
            .map(|_| {
                let mut list: Vec<Color> = sample_distinct(&mut rng, universe, k).into_iter().map(|c| Color(c + 1)).collect();
                list.sort_unstable();
                list
            })
            .collect();
        PaletteAssignment { universe, lists }
    }

    /// Default random instance with U = max(n², Δ+1).
    pub fn random_default(graph: &Graph, seed: u64) -> Self {
        let n = graph.n() as u64;
        Self::random(graph, (n * n).max(graph.delta() as u64 + 1), seed)
    }

    /// Every list is `{1, …, Δ+1}`.
    pub fn shared_prefix(graph: &Graph) -> Self {
        let k = graph.delta() as u64 + 1;
        let list: Vec<Color> = (1..=k).map(Color).collect();
        PaletteAssignment { universe: k, lists: vec![list; graph.n()] }
    }

    /// deg(v)+1 colors per node, drawn uniformly from `[1, universe]`.
    pub fn random_degree_plus_one(graph: &Graph, universe: u64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xDE6_u64);
        let lists = graph
            .nodes()
            .map(|v| {
                let k = graph.degree(v) + 1;
                let mut list: Vec<Color> = sample_distinct(&mut rng, universe, k).into_iter().map(|c| Color(c + 1)).collect();
                list.sort_unstable();
                list
            })
            .collect();
        PaletteAssignment { universe, lists }
    }

    /// Lines `v: c1 c2 …` with 1-based node IDs.
    pub fn to_text(&self) -> String {
        let mut out = format!("u {}\n", self.universe);
        for (v, list) in self.lists.iter().enumerate() {
            let _ = write!(out, "{}:", v + 1);
            for c in list {
                let _ = write!(out, " {}", c.0);
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str, n: usize) -> Result<Self, ParseError> {
        let mut lists = vec![Vec::new(); n];
        let mut universe = 0u64;
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let malformed = || ParseError::Malformed { line: line_no, text: line.to_string() };
            let line = line.trim();
            if line.is_empty() || line.starts_with('c') {
                continue;
            }
            if let Some(rest) = line.strip_prefix("u ") {
                universe = rest.trim().parse().map_err(|_| malformed())?;
                continue;
            }
            let (node, colors) = line.split_once(':').ok_or_else(malformed)?;
            let id: u64 = node.trim().parse().map_err(|_| malformed())?;
            if id == 0 || id as usize > n {
                return Err(ParseError::OutOfRange { line: line_no, id });
            }
            let mut list = colors
                .split_whitespace()
                .map(|c| c.parse::<u64>().map(Color).map_err(|_| malformed()))
                .collect::<Result<Vec<_>, _>>()?;
            list.sort_unstable();
            list.dedup();
            universe = universe.max(list.last().map_or(0, |c| c.0));
            lists[id as usize - 1] = list;
        }
        Ok(PaletteAssignment { universe, lists })
    }
}

/// `k` distinct values from `0..universe`.
fn sample_distinct(rng: &mut ChaCha8Rng, universe: u64, k: usize) -> Vec<u64> {
    if universe <= usize::MAX as u64 {
        index::sample(rng, universe as usize, k).into_iter().map(|x| x as u64).collect()
    } else {
        let mut set = BTreeSet::new();
        while set.len() < k {
            set.insert(rng.gen_range(0..universe));
        }
        set.into_iter().collect()
    }
}

fn common_count(a: &[NodeId], b: &[NodeId]) -> usize {
    let (mut i, mut j, mut c) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                c += 1;
                i += 1;
                j += 1;
            }
        }
    }
    c
}

/// |N(u) ∩ N(v)|.
pub fn common_neighbors(graph: &Graph, u: NodeId, v: NodeId) -> usize {
    common_count(graph.neighbors(u), graph.neighbors(v))
}

/// Edges inside N(v), counted over all neighbor pairs.
pub fn neighborhood_edges(graph: &Graph, v: NodeId) -> usize {
    let nb = graph.neighbors(v);
    let mut count = 0;
    for (i, &a) in nb.iter().enumerate() {
        for &b in &nb[i + 1..] {
            if graph.has_edge(a, b) {
                count += 1;
            }
        }
    }
    count
}

/// ζ_v = (C(Δ,2) − m(N(v))) / Δ, exact.
pub fn local_sparsity(graph: &Graph, v: NodeId) -> Sparsity {
    let delta = graph.delta() as i64;
    assert!(delta >= 1, "local sparsity needs Δ >= 1");
    let pairs = delta * (delta - 1) / 2;
    Ratio::new(pairs - neighborhood_edges(graph, v) as i64, delta)
}

/// (1 − γ)Δ as an exact rational.
fn overlap_threshold(graph: &Graph, gamma: Sparsity) -> Sparsity {
    (Ratio::from_integer(1) - gamma) * Ratio::from_integer(graph.delta() as i64)
}

/// |N(u) ∩ N(v)| ≥ (1 − γ)Δ.
pub fn similarity_oracle(graph: &Graph, u: NodeId, v: NodeId, gamma: Sparsity) -> bool {
    Ratio::from_integer(common_neighbors(graph, u, v) as i64) >= overlap_threshold(graph, gamma)
}

/// Adjacent and γ-similar.
pub fn friend_oracle(graph: &Graph, u: NodeId, v: NodeId, gamma: Sparsity) -> bool {
    graph.has_edge(u, v) && similarity_oracle(graph, u, v, gamma)
}

/// v has at least (1 − γ)Δ γ-friends.
pub fn density_oracle(graph: &Graph, v: NodeId, gamma: Sparsity) -> bool {
    let threshold = overlap_threshold(graph, gamma);
    let friends = graph.neighbors(v).iter().filter(|&&u| friend_oracle(graph, u, v, gamma)).count();
    Ratio::from_integer(friends as i64) >= threshold
}

/// Density flag for every node at once.
pub fn dense_nodes(graph: &Graph, gamma: Sparsity) -> Vec<bool> {
    graph.nodes().map(|v| density_oracle(graph, v, gamma)).collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColoringReport {
    pub monochromatic: Vec<(NodeId, NodeId)>,
    pub off_list: Vec<NodeId>,
    pub uncolored: Vec<NodeId>,
    pub passed: bool,
}

pub fn verify_coloring(
    graph: &Graph,
    palettes: &PaletteAssignment,
    coloring: &[Option<Color>],
    allow_partial: bool,
) -> ColoringReport {
    let mut report = ColoringReport::default();
    for v in graph.nodes() {
        match coloring[v as usize] {
            None => report.uncolored.push(v),
            Some(c) => {
                if palettes.lists[v as usize].binary_search(&c).is_err() {
                    report.off_list.push(v);
                }
            }
        }
    }
    for (u, v) in graph.edges() {
        if let (Some(a), Some(b)) = (coloring[u as usize], coloring[v as usize]) {
            if a == b {
                report.monochromatic.push((u, v));
            }
        }
    }
    report.passed = report.monochromatic.is_empty()
        && report.off_list.is_empty()
        && (allow_partial || report.uncolored.is_empty());
    report
}

/// Sequential greedy list coloring in ascending ID order, smallest free color first.
/// Returns `None` at the first node whose list is exhausted.
pub fn greedy_list_coloring(graph: &Graph, palettes: &PaletteAssignment) -> Option<Vec<Color>> {
    let mut coloring: Vec<Option<Color>> = vec![None; graph.n()];
    for v in graph.nodes() {
        let used: BTreeSet<Color> = graph.neighbors(v).iter().filter_map(|&u| coloring[u as usize]).collect();
        let c = palettes.lists[v as usize].iter().copied().find(|c| !used.contains(c))?;
        coloring[v as usize] = Some(c);
    }
    Some(coloring.into_iter().map(|c| c.expect("all nodes visited")).collect())
}

/// Lines `v c` with 1-based node IDs; missing nodes are uncolored.
pub fn coloring_to_text(coloring: &[Option<Color>]) -> String {
    let mut out = String::new();
    for (v, c) in coloring.iter().enumerate() {
        if let Some(c) = c {
            let _ = writeln!(out, "{} {}", v + 1, c.0);
        }
    }
    out
}

pub fn coloring_from_text(text: &str, n: usize) -> Result<Vec<Option<Color>>, ParseError> {
    let mut coloring = vec![None; n];
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let malformed = || ParseError::Malformed { line: line_no, text: line.to_string() };
        let mut it = line.split_whitespace();
        let Some(first) = it.next() else { continue };
        if first == "c" {
            continue;
        }
        let v: u64 = first.parse().map_err(|_| malformed())?;
        let c: u64 = it.next().and_then(|s| s.parse().ok()).ok_or_else(malformed)?;
        if v == 0 || v as usize > n {
            return Err(ParseError::OutOfRange { line: line_no, id: v });
        }
        coloring[v as usize - 1] = Some(Color(c));
    }
    Ok(coloring)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(n: i64, d: i64) -> Sparsity {
        Ratio::new(n, d)
    }

    #[test]
    fn fixed_shapes_have_expected_max_degree() {
        assert_eq!(generate(&Model::Complete { n: 5 }, 0).unwrap().delta(), 4);
        let star = generate(&Model::Star { n: 11 }, 0).unwrap();
        assert_eq!((star.delta(), star.m()), (10, 10));
        let cu = generate(&Model::CliqueUnion { k: 2, size: 9 }, 0).unwrap();
        assert_eq!((cu.n(), cu.delta(), cu.m()), (18, 8, 72));
        assert!(!cu.has_edge(0, 9));
    }

    #[test]
    fn parses_header_and_edges() {
        let g = load_edge_list("p edge 2 1\ne 1 2").unwrap();
        assert_eq!((g.n(), g.m()), (2, 1));
        assert!(g.has_edge(0, 1));
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        assert_eq!(load_edge_list("e 1 1"), Err(ParseError::SelfLoop { line: 1 }));
        assert_eq!(load_edge_list("e 1 2\ne 2 1"), Err(ParseError::Duplicate { line: 2 }));
        assert_eq!(load_edge_list("p edge 2 1\ne 1 3"), Err(ParseError::OutOfRange { line: 2, id: 3 }));
        assert!(matches!(load_edge_list("c hi\ne 1 x"), Err(ParseError::Malformed { line: 2, .. })));
        assert_eq!(
            load_edge_list("p edge 3 1\ne 1 1").unwrap_err().to_string(),
            "self-loop at line 2"
        );
    }

    #[test]
    fn sparsity_examples() {
        let k = generate(&Model::Complete { n: 7 }, 0).unwrap();
        assert_eq!(local_sparsity(&k, 3), r(0, 1));
        let star = generate(&Model::Star { n: 11 }, 0).unwrap();
        assert_eq!(local_sparsity(&star, 0), r(9, 2));
        let c5 = generate(&Model::Cycle { n: 5 }, 0).unwrap();
        assert_eq!(local_sparsity(&c5, 2), r(1, 2));
    }

    #[test]
    fn similarity_examples() {
        let k = generate(&Model::Complete { n: 10 }, 0).unwrap();
        assert!(friend_oracle(&k, 0, 1, r(1, 3)));
        let star = generate(&Model::Star { n: 11 }, 0).unwrap();
        assert!(similarity_oracle(&star, 1, 2, r(9, 10)));
        assert!(!similarity_oracle(&star, 1, 2, r(1, 3)));
        let p = generate(&Model::Path { n: 4 }, 0).unwrap();
        // nodes 0 and 3 share no neighbor
        assert!(!similarity_oracle(&p, 0, 3, r(99, 100)));
    }

    #[test]
    fn verify_examples() {
        let g = generate(&Model::Complete { n: 2 }, 0).unwrap();
        let pal = PaletteAssignment { universe: 3, lists: vec![vec![Color(1), Color(2)]; 2] };
        assert!(verify_coloring(&g, &pal, &[Some(Color(1)), Some(Color(2))], false).passed);
        let bad = verify_coloring(&g, &pal, &[Some(Color(1)), Some(Color(1))], false);
        assert_eq!(bad.monochromatic, vec![(0, 1)]);
        let single = generate(&Model::Path { n: 1 }, 0).unwrap();
        let pal3 = PaletteAssignment { universe: 5, lists: vec![vec![Color(1), Color(2), Color(3)]] };
        let off = verify_coloring(&single, &pal3, &[Some(Color(5))], false);
        assert_eq!(off.off_list, vec![0]);
        assert!(!off.passed);
        let partial = verify_coloring(&g, &pal, &[Some(Color(1)), None], true);
        assert!(partial.passed && partial.uncolored == vec![1]);
    }

    #[test]
    fn palette_text_round_trip() {
        let g = generate(&Model::Cycle { n: 6 }, 1).unwrap();
        let pal = PaletteAssignment::random(&g, 100, 3);
        assert!(pal.lists.iter().all(|l| l.len() == 3));
        let back = PaletteAssignment::from_text(&pal.to_text(), 6).unwrap();
        assert_eq!(back, pal);
    }

    #[test]
    fn gnp_density_is_plausible() {
        let g = generate(&Model::Gnp { n: 400, p: 0.05 }, 9).unwrap();
        let expected = 0.05 * 400.0 * 399.0 / 2.0;
        assert!((g.m() as f64 - expected).abs() < 5.0 * expected.sqrt());
    }
}
