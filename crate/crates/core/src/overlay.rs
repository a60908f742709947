//! Congestion-2 clique overlays: every non-edge of an almost-clique gets a
//! relay, found by list-coloring the non-edges with node indices as colors.
//! Also a greedy store-and-forward router over the overlay.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::fmt::Write as _;

use num_bigint::BigUint;
use num_rational::Ratio;
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::acd::AlmostCliqueDecomposition;
use crate::error::SimError;
use crate::graph_io::Graph;
use crate::harness::SimConfig;
use crate::sim_core::{AggOp, AggTask, Audience, Message, Network, Widths};
use crate::util::{log2n, loglog_iterations};
use crate::{Color, NodeId};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CliqueOverlay {
    pub clique: NodeId,
    /// Non-edge (u, v), u < v, to its relay.
    pub relays: BTreeMap<(NodeId, NodeId), NodeId>,
    /// Graph edge (a, b), a < b, to the number of relay paths through it.
    pub edge_congestion: BTreeMap<(NodeId, NodeId), u32>,
}

impl CliqueOverlay {
    fn add(&mut self, u: NodeId, v: NodeId, w: NodeId) {
        self.relays.insert(ordered(u, v), w);
        *self.edge_congestion.entry(ordered(u, w)).or_insert(0) += 1;
        *self.edge_congestion.entry(ordered(v, w)).or_insert(0) += 1;
    }

    pub fn max_congestion(&self) -> u32 {
        self.edge_congestion.values().copied().max().unwrap_or(0)
    }

    pub fn relay(&self, u: NodeId, v: NodeId) -> Option<NodeId> {
        self.relays.get(&ordered(u, v)).copied()
    }

    /// Lines `<u> <v> via <w>`, IDs 1-based.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (&(u, v), &w) in &self.relays {
            let _ = writeln!(out, "{} {} via {}", u + 1, v + 1, w + 1);
        }
        out
    }
}

fn to_u32(x: &BigUint) -> u32 {
    x.to_u32_digits().first().copied().unwrap_or(0)
}

fn ordered(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
    (a.min(b), a.max(b))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OverlayStats {
    pub rounds: u64,
    pub non_edges: usize,
    pub colored_in_pairs: usize,
    pub colored_in_finish: usize,
    pub pair_rounds: usize,
}

#[derive(Debug, Clone, Default)]
pub struct OverlaySet {
    pub overlays: BTreeMap<NodeId, CliqueOverlay>,
    /// Cliques with a non-edge left unrelayed after the cap.
    pub failures: Vec<(NodeId, SimError)>,
    pub stats: OverlayStats,
}

#[derive(Debug, Clone)]
enum OvMsg {
    Index(u32),
    Pair(u32, u32),
    Flag,
}

impl Message for OvMsg {
    fn bits(&self, w: &Widths) -> u32 {
        match self {
            OvMsg::Index(_) => w.id,
            OvMsg::Pair(..) => 2 * w.id,
            OvMsg::Flag => 1,
        }
    }
}

/// Per-clique working state, keyed by member node.
struct Work {
    id: NodeId,
    members: Vec<NodeId>,
    index: HashMap<NodeId, u32>,
    by_index: HashMap<u32, NodeId>,
    /// Neighbor indices in C, per member.
    nbr_index: HashMap<NodeId, HashSet<u32>>,
    /// Pending non-edges (handler, other) still without a relay.
    pending: Vec<(NodeId, u32)>,
    /// Relay -> endpoints it already serves.
    serves: HashMap<NodeId, HashSet<NodeId>>,
    /// Endpoint -> relays already serving it, as the endpoint knows.
    used_by: HashMap<NodeId, HashSet<NodeId>>,
    overlay: CliqueOverlay,
}

/// Builds overlays for every clique of the decomposition in parallel.
pub fn compute_overlays(
    net: &mut Network,
    acd: &AlmostCliqueDecomposition,
    cfg: &SimConfig,
) -> Result<OverlaySet, SimError> {
    net.push_phase("overlay");
    let start = net.round();
    let res = compute_overlays_inner(net, acd, cfg);
    net.pop_phase();
    let mut set = res?;
    set.stats.rounds = net.round() - start;
    Ok(set)
}

/// Overlay of a single clique; an unrelayed non-edge is an error.
pub fn compute_overlay(
    net: &mut Network,
    acd: &AlmostCliqueDecomposition,
    clique: NodeId,
    cfg: &SimConfig,
) -> Result<CliqueOverlay, SimError> {
    let mut one = acd.clone();
    one.cliques.retain(|id, _| *id == clique);
    let mut set = compute_overlays(net, &one, cfg)?;
    if let Some((_, e)) = set.failures.pop() {
        return Err(e);
    }
    set.overlays.remove(&clique).ok_or(SimError::NotInClique { node: clique })
}

fn compute_overlays_inner(
    net: &mut Network,
    acd: &AlmostCliqueDecomposition,
    cfg: &SimConfig,
) -> Result<OverlaySet, SimError> {
    let mut set = OverlaySet::default();
    if acd.cliques.is_empty() {
        return Ok(set);
    }
    if acd.epsilon > Ratio::new(1, 15) {
        if cfg.is_theory() {
            return Err(SimError::TheoryPrecondition(format!("overlay needs ε ≤ 1/15, got {}", acd.epsilon)));
        }
        net.warn(format!("overlay: ε = {} > 1/15, relay slack is not guaranteed", acd.epsilon));
    }
    let graph = net.graph_arc();
    let n = net.n();
    let mut works = renumber(net, acd)?;

    let mut owner: Vec<Option<usize>> = vec![None; n];
    for (i, w) in works.iter().enumerate() {
        for &v in &w.members {
            owner[v as usize] = Some(i);
        }
    }
    for w in &mut works {
        for &u in &w.members {
            let me = w.index[&u];
            let nb = &w.nbr_index[&u];
            for other in 1..me {
                if !nb.contains(&other) {
                    w.pending.push((u, other));
                }
            }
        }
        set.stats.non_edges += w.pending.len();
    }

    let pairs = (cfg.overlay_pairs * loglog_iterations(1.0, n) as f64).ceil() as usize;
    let strict = cfg.is_theory();
    for _ in 0..pairs {
        if works.iter().all(|w| w.pending.is_empty()) {
            break;
        }
        set.stats.pair_rounds += 1;
        set.stats.colored_in_pairs += relay_pair(net, &graph, &mut works, &owner, strict)?;
    }
    let k = (3.0 * log2n(n)).ceil() as usize;
    if works.iter().any(|w| !w.pending.is_empty()) {
        set.stats.colored_in_finish = relay_finish(net, &graph, &mut works, &owner, k)?;
    }
    for w in works {
        if let Some(&(u, other)) = w.pending.first() {
            let v = w.by_index[&other];
            set.failures.push((w.id, SimError::UncoveredNonEdge { clique: w.id, u, v }));
        } else {
            set.overlays.insert(w.id, w.overlay);
        }
    }
    Ok(set)
}

/// Leader-rooted enumeration 1..|C| by subtree sizes, then one round in which
/// members tell neighbors their index.
fn renumber(net: &mut Network, acd: &AlmostCliqueDecomposition) -> Result<Vec<Work>, SimError> {
    let specs: Vec<(NodeId, Vec<NodeId>)> = acd.cliques.iter().map(|(id, m)| (acd.leaders[id], m.clone())).collect();
    let width = net.widths().count;
    let tasks: Vec<AggTask> = specs
        .iter()
        .map(|(root, m)| AggTask {
            root: *root,
            members: m.clone(),
            op: AggOp::Sum,
            inputs: vec![BigUint::from(1u32); m.len()],
            width,
        })
        .collect();
    let sizes = net.tree_aggregate_many(&tasks)?;
    let trees = net.build_trees(&specs, None)?;
    // Top-down: each node takes the first index of its range and hands the
    // rest to its children, one level per round.
    let mut start: HashMap<NodeId, u32> = HashMap::new();
    let mut max_depth = 0;
    for ((tree, _), _) in trees.iter().zip(&specs) {
        start.insert(tree.root, 1);
        max_depth = max_depth.max(tree.depth);
    }
    let mut clique_size: HashMap<NodeId, u32> = HashMap::new();
    for ((tree, _), agg) in trees.iter().zip(&sizes) {
        clique_size.insert(tree.root, to_u32(&agg.at_root));
    }
    for level in 0..max_depth {
        let mut plan: HashMap<NodeId, Vec<(NodeId, u32)>> = HashMap::new();
        for ((tree, _), agg) in trees.iter().zip(&sizes) {
            for &v in tree.order.iter().filter(|v| tree.depth_of[v] == level) {
                let mut next = start[&v] + 1;
                for &c in tree.children.get(&v).map(Vec::as_slice).unwrap_or(&[]) {
                    plan.entry(v).or_default().push((c, next));
                    next += to_u32(&agg.per_node[&c]);
                }
            }
        }
        let mut senders: Vec<NodeId> = plan.keys().copied().collect();
        senders.sort_unstable();
        let mail = net.exchange(&senders, Audience::Nobody, |v, _, _, out| {
            for &(c, s) in &plan[&v] {
                out.send(c, OvMsg::Pair(s, clique_size[&v]));
            }
        })?;
        let children: Vec<NodeId> = plan.values().flatten().map(|&(c, _)| c).collect();
        for c in children {
            for (_, m) in mail.inbox(c) {
                if let OvMsg::Pair(s, size) = m {
                    start.insert(c, *s);
                    clique_size.insert(c, *size);
                }
            }
        }
    }
    let mut listening = vec![false; net.n()];
    let mut all = Vec::new();
    for (_, m) in &specs {
        for &v in m {
            listening[v as usize] = true;
            all.push(v);
        }
    }
    all.sort_unstable();
    let mail = net.exchange(&all, Audience::Only(&listening), |v, _, _, out| out.broadcast(OvMsg::Index(start[&v])))?;
    let member = acd.membership(net.n());
    let mut works = Vec::new();
    for (id, members) in &acd.cliques {
        let index: HashMap<NodeId, u32> = members.iter().map(|&v| (v, start[&v])).collect();
        let by_index = index.iter().map(|(&v, &i)| (i, v)).collect();
        let nbr_index = members
            .iter()
            .map(|&v| {
                let set: HashSet<u32> = mail
                    .inbox(v)
                    .filter(|(u, _)| member[*u as usize] == Some(*id))
                    .filter_map(|(_, m)| match m {
                        OvMsg::Index(i) => Some(*i),
                        _ => None,
                    })
                    .collect();
                (v, set)
            })
            .collect();
        works.push(Work {
            id: *id,
            members: members.clone(),
            index,
            by_index,
            nbr_index,
            pending: Vec::new(),
            serves: HashMap::new(),
            used_by: HashMap::new(),
            overlay: CliqueOverlay { clique: *id, ..Default::default() },
        });
    }
    Ok(works)
}

/// Candidates the handler sees for its non-edge: C-neighbors not yet relaying
/// anything incident to the handler.
fn apparent_palette(graph: &Graph, work: &Work, u: NodeId) -> Vec<NodeId> {
    let used = work.used_by.get(&u);
    graph
        .neighbors(u)
        .iter()
        .copied()
        .filter(|w| work.index.contains_key(w) && !used.is_some_and(|s| s.contains(w)))
        .collect()
}

/// Relay-side check: adjacent to both endpoints and serving neither yet.
fn usable(work: &Work, w: NodeId, u: NodeId, v: NodeId) -> bool {
    let nb = &work.nbr_index[&w];
    nb.contains(&work.index[&u])
        && nb.contains(&work.index[&v])
        && !work.serves.get(&w).is_some_and(|s| s.contains(&u) || s.contains(&v))
}

/// Requests at a relay that survive the conflict rule. Strict: only a lone
/// request. Otherwise: requests sharing no endpoint with another request.
fn survivors(reqs: &[(NodeId, NodeId)], strict: bool) -> Vec<(NodeId, NodeId)> {
    if strict {
        return if reqs.len() == 1 { reqs.to_vec() } else { Vec::new() };
    }
    let mut hits: HashMap<NodeId, usize> = HashMap::new();
    for &(a, b) in reqs {
        *hits.entry(a).or_insert(0) += 1;
        *hits.entry(b).or_insert(0) += 1;
    }
    reqs.iter().copied().filter(|(a, b)| hits[a] == 1 && hits[b] == 1).collect()
}

fn record(work: &mut Work, net: &mut Network, u: NodeId, v: NodeId, w: NodeId) {
    work.overlay.add(u, v, w);
    work.serves.entry(w).or_default().extend([u, v]);
    work.used_by.entry(u).or_default().insert(w);
    work.used_by.entry(v).or_default().insert(w);
    net.trace_event(w, "relay", &format!("{u}-{v}"));
}

/// One pair of rounds: handlers request, relays grant to both endpoints.
fn relay_pair(
    net: &mut Network,
    graph: &Graph,
    works: &mut [Work],
    owner: &[Option<usize>],
    strict: bool,
) -> Result<usize, SimError> {
    // handler -> [(relay, other index)]
    let mut requests: HashMap<NodeId, Vec<(NodeId, u32)>> = HashMap::new();
    for work in works.iter() {
        let mut picks: HashMap<NodeId, Vec<(NodeId, u32)>> = HashMap::new();
        for &(u, other) in &work.pending {
            let pal = apparent_palette(graph, work, u);
            if pal.is_empty() {
                continue;
            }
            let w = pal[net.rng(u).gen_range(0..pal.len())];
            picks.entry(u).or_default().push((w, other));
        }
        for (u, mut list) in picks {
            // Two vertices of one handler on the same relay both sit out.
            list.sort_unstable();
            let mut keep = Vec::new();
            let mut i = 0;
            while i < list.len() {
                let j = (i..list.len()).find(|&j| list[j].0 != list[i].0).unwrap_or(list.len());
                if j - i == 1 {
                    keep.push(list[i]);
                }
                i = j;
            }
            requests.insert(u, keep);
        }
    }
    let mut senders: Vec<NodeId> = requests.keys().copied().collect();
    senders.sort_unstable();
    let mail = net.exchange(&senders, Audience::Nobody, |u, _, _, out| {
        for &(w, other) in &requests[&u] {
            out.send(w, OvMsg::Index(other));
        }
    })?;
    let mut grants: HashMap<NodeId, Vec<(NodeId, NodeId)>> = HashMap::new();
    let mut relays: Vec<NodeId> = requests.values().flatten().map(|r| r.0).collect();
    relays.sort_unstable();
    relays.dedup();
    for &w in &relays {
        let work = &works[owner[w as usize].expect("relay is a member")];
        let reqs: Vec<(NodeId, NodeId)> = mail
            .inbox(w)
            .filter_map(|(u, m)| match m {
                OvMsg::Index(i) => Some((u, work.by_index[i])),
                _ => None,
            })
            .filter(|&(u, v)| usable(work, w, u, v))
            .collect();
        let ok = survivors(&reqs, strict);
        if !ok.is_empty() {
            grants.insert(w, ok);
        }
    }
    drop(mail);
    let mut granters: Vec<NodeId> = grants.keys().copied().collect();
    granters.sort_unstable();
    net.exchange(&granters, Audience::Nobody, |w, _, _, out| {
        for &(u, v) in &grants[&w] {
            out.send(u, OvMsg::Flag);
            out.send(v, OvMsg::Index(0));
        }
    })?;
    let mut done = 0;
    for w in granters {
        let i = owner[w as usize].expect("relay is a member");
        for &(u, v) in &grants[&w] {
            let other = works[i].index[&v];
            works[i].pending.retain(|&(h, o)| !(h == u && o == other));
            record(&mut works[i], net, u, v, w);
            done += 1;
        }
    }
    Ok(done)
}

/// Finishing phase: each pending non-edge tries `k` relays at once; the handler
/// confirms the first approved relay in sample order. Four rounds.
fn relay_finish(
    net: &mut Network,
    graph: &Graph,
    works: &mut [Work],
    owner: &[Option<usize>],
    k: usize,
) -> Result<usize, SimError> {
    // handler -> [(relay, other index, sample position)]
    let mut requests: HashMap<NodeId, Vec<(NodeId, u32)>> = HashMap::new();
    let mut order: HashMap<(NodeId, u32), Vec<NodeId>> = HashMap::new();
    let mut clamped = 0usize;
    for work in works.iter() {
        for &(u, other) in &work.pending {
            let pal = apparent_palette(graph, work, u);
            if pal.len() < k {
                clamped += 1;
            }
            let take = k.min(pal.len());
            let ws: Vec<NodeId> = sample(net.rng(u), pal.len(), take).into_iter().map(|i| pal[i]).collect();
            order.insert((u, other), ws.clone());
            requests.entry(u).or_default().extend(ws.into_iter().map(|w| (w, other)));
        }
    }
    if clamped > 0 {
        net.warn(format!("overlay finish: {clamped} non-edges had fewer than {k} candidate relays"));
    }
    for list in requests.values_mut() {
        // At most one request per relay per handler; later duplicates are dropped.
        let mut seen = HashSet::new();
        list.retain(|(w, _)| seen.insert(*w));
    }
    let mut senders: Vec<NodeId> = requests.keys().copied().collect();
    senders.sort_unstable();
    let mail = net.exchange(&senders, Audience::Nobody, |u, _, _, out| {
        for &(w, other) in &requests[&u] {
            out.send(w, OvMsg::Index(other));
        }
    })?;
    let mut approvals: HashMap<NodeId, Vec<(NodeId, NodeId)>> = HashMap::new();
    let mut relays: Vec<NodeId> = requests.values().flatten().map(|r| r.0).collect();
    relays.sort_unstable();
    relays.dedup();
    for &w in &relays {
        let work = &works[owner[w as usize].expect("relay is a member")];
        let reqs: Vec<(NodeId, NodeId)> = mail
            .inbox(w)
            .filter_map(|(u, m)| match m {
                OvMsg::Index(i) => Some((u, work.by_index[i])),
                _ => None,
            })
            .filter(|&(u, v)| usable(work, w, u, v))
            .collect();
        let ok = survivors(&reqs, false);
        if !ok.is_empty() {
            approvals.insert(w, ok);
        }
    }
    drop(mail);
    let mut approvers: Vec<NodeId> = approvals.keys().copied().collect();
    approvers.sort_unstable();
    net.exchange(&approvers, Audience::Nobody, |w, _, _, out| {
        for &(u, _) in &approvals[&w] {
            out.send(u, OvMsg::Flag);
        }
    })?;
    let approved: HashSet<(NodeId, NodeId, NodeId)> =
        approvals.iter().flat_map(|(&w, l)| l.iter().map(move |&(u, v)| (u, v, w))).collect();
    let mut confirms: HashMap<NodeId, Vec<(NodeId, NodeId)>> = HashMap::new();
    for work in works.iter() {
        for &(u, other) in &work.pending {
            let v = work.by_index[&other];
            if let Some(&w) = order[&(u, other)].iter().find(|&&w| approved.contains(&(u, v, w))) {
                confirms.entry(u).or_default().push((w, v));
            }
        }
    }
    let mut senders: Vec<NodeId> = confirms.keys().copied().collect();
    senders.sort_unstable();
    net.exchange(&senders, Audience::Nobody, |u, _, _, out| {
        for &(w, _) in &confirms[&u] {
            out.send(w, OvMsg::Flag);
        }
    })?;
    let mut notify: HashMap<NodeId, Vec<(NodeId, u32)>> = HashMap::new();
    for (&u, list) in &confirms {
        for &(w, v) in list {
            let idx = works[owner[u as usize].expect("member")].index[&u];
            notify.entry(w).or_default().push((v, idx));
        }
    }
    let mut senders: Vec<NodeId> = notify.keys().copied().collect();
    senders.sort_unstable();
    net.exchange(&senders, Audience::Nobody, |w, _, _, out| {
        for &(v, idx) in &notify[&w] {
            out.send(v, OvMsg::Index(idx));
        }
    })?;
    let mut done = 0;
    let mut handlers: Vec<NodeId> = confirms.keys().copied().collect();
    handlers.sort_unstable();
    for u in handlers {
        let i = owner[u as usize].expect("member");
        for &(w, v) in &confirms[&u] {
            let other = works[i].index[&v];
            works[i].pending.retain(|&(h, o)| !(h == u && o == other));
            record(&mut works[i], net, u, v, w);
            done += 1;
        }
    }
    Ok(done)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlayReport {
    pub missing: Vec<(NodeId, NodeId)>,
    pub bad_relays: Vec<(NodeId, NodeId)>,
    pub over_congested: Vec<(NodeId, NodeId)>,
    pub max_congestion: u32,
    pub passed: bool,
}

/// Brute-force audit: every non-edge of G[C] has a relay adjacent to both
/// endpoints and inside C, and no graph edge lies on more than two relay paths.
pub fn verify_overlay(graph: &Graph, members: &[NodeId], overlay: &CliqueOverlay) -> OverlayReport {
    let mut report = OverlayReport::default();
    let inside: HashSet<NodeId> = members.iter().copied().collect();
    for (i, &u) in members.iter().enumerate() {
        for &v in &members[i + 1..] {
            if !graph.has_edge(u, v) && overlay.relay(u, v).is_none() {
                report.missing.push(ordered(u, v));
            }
        }
    }
    let mut load: BTreeMap<(NodeId, NodeId), u32> = BTreeMap::new();
    for (&(u, v), &w) in &overlay.relays {
        if !inside.contains(&w) || !graph.has_edge(u, w) || !graph.has_edge(v, w) {
            report.bad_relays.push((u, v));
            continue;
        }
        *load.entry(ordered(u, w)).or_insert(0) += 1;
        *load.entry(ordered(v, w)).or_insert(0) += 1;
    }
    report.max_congestion = load.values().copied().max().unwrap_or(0);
    report.over_congested = load.iter().filter(|(_, &c)| c > 2).map(|(&e, _)| e).collect();
    report.passed = report.missing.is_empty() && report.bad_relays.is_empty() && report.over_congested.is_empty();
    report
}

/// A message of `payload.len()` colors from `src` to `dst` inside one clique.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoutingRequest {
    pub src: NodeId,
    pub dst: NodeId,
    pub payload: Vec<Color>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteOutcome {
    pub rounds: u64,
    pub delivered: usize,
    /// Largest per-node send + receive load, in colors.
    pub max_load: usize,
}

#[derive(Debug, Clone)]
struct Packet(u32);

impl Message for Packet {
    fn bits(&self, _: &Widths) -> u32 {
        self.0
    }
}

/// Greedy store-and-forward routing: direct edges for neighbors, the overlay
/// relay otherwise. Each round every directed edge forwards up to the budget,
/// oldest traffic first, and pieces may be split across rounds.
pub fn route(
    net: &mut Network,
    overlays: &BTreeMap<NodeId, CliqueOverlay>,
    requests: &[RoutingRequest],
    load_cap: usize,
) -> Result<RouteOutcome, SimError> {
    let graph = net.graph_arc();
    let cap = load_cap * graph.delta().max(1);
    let mut load: HashMap<NodeId, usize> = HashMap::new();
    for r in requests {
        *load.entry(r.src).or_insert(0) += r.payload.len();
        *load.entry(r.dst).or_insert(0) += r.payload.len();
    }
    let max_load = load.values().copied().max().unwrap_or(0);
    let mut worst: Vec<(&NodeId, &usize)> = load.iter().filter(|(_, &l)| l > cap).collect();
    worst.sort();
    if let Some((&node, &l)) = worst.first() {
        return Err(SimError::LoadCapExceeded { node, load: l, cap });
    }
    let cw = net.widths().color;
    let budget = net.bandwidth_bits();
    // Each piece: remaining hops and bits still to cross the current hop.
    struct Piece {
        hops: VecDeque<NodeId>,
        at: NodeId,
        left: u32,
        full: u32,
    }
    let mut pieces: Vec<Piece> = Vec::new();
    for r in requests {
        if r.payload.is_empty() || r.src == r.dst {
            continue;
        }
        let mut hops = VecDeque::new();
        if !graph.has_edge(r.src, r.dst) {
            let relay = overlays
                .values()
                .find_map(|o| o.relay(r.src, r.dst))
                .ok_or(SimError::NotNeighbor { node: r.src, dst: r.dst, round: net.round() })?;
            hops.push_back(relay);
        }
        hops.push_back(r.dst);
        let bits = cw * r.payload.len() as u32;
        pieces.push(Piece { hops, at: r.src, left: bits, full: bits });
    }
    let mut outcome = RouteOutcome { max_load, ..Default::default() };
    let start = net.round();
    while !pieces.is_empty() {
        // Directed edge -> bits used this round.
        let mut used: HashMap<(NodeId, NodeId), u32> = HashMap::new();
        let mut sends: HashMap<NodeId, HashMap<NodeId, u32>> = HashMap::new();
        for p in pieces.iter_mut() {
            let next = p.hops[0];
            let e = used.entry((p.at, next)).or_insert(0);
            let room = budget - *e;
            let take = room.min(p.left);
            if take == 0 {
                continue;
            }
            *e += take;
            p.left -= take;
            *sends.entry(p.at).or_default().entry(next).or_insert(0) += take;
        }
        let mut senders: Vec<NodeId> = sends.keys().copied().collect();
        senders.sort_unstable();
        net.exchange(&senders, Audience::Nobody, |v, _, _, out| {
            let mut list: Vec<(NodeId, u32)> = sends[&v].iter().map(|(&d, &b)| (d, b)).collect();
            list.sort_unstable();
            for (d, b) in list {
                out.send(d, Packet(b));
            }
        })?;
        pieces.retain_mut(|p| {
            if p.left > 0 {
                return true;
            }
            p.at = p.hops.pop_front().expect("piece has a next hop");
            if p.hops.is_empty() {
                outcome.delivered += 1;
                false
            } else {
                p.left = p.full;
                true
            }
        });
    }
    outcome.rounds = net.round() - start;
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph_io::{generate, Model};

    fn acd_of(graph: &Graph, members: Vec<NodeId>) -> AlmostCliqueDecomposition {
        let eps = Ratio::new(1, 3);
        let mut acd = AlmostCliqueDecomposition::trivial(graph.n(), eps, eps / 108);
        acd.v_sparse.retain(|v| !members.contains(v));
        acd.leaders.insert(members[0], members[0]);
        acd.cliques.insert(members[0], members);
        acd
    }

    #[test]
    fn complete_clique_needs_no_relays() {
        let g = generate(&Model::Complete { n: 6 }, 0).unwrap();
        let acd = acd_of(&g, (0..6).collect());
        let cfg = SimConfig::default();
        let mut net = Network::new(g.clone(), &cfg, 1).unwrap();
        let o = compute_overlay(&mut net, &acd, 0, &cfg).unwrap();
        assert!(o.relays.is_empty());
        assert_eq!(o.max_congestion(), 0);
    }

    #[test]
    fn one_missing_edge_gets_one_relay() {
        let full = generate(&Model::Complete { n: 8 }, 0).unwrap();
        let edges: Vec<_> = full.edges().filter(|&e| e != (2, 5)).collect();
        let g = Graph::from_edges(8, &edges).unwrap();
        let acd = acd_of(&g, (0..8).collect());
        let cfg = SimConfig::default();
        let mut net = Network::new(g.clone(), &cfg, 3).unwrap();
        let o = compute_overlay(&mut net, &acd, 0, &cfg).unwrap();
        assert_eq!(o.relays.len(), 1);
        let w = o.relay(2, 5).unwrap();
        assert_eq!(o.edge_congestion[&ordered(2, w)], 1);
        assert_eq!(o.edge_congestion[&ordered(5, w)], 1);
        assert!(verify_overlay(&g, &acd.cliques[&0], &o).passed);
    }

    #[test]
    fn audit_catches_bad_relay_and_congestion() {
        let g = generate(&Model::Star { n: 5 }, 0).unwrap();
        let members: Vec<NodeId> = (0..5).collect();
        let mut o = CliqueOverlay::default();
        o.relays.insert((1, 2), 3);
        assert!(!verify_overlay(&g, &members, &o).bad_relays.is_empty());
        let mut o = CliqueOverlay::default();
        for (u, v) in [(1, 2), (1, 3), (1, 4)] {
            o.relays.insert((u, v), 0);
        }
        let r = verify_overlay(&g, &members, &o);
        assert_eq!(r.over_congested, vec![(0, 1)]);
        assert!(!r.passed);
    }

    #[test]
    fn routing_examples() {
        let g = generate(&Model::Complete { n: 4 }, 0).unwrap();
        let mut net = Network::new(g.clone(), &SimConfig::default(), 1).unwrap();
        let none = route(&mut net, &BTreeMap::new(), &[], 4).unwrap();
        assert_eq!(none.rounds, 0);
        let reqs: Vec<RoutingRequest> = g
            .edges()
            .map(|(u, v)| RoutingRequest { src: u, dst: v, payload: vec![Color(1)] })
            .collect();
        let one = route(&mut net, &BTreeMap::new(), &reqs, 4).unwrap();
        assert_eq!((one.rounds, one.delivered), (1, reqs.len()));
    }

    #[test]
    fn relayed_route_takes_two_hops() {
        let g = Graph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let mut net = Network::new(g, &SimConfig::default(), 1).unwrap();
        let mut o = CliqueOverlay::default();
        o.add(0, 2, 1);
        let overlays = BTreeMap::from([(0, o)]);
        let out = route(&mut net, &overlays, &[RoutingRequest { src: 0, dst: 2, payload: vec![Color(3)] }], 4).unwrap();
        assert_eq!((out.rounds, out.delivered), (2, 1));
    }
}
