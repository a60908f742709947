//! Round-synchronous message-passing engine with a strict per-edge bit budget.
//!
//! A round is: every sender runs its handler against its own state and random
//! stream and fills an outbox; the engine validates and exchanges all outboxes
//! at once; the caller then reads each node's inbox from the returned [`Mail`].
//! Nothing sent in a round is visible to any handler of that same round.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use num_bigint::BigUint;
use num_traits::{One, Zero};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::graph_io::{Graph, PaletteAssignment};
use crate::harness::SimConfig;
use crate::trials::NodeState;
use crate::util::{bits_for, ceil_log2};
use crate::{Color, NodeId};

pub type NodeRng = ChaCha8Rng;

/// Fixed field widths used to size every message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Widths {
    pub id: u32,
    pub color: u32,
    pub count: u32,
}

pub trait Message: Clone + fmt::Debug {
    fn bits(&self, w: &Widths) -> u32;
}

/// What a handler wants to send this round.
#[derive(Debug)]
pub struct Outbox<M> {
    broadcast: Option<M>,
    unicast: Vec<(NodeId, M)>,
}

impl<M> Outbox<M> {
    fn new() -> Self {
        Outbox { broadcast: None, unicast: Vec::new() }
    }

    /// Same message to every listening neighbor.
    pub fn broadcast(&mut self, msg: M) {
        self.broadcast = Some(msg);
    }

    pub fn send(&mut self, dst: NodeId, msg: M) {
        self.unicast.push((dst, msg));
    }

    pub fn is_empty(&self) -> bool {
        self.broadcast.is_none() && self.unicast.is_empty()
    }
}

/// Which nodes receive broadcasts this round. Unicasts ignore it.
#[derive(Clone, Copy)]
pub enum Audience<'a> {
    All,
    Only(&'a [bool]),
    /// Unicast-only round.
    Nobody,
}

impl Audience<'_> {
    fn listens(&self, v: NodeId) -> bool {
        match self {
            Audience::All => true,
            Audience::Only(mask) => mask[v as usize],
            Audience::Nobody => false,
        }
    }
}

/// Everything delivered in one round.
pub struct Mail<M> {
    graph: Arc<Graph>,
    listening: Option<Vec<bool>>,
    broadcasts: Vec<Option<M>>,
    any_broadcast: bool,
    offsets: Vec<usize>,
    unicasts: Vec<(NodeId, M)>,
}

impl<M> Mail<M> {
    /// Messages addressed to `v`: broadcasts by neighbor ID, then unicasts by sender ID.
    pub fn inbox(&self, v: NodeId) -> impl Iterator<Item = (NodeId, &M)> + '_ {
        let listens = self.any_broadcast && self.listening.as_ref().is_none_or(|m| m[v as usize]);
        let bcast = self
            .graph
            .neighbors(v)
            .iter()
            .filter(move |_| listens)
            .filter_map(move |&u| self.broadcasts[u as usize].as_ref().map(|m| (u, m)));
        let range = self.offsets[v as usize]..self.offsets[v as usize + 1];
        bcast.chain(self.unicasts[range].iter().map(|(src, m)| (*src, m)))
    }
}

/// Per-round accounting returned by [`Network::exchange`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RoundDelta {
    pub rounds: u64,
    pub messages: u64,
    pub max_edge_bits: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundStats {
    pub rounds: u64,
    pub total_messages: u64,
    pub max_edge_bits_per_round: u32,
    pub uncolored_degree_histogram: BTreeMap<usize, usize>,
    pub per_phase_breakdown: BTreeMap<String, u64>,
}

impl RoundStats {
    /// Rounds charged to phases whose path contains `segment`.
    pub fn rounds_in(&self, segment: &str) -> u64 {
        self.per_phase_breakdown
            .iter()
            .filter(|(k, _)| k.split('/').any(|s| s == segment))
            .map(|(_, v)| v)
            .sum()
    }
}

/// BFS tree over a cluster, built by flooding from the root.
#[derive(Debug, Clone)]
pub struct BfsTree {
    pub root: NodeId,
    /// Members in BFS order (root first).
    pub order: Vec<NodeId>,
    pub parent: HashMap<NodeId, NodeId>,
    pub children: HashMap<NodeId, Vec<NodeId>>,
    pub depth_of: HashMap<NodeId, u32>,
    pub depth: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AggOp {
    Broadcast,
    Convergecast,
    Min,
    Sum,
    BitwiseMax,
}

/// One cluster's share of a (possibly parallel) tree aggregation.
#[derive(Debug, Clone)]
pub struct AggTask {
    pub root: NodeId,
    pub members: Vec<NodeId>,
    pub op: AggOp,
    /// One value per member, aligned with `members`. For broadcast only the
    /// root's entry matters.
    pub inputs: Vec<BigUint>,
    pub width: u32,
}

#[derive(Debug, Clone, Default)]
pub struct AggOutcome {
    pub at_root: BigUint,
    /// Broadcast: value held by every member. Reductions: each member's subtree aggregate.
    pub per_node: HashMap<NodeId, BigUint>,
    /// Convergecast: every (member, value) collected at the root.
    pub gathered: Vec<(NodeId, BigUint)>,
    pub rounds: u64,
}

#[derive(Debug, Clone)]
enum TreeMsg {
    Join { root: NodeId },
    Chunk { bits: u32 },
    Tagged { bits: u32 },
}

impl Message for TreeMsg {
    fn bits(&self, w: &Widths) -> u32 {
        match self {
            TreeMsg::Join { .. } => w.id,
            TreeMsg::Chunk { bits } => *bits,
            TreeMsg::Tagged { bits } => bits + w.id,
        }
    }
}

pub struct Network {
    graph: Arc<Graph>,
    pub states: Vec<NodeState>,
    rngs: Vec<NodeRng>,
    round: u64,
    bandwidth: u32,
    widths: Widths,
    seed: u64,
    stats: RoundStats,
    phase: Vec<String>,
    trace: Option<Vec<String>>,
    trees: HashMap<(NodeId, u64), Arc<BfsTree>>,
    max_aggregate_bits: u32,
    universe: u64,
    pub warnings: Vec<String>,
}

/// Independent stream for `node`: ChaCha keyed by the master seed, one stream per node.
pub fn node_rng(master_seed: u64, node: NodeId) -> NodeRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(node as u64);
    rng
}

impl Network {
    pub fn new(graph: Graph, config: &SimConfig, seed: u64) -> Result<Self, SimError> {
        Self::from_arc(Arc::new(graph), config, seed)
    }

    pub fn from_arc(graph: Arc<Graph>, config: &SimConfig, seed: u64) -> Result<Self, SimError> {
        let n = graph.n();
        if n == 0 {
            return Err(SimError::EmptyGraph);
        }
        for v in graph.nodes() {
            let nb = graph.neighbors(v);
            if nb.contains(&v) {
                return Err(SimError::NotSimple(format!("self-loop at {v}")));
            }
            if nb.windows(2).any(|w| w[0] == w[1]) {
                return Err(SimError::NotSimple(format!("parallel edges at {v}")));
            }
            if let Some(&u) = nb.iter().find(|&&u| !graph.has_edge(u, v)) {
                return Err(SimError::NotSimple(format!("edge {v}->{u} is not symmetric")));
            }
        }
        let id = ceil_log2(n as u64).max(1);
        let bandwidth = config.b_factor * id;
        if bandwidth < id {
            return Err(SimError::BandwidthTooSmall { bandwidth, needed: id });
        }
        let widths = Widths { id, color: bits_for(n as u64 * n as u64), count: bits_for(n as u64) };
        Ok(Network {
            states: (0..n).map(|_| NodeState::default()).collect(),
            rngs: (0..n as NodeId).map(|v| node_rng(seed, v)).collect(),
            graph,
            round: 0,
            bandwidth,
            widths,
            seed,
            stats: RoundStats::default(),
            phase: Vec::new(),
            trace: config.trace.then(Vec::new),
            trees: HashMap::new(),
            max_aggregate_bits: config.max_aggregate_bits,
            universe: n as u64 * n as u64,
            warnings: Vec::new(),
        })
    }

    /// Installs the input lists; color fields are sized to the colorspace.
    pub fn set_palettes(&mut self, palettes: &PaletteAssignment) {
        assert_eq!(palettes.lists.len(), self.n());
        self.widths.color = bits_for(palettes.universe);
        self.universe = palettes.universe;
        for v in self.graph.nodes() {
            let st = &mut self.states[v as usize];
            st.palette = palettes.lists[v as usize].clone();
            st.color = None;
            st.uncolored_degree = self.graph.degree(v);
        }
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn graph_arc(&self) -> Arc<Graph> {
        Arc::clone(&self.graph)
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn bandwidth_bits(&self) -> u32 {
        self.bandwidth
    }

    pub fn widths(&self) -> Widths {
        self.widths
    }

    /// Size of the input colorspace.
    pub fn universe(&self) -> u64 {
        self.universe
    }

    pub fn master_seed(&self) -> u64 {
        self.seed
    }

    pub fn stats(&self) -> &RoundStats {
        &self.stats
    }

    pub fn rng(&mut self, v: NodeId) -> &mut NodeRng {
        &mut self.rngs[v as usize]
    }

    pub fn coloring(&self) -> Vec<Option<Color>> {
        self.states.iter().map(|s| s.color).collect()
    }

    pub fn uncolored(&self) -> Vec<NodeId> {
        self.graph.nodes().filter(|&v| self.states[v as usize].color.is_none()).collect()
    }

    pub fn push_phase(&mut self, label: &str) {
        self.phase.push(label.to_string());
    }

    pub fn pop_phase(&mut self) {
        self.phase.pop();
    }

    pub fn phase_path(&self) -> String {
        if self.phase.is_empty() {
            "main".to_string()
        } else {
            self.phase.join("/")
        }
    }

    pub fn warn(&mut self, msg: impl Into<String>) {
        let msg = msg.into();
        self.trace_event(NodeId::MAX, "warning", &msg);
        self.warnings.push(msg);
    }

    pub fn trace_event(&mut self, node: NodeId, event: &str, detail: &str) {
        if let Some(trace) = self.trace.as_mut() {
            trace.push(format!("{},{},{},{}", self.round, node, event, detail));
        }
    }

    /// Event log lines `round,node,event,detail`, if tracing is enabled.
    pub fn trace(&self) -> Option<&[String]> {
        self.trace.as_deref()
    }

    /// Uncolored-degree histogram over uncolored nodes, stored in the stats.
    pub fn record_histogram(&mut self) {
        let mut hist = BTreeMap::new();
        for v in self.graph.nodes() {
            if self.states[v as usize].color.is_none() {
                *hist.entry(self.states[v as usize].uncolored_degree).or_insert(0) += 1;
            }
        }
        self.stats.uncolored_degree_histogram = hist;
    }

    /// One strict round: any edge carrying more than the budget is a hard failure.
    pub fn exchange<M: Message>(
        &mut self,
        senders: &[NodeId],
        audience: Audience<'_>,
        send: impl FnMut(NodeId, &mut NodeState, &mut NodeRng, &mut Outbox<M>),
    ) -> Result<Mail<M>, SimError> {
        self.exchange_inner(senders, audience, false, send).map(|(mail, _)| mail)
    }

    /// Like [`exchange`](Self::exchange) but payloads wider than the budget are
    /// split over consecutive rounds; every extra round is charged.
    pub fn exchange_split<M: Message>(
        &mut self,
        senders: &[NodeId],
        audience: Audience<'_>,
        send: impl FnMut(NodeId, &mut NodeState, &mut NodeRng, &mut Outbox<M>),
    ) -> Result<(Mail<M>, RoundDelta), SimError> {
        self.exchange_inner(senders, audience, true, send)
    }

    /// Handler-style round over every node.
    pub fn run_round<M: Message>(
        &mut self,
        send: impl FnMut(NodeId, &mut NodeState, &mut NodeRng, &mut Outbox<M>),
    ) -> Result<(Mail<M>, RoundDelta), SimError> {
        let all: Vec<NodeId> = self.graph.nodes().collect();
        self.exchange_inner(&all, Audience::All, false, send)
    }

    fn exchange_inner<M: Message>(
        &mut self,
        senders: &[NodeId],
        audience: Audience<'_>,
        split: bool,
        mut send: impl FnMut(NodeId, &mut NodeState, &mut NodeRng, &mut Outbox<M>),
    ) -> Result<(Mail<M>, RoundDelta), SimError> {
        let n = self.n();
        let graph = Arc::clone(&self.graph);
        let budget = self.bandwidth;
        let w = self.widths;
        let mut broadcasts: Vec<Option<M>> = Vec::new();
        let mut any_broadcast = false;
        let mut pending: Vec<(NodeId, NodeId, M)> = Vec::new();
        let mut delta = RoundDelta::default();
        let mut sub_rounds: u64 = 1;
        let mut outbox = Outbox::new();
        for &v in senders {
            outbox.broadcast = None;
            outbox.unicast.clear();
            send(v, &mut self.states[v as usize], &mut self.rngs[v as usize], &mut outbox);
            if outbox.is_empty() {
                continue;
            }
            if let Some(trace) = self.trace.as_mut() {
                if let Some(b) = &outbox.broadcast {
                    trace.push(format!("{},{},bcast,{:?}", self.round, v, b));
                }
                for (dst, m) in &outbox.unicast {
                    trace.push(format!("{},{},send,{}:{:?}", self.round, v, dst, m));
                }
            }
            let bcast_bits = outbox.broadcast.as_ref().map(|m| m.bits(&w));
            if let Some(bits) = bcast_bits {
                let recipients = graph.neighbors(v).iter().filter(|&&u| audience.listens(u)).count() as u64;
                if recipients > 0 {
                    let chunks = self.check_load(v, first_listener(&graph, v, &audience), bits, split)?;
                    sub_rounds = sub_rounds.max(chunks);
                    delta.messages += recipients * chunks;
                    delta.max_edge_bits = delta.max_edge_bits.max(bits.min(budget));
                }
            }
            outbox.unicast.sort_by_key(|(dst, _)| *dst);
            let mut i = 0;
            while i < outbox.unicast.len() {
                let dst = outbox.unicast[i].0;
                if !graph.has_edge(v, dst) {
                    return Err(SimError::NotNeighbor { node: v, dst, round: self.round });
                }
                let mut load = bcast_bits.filter(|_| audience.listens(dst)).unwrap_or(0);
                let mut j = i;
                while j < outbox.unicast.len() && outbox.unicast[j].0 == dst {
                    let bits = outbox.unicast[j].1.bits(&w);
                    load += bits;
                    delta.messages += if split { (bits.max(1) as u64).div_ceil(budget as u64) } else { 1 };
                    j += 1;
                }
                let chunks = self.check_load(v, dst, load, split)?;
                sub_rounds = sub_rounds.max(chunks);
                delta.max_edge_bits = delta.max_edge_bits.max(load.min(budget));
                i = j;
            }
            if let Some(b) = outbox.broadcast.take() {
                if broadcasts.is_empty() {
                    broadcasts.resize_with(n, || None);
                }
                broadcasts[v as usize] = Some(b);
                any_broadcast = true;
            }
            pending.extend(outbox.unicast.drain(..).map(|(dst, m)| (dst, v, m)));
        }
        if broadcasts.is_empty() {
            broadcasts.resize_with(n, || None);
        }
        pending.sort_by_key(|(dst, src, _)| (*dst, *src));
        let mut offsets = vec![0usize; n + 1];
        for (dst, _, _) in &pending {
            offsets[*dst as usize + 1] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        let unicasts = pending.into_iter().map(|(_, src, m)| (src, m)).collect();
        delta.rounds = sub_rounds;
        self.charge(delta);
        let listening = match audience {
            Audience::All => None,
            Audience::Only(mask) => Some(mask.to_vec()),
            Audience::Nobody => Some(Vec::new()),
        };
        Ok((Mail { graph, listening, broadcasts, any_broadcast, offsets, unicasts }, delta))
    }

    fn check_load(&self, node: NodeId, dst: NodeId, bits: u32, split: bool) -> Result<u64, SimError> {
        if bits <= self.bandwidth {
            Ok(1)
        } else if split {
            Ok((bits as u64).div_ceil(self.bandwidth as u64))
        } else {
            Err(SimError::Bandwidth { node, dst, round: self.round, bits, budget: self.bandwidth })
        }
    }

    fn charge(&mut self, delta: RoundDelta) {
        self.round += delta.rounds;
        self.stats.rounds += delta.rounds;
        self.stats.total_messages += delta.messages;
        self.stats.max_edge_bits_per_round = self.stats.max_edge_bits_per_round.max(delta.max_edge_bits);
        let key = self.phase_path();
        *self.stats.per_phase_breakdown.entry(key).or_insert(0) += delta.rounds;
    }

    /// BFS trees for several disjoint clusters at once, by simulated flooding.
    /// Returns each tree plus the members it could not reach within `max_depth`.
    pub fn build_trees(
        &mut self,
        clusters: &[(NodeId, Vec<NodeId>)],
        max_depth: Option<u32>,
    ) -> Result<Vec<(Arc<BfsTree>, Vec<NodeId>)>, SimError> {
        let mut out: Vec<Option<(Arc<BfsTree>, Vec<NodeId>)>> = vec![None; clusters.len()];
        let mut owner: HashMap<NodeId, usize> = HashMap::new();
        let mut building = Vec::new();
        for (i, (root, members)) in clusters.iter().enumerate() {
            let key = (*root, cluster_key(members));
            if let Some(tree) = self.trees.get(&key).filter(|t| max_depth.is_none_or(|d| t.depth <= d)) {
                out[i] = Some((Arc::clone(tree), Vec::new()));
                continue;
            }
            for &v in members {
                assert!(owner.insert(v, i).is_none(), "node {v} is in two clusters of one aggregation");
            }
            assert!(members.contains(root), "root {root} is not a cluster member");
            building.push(i);
        }
        let mut depth_of: Vec<HashMap<NodeId, u32>> = vec![HashMap::new(); clusters.len()];
        let mut parent: Vec<HashMap<NodeId, NodeId>> = vec![HashMap::new(); clusters.len()];
        let mut frontier: Vec<NodeId> = Vec::new();
        for &i in &building {
            depth_of[i].insert(clusters[i].0, 0);
            frontier.push(clusters[i].0);
        }
        let mut level = 0u32;
        while !frontier.is_empty() && max_depth.is_none_or(|d| level < d) {
            frontier.sort_unstable();
            let mut unreached = vec![false; self.n()];
            for &i in &building {
                for &v in &clusters[i].1 {
                    if !depth_of[i].contains_key(&v) {
                        unreached[v as usize] = true;
                    }
                }
            }
            if !unreached.iter().any(|&x| x) {
                break;
            }
            let roots: HashMap<NodeId, NodeId> = frontier.iter().map(|&v| (v, clusters[owner[&v]].0)).collect();
            let mail = self.exchange(&frontier, Audience::Only(&unreached), |v, _, _, out| {
                out.broadcast(TreeMsg::Join { root: roots[&v] });
            })?;
            level += 1;
            let mut next = Vec::new();
            for &i in &building {
                for &v in &clusters[i].1 {
                    if depth_of[i].contains_key(&v) {
                        continue;
                    }
                    let from = mail
                        .inbox(v)
                        .filter(|(_, m)| matches!(m, TreeMsg::Join { root } if *root == clusters[i].0))
                        .map(|(u, _)| u)
                        .min();
                    if let Some(u) = from {
                        depth_of[i].insert(v, level);
                        parent[i].insert(v, u);
                        next.push(v);
                    }
                }
            }
            frontier = next;
        }
        for &i in &building {
            let (root, members) = &clusters[i];
            let mut order: Vec<NodeId> = depth_of[i].keys().copied().collect();
            order.sort_by_key(|v| (depth_of[i][v], *v));
            let mut children: HashMap<NodeId, Vec<NodeId>> = HashMap::new();
            for &v in &order {
                if let Some(&p) = parent[i].get(&v) {
                    children.entry(p).or_default().push(v);
                }
            }
            let depth = order.iter().map(|v| depth_of[i][v]).max().unwrap_or(0);
            let tree = Arc::new(BfsTree {
                root: *root,
                order,
                parent: std::mem::take(&mut parent[i]),
                children,
                depth_of: std::mem::take(&mut depth_of[i]),
                depth,
            });
            let unreached: Vec<NodeId> = members.iter().copied().filter(|v| !tree.depth_of.contains_key(v)).collect();
            // Only complete trees are reusable; a depth-capped partial one is not.
            if unreached.is_empty() {
                self.trees.insert((*root, cluster_key(members)), Arc::clone(&tree));
            }
            out[i] = Some((tree, unreached));
        }
        Ok(out.into_iter().map(|x| x.expect("every cluster handled")).collect())
    }

    /// Single-cluster convenience wrapper around [`tree_aggregate_many`](Self::tree_aggregate_many).
    pub fn tree_aggregate(
        &mut self,
        members: &[NodeId],
        root: NodeId,
        op: AggOp,
        inputs: Vec<BigUint>,
        width: u32,
    ) -> Result<AggOutcome, SimError> {
        let task = AggTask { root, members: members.to_vec(), op, inputs, width };
        Ok(self.tree_aggregate_many(&[task])?.pop().expect("one task"))
    }

    /// Runs one aggregation per cluster, all clusters sharing the same rounds.
    /// Wide values are pipelined in budget-sized chunks.
    pub fn tree_aggregate_many(&mut self, tasks: &[AggTask]) -> Result<Vec<AggOutcome>, SimError> {
        for t in tasks {
            if t.width > self.max_aggregate_bits {
                return Err(SimError::ValueTooWide { bits: t.width, max: self.max_aggregate_bits });
            }
            assert_eq!(t.inputs.len(), t.members.len());
        }
        // Several tasks may share one cluster; build each tree once.
        let mut specs: Vec<(NodeId, Vec<NodeId>)> = Vec::new();
        let mut slot: HashMap<(NodeId, u64), usize> = HashMap::new();
        let mut which = Vec::with_capacity(tasks.len());
        for t in tasks {
            let i = *slot.entry((t.root, cluster_key(&t.members))).or_insert_with(|| {
                specs.push((t.root, t.members.clone()));
                specs.len() - 1
            });
            which.push(i);
        }
        let built = self.build_trees(&specs, None)?;
        let trees: Vec<&(Arc<BfsTree>, Vec<NodeId>)> = which.iter().map(|&i| &built[i]).collect();
        for (tree, unreached) in trees.iter().copied() {
            if !unreached.is_empty() {
                return Err(SimError::DisconnectedCluster { root: tree.root, unreached: unreached.len() });
            }
        }
        let budget = self.bandwidth;
        let tag_payload = budget.saturating_sub(self.widths.id);
        // Per-task round schedules: (sender, receiver, chunk bits) by round index.
        let mut schedules: Vec<Vec<Vec<(NodeId, NodeId, u32, bool)>>> = Vec::new();
        let mut outcomes = Vec::new();
        for (task, (tree, _)) in tasks.iter().zip(trees.iter().copied()) {
            let value_of: HashMap<NodeId, &BigUint> = task.members.iter().copied().zip(&task.inputs).collect();
            let width = task.width.max(1);
            let k = width.div_ceil(budget) as usize;
            let chunk_bits = |c: usize| (width - c as u32 * budget).min(budget);
            let d = tree.depth as usize;
            let mut sched: Vec<Vec<(NodeId, NodeId, u32, bool)>> = Vec::new();
            let mut outcome = AggOutcome::default();
            match task.op {
                AggOp::Broadcast => {
                    let value = value_of[&tree.root].clone();
                    if d > 0 {
                        sched.resize(d + k - 1, Vec::new());
                        for &v in &tree.order {
                            let dv = tree.depth_of[&v] as usize;
                            for &ch in tree.children.get(&v).map(Vec::as_slice).unwrap_or(&[]) {
                                for c in 0..k {
                                    sched[dv + c].push((v, ch, chunk_bits(c), false));
                                }
                            }
                        }
                    }
                    for &v in &tree.order {
                        outcome.per_node.insert(v, value.clone());
                    }
                    outcome.at_root = value;
                }
                AggOp::Min | AggOp::Sum | AggOp::BitwiseMax => {
                    for &v in tree.order.iter().rev() {
                        let mut acc = value_of[&v].clone();
                        for ch in tree.children.get(&v).map(Vec::as_slice).unwrap_or(&[]) {
                            let cv = &outcome.per_node[ch];
                            acc = match task.op {
                                AggOp::Min => acc.min(cv.clone()),
                                AggOp::Sum => acc + cv,
                                _ => acc | cv,
                            };
                        }
                        outcome.per_node.insert(v, acc);
                    }
                    if d > 0 {
                        sched.resize(d + k - 1, Vec::new());
                        for &v in &tree.order[1..] {
                            let dv = tree.depth_of[&v] as usize;
                            for c in 0..k {
                                sched[d - dv + c].push((v, tree.parent[&v], chunk_bits(c), false));
                            }
                        }
                    }
                    outcome.at_root = outcome.per_node[&tree.root].clone();
                    let full = width_of(&outcome.at_root);
                    if full > width {
                        return Err(SimError::ValueTooWide { bits: full, max: width });
                    }
                }
                AggOp::Convergecast => {
                    if tag_payload == 0 {
                        return Err(SimError::ValueTooWide { bits: width, max: 0 });
                    }
                    let k = width.div_ceil(tag_payload) as usize;
                    let piece = |c: usize| (width - c as u32 * tag_payload).min(tag_payload);
                    let mut queues: HashMap<NodeId, VecDeque<(NodeId, usize)>> = HashMap::new();
                    for &v in &tree.order[1..] {
                        queues.entry(v).or_default().extend((0..k).map(|c| (v, c)));
                    }
                    let mut received = 0usize;
                    let total = (tree.order.len() - 1) * k;
                    while received < total {
                        let mut this_round = Vec::new();
                        let mut moves = Vec::new();
                        for &v in &tree.order[1..] {
                            if let Some(item) = queues.get_mut(&v).and_then(|q| q.pop_front()) {
                                let p = tree.parent[&v];
                                this_round.push((v, p, piece(item.1), true));
                                moves.push((p, item));
                            }
                        }
                        for (p, item) in moves {
                            if p == tree.root {
                                received += 1;
                            } else {
                                queues.entry(p).or_default().push_back(item);
                            }
                        }
                        sched.push(this_round);
                    }
                    outcome.gathered = tree.order.iter().map(|&v| (v, value_of[&v].clone())).collect();
                    outcome.at_root = value_of[&tree.root].clone();
                }
            }
            schedules.push(sched);
            outcomes.push(outcome);
        }
        let total_rounds = schedules.iter().map(Vec::len).max().unwrap_or(0);
        for r in 0..total_rounds {
            let mut sends: HashMap<NodeId, Vec<(NodeId, TreeMsg)>> = HashMap::new();
            for sched in &schedules {
                if let Some(list) = sched.get(r) {
                    for &(src, dst, bits, tagged) in list {
                        let msg = if tagged { TreeMsg::Tagged { bits } } else { TreeMsg::Chunk { bits } };
                        sends.entry(src).or_default().push((dst, msg));
                    }
                }
            }
            let mut senders: Vec<NodeId> = sends.keys().copied().collect();
            senders.sort_unstable();
            self.exchange(&senders, Audience::Nobody, |v, _, _, out| {
                for (dst, m) in sends.remove(&v).unwrap_or_default() {
                    out.send(dst, m);
                }
            })?;
        }
        for (o, s) in outcomes.iter_mut().zip(&schedules) {
            o.rounds = s.len() as u64;
        }
        Ok(outcomes)
    }
}

fn first_listener(graph: &Graph, v: NodeId, audience: &Audience<'_>) -> NodeId {
    graph.neighbors(v).iter().copied().find(|&u| audience.listens(u)).unwrap_or(v)
}

fn cluster_key(members: &[NodeId]) -> u64 {
    let mut sorted = members.to_vec();
    sorted.sort_unstable();
    let mut h = DefaultHasher::new();
    sorted.hash(&mut h);
    h.finish()
}

fn width_of(x: &BigUint) -> u32 {
    if x.is_zero() {
        1
    } else {
        x.bits() as u32
    }
}

/// `true` bits as an unsigned integer, bit i = entry i.
pub fn bits_to_biguint(bits: &[bool]) -> BigUint {
    let mut x = BigUint::zero();
    for (i, &b) in bits.iter().enumerate() {
        if b {
            x |= BigUint::one() << i;
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph_io::{generate, Model};

    #[derive(Debug, Clone)]
    struct Raw(u32);
    impl Message for Raw {
        fn bits(&self, _: &Widths) -> u32 {
            self.0
        }
    }

    fn net(model: Model, seed: u64) -> Network {
        Network::new(generate(&model, 0).unwrap(), &SimConfig::default(), seed).unwrap()
    }

    #[test]
    fn construction() {
        let n = net(Model::Complete { n: 3 }, 7);
        assert_eq!(n.round(), 0);
        assert!(n.states.iter().all(|s| s.color.is_none()));
        let empty = Graph::from_edges(0, &[]).unwrap();
        assert_eq!(Network::new(empty, &SimConfig::default(), 1).err(), Some(SimError::EmptyGraph));
        let cfg = SimConfig { b_factor: 0, ..SimConfig::default() };
        let g = generate(&Model::Path { n: 4 }, 0).unwrap();
        assert!(matches!(Network::new(g, &cfg, 1), Err(SimError::BandwidthTooSmall { .. })));
    }

    #[test]
    fn silent_round_and_id_exchange() {
        let mut n = net(Model::Complete { n: 2 }, 1);
        let (_, d) = n.run_round::<Raw>(|_, _, _, _| {}).unwrap();
        assert_eq!((d.rounds, d.messages), (1, 0));
        let id = n.widths().id;
        let (mail, d) = n.run_round(|_, _, _, out| out.broadcast(Raw(id))).unwrap();
        assert_eq!((d.messages, d.max_edge_bits), (2, id));
        assert_eq!(mail.inbox(0).map(|(u, _)| u).collect::<Vec<_>>(), vec![1]);
        assert_eq!(n.round(), 2);
    }

    #[test]
    fn oversize_and_non_neighbor_are_hard_failures() {
        let mut n = net(Model::Path { n: 3 }, 1);
        let b = n.bandwidth_bits();
        let err = n.exchange(&[1], Audience::All, |_, _, _, out| out.send(2, Raw(2 * b))).err().unwrap();
        assert_eq!(err, SimError::Bandwidth { node: 1, dst: 2, round: 0, bits: 2 * b, budget: b });
        let err = n.exchange(&[0], Audience::All, |_, _, _, out| out.send(2, Raw(1))).err().unwrap();
        assert!(matches!(err, SimError::NotNeighbor { node: 0, dst: 2, .. }));
    }

    #[test]
    fn split_rounds_are_charged() {
        let mut n = net(Model::Path { n: 2 }, 1);
        let b = n.bandwidth_bits();
        let (_, d) = n.exchange_split(&[0], Audience::All, |_, _, _, out| out.send(1, Raw(2 * b + 1))).unwrap();
        assert_eq!(d.rounds, 3);
        assert_eq!(n.stats().max_edge_bits_per_round, b);
    }

    #[test]
    fn aggregation_examples() {
        let mut one = net(Model::Path { n: 1 }, 1);
        let out = one.tree_aggregate(&[0], 0, AggOp::Broadcast, vec![BigUint::from(5u32)], 8).unwrap();
        assert_eq!(out.rounds, 0);
        let mut p = net(Model::Path { n: 5 }, 1);
        let members: Vec<NodeId> = (0..5).collect();
        let out = p.tree_aggregate(&members, 0, AggOp::Sum, vec![BigUint::one(); 5], 8).unwrap();
        assert_eq!(out.at_root, BigUint::from(5u32));
        assert!(out.rounds <= 2 * 4 + 1);
        let mut k2 = net(Model::Complete { n: 2 }, 1);
        let out = k2
            .tree_aggregate(&[0, 1], 0, AggOp::BitwiseMax, vec![BigUint::from(0b1010u32), BigUint::from(0b0110u32)], 4)
            .unwrap();
        assert_eq!(out.at_root, BigUint::from(0b1110u32));
        let mut gap = net(Model::Path { n: 3 }, 1);
        assert!(matches!(
            gap.tree_aggregate(&[0, 2], 0, AggOp::Sum, vec![BigUint::one(); 2], 4),
            Err(SimError::DisconnectedCluster { .. })
        ));
    }

    #[test]
    fn wide_broadcast_pipelines() {
        let mut p = net(Model::Path { n: 4 }, 1);
        let b = p.bandwidth_bits();
        let members: Vec<NodeId> = (0..4).collect();
        let out = p.tree_aggregate(&members, 0, AggOp::Broadcast, vec![BigUint::one(); 4], 3 * b).unwrap();
        // depth 3, three chunks
        assert_eq!(out.rounds, 3 + 3 - 1);
        assert!(out.per_node.values().all(|x| x.is_one()));
        let gathered = p.tree_aggregate(&members, 0, AggOp::Convergecast, vec![BigUint::one(); 4], 4).unwrap();
        assert_eq!(gathered.gathered.len(), 4);
    }

    #[test]
    fn per_node_streams_ignore_scheduling() {
        use rand::Rng;
        let mut a = node_rng(9, 3);
        let mut b = node_rng(9, 4);
        let _: u64 = b.gen();
        let mut c = node_rng(9, 3);
        assert_eq!(a.gen::<u64>(), c.gen::<u64>());
    }
}
