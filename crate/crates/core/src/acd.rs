//! Constant-round almost-clique decomposition by sampling and gossip, plus
//! brute-force validators.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use num_bigint::BigUint;
use num_rational::Ratio;
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::graph_io::{density_oracle, Graph};
use crate::harness::SimConfig;
use crate::sim_core::{AggOp, AggTask, Audience, Message, Network, Widths};
use crate::trials::Role;
use crate::util::log2n;
use crate::{NodeId, Sparsity};

/// Below this Δ the sampling thresholds degenerate and every node is sparse.
pub const MIN_ACD_DELTA: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlmostCliqueDecomposition {
    pub v_sparse: Vec<NodeId>,
    /// AC-ID to sorted member list.
    pub cliques: BTreeMap<NodeId, Vec<NodeId>>,
    pub leaders: BTreeMap<NodeId, NodeId>,
    pub epsilon: Sparsity,
    pub eta: Sparsity,
}

impl AlmostCliqueDecomposition {
    /// Everything sparse.
    pub fn trivial(n: usize, epsilon: Sparsity, eta: Sparsity) -> Self {
        AlmostCliqueDecomposition {
            v_sparse: (0..n as NodeId).collect(),
            cliques: BTreeMap::new(),
            leaders: BTreeMap::new(),
            epsilon,
            eta,
        }
    }

    /// AC-ID of each node, `None` for sparse nodes.
    pub fn membership(&self, n: usize) -> Vec<Option<NodeId>> {
        let mut out = vec![None; n];
        for (&id, members) in &self.cliques {
            for &v in members {
                out[v as usize] = Some(id);
            }
        }
        out
    }

    /// Demotes a whole clique to the sparse set.
    pub fn dissolve(&mut self, id: NodeId) {
        if let Some(members) = self.cliques.remove(&id) {
            self.v_sparse.extend(members);
            self.v_sparse.sort_unstable();
        }
        self.leaders.remove(&id);
    }

    /// Lines `sparse: v…` and `clique <AC-ID> leader <id>: v…`, IDs 1-based.
    pub fn dump(&self) -> String {
        let mut out = String::from("sparse:");
        for v in &self.v_sparse {
            let _ = write!(out, " {}", v + 1);
        }
        out.push('\n');
        for (id, members) in &self.cliques {
            let _ = write!(out, "clique {} leader {}:", id + 1, self.leaders[id] + 1);
            for v in members {
                let _ = write!(out, " {}", v + 1);
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AcdStats {
    pub rounds: u64,
    pub skipped: bool,
    pub sampled: usize,
    pub dense_sampled: usize,
    pub f_edges: Vec<(NodeId, NodeId)>,
    pub double_adoptions: usize,
    pub removed_cliques: usize,
}

/// Thresholds and sampling parameters for one run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcdParams {
    pub sample_prob: f64,
    /// Expected sampled neighbors of a node in a perfect clique.
    pub expected_sampled: f64,
    pub gossip_rounds: usize,
    pub fanout: usize,
    pub similar_at: f64,
    pub dense_above: f64,
    pub adopt_at: f64,
}

impl AcdParams {
    pub fn new(delta: usize, cfg: &SimConfig) -> Self {
        let d = delta as f64;
        let dl: f64 = ratio_f64(cfg.delta);
        if cfg.is_theory() {
            let s = d.sqrt();
            AcdParams {
                sample_prob: 1.0 / s,
                expected_sampled: s,
                gossip_rounds: 1,
                fanout: 1,
                similar_at: (1.0 - 2.0 * dl) * s / 2.0,
                dense_above: (1.0 - 2.0 * dl) * s,
                adopt_at: (1.0 - 11.0 * dl) * s,
            }
        } else {
            let s = (cfg.acd_sample_boost * d.sqrt()).min(d);
            let r = cfg.acd_gossip_rounds.max(1);
            let f = cfg.acd_fanout.max(1);
            // A similar pair shares about Δ relays, each naming a given sampled
            // neighbor with probability f/s and forwarding with probability 1/2.
            let expected_hits = r as f64 * f as f64 * d / (2.0 * s);
            AcdParams {
                sample_prob: s / d,
                expected_sampled: s,
                gossip_rounds: r,
                fanout: f,
                similar_at: cfg.acd_similar_frac * expected_hits,
                dense_above: cfg.acd_dense_frac * s,
                adopt_at: cfg.acd_adopt_frac * s,
            }
        }
    }
}

fn ratio_f64(r: Sparsity) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

#[derive(Debug, Clone)]
enum AcdMsg {
    Flag,
    Ids(Vec<NodeId>),
    Id(NodeId),
}

impl Message for AcdMsg {
    fn bits(&self, w: &Widths) -> u32 {
        match self {
            AcdMsg::Flag => 1,
            AcdMsg::Ids(ids) => w.id * ids.len().max(1) as u32,
            AcdMsg::Id(_) => w.id,
        }
    }
}

fn mask(n: usize, on: impl Iterator<Item = NodeId>) -> Vec<bool> {
    let mut m = vec![false; n];
    for v in on {
        m[v as usize] = true;
    }
    m
}

/// Runs the decomposition on the whole network and records each node's role.
pub fn compute_acd(net: &mut Network, cfg: &SimConfig) -> Result<(AlmostCliqueDecomposition, AcdStats), SimError> {
    net.push_phase("acd");
    let start = net.round();
    let res = compute_acd_inner(net, cfg);
    net.pop_phase();
    let (acd, mut stats) = res?;
    stats.rounds = net.round() - start;
    let membership = acd.membership(net.n());
    for (v, m) in membership.into_iter().enumerate() {
        net.states[v].role = m.map_or(Role::Sparse, Role::Dense);
    }
    Ok((acd, stats))
}

fn compute_acd_inner(net: &mut Network, cfg: &SimConfig) -> Result<(AlmostCliqueDecomposition, AcdStats), SimError> {
    let n = net.n();
    let graph = net.graph_arc();
    let delta = graph.delta();
    let mut stats = AcdStats::default();
    if cfg.is_theory() {
        let dl = cfg.delta;
        if dl <= Ratio::from_integer(0) || dl >= Ratio::new(1, 80) {
            return Err(SimError::TheoryPrecondition(format!("ACD needs δ in (0, 1/80), got {dl}")));
        }
        let need = cfg.c_acd * log2n(n).powi(2);
        if (delta as f64) < need {
            return Err(SimError::TheoryPrecondition(format!("ACD needs Δ ≥ {need:.1}, got {delta}")));
        }
    }
    if delta < MIN_ACD_DELTA {
        net.warn(format!("ACD skipped: Δ = {delta} < {MIN_ACD_DELTA}, all nodes sparse"));
        stats.skipped = true;
        return Ok((AlmostCliqueDecomposition::trivial(n, cfg.epsilon, cfg.eta), stats));
    }
    let params = AcdParams::new(delta, cfg);
    let all: Vec<NodeId> = graph.nodes().collect();

    // Sample.
    let mut in_s = vec![false; n];
    for &v in &all {
        in_s[v as usize] = net.rng(v).gen_bool(params.sample_prob.min(1.0));
    }
    let sampled: Vec<NodeId> = all.iter().copied().filter(|&v| in_s[v as usize]).collect();
    stats.sampled = sampled.len();
    let mail = net.exchange(&sampled, Audience::All, |_, _, _, out| out.broadcast(AcdMsg::Flag))?;
    let s_nbrs: Vec<Vec<NodeId>> = all.iter().map(|&v| mail.inbox(v).map(|(u, _)| u).collect()).collect();
    drop(mail);

    // Gossip.
    let mut counts: Vec<HashMap<NodeId, u32>> = vec![HashMap::new(); n];
    for _ in 0..params.gossip_rounds {
        let talkers: Vec<NodeId> = all.iter().copied().filter(|&v| !s_nbrs[v as usize].is_empty()).collect();
        let mail = net.exchange(&talkers, Audience::Only(&in_s), |v, _, rng, out| {
            let nb = &s_nbrs[v as usize];
            let forward = (nb.len() as f64 / (2.0 * params.expected_sampled)).min(1.0);
            let picks: Vec<NodeId> =
                sample(rng, nb.len(), params.fanout.min(nb.len())).into_iter().map(|i| nb[i]).collect();
            if rng.gen_bool(forward) {
                out.broadcast(AcdMsg::Ids(picks));
            }
        })?;
        for &v in &sampled {
            let c = &mut counts[v as usize];
            for (_, m) in mail.inbox(v) {
                if let AcdMsg::Ids(ids) = m {
                    for &id in ids.iter().filter(|&&id| id != v) {
                        *c.entry(id).or_insert(0) += 1;
                    }
                }
            }
        }
    }

    // Detect similar S-neighbors and tell them, giving F.
    let detected: Vec<Vec<NodeId>> = all
        .iter()
        .map(|&v| {
            let mut d: Vec<NodeId> = s_nbrs[v as usize]
                .iter()
                .copied()
                .filter(|&u| in_s[v as usize] && counts[v as usize].get(&u).is_some_and(|&c| c as f64 >= params.similar_at))
                .collect();
            d.sort_unstable();
            d
        })
        .collect();
    drop(counts);
    let mail = net.exchange(&sampled, Audience::Only(&in_s), |v, _, _, out| {
        for &u in &detected[v as usize] {
            out.send(u, AcdMsg::Flag);
        }
    })?;
    let mut f_nbrs: Vec<Vec<NodeId>> = vec![Vec::new(); n];
    for &v in &sampled {
        let mut f: Vec<NodeId> = detected[v as usize].clone();
        f.extend(mail.inbox(v).map(|(u, _)| u));
        f.sort_unstable();
        f.dedup();
        for &u in &f {
            if v < u {
                stats.f_edges.push((v, u));
            }
        }
        f_nbrs[v as usize] = f;
    }
    drop(mail);

    // Density.
    let dense: Vec<NodeId> =
        sampled.iter().copied().filter(|&v| f_nbrs[v as usize].len() as f64 > params.dense_above).collect();
    stats.dense_sampled = dense.len();
    let mail = net.exchange(&dense, Audience::Only(&in_s), |_, _, _, out| out.broadcast(AcdMsg::Flag))?;
    let in_dense = mask(n, dense.iter().copied());
    let dense_nbrs: Vec<Vec<NodeId>> =
        dense.iter().map(|&v| mail.inbox(v).map(|(u, _)| u).collect()).collect();
    drop(mail);

    // Propose the minimum dense F-neighbor.
    let mut proposal: HashMap<NodeId, NodeId> = HashMap::new();
    for (i, &v) in dense.iter().enumerate() {
        let f = &f_nbrs[v as usize];
        if let Some(&u) = dense_nbrs[i].iter().filter(|u| f.binary_search(u).is_ok()).min() {
            proposal.insert(v, u);
        }
    }
    let proposers: Vec<NodeId> = dense.iter().copied().filter(|v| proposal.contains_key(v)).collect();
    let mail = net.exchange(&proposers, Audience::All, |v, _, _, out| out.broadcast(AcdMsg::Id(proposal[&v])))?;
    debug_assert!(proposers.iter().all(|v| in_dense[*v as usize]));

    // Adopt.
    let mut adopted: Vec<Option<NodeId>> = vec![None; n];
    for &v in &all {
        let mut tally: HashMap<NodeId, u32> = HashMap::new();
        for (_, m) in mail.inbox(v) {
            if let AcdMsg::Id(id) = m {
                *tally.entry(*id).or_insert(0) += 1;
            }
        }
        let mut winners: Vec<(u32, NodeId)> =
            tally.into_iter().filter(|&(_, c)| c as f64 >= params.adopt_at).map(|(id, c)| (c, id)).collect();
        if winners.len() > 1 {
            stats.double_adoptions += 1;
            net.trace_event(v, "double_adoption", &format!("{winners:?}"));
        }
        winners.sort_unstable_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        adopted[v as usize] = winners.first().map(|w| w.1);
    }
    drop(mail);

    let (cliques, removed) = filter_cliques(net, cfg, &adopted)?;
    stats.removed_cliques = removed;
    let mut acd = AlmostCliqueDecomposition {
        v_sparse: Vec::new(),
        leaders: cliques.keys().map(|&id| (id, id)).collect(),
        cliques,
        epsilon: cfg.epsilon,
        eta: cfg.eta,
    };
    let member = acd.membership(n);
    acd.v_sparse = all.iter().copied().filter(|&v| member[v as usize].is_none()).collect();
    Ok((acd, stats))
}

/// Leader-driven removal of groups that are too small, have a member with too
/// few internal neighbors, or are not within two hops of their AC-ID node.
fn filter_cliques(
    net: &mut Network,
    cfg: &SimConfig,
    adopted: &[Option<NodeId>],
) -> Result<(BTreeMap<NodeId, Vec<NodeId>>, usize), SimError> {
    let graph = net.graph_arc();
    let delta = Ratio::from_integer(graph.delta() as i64);
    let one = Ratio::from_integer(1);
    let mut groups: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
    for (v, a) in adopted.iter().enumerate() {
        if let Some(id) = a {
            groups.entry(*id).or_default().push(v as NodeId);
        }
    }
    let mut removed = 0;
    // The AC-ID node leads; without it the group cannot organize itself.
    groups.retain(|id, _| {
        let keep = adopted[*id as usize] == Some(*id);
        removed += usize::from(!keep);
        keep
    });
    let specs: Vec<(NodeId, Vec<NodeId>)> = groups.iter().map(|(id, m)| (*id, m.clone())).collect();
    let trees = net.build_trees(&specs, Some(2))?;
    let mut reached: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
    for ((id, members), (tree, unreached)) in specs.iter().zip(&trees) {
        if !unreached.is_empty() {
            net.trace_event(*id, "acd_unreached", &unreached.len().to_string());
        }
        let mut got: Vec<NodeId> = members.iter().copied().filter(|v| tree.depth_of.contains_key(v)).collect();
        got.sort_unstable();
        reached.insert(*id, got);
    }
    let mut cluster_of: Vec<Option<NodeId>> = vec![None; graph.n()];
    for (id, members) in &reached {
        for &v in members {
            cluster_of[v as usize] = Some(*id);
        }
    }
    let announcers: Vec<NodeId> = reached.values().flatten().copied().collect::<Vec<_>>();
    let mut announcers = announcers;
    announcers.sort_unstable();
    let mail = net.exchange(&announcers, Audience::All, |v, _, _, out| {
        out.broadcast(AcdMsg::Id(cluster_of[v as usize].expect("announcer is in a group")))
    })?;
    let inner_degree: HashMap<NodeId, usize> = announcers
        .iter()
        .map(|&v| {
            let mine = cluster_of[v as usize];
            (v, mail.inbox(v).filter(|(_, m)| matches!(m, AcdMsg::Id(x) if Some(*x) == mine)).count())
        })
        .collect();
    drop(mail);
    let width = net.widths().count;
    let mut tasks = Vec::new();
    for (id, members) in &reached {
        tasks.push(AggTask {
            root: *id,
            members: members.clone(),
            op: AggOp::Sum,
            inputs: vec![BigUint::from(1u32); members.len()],
            width,
        });
        tasks.push(AggTask {
            root: *id,
            members: members.clone(),
            op: AggOp::Min,
            inputs: members.iter().map(|v| BigUint::from(inner_degree[v])).collect(),
            width,
        });
    }
    let results = net.tree_aggregate_many(&tasks)?;
    let size_floor = (one - cfg.delta) * delta;
    let degree_floor = (one - cfg.delta * 27) * delta;
    let mut verdict_tasks = Vec::new();
    let mut keep_ids = Vec::new();
    for (i, (id, members)) in reached.iter().enumerate() {
        let size = to_i64(&results[2 * i].at_root);
        let min_deg = to_i64(&results[2 * i + 1].at_root);
        let keep = Ratio::from_integer(size) >= size_floor && Ratio::from_integer(min_deg) >= degree_floor;
        verdict_tasks.push(AggTask {
            root: *id,
            members: members.clone(),
            op: AggOp::Broadcast,
            inputs: vec![BigUint::from(u32::from(keep)); members.len()],
            width: 1,
        });
        if keep {
            keep_ids.push(*id);
        } else {
            removed += 1;
        }
    }
    net.tree_aggregate_many(&verdict_tasks)?;
    let cliques = keep_ids.into_iter().map(|id| (id, reached.remove(&id).expect("kept group exists"))).collect();
    Ok((cliques, removed))
}

fn to_i64(x: &BigUint) -> i64 {
    x.to_u64_digits().first().copied().unwrap_or(0) as i64
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcdReport {
    pub not_partition: Vec<NodeId>,
    pub size_violations: Vec<NodeId>,
    pub degree_violations: Vec<NodeId>,
    pub dense_in_sparse: Vec<NodeId>,
    pub diameter_violations: Vec<NodeId>,
    pub external_violations: Vec<NodeId>,
    pub passed: bool,
}

/// Brute-force audit of every decomposition property.
pub fn verify_acd(graph: &Graph, acd: &AlmostCliqueDecomposition) -> AcdReport {
    let n = graph.n();
    let mut report = AcdReport::default();
    let mut seen = vec![0u32; n];
    for &v in &acd.v_sparse {
        seen[v as usize] += 1;
    }
    for members in acd.cliques.values() {
        for &v in members {
            seen[v as usize] += 1;
        }
    }
    report.not_partition = (0..n as NodeId).filter(|&v| seen[v as usize] != 1).collect();
    let one = Ratio::from_integer(1);
    let delta = Ratio::from_integer(graph.delta() as i64);
    let low = (one - acd.epsilon) * delta;
    let high = (one + acd.epsilon) * delta;
    let member = acd.membership(n);
    for (&id, members) in &acd.cliques {
        let size = Ratio::from_integer(members.len() as i64);
        if size < low || size > high {
            report.size_violations.push(id);
        }
        let in_c = |u: NodeId| member[u as usize] == Some(id);
        let mut diameter_ok = true;
        for (i, &v) in members.iter().enumerate() {
            let inner = graph.neighbors(v).iter().filter(|&&u| in_c(u)).count();
            if Ratio::from_integer(inner as i64) < low {
                report.degree_violations.push(v);
            }
            let ext = graph.neighbors(v).iter().filter(|&&u| member[u as usize].is_some_and(|x| x != id)).count();
            if Ratio::from_integer(ext as i64) > acd.epsilon * delta {
                report.external_violations.push(v);
            }
            for &u in &members[i + 1..] {
                if !graph.has_edge(u, v) && !graph.neighbors(v).iter().any(|&w| in_c(w) && graph.has_edge(w, u)) {
                    diameter_ok = false;
                }
            }
        }
        if !diameter_ok {
            report.diameter_violations.push(id);
        }
    }
    if graph.delta() >= 1 {
        report.dense_in_sparse =
            acd.v_sparse.iter().copied().filter(|&v| density_oracle(graph, v, acd.eta)).collect();
    }
    report.passed = report.not_partition.is_empty()
        && report.size_violations.is_empty()
        && report.degree_violations.is_empty()
        && report.dense_in_sparse.is_empty()
        && report.diameter_violations.is_empty()
        && report.external_violations.is_empty();
    report
}

/// e(v): neighbors of `v` inside other cliques.
pub fn external_degree(graph: &Graph, acd: &AlmostCliqueDecomposition, v: NodeId) -> Result<usize, SimError> {
    let member = acd.membership(graph.n());
    let own = member[v as usize].ok_or(SimError::NotInClique { node: v })?;
    Ok(graph.neighbors(v).iter().filter(|&&u| member[u as usize].is_some_and(|x| x != own)).count())
}

/// a(v): members of v's clique that are not its neighbors.
pub fn antidegree(graph: &Graph, acd: &AlmostCliqueDecomposition, v: NodeId) -> Result<usize, SimError> {
    let member = acd.membership(graph.n());
    let own = member[v as usize].ok_or(SimError::NotInClique { node: v })?;
    Ok(acd.cliques[&own].iter().filter(|&&u| u != v && !graph.has_edge(u, v)).count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph_io::{generate, Model};

    fn single(graph: &Graph, members: Vec<NodeId>) -> AlmostCliqueDecomposition {
        let eps = Ratio::new(1, 3);
        let mut acd = AlmostCliqueDecomposition::trivial(graph.n(), eps, eps / 108);
        acd.v_sparse.retain(|v| !members.contains(v));
        acd.leaders.insert(members[0], members[0]);
        acd.cliques.insert(members[0], members);
        acd
    }

    #[test]
    fn complete_graph_as_one_clique() {
        let g = generate(&Model::Complete { n: 10 }, 0).unwrap();
        let acd = single(&g, (0..10).collect());
        assert!(verify_acd(&g, &acd).passed);
        for v in 0..10 {
            assert_eq!(external_degree(&g, &acd, v).unwrap(), 0);
            assert_eq!(antidegree(&g, &acd, v).unwrap(), 0);
        }
    }

    #[test]
    fn trivial_decomposition_of_sparse_graph() {
        let g = generate(&Model::Cycle { n: 12 }, 0).unwrap();
        let eps = Ratio::new(1, 3);
        assert!(verify_acd(&g, &AlmostCliqueDecomposition::trivial(12, eps, eps / 108)).passed);
    }

    #[test]
    fn oversized_clique_fails() {
        // Δ = 3 on a path-like graph; a "clique" of 6 nodes exceeds (1+ε)Δ = 4.
        let g = generate(&Model::Complete { n: 4 }, 0).unwrap();
        let g6 = Graph::from_edges(6, &g.edges().chain([(3, 4), (4, 5)]).collect::<Vec<_>>()).unwrap();
        let acd = single(&g6, (0..6).collect());
        let r = verify_acd(&g6, &acd);
        assert!(!r.passed);
        assert_eq!(r.size_violations, vec![0]);
    }

    #[test]
    fn external_and_antidegree_counts() {
        // two triangles {0,1,2} {3,4,5} joined by 2-3; 0-1 removed from the first
        let g = Graph::from_edges(6, &[(0, 2), (1, 2), (3, 4), (3, 5), (4, 5), (2, 3)]).unwrap();
        let mut acd = single(&g, vec![0, 1, 2]);
        acd.v_sparse.retain(|v| *v < 3);
        acd.cliques.insert(3, vec![3, 4, 5]);
        acd.leaders.insert(3, 3);
        assert_eq!(external_degree(&g, &acd, 2).unwrap(), 1);
        assert_eq!(antidegree(&g, &acd, 0).unwrap(), 1);
        let lone = AlmostCliqueDecomposition::trivial(6, acd.epsilon, acd.eta);
        assert_eq!(external_degree(&g, &lone, 0), Err(SimError::NotInClique { node: 0 }));
    }

    #[test]
    fn small_delta_is_skipped() {
        let g = generate(&Model::Complete { n: 8 }, 0).unwrap();
        let mut net = Network::new(g, &SimConfig::default(), 1).unwrap();
        let (acd, stats) = compute_acd(&mut net, &SimConfig::default()).unwrap();
        assert!(stats.skipped);
        assert_eq!(acd.v_sparse.len(), 8);
        assert_eq!(net.round(), 0);
    }

    #[test]
    fn two_cliques_are_found() {
        let g = generate(&Model::CliqueUnion { k: 2, size: 65 }, 0).unwrap();
        let cfg = SimConfig::default();
        let mut net = Network::new(g.clone(), &cfg, 11).unwrap();
        let (acd, stats) = compute_acd(&mut net, &cfg).unwrap();
        assert!(stats.rounds <= 20, "{} rounds", stats.rounds);
        assert_eq!(acd.cliques.len(), 2, "{stats:?}");
        assert!(acd.v_sparse.is_empty());
        assert!(verify_acd(&g, &acd).passed);
    }

    #[test]
    fn dump_format() {
        let g = generate(&Model::Complete { n: 3 }, 0).unwrap();
        let acd = single(&g, vec![0, 1]);
        assert_eq!(acd.dump(), "sparse: 3\nclique 1 leader 1: 1 2\n");
    }
}
