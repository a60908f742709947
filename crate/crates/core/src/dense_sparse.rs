//! Coloring of sparse nodes (trial loops, then small-degree coloring) and of
//! dense nodes (random layers, synchronized trials through the clique leader).

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use num_bigint::BigUint;
use num_rational::Ratio;
use num_traits::{Num, One, ToPrimitive, Zero};
use rand::seq::index::sample;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::acd::AlmostCliqueDecomposition;
use crate::error::SimError;
use crate::harness::SimConfig;
use crate::overlay::{route, CliqueOverlay, RoutingRequest};
use crate::sim_core::{AggOp, AggTask, Network};
use crate::small_degree::{color_small_degree, SmallDegreeStats};
use crate::trials::{random_color_trial, rct_loop, try_color};
use crate::util::{log2n, loglog_iterations};
use crate::{Color, NodeId, Probability};

/// Scalar type for layer probabilities. Square roots are exact when the value
/// is a perfect square and approximated otherwise.
pub trait LayerScalar: Num + Clone + PartialOrd + fmt::Debug {
    fn from_f64(x: f64) -> Self;
    fn to_f64(&self) -> f64;
    fn sqrt(&self) -> Self;
    /// floor(x · 2^64), saturating.
    fn threshold(&self) -> u64;

    fn pow_three_halves(&self) -> Self {
        self.clone() * self.sqrt()
    }
}

impl LayerScalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(&self) -> f64 {
        *self
    }
    fn sqrt(&self) -> Self {
        f64::sqrt(*self)
    }
    fn threshold(&self) -> u64 {
        if *self >= 1.0 {
            u64::MAX
        } else {
            (self.max(0.0) * 2f64.powi(64)) as u64
        }
    }
}

impl LayerScalar for Probability {
    fn from_f64(x: f64) -> Self {
        Ratio::from_float(x).expect("finite probability")
    }
    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
    fn sqrt(&self) -> Self {
        let (n, d) = (self.numer().sqrt(), self.denom().sqrt());
        let exact = Ratio::new(n.clone(), d.clone());
        if &(exact.clone() * exact.clone()) == self {
            exact
        } else {
            Self::from_f64(LayerScalar::to_f64(self).sqrt())
        }
    }
    fn threshold(&self) -> u64 {
        if self >= &Self::one() {
            return u64::MAX;
        }
        if self <= &Self::zero() {
            return 0;
        }
        ((self.numer() << 64u32) / self.denom()).to_u64().unwrap_or(u64::MAX)
    }
}

/// Layer distribution for one run: p_0..p_t with p_0 = 1 − Σ p_i.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerPartition<T> {
    pub t_prime: usize,
    pub t: usize,
    pub probs: Vec<T>,
    pub lambdas: Vec<f64>,
    /// t was forced to 1 because the sequence never reached the floor.
    pub fallback: bool,
    /// Layer of each uncolored dense node.
    pub assignment: Vec<Option<usize>>,
}

impl<T: LayerScalar> LayerPartition<T> {
    /// Probabilities only; `assignment` is empty.
    pub fn distribution(n: usize, delta: usize, c: f64, theory: bool) -> Result<Self, SimError> {
        let l = log2n(n);
        let d = delta.max(1) as f64;
        let floor = T::from_f64(c * l / d);
        let log_l_sqrt_delta = d.sqrt().ln() / l.ln();
        let t_prime = if log_l_sqrt_delta > 1.0 { (log_l_sqrt_delta.ln() / 1.5f64.ln()).ceil() as usize } else { 0 }.max(1);
        let mut tail: Vec<T> = Vec::new();
        let mut p = T::one() / T::from_f64(l).pow_three_halves();
        let mut i = 1;
        while p >= floor && p > T::zero() {
            tail.push(p.clone());
            i += 1;
            p = if i <= t_prime { p.pow_three_halves() } else { (p / T::from_f64(d)).sqrt() };
            if i > 64 {
                break;
            }
        }
        let mut fallback = false;
        if tail.is_empty() {
            if theory {
                return Err(SimError::TheoryPrecondition(format!(
                    "no layer reaches p ≥ c·log n/Δ at n={n}, Δ={delta}"
                )));
            }
            fallback = true;
            let half = T::one() / (T::one() + T::one());
            let f = floor.clone();
            tail.push(if f < half { f } else { half });
        }
        let sum = tail.iter().fold(T::zero(), |a, b| a + b.clone());
        let mut probs = vec![T::one() - sum];
        probs.extend(tail);
        let lambdas = probs.iter().map(|p| p.to_f64() * d).collect();
        Ok(LayerPartition { t_prime, t: probs.len() - 1, probs, lambdas, fallback, assignment: Vec::new() })
    }

    /// Λ_0 ≥ Δ/4 and c·log n ≤ Λ_t ≤ c²·log² n.
    pub fn observation_holds(&self, n: usize, delta: usize, c: f64) -> bool {
        let l = log2n(n);
        let last = self.lambdas[self.t];
        self.lambdas[0] >= delta as f64 / 4.0 && last >= c * l * (1.0 - 1e-9) && last <= c * c * l * l
    }

    /// Cumulative 64-bit thresholds, one per layer; the last is u64::MAX.
    pub fn thresholds(&self) -> Vec<u64> {
        let mut acc = T::zero();
        let mut out: Vec<u64> = self
            .probs
            .iter()
            .map(|p| {
                acc = acc.clone() + p.clone();
                acc.threshold()
            })
            .collect();
        *out.last_mut().expect("at least layer 0") = u64::MAX;
        out
    }

    pub fn layer_of(thresholds: &[u64], draw: u64) -> usize {
        thresholds.iter().position(|&t| draw < t).unwrap_or(thresholds.len() - 1)
    }
}

/// Each uncolored dense node draws its layer from its own stream. No communication.
pub fn partition_layers(
    net: &mut Network,
    acd: &AlmostCliqueDecomposition,
    cfg: &SimConfig,
) -> Result<LayerPartition<Probability>, SimError> {
    let mut part = LayerPartition::<Probability>::distribution(net.n(), net.graph().delta(), cfg.c, cfg.is_theory())?;
    if part.fallback {
        net.warn(format!("layers: no layer reaches the floor, using t = 1 with p_1 = {}", part.probs[1]));
    }
    if cfg.is_theory() && !part.observation_holds(net.n(), net.graph().delta(), cfg.c) {
        return Err(SimError::TheoryPrecondition(format!("layer sizes violate the bounds: {:?}", part.lambdas)));
    }
    let thresholds = part.thresholds();
    part.assignment = vec![None; net.n()];
    for members in acd.cliques.values() {
        for &v in members {
            if net.states[v as usize].color.is_none() {
                let layer = LayerPartition::<Probability>::layer_of(&thresholds, net.rng(v).next_u64());
                part.assignment[v as usize] = Some(layer);
                net.states[v as usize].layer = Some(layer);
            }
        }
    }
    Ok(part)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseStats {
    pub rounds: u64,
    pub sparse_nodes: usize,
    /// Largest uncolored degree inside G[V_sparse] after the log log loop.
    pub max_degree_after_loop: usize,
    pub left_for_small_degree: usize,
    pub small_degree: Option<SmallDegreeStats>,
}

/// Trial warm-up, the log log loop, then small-degree coloring of what is left.
pub fn color_sparse_nodes(
    net: &mut Network,
    acd: &AlmostCliqueDecomposition,
    cfg: &SimConfig,
) -> Result<SparseStats, SimError> {
    net.push_phase("sparse");
    let start = net.round();
    let res = color_sparse_inner(net, acd, cfg);
    net.pop_phase();
    let mut stats = res?;
    stats.rounds = net.round() - start;
    Ok(stats)
}

fn color_sparse_inner(net: &mut Network, acd: &AlmostCliqueDecomposition, cfg: &SimConfig) -> Result<SparseStats, SimError> {
    let mut stats = SparseStats { sparse_nodes: acd.v_sparse.len(), ..Default::default() };
    let sparse: Vec<NodeId> =
        acd.v_sparse.iter().copied().filter(|&v| net.states[v as usize].color.is_none()).collect();
    if sparse.is_empty() {
        return Ok(stats);
    }
    rct_loop(net, &sparse, cfg.k1.ceil() as usize)?;
    rct_loop(net, &sparse, loglog_iterations(cfg.k2, net.graph().delta()))?;
    let mut in_sparse = vec![false; net.n()];
    for &v in &acd.v_sparse {
        in_sparse[v as usize] = true;
    }
    let left: Vec<NodeId> = sparse.into_iter().filter(|&v| net.states[v as usize].color.is_none()).collect();
    stats.max_degree_after_loop = left
        .iter()
        .map(|&v| {
            net.graph()
                .neighbors(v)
                .iter()
                .filter(|&&u| in_sparse[u as usize] && net.states[u as usize].color.is_none())
                .count()
        })
        .max()
        .unwrap_or(0);
    stats.left_for_small_degree = left.len();
    if !left.is_empty() {
        stats.small_degree = Some(color_small_degree(net, &left, cfg)?);
    }
    Ok(stats)
}

/// One row of the per-layer trajectory table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub layer: usize,
    pub iter: usize,
    pub max_e: usize,
    pub max_r: usize,
    pub uncolored: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DenseStats {
    pub rounds: u64,
    pub t: usize,
    pub t_prime: usize,
    pub fallback: bool,
    pub lambdas: Vec<f64>,
    /// Largest |R_i^C| right after partitioning, per layer.
    pub initial_layer_max: Vec<usize>,
    /// Largest |R_0^C| after the trial loop in R_0.
    pub r0_after_trials: usize,
    /// Largest |R_0^C| after small-degree coloring of the low-degree part of R_0.
    pub r0_after_small_degree: usize,
    pub trajectory: Vec<TrajectoryRow>,
    /// Largest e_i(v) when the main synchronized loop of layer i ends.
    pub post_loop_max_e: Vec<usize>,
    /// Largest r_i(u) after the two extra iterations of layer i.
    pub post_extra_max_r: Vec<usize>,
    pub sync_iterations: usize,
    pub assignment_failures: usize,
    pub palette_clamps: usize,
    pub duplicate_candidates: usize,
    pub max_route_rounds: u64,
    pub max_route_load: usize,
    pub final_small_degree_nodes: usize,
}

impl DenseStats {
    /// `layer,iter,max_e,max_r,uncolored` lines with a header.
    pub fn trajectory_csv(&self) -> String {
        let mut out = String::from("layer,iter,max_e,max_r,uncolored\n");
        for r in &self.trajectory {
            out.push_str(&format!("{},{},{},{},{}\n", r.layer, r.iter, r.max_e, r.max_r, r.uncolored));
        }
        out
    }
}

/// Uncolored members of layer `i`, grouped by clique.
fn layer_members(net: &Network, acd: &AlmostCliqueDecomposition, layer: &[Option<usize>], i: usize) -> BTreeMap<NodeId, Vec<NodeId>> {
    acd.cliques
        .iter()
        .map(|(&id, m)| {
            let r: Vec<NodeId> = m
                .iter()
                .copied()
                .filter(|&v| layer[v as usize] == Some(i) && net.states[v as usize].color.is_none())
                .collect();
            (id, r)
        })
        .collect()
}

/// (max e_i(v) over v in R_i, max r_i(u) over all u, |R_i|).
fn degrees_into_layer(net: &Network, clique_of: &[Option<NodeId>], layer: &[Option<usize>], i: usize) -> (usize, usize, usize) {
    let graph = net.graph();
    let mut r: HashMap<NodeId, usize> = HashMap::new();
    let mut e_max = 0;
    let mut size = 0;
    for v in graph.nodes() {
        if layer[v as usize] != Some(i) || net.states[v as usize].color.is_some() {
            continue;
        }
        size += 1;
        let mut e = 0;
        for &u in graph.neighbors(v) {
            *r.entry(u).or_insert(0) += 1;
            if layer[u as usize] == Some(i)
                && net.states[u as usize].color.is_none()
                && clique_of[u as usize] != clique_of[v as usize]
            {
                e += 1;
            }
        }
        e_max = e_max.max(e);
    }
    (e_max, r.values().copied().max().unwrap_or(0), size)
}

/// Full dense phase: partition, trials and small-degree coloring in R_0, the
/// per-layer loops, then small-degree coloring of all remaining dense nodes.
pub fn color_dense_nodes(
    net: &mut Network,
    acd: &AlmostCliqueDecomposition,
    overlays: &BTreeMap<NodeId, CliqueOverlay>,
    cfg: &SimConfig,
) -> Result<DenseStats, SimError> {
    net.push_phase("dense");
    let start = net.round();
    let res = color_dense_inner(net, acd, overlays, cfg);
    net.pop_phase();
    let mut stats = res?;
    stats.rounds = net.round() - start;
    Ok(stats)
}

fn color_dense_inner(
    net: &mut Network,
    acd: &AlmostCliqueDecomposition,
    overlays: &BTreeMap<NodeId, CliqueOverlay>,
    cfg: &SimConfig,
) -> Result<DenseStats, SimError> {
    let mut stats = DenseStats::default();
    if acd.cliques.is_empty() {
        return Ok(stats);
    }
    let n = net.n();
    let delta = net.graph().delta();
    let part = partition_layers(net, acd, cfg)?;
    stats.t = part.t;
    stats.t_prime = part.t_prime;
    stats.fallback = part.fallback;
    stats.lambdas = part.lambdas.clone();
    let layer = part.assignment.clone();
    let clique_of = acd.membership(n);
    let max_size = |m: &BTreeMap<NodeId, Vec<NodeId>>| m.values().map(Vec::len).max().unwrap_or(0);
    for i in 0..=part.t {
        stats.initial_layer_max.push(max_size(&layer_members(net, acd, &layer, i)));
    }

    // Trials in R_0, then small-degree coloring of its low-degree part.
    let r0: Vec<NodeId> = layer_members(net, acd, &layer, 0).into_values().flatten().collect();
    rct_loop(net, &r0, loglog_iterations(cfg.k3, n))?;
    stats.r0_after_trials = max_size(&layer_members(net, acd, &layer, 0));
    let r0_left: Vec<NodeId> = r0.iter().copied().filter(|&v| net.states[v as usize].color.is_none()).collect();
    let low_cut = cfg.c * log2n(n);
    let in_r0 = {
        let mut m = vec![false; n];
        for &v in &r0_left {
            m[v as usize] = true;
        }
        m
    };
    let low: Vec<NodeId> = r0_left
        .iter()
        .copied()
        .filter(|&v| {
            let d = net.graph().neighbors(v).iter().filter(|&&u| in_r0[u as usize]).count();
            d as f64 <= low_cut
        })
        .collect();
    if !low.is_empty() {
        color_small_degree(net, &low, cfg)?;
    }
    stats.r0_after_small_degree = max_size(&layer_members(net, acd, &layer, 0));

    let sync_iters = loglog_iterations(cfg.k5, delta);
    stats.sync_iterations = sync_iters;
    for i in 0..part.t {
        let members: Vec<NodeId> = layer_members(net, acd, &layer, i).into_values().flatten().collect();
        rct_loop(net, &members, cfg.k4.ceil() as usize)?;
        for iter in 0..sync_iters + 2 {
            let groups = layer_members(net, acd, &layer, i);
            if groups.values().all(Vec::is_empty) {
                break;
            }
            synchronized_color_trial(net, acd, overlays, &groups, part.lambdas[i + 1], cfg, &mut stats)?;
            let (e, r, size) = degrees_into_layer(net, &clique_of, &layer, i);
            stats.trajectory.push(TrajectoryRow { layer: i, iter, max_e: e, max_r: r, uncolored: size });
        }
        let (e_len, r_len) = (stats.post_loop_max_e.len(), stats.post_extra_max_r.len());
        let rows: Vec<&TrajectoryRow> = stats.trajectory.iter().filter(|r| r.layer == i).collect();
        let at = |k: usize| rows.get(k).or(rows.last()).map(|r| (r.max_e, r.max_r)).unwrap_or((0, 0));
        stats.post_loop_max_e.push(at(sync_iters.saturating_sub(1)).0);
        stats.post_extra_max_r.push(at(sync_iters + 1).1);
        debug_assert_eq!((stats.post_loop_max_e.len(), stats.post_extra_max_r.len()), (e_len + 1, r_len + 1));
    }
    let rest: Vec<NodeId> = acd
        .cliques
        .values()
        .flatten()
        .copied()
        .filter(|&v| net.states[v as usize].color.is_none())
        .collect();
    stats.final_small_degree_nodes = rest.len();
    if !rest.is_empty() {
        color_small_degree(net, &rest, cfg)?;
    }
    Ok(stats)
}

/// One synchronized trial in every clique at once. `groups` holds the
/// uncolored layer members per clique; `next_lambda` is Λ_{i+1}.
pub fn synchronized_color_trial(
    net: &mut Network,
    acd: &AlmostCliqueDecomposition,
    overlays: &BTreeMap<NodeId, CliqueOverlay>,
    groups: &BTreeMap<NodeId, Vec<NodeId>>,
    next_lambda: f64,
    cfg: &SimConfig,
    stats: &mut DenseStats,
) -> Result<(), SimError> {
    let n = net.n();
    let width = net.widths().count;
    // Leader learns |R_i^C| and tells the clique.
    let mut sums = Vec::new();
    let mut casts = Vec::new();
    for (id, members) in &acd.cliques {
        let in_layer: std::collections::HashSet<NodeId> = groups[id].iter().copied().collect();
        sums.push(AggTask {
            root: acd.leaders[id],
            members: members.clone(),
            op: AggOp::Sum,
            inputs: members.iter().map(|v| BigUint::from(u32::from(in_layer.contains(v)))).collect(),
            width,
        });
    }
    let counts = net.tree_aggregate_many(&sums)?;
    for ((id, members), c) in acd.cliques.iter().zip(&counts) {
        casts.push(AggTask {
            root: acd.leaders[id],
            members: members.clone(),
            op: AggOp::Broadcast,
            inputs: vec![c.at_root.clone(); members.len()],
            width,
        });
    }
    net.tree_aggregate_many(&casts)?;

    // Sub-palettes to the leader.
    let log_n = log2n(n);
    let mut requests = Vec::new();
    let mut sub: HashMap<NodeId, Vec<Color>> = HashMap::new();
    for (id, r) in groups {
        if r.is_empty() {
            continue;
        }
        let leader = acd.leaders[id];
        let pi = (cfg.c_p * (r.len() as f64 / next_lambda).max(1.0) * log_n).ceil() as usize;
        for &v in r {
            let pal = std::mem::take(&mut net.states[v as usize].palette);
            if pi > pal.len() {
                stats.palette_clamps += 1;
            }
            let k = pi.min(pal.len());
            let p: Vec<Color> = sample(net.rng(v), pal.len(), k).into_iter().map(|j| pal[j]).collect();
            net.states[v as usize].palette = pal;
            requests.push(RoutingRequest { src: v, dst: leader, payload: p.clone() });
            sub.insert(v, p);
        }
    }
    let gathered = route(net, overlays, &requests, cfg.load_cap)?;
    stats.max_route_rounds = stats.max_route_rounds.max(gathered.rounds);
    stats.max_route_load = stats.max_route_load.max(gathered.max_load);
    if gathered.rounds > cfg.r_cap {
        let msg = format!("sub-palette gather took {} rounds, cap {}", gathered.rounds, cfg.r_cap);
        if cfg.is_theory() {
            return Err(SimError::TheoryPrecondition(msg));
        }
        net.warn(msg);
    }

    // Leader assigns distinct candidates in ascending ID order.
    let mut replies = Vec::new();
    let mut attempts = Vec::new();
    for (id, r) in groups {
        if r.is_empty() {
            continue;
        }
        let leader = acd.leaders[id];
        let mut taken: Vec<Color> = Vec::new();
        for &v in r {
            let free: Vec<Color> = sub[&v].iter().copied().filter(|c| !taken.contains(c)).collect();
            if free.is_empty() {
                stats.assignment_failures += 1;
                net.trace_event(v, "assignment_failure", &id.to_string());
                continue;
            }
            let c = free[net.rng(leader).gen_range(0..free.len())];
            taken.push(c);
            replies.push(RoutingRequest { src: leader, dst: v, payload: vec![c] });
            attempts.push((v, c));
        }
        let mut sorted = taken.clone();
        sorted.sort_unstable();
        sorted.dedup();
        stats.duplicate_candidates += taken.len() - sorted.len();
    }
    let back = route(net, overlays, &replies, cfg.load_cap)?;
    stats.max_route_rounds = stats.max_route_rounds.max(back.rounds);
    try_color(net, &attempts)?;
    Ok(())
}

/// Convenience for tests: one plain trial iteration over a node set.
pub fn rct_once(net: &mut Network, nodes: &[NodeId]) -> Result<usize, SimError> {
    Ok(random_color_trial(net, nodes)?.len())
}

/// Exact rational for log-free checks.
pub fn exact_sum<T: LayerScalar>(probs: &[T]) -> T {
    probs.iter().fold(T::zero(), |a, b| a + b.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigInt;

    #[test]
    fn probabilities_sum_to_one_exactly() {
        let part = LayerPartition::<Probability>::distribution(1 << 16, 1 << 12, 1.0, false).unwrap();
        assert_eq!(exact_sum(&part.probs), Probability::one());
        assert!(part.t >= 1);
    }

    #[test]
    fn first_layer_at_two_to_the_sixteen() {
        let part = LayerPartition::<Probability>::distribution(1 << 16, 1 << 12, 1.0, false).unwrap();
        // log2 n = 16 and 16^{3/2} = 64
        assert_eq!(part.probs[1], Ratio::new(BigInt::from(1), BigInt::from(64)));
    }

    #[test]
    fn floats_agree_with_rationals() {
        let a = LayerPartition::<f64>::distribution(4096, 512, 1.0, false).unwrap();
        let b = LayerPartition::<Probability>::distribution(4096, 512, 1.0, false).unwrap();
        assert_eq!(a.t, b.t);
        for (x, y) in a.probs.iter().zip(&b.probs) {
            assert!((x - LayerScalar::to_f64(y)).abs() < 1e-12);
        }
    }

    #[test]
    fn fallback_when_no_layer_reaches_floor() {
        let part = LayerPartition::<Probability>::distribution(4096, 128, 1.0, false).unwrap();
        assert!(part.fallback);
        assert_eq!(part.t, 1);
        assert!(LayerPartition::<Probability>::distribution(4096, 128, 1.0, true).is_err());
    }

    #[test]
    fn thresholds_cover_everything() {
        let part = LayerPartition::<Probability>::distribution(4096, 512, 1.0, false).unwrap();
        let th = part.thresholds();
        assert_eq!(*th.last().unwrap(), u64::MAX);
        assert!(th.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(LayerPartition::<Probability>::layer_of(&th, 0), 0);
        assert_eq!(LayerPartition::<Probability>::layer_of(&th, u64::MAX), part.t);
    }
}
