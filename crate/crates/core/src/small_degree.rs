//! (deg+1)-list coloring of small-degree subgraphs: shattering, cluster
//! carving, colorspace reduction by per-color polynomials, and cluster
//! coloring with many parallel trial instances.

use std::collections::{BTreeSet, HashMap, VecDeque};

use num_bigint::BigUint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::harness::SimConfig;
use crate::sim_core::{AggOp, AggTask, Audience, Message, Network, Widths};
use crate::trials::{announce_permanent, rct_loop};
use crate::util::{bits_for, log2n};
use crate::{Color, NodeId};

#[derive(Debug, Clone)]
enum SdMsg {
    Label(NodeId),
    Join(u32),
    Packed { entries: usize, width: u32 },
}

impl Message for SdMsg {
    fn bits(&self, w: &Widths) -> u32 {
        match self {
            SdMsg::Label(_) | SdMsg::Join(_) => w.id,
            SdMsg::Packed { entries, width } => *entries as u32 * width,
        }
    }
}

fn mask_of(n: usize, nodes: &[NodeId]) -> Vec<bool> {
    let mut mask = vec![false; n];
    for &v in nodes {
        mask[v as usize] = true;
    }
    mask
}

/// Connected components of G[nodes] by min-label flooding. One round per
/// label wave; the last silent wave is not charged.
pub fn flood_components(net: &mut Network, nodes: &[NodeId]) -> Result<Vec<Vec<NodeId>>, SimError> {
    let mask = mask_of(net.n(), nodes);
    let mut label: HashMap<NodeId, NodeId> = nodes.iter().map(|&v| (v, v)).collect();
    let mut changed: Vec<NodeId> = nodes.to_vec();
    changed.sort_unstable();
    while !changed.is_empty() {
        let snapshot = label.clone();
        let mail = net.exchange(&changed, Audience::Only(&mask), |v, _, _, out| {
            out.broadcast(SdMsg::Label(snapshot[&v]));
        })?;
        let graph = net.graph_arc();
        let mut touched: Vec<NodeId> =
            changed.iter().flat_map(|&v| graph.neighbors(v).iter().copied()).filter(|&u| mask[u as usize]).collect();
        touched.sort_unstable();
        touched.dedup();
        let mut next = Vec::new();
        for u in touched {
            let best = mail.inbox(u).filter_map(|(_, m)| if let SdMsg::Label(l) = m { Some(*l) } else { None }).min();
            if let Some(l) = best.filter(|&l| l < label[&u]) {
                label.insert(u, l);
                next.push(u);
            }
        }
        changed = next;
    }
    let mut groups: HashMap<NodeId, Vec<NodeId>> = HashMap::new();
    for (&v, &l) in &label {
        groups.entry(l).or_default().push(v);
    }
    let mut comps: Vec<Vec<NodeId>> = groups.into_values().collect();
    for c in &mut comps {
        c.sort_unstable();
    }
    comps.sort_unstable_by_key(|c| c[0]);
    Ok(comps)
}

/// Largest number of uncolored neighbors inside `nodes` over uncolored members.
pub fn uncolored_max_degree(net: &Network, nodes: &[NodeId]) -> usize {
    let mask = mask_of(net.n(), nodes);
    nodes
        .iter()
        .filter(|&&v| net.states[v as usize].color.is_none())
        .map(|&v| {
            net.graph().neighbors(v).iter().filter(|&&u| mask[u as usize] && net.states[u as usize].color.is_none()).count()
        })
        .max()
        .unwrap_or(0)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shattered {
    pub iterations: usize,
    pub components: Vec<Vec<NodeId>>,
}

/// Trial iterations on H followed by flood-fill of the uncolored remainder.
pub fn shatter(net: &mut Network, h: &[NodeId], cfg: &SimConfig) -> Result<Shattered, SimError> {
    let live: Vec<NodeId> = h.iter().copied().filter(|&v| net.states[v as usize].color.is_none()).collect();
    if live.is_empty() {
        return Ok(Shattered::default());
    }
    let d = uncolored_max_degree(net, &live).max(2) as f64;
    let iterations = (cfg.k6 * d.log2().ceil()).ceil() as usize;
    rct_loop(net, &live, iterations)?;
    let left: Vec<NodeId> = live.into_iter().filter(|&v| net.states[v as usize].color.is_none()).collect();
    Ok(Shattered { iterations, components: flood_components(net, &left)? })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cluster {
    pub root: NodeId,
    pub members: Vec<NodeId>,
    /// Largest distance between two members, measured in the component.
    pub diameter: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterDecomposition {
    pub classes: Vec<Vec<Cluster>>,
}

impl ClusterDecomposition {
    pub fn clusters(&self) -> impl Iterator<Item = &Cluster> {
        self.classes.iter().flatten()
    }

    /// Partition of `component` and no edge between two clusters of a class.
    pub fn audit(&self, graph: &crate::Graph, component: &[NodeId]) -> Result<(), String> {
        let mut owner: HashMap<NodeId, (usize, NodeId)> = HashMap::new();
        for (ci, class) in self.classes.iter().enumerate() {
            for q in class {
                for &v in &q.members {
                    if owner.insert(v, (ci, q.root)).is_some() {
                        return Err(format!("node {v} is in two clusters"));
                    }
                }
            }
        }
        if owner.len() != component.len() || component.iter().any(|v| !owner.contains_key(v)) {
            return Err("clusters do not partition the component".into());
        }
        for (&v, &(ci, root)) in &owner {
            for u in graph.neighbors(v) {
                if let Some(&(cj, r2)) = owner.get(u) {
                    if ci == cj && root != r2 {
                        return Err(format!("edge {v}-{u} joins two clusters of class {ci}"));
                    }
                }
            }
        }
        Ok(())
    }

    /// One line per cluster: `class root diameter members…` with 1-based IDs.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (ci, class) in self.classes.iter().enumerate() {
            for q in class {
                let ms: Vec<String> = q.members.iter().map(|v| (v + 1).to_string()).collect();
                out.push_str(&format!("{} {} {} {}\n", ci, q.root + 1, q.diameter, ms.join(" ")));
            }
        }
        out
    }
}

/// Default carving radius: ceil(log2² of the component size), at least 1.
pub fn default_radius(size: usize) -> u32 {
    let l = (size.max(1) as f64).log2();
    ((l * l).ceil() as u32).max(1)
}

fn weak_diameter(graph: &crate::Graph, in_comp: &HashMap<NodeId, ()>, members: &[NodeId]) -> u32 {
    let set: HashMap<NodeId, ()> = members.iter().map(|&v| (v, ())).collect();
    let mut best = 0;
    for &s in members {
        let mut dist: HashMap<NodeId, u32> = HashMap::from([(s, 0)]);
        let mut queue = VecDeque::from([s]);
        let mut found = 1;
        while let Some(v) = queue.pop_front() {
            if found == members.len() {
                break;
            }
            for &u in graph.neighbors(v) {
                if in_comp.contains_key(&u) && !dist.contains_key(&u) {
                    dist.insert(u, dist[&v] + 1);
                    if set.contains_key(&u) {
                        found += 1;
                        best = best.max(dist[&u]);
                    }
                    queue.push_back(u);
                }
            }
        }
    }
    best
}

/// Ball carving on one component. See [`decompose_many`].
pub fn decompose_clusters(
    net: &mut Network,
    component: &[NodeId],
    radius: Option<u32>,
    cap: usize,
) -> Result<ClusterDecomposition, SimError> {
    Ok(decompose_many(net, &[component.to_vec()], radius, cap)?.pop().expect("one component"))
}

/// Deterministic BFS carving on all components in lockstep: each component
/// repeatedly grows a ball of the given radius around its lowest remaining ID.
/// The resulting cluster graph is greedily colored into classes.
pub fn decompose_many(
    net: &mut Network,
    components: &[Vec<NodeId>],
    radius: Option<u32>,
    cap: usize,
) -> Result<Vec<ClusterDecomposition>, SimError> {
    if let Some(c) = components.iter().find(|c| c.len() > cap) {
        return Err(SimError::ComponentTooLarge { size: c.len(), cap });
    }
    struct Carve {
        remaining: BTreeSet<NodeId>,
        radius: u32,
        ball: Vec<NodeId>,
        frontier: Vec<NodeId>,
        level: u32,
        balls: Vec<Vec<NodeId>>,
    }
    let mut carves: Vec<Carve> = components
        .iter()
        .map(|c| Carve {
            remaining: c.iter().copied().collect(),
            radius: radius.unwrap_or_else(|| default_radius(c.len())),
            ball: Vec::new(),
            frontier: Vec::new(),
            level: 0,
            balls: Vec::new(),
        })
        .collect();
    let mut comp_of: HashMap<NodeId, u32> = HashMap::new();
    for (i, c) in components.iter().enumerate() {
        for &v in c {
            comp_of.insert(v, i as u32);
        }
    }
    loop {
        for c in &mut carves {
            if c.ball.is_empty() {
                if let Some(r) = c.remaining.pop_first() {
                    c.ball = vec![r];
                    c.frontier = vec![r];
                    c.level = 0;
                }
            }
        }
        // Close balls that cannot grow any further.
        for c in &mut carves {
            if !c.ball.is_empty() && (c.level >= c.radius || c.frontier.is_empty()) {
                c.balls.push(std::mem::take(&mut c.ball));
                c.frontier.clear();
            }
        }
        if carves.iter().all(|c| c.ball.is_empty() && c.remaining.is_empty()) {
            break;
        }
        if carves.iter().all(|c| c.ball.is_empty()) {
            continue;
        }
        let mut senders: Vec<NodeId> = carves.iter().flat_map(|c| c.frontier.iter().copied()).collect();
        senders.sort_unstable();
        let open: Vec<NodeId> = carves.iter().flat_map(|c| c.remaining.iter().copied()).collect();
        let mask = mask_of(net.n(), &open);
        let mail = net.exchange(&senders, Audience::Only(&mask), |v, _, _, out| {
            out.broadcast(SdMsg::Join(comp_of[&v]));
        })?;
        let graph = net.graph_arc();
        for (i, c) in carves.iter_mut().enumerate() {
            if c.ball.is_empty() {
                continue;
            }
            let mut next: Vec<NodeId> = c
                .frontier
                .iter()
                .flat_map(|&f| graph.neighbors(f).iter().copied())
                .filter(|u| c.remaining.contains(u))
                .filter(|&u| mail.inbox(u).any(|(_, m)| matches!(m, SdMsg::Join(x) if *x == i as u32)))
                .collect();
            next.sort_unstable();
            next.dedup();
            for v in &next {
                c.remaining.remove(v);
            }
            c.ball.extend(&next);
            c.frontier = next;
            c.level += 1;
        }
    }
    let graph = net.graph_arc();
    let mut out = Vec::with_capacity(components.len());
    for (comp, carve) in components.iter().zip(carves) {
        let in_comp: HashMap<NodeId, ()> = comp.iter().map(|&v| (v, ())).collect();
        let mut ball_of: HashMap<NodeId, usize> = HashMap::new();
        for (b, ball) in carve.balls.iter().enumerate() {
            for &v in ball {
                ball_of.insert(v, b);
            }
        }
        let mut class_of: Vec<usize> = Vec::with_capacity(carve.balls.len());
        for (b, ball) in carve.balls.iter().enumerate() {
            let mut used: Vec<usize> = ball
                .iter()
                .flat_map(|&v| graph.neighbors(v).iter())
                .filter_map(|u| ball_of.get(u))
                .filter(|&&o| o < b)
                .map(|&o| class_of[o])
                .collect();
            used.sort_unstable();
            used.dedup();
            let free = (0..).find(|k| used.binary_search(k).is_err()).expect("unbounded");
            class_of.push(free);
        }
        let classes_n = class_of.iter().max().map_or(0, |m| m + 1);
        let mut classes: Vec<Vec<Cluster>> = vec![Vec::new(); classes_n];
        for (b, mut ball) in carve.balls.into_iter().enumerate() {
            let root = ball[0];
            ball.sort_unstable();
            let diameter = weak_diameter(&graph, &in_comp, &ball);
            classes[class_of[b]].push(Cluster { root, members: ball, diameter });
        }
        out.push(ClusterDecomposition { classes });
    }
    Ok(out)
}

fn mulmod(a: u64, b: u64, p: u64) -> u64 {
    ((a as u128 * b as u128) % p as u128) as u64
}

fn powmod(mut a: u64, mut e: u64, p: u64) -> u64 {
    let mut r = 1 % p;
    a %= p;
    while e > 0 {
        if e & 1 == 1 {
            r = mulmod(r, a, p);
        }
        a = mulmod(a, a, p);
        e >>= 1;
    }
    r
}

/// Deterministic Miller–Rabin, exact for all u64.
pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    const BASES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    for b in BASES {
        if n % b == 0 {
            return n == b;
        }
    }
    let (mut d, mut s) = (n - 1, 0);
    while d % 2 == 0 {
        d /= 2;
        s += 1;
    }
    'outer: for a in BASES {
        let mut x = powmod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mulmod(x, x, n);
            if x == n - 1 {
                continue 'outer;
            }
        }
        return false;
    }
    true
}

type Poly = Vec<u64>;

fn trim(mut a: Poly) -> Poly {
    while a.last() == Some(&0) {
        a.pop();
    }
    a
}

fn monic(a: Poly, p: u64) -> Poly {
    let a = trim(a);
    match a.last() {
        None => a,
        Some(&lead) => {
            let inv = powmod(lead, p - 2, p);
            a.into_iter().map(|c| mulmod(c, inv, p)).collect()
        }
    }
}

/// (quotient, remainder) of `a` by a monic `m`.
fn divrem(a: &[u64], m: &[u64], p: u64) -> (Poly, Poly) {
    let dm = m.len() - 1;
    let mut r = a.to_vec();
    if r.len() <= dm {
        return (Vec::new(), trim(r));
    }
    let mut q = vec![0; r.len() - dm];
    for i in (dm..r.len()).rev() {
        let c = r[i];
        if c == 0 {
            continue;
        }
        q[i - dm] = c;
        for (j, &mj) in m.iter().enumerate() {
            let k = i - dm + j;
            r[k] = (r[k] + p - mulmod(c, mj, p)) % p;
        }
    }
    r.truncate(dm);
    (trim(q), trim(r))
}

fn mul_rem(a: &[u64], b: &[u64], m: &[u64], p: u64) -> Poly {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut prod = vec![0u64; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        if x == 0 {
            continue;
        }
        for (j, &y) in b.iter().enumerate() {
            prod[i + j] = (prod[i + j] + mulmod(x, y, p)) % p;
        }
    }
    divrem(&prod, m, p).1
}

fn pow_rem(base: &[u64], mut e: u64, m: &[u64], p: u64) -> Poly {
    let mut result = divrem(&[1], m, p).1;
    let mut b = divrem(base, m, p).1;
    while e > 0 {
        if e & 1 == 1 {
            result = mul_rem(&result, &b, m, p);
        }
        b = mul_rem(&b, &b, m, p);
        e >>= 1;
    }
    result
}

fn gcd(a: Poly, b: Poly, p: u64) -> Poly {
    let (mut a, mut b) = (monic(a, p), monic(b, p));
    while !b.is_empty() {
        let r = divrem(&a, &b, p).1;
        a = b;
        b = monic(r, p);
    }
    a
}

fn sub(a: &[u64], b: &[u64], p: u64) -> Poly {
    let len = a.len().max(b.len());
    trim((0..len).map(|i| (a.get(i).copied().unwrap_or(0) + p - b.get(i).copied().unwrap_or(0)) % p).collect())
}

fn split_roots(h: Poly, p: u64, rng: &mut ChaCha8Rng, out: &mut Vec<u64>) {
    match h.len() {
        0 | 1 => {}
        2 => out.push((p - h[0]) % p),
        _ => loop {
            let a = rng.gen_range(0..p);
            let t = sub(&pow_rem(&[a, 1], (p - 1) / 2, &h, p), &[1], p);
            let g = gcd(h.clone(), t, p);
            if g.len() > 1 && g.len() < h.len() {
                let rest = divrem(&h, &g, p).0;
                split_roots(g, p, rng, out);
                split_roots(monic(rest, p), p, rng, out);
                return;
            }
        },
    }
}

/// Distinct roots in F_p of a nonzero polynomial, p an odd prime.
pub fn poly_roots(f: &[u64], p: u64) -> Vec<u64> {
    let f = monic(f.to_vec(), p);
    if f.len() <= 1 {
        return Vec::new();
    }
    let xp = pow_rem(&[0, 1], p, &f, p);
    let h = gcd(f.clone(), sub(&xp, &[0, 1], p), p);
    let mut rng = ChaCha8Rng::seed_from_u64(p);
    let mut out = Vec::new();
    split_roots(h, p, &mut rng, &mut out);
    out.sort_unstable();
    out
}

/// Map from the input colorspace to F_p: color α goes to ψ_α(g), where the
/// coefficients of ψ_α are the base-p digits of α.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColorMap {
    pub leader: NodeId,
    pub universe: u64,
    /// Upper bound on cluster size and list sizes.
    pub n_bound: u64,
    /// The exponent, in quarters.
    pub c0_quarters: u32,
    pub p: u64,
    pub degree: u32,
    pub g: u64,
}

impl ColorMap {
    /// Smallest exponent (in steps of 1/4) with (N^c/2)^(N^(c−5)/2) > U, the
    /// smallest prime above N^c/2, and d = ceil(p/N⁵).
    pub fn new(leader: NodeId, n_bound: u64, universe: u64) -> Result<Self, SimError> {
        let nb = n_bound.max(3) as f64;
        let log_u = ((universe + 1) as f64).log2();
        let fail = |detail: String| SimError::ColorMapFailed { leader, detail };
        let mut q = 1u32;
        let x = loop {
            let c = q as f64 / 4.0;
            let x = nb.powf(c);
            if x / 2.0 >= 3.0 && nb.powf(c - 5.0) / 2.0 * (x / 2.0).log2() > log_u {
                break x;
            }
            q += 1;
            if x > 2f64.powi(61) {
                return Err(fail(format!("no exponent fits 61 bits for N={n_bound}, U={universe}")));
            }
        };
        let hi = x.floor() as u64;
        let mut p = (x / 2.0).floor() as u64 + 1;
        while !is_prime(p) {
            p += 1;
        }
        if p > hi {
            return Err(fail(format!("no prime in (N^c/2, N^c] for N={n_bound}")));
        }
        let n5 = (n_bound.max(3) as u128).pow(5);
        let degree = (p as u128).div_ceil(n5) as u32;
        let map = ColorMap { leader, universe, n_bound: n_bound.max(3), c0_quarters: q, p, degree, g: 0 };
        // p^(d+1) must exceed every color value so the digit polynomials are distinct.
        let mut room: u128 = 1;
        for _ in 0..=degree {
            room = room.saturating_mul(p as u128);
        }
        if room <= universe as u128 {
            return Err(fail(format!("p^(d+1) = {room} does not cover U = {universe}")));
        }
        Ok(map)
    }

    pub fn c0(&self) -> f64 {
        self.c0_quarters as f64 / 4.0
    }

    /// ceil(log2 p): the number of bits of g fixed one at a time.
    pub fn bit_count(&self) -> u32 {
        bits_for(self.p - 1)
    }

    /// Width of a reduced color, with room for one "no color" value.
    pub fn target_width(&self) -> u32 {
        bits_for(self.p)
    }

    pub fn digits(&self, c: Color) -> Poly {
        let mut x = c.0;
        (0..=self.degree)
            .map(|_| {
                let d = x % self.p;
                x /= self.p;
                d
            })
            .collect()
    }

    pub fn eval_at(&self, c: Color, g: u64) -> u64 {
        self.digits(c).iter().rev().fold(0, |acc, &d| (mulmod(acc, g, self.p) + d) % self.p)
    }

    pub fn apply(&self, c: Color) -> u64 {
        self.eval_at(c, self.g)
    }

    pub fn preserves_at(&self, list: &[Color], g: u64) -> bool {
        let mut img: Vec<u64> = list.iter().map(|&c| self.eval_at(c, g)).collect();
        img.sort_unstable();
        img.dedup();
        img.len() == list.len()
    }

    pub fn preserves(&self, list: &[Color]) -> bool {
        self.preserves_at(list, self.g)
    }

    /// Every g in F_p at which two colors of `list` collide, sorted.
    pub fn bad_points(&self, list: &[Color]) -> Vec<u64> {
        let polys: Vec<Poly> = list.iter().map(|&c| self.digits(c)).collect();
        let mut out = Vec::new();
        for i in 0..polys.len() {
            for j in i + 1..polys.len() {
                out.extend(poly_roots(&sub(&polys[i], &polys[j], self.p), self.p));
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Y + Σ X_u at the chosen g: 0 means every list keeps its size.
    pub fn criterion(&self, lists: &[Vec<Color>]) -> u64 {
        if self.g >= self.p {
            return 1 + lists.len() as u64;
        }
        lists.iter().filter(|l| !self.preserves(l)).count() as u64
    }

    pub fn dump(&self) -> String {
        format!(
            "leader={} universe={} N={} c0={} p={} d={} g={}",
            self.leader + 1,
            self.universe,
            self.n_bound,
            self.c0(),
            self.p,
            self.degree,
            self.g
        )
    }
}

/// Fixed-point E[X | g in [lo, lo+size)] at `scale_bits` bits of precision.
fn scaled_fraction(count: u128, size: u128, scale_bits: u32) -> u128 {
    ((count << scale_bits) + size / 2) / size
}

/// One cluster's colorspace reduction job.
#[derive(Debug, Clone)]
pub struct ReductionJob {
    pub root: NodeId,
    pub members: Vec<NodeId>,
    /// Lists aligned with `members`.
    pub lists: Vec<Vec<Color>>,
}

/// Colorspace reduction for one cluster.
pub fn reduce_colorspace(net: &mut Network, job: &ReductionJob) -> Result<ColorMap, SimError> {
    Ok(reduce_colorspace_many(net, std::slice::from_ref(job))?.pop().expect("one job"))
}

/// All clusters in parallel: agree on N, then fix the bits of g from the most
/// significant down, each by a tree sum of per-node conditional expectations
/// and a broadcast of the leader's pick.
pub fn reduce_colorspace_many(net: &mut Network, jobs: &[ReductionJob]) -> Result<Vec<ColorMap>, SimError> {
    if jobs.is_empty() {
        return Ok(Vec::new());
    }
    let count_w = net.widths().count;
    let cap = (1u64 << count_w) - 1;
    let mut agg = Vec::new();
    for j in jobs {
        agg.push(AggTask {
            root: j.root,
            members: j.members.clone(),
            op: AggOp::Sum,
            inputs: vec![BigUint::from(1u32); j.members.len()],
            width: count_w,
        });
        agg.push(AggTask {
            root: j.root,
            members: j.members.clone(),
            op: AggOp::Min,
            inputs: j.lists.iter().map(|l| BigUint::from(cap - l.len() as u64)).collect(),
            width: count_w,
        });
    }
    let got = net.tree_aggregate_many(&agg)?;
    let mut maps = Vec::with_capacity(jobs.len());
    let mut bcast = Vec::new();
    for (i, j) in jobs.iter().enumerate() {
        let size: u64 = got[2 * i].at_root.clone().try_into().unwrap_or(u64::MAX);
        let min: u64 = got[2 * i + 1].at_root.clone().try_into().unwrap_or(0);
        let n_bound = size.max(cap - min).max(3);
        maps.push(ColorMap::new(j.root, n_bound, net.universe())?);
        bcast.push(AggTask {
            root: j.root,
            members: j.members.clone(),
            op: AggOp::Broadcast,
            inputs: vec![BigUint::from(n_bound); j.members.len()],
            width: bits_for(n_bound),
        });
    }
    net.tree_aggregate_many(&bcast)?;

    let bad: Vec<Vec<Vec<u64>>> =
        jobs.iter().zip(&maps).map(|(j, m)| j.lists.iter().map(|l| m.bad_points(l)).collect()).collect();
    let scale: Vec<u32> = maps.iter().map(|m| (5.0 * (m.n_bound as f64).log2()).ceil() as u32).collect();
    let field: Vec<u32> = maps.iter().zip(&scale).map(|(m, &s)| s + bits_for(m.n_bound) + 1).collect();
    let mut prefix: Vec<u64> = vec![0; jobs.len()];
    let rounds = maps.iter().map(ColorMap::bit_count).max().unwrap_or(0);
    for i in 0..rounds {
        let live: Vec<usize> = (0..jobs.len()).filter(|&k| i < maps[k].bit_count()).collect();
        let mut sums = Vec::new();
        for &k in &live {
            let l = maps[k].bit_count();
            let size: u128 = 1 << (l - i - 1);
            let inputs = bad[k]
                .iter()
                .map(|pts| {
                    let mut packed = BigUint::default();
                    for b in 0..2u64 {
                        let lo = (((prefix[k] << 1) | b) as u128) << (l - i - 1);
                        let hi = lo + size;
                        let cnt = pts.partition_point(|&x| (x as u128) < hi) - pts.partition_point(|&x| (x as u128) < lo);
                        packed = (packed << field[k]) | BigUint::from(scaled_fraction(cnt as u128, size, scale[k]));
                    }
                    packed
                })
                .collect();
            sums.push(AggTask {
                root: jobs[k].root,
                members: jobs[k].members.clone(),
                op: AggOp::Sum,
                inputs,
                width: 2 * field[k],
            });
        }
        let got = net.tree_aggregate_many(&sums)?;
        let mut casts = Vec::new();
        for (&k, out) in live.iter().zip(&got) {
            let l = maps[k].bit_count();
            let size: u128 = 1 << (l - i - 1);
            let mask = (BigUint::from(1u32) << field[k]) - 1u32;
            let v1: BigUint = &out.at_root & &mask;
            let v0: BigUint = (&out.at_root >> field[k]) & &mask;
            let y = |b: u64| {
                let lo = (((prefix[k] << 1) | b) as u128) << (l - i - 1);
                let hi = lo + size;
                let over = hi.saturating_sub(lo.max(maps[k].p as u128));
                BigUint::from(scaled_fraction(over, size, scale[k]))
            };
            let bit = u64::from(v0 + y(0) > v1 + y(1));
            prefix[k] = (prefix[k] << 1) | bit;
            casts.push(AggTask {
                root: jobs[k].root,
                members: jobs[k].members.clone(),
                op: AggOp::Broadcast,
                inputs: vec![BigUint::from(bit); jobs[k].members.len()],
                width: 1,
            });
        }
        net.tree_aggregate_many(&casts)?;
    }
    for (k, map) in maps.iter_mut().enumerate() {
        map.g = prefix[k];
        if map.criterion(&jobs[k].lists) != 0 {
            return Err(SimError::ColorMapFailed {
                leader: jobs[k].root,
                detail: format!("g={} leaves Y + ΣX ≥ 1 (p={})", map.g, map.p),
            });
        }
    }
    Ok(maps)
}

/// Reduced colors per message: floor(bandwidth / width), at least one.
pub fn instances_per_message(bandwidth: u32, width: u32) -> usize {
    (bandwidth / width.max(1)).max(1) as usize
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterColoringStats {
    pub instances: usize,
    pub max_iterations: usize,
    pub min_per_message: usize,
    pub retries: usize,
    pub clusters: usize,
}

struct SimNode {
    cluster: usize,
    back: HashMap<u64, Color>,
    lists: Vec<Vec<u64>>,
    color: Vec<Option<u64>>,
}

/// Sends each sender's entry vector in chunks of `per_msg`, one exchange per
/// chunk, and returns what every receiver heard from each neighbor.
fn send_packed(
    net: &mut Network,
    payload: &HashMap<NodeId, Vec<Option<u64>>>,
    mask: &[bool],
    width: u32,
    per_msg: usize,
) -> Result<HashMap<NodeId, Vec<(NodeId, Vec<Option<u64>>)>>, SimError> {
    let mut senders: Vec<NodeId> = payload.keys().copied().collect();
    senders.sort_unstable();
    let len = payload.values().map(Vec::len).max().unwrap_or(0);
    let graph = net.graph_arc();
    let mut heard: HashMap<(NodeId, NodeId), Vec<Option<u64>>> = HashMap::new();
    for start in (0..len).step_by(per_msg.max(1)) {
        let end = (start + per_msg).min(len);
        let chunk_senders: Vec<NodeId> =
            senders.iter().copied().filter(|v| payload[v][start..end].iter().any(Option::is_some)).collect();
        if chunk_senders.is_empty() {
            continue;
        }
        let (mail, _) = net.exchange_split(&chunk_senders, Audience::Only(mask), |_, _, _, out| {
            out.broadcast(SdMsg::Packed { entries: end - start, width });
        })?;
        for &v in &chunk_senders {
            for &u in graph.neighbors(v) {
                if mask[u as usize] && mail.inbox(u).any(|(s, _)| s == v) {
                    heard.entry((u, v)).or_insert_with(|| vec![None; len])[start..end]
                        .copy_from_slice(&payload[&v][start..end]);
                }
            }
        }
    }
    let mut out: HashMap<NodeId, Vec<(NodeId, Vec<Option<u64>>)>> = HashMap::new();
    for ((u, v), entries) in heard {
        out.entry(u).or_default().push((v, entries));
    }
    for list in out.values_mut() {
        list.sort_unstable_by_key(|e| e.0);
    }
    Ok(out)
}

/// Colors the clusters of one class in parallel. `lists` are the truncated
/// lists fixed before the color maps were computed.
fn color_class(
    net: &mut Network,
    clusters: &[&Cluster],
    maps: &HashMap<NodeId, ColorMap>,
    lists: &HashMap<NodeId, Vec<Color>>,
    cfg: &SimConfig,
    stats: &mut ClusterColoringStats,
) -> Result<(), SimError> {
    let n = net.n();
    let instances = (cfg.cluster_a * log2n(n)).ceil().max(1.0) as usize;
    stats.instances = instances;
    let mut pending: Vec<usize> = (0..clusters.len()).collect();
    let mut attempt = 0;
    while !pending.is_empty() {
        let members: Vec<NodeId> = pending.iter().flat_map(|&c| clusters[c].members.iter().copied()).collect();
        let mask = mask_of(n, &members);
        let mut sim: HashMap<NodeId, SimNode> = HashMap::new();
        for &c in &pending {
            let map = &maps[&clusters[c].root];
            for &v in &clusters[c].members {
                let st = &net.states[v as usize];
                let live: Vec<Color> = lists[&v].iter().copied().filter(|&x| st.has_color(x)).collect();
                let back: HashMap<u64, Color> = live.iter().map(|&x| (map.apply(x), x)).collect();
                let mut red: Vec<u64> = back.keys().copied().collect();
                red.sort_unstable();
                sim.insert(v, SimNode { cluster: c, back, lists: vec![red; instances], color: vec![None; instances] });
            }
        }
        let iters: HashMap<usize, usize> = pending
            .iter()
            .map(|&c| (c, (cfg.cluster_a * (maps[&clusters[c].root].n_bound as f64).log2()).ceil().max(1.0) as usize))
            .collect();
        let width = pending.iter().map(|&c| maps[&clusters[c].root].target_width()).max().unwrap_or(1);
        let per_msg = instances_per_message(net.bandwidth_bits(), width);
        stats.min_per_message = if stats.min_per_message == 0 { per_msg } else { stats.min_per_message.min(per_msg) };
        let max_iter = iters.values().copied().max().unwrap_or(0);
        stats.max_iterations = stats.max_iterations.max(max_iter);
        for it in 0..max_iter {
            let mut cand: HashMap<NodeId, Vec<Option<u64>>> = HashMap::new();
            for &v in &members {
                let node = &sim[&v];
                if it >= iters[&node.cluster] {
                    continue;
                }
                let mut entries = vec![None; instances];
                let rng = net.rng(v);
                for (i, e) in entries.iter_mut().enumerate() {
                    let l = &node.lists[i];
                    if node.color[i].is_none() && !l.is_empty() {
                        *e = Some(l[rng.gen_range(0..l.len())]);
                    }
                }
                if entries.iter().any(Option::is_some) {
                    cand.insert(v, entries);
                }
            }
            if cand.is_empty() {
                break;
            }
            let heard = send_packed(net, &cand, &mask, width, per_msg)?;
            let mut won: HashMap<NodeId, Vec<Option<u64>>> = HashMap::new();
            for (&v, mine) in &cand {
                let nbrs = heard.get(&v).map(Vec::as_slice).unwrap_or(&[]);
                let mut w = vec![None; instances];
                for i in 0..instances {
                    if let Some(c) = mine[i] {
                        if !nbrs.iter().any(|(_, e)| e[i] == Some(c)) {
                            w[i] = Some(c);
                        }
                    }
                }
                if w.iter().any(Option::is_some) {
                    won.insert(v, w);
                }
            }
            for (v, w) in &won {
                let node = sim.get_mut(v).expect("simulated");
                for (i, c) in w.iter().enumerate() {
                    if c.is_some() {
                        node.color[i] = *c;
                    }
                }
            }
            let heard = send_packed(net, &won, &mask, width, per_msg)?;
            for (u, from) in heard {
                let node = sim.get_mut(&u).expect("simulated");
                for (_, e) in from {
                    for (i, c) in e.iter().enumerate() {
                        if let Some(c) = c {
                            if let Ok(k) = node.lists[i].binary_search(c) {
                                node.lists[i].remove(k);
                            }
                        }
                    }
                }
            }
        }
        // Agreement: bitwise max of failure strings, i.e. conjunction of successes.
        let mut tasks = Vec::new();
        for &c in &pending {
            let q = clusters[c];
            let inputs = q
                .members
                .iter()
                .map(|v| {
                    let bits: Vec<bool> = sim[v].color.iter().map(Option::is_none).collect();
                    crate::sim_core::bits_to_biguint(&bits)
                })
                .collect();
            tasks.push(AggTask { root: q.root, members: q.members.clone(), op: AggOp::BitwiseMax, inputs, width: instances as u32 });
        }
        let got = net.tree_aggregate_many(&tasks)?;
        let choice: Vec<Option<usize>> =
            got.iter().map(|o| (0..instances).find(|&i| !o.at_root.bit(i as u64))).collect();
        let casts: Vec<AggTask> = pending
            .iter()
            .zip(&choice)
            .map(|(&c, ch)| AggTask {
                root: clusters[c].root,
                members: clusters[c].members.clone(),
                op: AggOp::Broadcast,
                inputs: vec![BigUint::from(ch.map_or(0, |i| i + 1)); clusters[c].members.len()],
                width: bits_for(instances as u64),
            })
            .collect();
        net.tree_aggregate_many(&casts)?;
        let mut newly = Vec::new();
        let mut failed = Vec::new();
        for (&c, ch) in pending.iter().zip(&choice) {
            match ch {
                Some(i) => {
                    for &v in &clusters[c].members {
                        let node = &sim[&v];
                        let red = node.color[*i].expect("instance succeeded for every member");
                        let color = node.back[&red];
                        net.states[v as usize].color = Some(color);
                        net.trace_event(v, "colored", &color.to_string());
                        newly.push(v);
                    }
                }
                None => failed.push(c),
            }
        }
        newly.sort_unstable();
        announce_permanent(net, &newly)?;
        if !failed.is_empty() {
            if attempt >= cfg.cluster_retries {
                return Err(SimError::NoSuccessfulInstance { leader: clusters[failed[0]].root });
            }
            attempt += 1;
            stats.retries += 1;
            net.warn(format!("cluster coloring: {} clusters retried", failed.len()));
        }
        pending = failed;
    }
    Ok(())
}

/// Classes one after another; within a class every cluster of every
/// decomposition runs in parallel.
pub fn color_clusters(
    net: &mut Network,
    decomps: &[ClusterDecomposition],
    maps: &HashMap<NodeId, ColorMap>,
    lists: &HashMap<NodeId, Vec<Color>>,
    cfg: &SimConfig,
) -> Result<ClusterColoringStats, SimError> {
    let mut stats = ClusterColoringStats::default();
    let classes = decomps.iter().map(|d| d.classes.len()).max().unwrap_or(0);
    for j in 0..classes {
        let clusters: Vec<&Cluster> = decomps.iter().filter_map(|d| d.classes.get(j)).flatten().collect();
        stats.clusters += clusters.len();
        color_class(net, &clusters, maps, lists, cfg, &mut stats)?;
    }
    Ok(stats)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SmallDegreeStats {
    pub rounds: u64,
    pub nodes: usize,
    pub delta_h: usize,
    pub shatter_iterations: usize,
    pub components: usize,
    pub max_component: usize,
    /// Nodes in components too large for direct handling, given extra trials.
    pub second_group: usize,
    pub clusters: usize,
    pub max_classes: usize,
    pub max_diameter: u32,
    pub instances: usize,
    pub max_iterations: usize,
    pub min_per_message: usize,
    pub retries: usize,
    pub colormaps: Vec<ColorMap>,
}

/// Colors every uncolored node of `nodes`, which must form a (deg+1)-list
/// instance on the subgraph they induce.
pub fn color_small_degree(net: &mut Network, nodes: &[NodeId], cfg: &SimConfig) -> Result<SmallDegreeStats, SimError> {
    net.push_phase("small_degree");
    let start = net.round();
    let res = small_degree_inner(net, nodes, cfg);
    net.pop_phase();
    let mut stats = res?;
    stats.rounds = net.round() - start;
    Ok(stats)
}

fn small_degree_inner(net: &mut Network, nodes: &[NodeId], cfg: &SimConfig) -> Result<SmallDegreeStats, SimError> {
    let mut h: Vec<NodeId> = nodes.iter().copied().filter(|&v| net.states[v as usize].color.is_none()).collect();
    h.sort_unstable();
    h.dedup();
    let mut stats = SmallDegreeStats { nodes: h.len(), ..Default::default() };
    if h.is_empty() {
        return Ok(stats);
    }
    let log_n = log2n(net.n());
    stats.delta_h = uncolored_max_degree(net, &h);
    let d = stats.delta_h.max(1) as f64;
    let cap = (cfg.n_max_factor * d * d * log_n).ceil() as usize;
    let small_cut = (log_n.ceil().powi(3) as usize).min(cap);
    let shattered = shatter(net, &h, cfg)?;
    stats.shatter_iterations = shattered.iterations;
    let (first, second): (Vec<Vec<NodeId>>, Vec<Vec<NodeId>>) =
        shattered.components.into_iter().partition(|c| c.len() <= small_cut);
    process_components(net, &first, cap, cfg, &mut stats)?;
    if !second.is_empty() {
        let group: Vec<NodeId> = second.into_iter().flatten().collect();
        stats.second_group = group.len();
        let extra = (cfg.k6 * d.max(2.0).log2().ceil()).ceil() as usize;
        rct_loop(net, &group, extra)?;
        let left: Vec<NodeId> = group.into_iter().filter(|&v| net.states[v as usize].color.is_none()).collect();
        let comps = flood_components(net, &left)?;
        process_components(net, &comps, cap, cfg, &mut stats)?;
    }
    Ok(stats)
}

fn process_components(
    net: &mut Network,
    comps: &[Vec<NodeId>],
    cap: usize,
    cfg: &SimConfig,
    stats: &mut SmallDegreeStats,
) -> Result<(), SimError> {
    if comps.is_empty() {
        return Ok(());
    }
    stats.components += comps.len();
    stats.max_component = stats.max_component.max(comps.iter().map(Vec::len).max().unwrap_or(0));
    let decomps = decompose_many(net, comps, None, cap)?;
    // Lists cut to d_L(v)+1 colors; any later palette is a subset of the cut list.
    let mut lists: HashMap<NodeId, Vec<Color>> = HashMap::new();
    let all: Vec<NodeId> = comps.iter().flatten().copied().collect();
    let in_l = mask_of(net.n(), &all);
    for &v in &all {
        let d = net.graph().neighbors(v).iter().filter(|&&u| in_l[u as usize]).count();
        let pal = &net.states[v as usize].palette;
        lists.insert(v, pal[..pal.len().min(d + 1)].to_vec());
    }
    let mut jobs = Vec::new();
    for dc in &decomps {
        stats.max_classes = stats.max_classes.max(dc.classes.len());
        for q in dc.clusters() {
            stats.clusters += 1;
            stats.max_diameter = stats.max_diameter.max(q.diameter);
            jobs.push(ReductionJob {
                root: q.root,
                members: q.members.clone(),
                lists: q.members.iter().map(|v| lists[v].clone()).collect(),
            });
        }
    }
    let maps = reduce_colorspace_many(net, &jobs)?;
    let by_root: HashMap<NodeId, ColorMap> = maps.iter().map(|m| (m.leader, m.clone())).collect();
    let cs = color_clusters(net, &decomps, &by_root, &lists, cfg)?;
    stats.instances = cs.instances;
    stats.max_iterations = stats.max_iterations.max(cs.max_iterations);
    stats.min_per_message =
        if stats.min_per_message == 0 { cs.min_per_message } else { stats.min_per_message.min(cs.min_per_message) };
    stats.retries += cs.retries;
    stats.colormaps.extend(maps);
    Ok(())
}
