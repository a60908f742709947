//! Randomized coloring primitives: single trials, multi-color trials, slack
//! generation and slack measurement.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::sim_core::{Audience, Message, Network, NodeRng, Widths};
use crate::{Color, NodeId, Sparsity};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    #[default]
    Undecided,
    Sparse,
    /// Member of the almost-clique with this ID.
    Dense(NodeId),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NodeState {
    /// Current palette, sorted. Never holds a color taken by a neighbor.
    pub palette: Vec<Color>,
    pub color: Option<Color>,
    pub uncolored_degree: usize,
    pub slack_snapshot: i64,
    pub role: Role,
    pub layer: Option<usize>,
}

impl NodeState {
    pub fn has_color(&self, c: Color) -> bool {
        self.palette.binary_search(&c).is_ok()
    }

    fn remove_color(&mut self, c: Color) {
        if let Ok(i) = self.palette.binary_search(&c) {
            self.palette.remove(i);
        }
    }
}

#[derive(Debug, Clone)]
enum TrialMsg {
    Candidate(Color),
    Permanent(Color),
    Sample(Vec<Color>),
}

impl Message for TrialMsg {
    fn bits(&self, w: &Widths) -> u32 {
        match self {
            TrialMsg::Candidate(_) | TrialMsg::Permanent(_) => w.color,
            TrialMsg::Sample(cs) => w.color * cs.len().max(1) as u32,
        }
    }
}

/// Uniform color from the palette.
pub fn pick_uniform(palette: &[Color], rng: &mut NodeRng) -> Option<Color> {
    (!palette.is_empty()).then(|| palette[rng.gen_range(0..palette.len())])
}

/// `k` distinct uniform colors in sample order.
pub fn sample_colors(palette: &[Color], k: usize, rng: &mut NodeRng) -> Vec<Color> {
    let k = k.min(palette.len());
    sample(rng, palette.len(), k).into_iter().map(|i| palette[i]).collect()
}

fn mask_of(n: usize, nodes: &[NodeId]) -> Vec<bool> {
    let mut mask = vec![false; n];
    for &v in nodes {
        mask[v as usize] = true;
    }
    mask
}

/// Second half of every trial: the new colors are announced to uncolored
/// neighbors, who drop them from their palettes.
pub fn announce_permanent(net: &mut Network, newly: &[NodeId]) -> Result<(), SimError> {
    let uncolored: Vec<bool> = net.states.iter().map(|s| s.color.is_none()).collect();
    let mail = net.exchange(newly, Audience::Only(&uncolored), |_, st, _, out| {
        out.broadcast(TrialMsg::Permanent(st.color.expect("announcer is colored")));
    })?;
    let graph = net.graph_arc();
    let mut touched: Vec<NodeId> = newly.iter().flat_map(|&v| graph.neighbors(v).iter().copied()).collect();
    touched.sort_unstable();
    touched.dedup();
    for u in touched {
        if !uncolored[u as usize] {
            continue;
        }
        let st = &mut net.states[u as usize];
        for (_, m) in mail.inbox(u) {
            if let TrialMsg::Permanent(c) = m {
                st.remove_color(*c);
                st.uncolored_degree -= 1;
            }
        }
    }
    Ok(())
}

/// One trial for the given (node, candidate) pairs: two rounds. A node keeps
/// its candidate iff no neighbor tried the same color. Returns newly colored nodes.
pub fn try_color(net: &mut Network, attempts: &[(NodeId, Color)]) -> Result<Vec<NodeId>, SimError> {
    let mut attempts = attempts.to_vec();
    attempts.sort_unstable_by_key(|a| a.0);
    for &(v, c) in &attempts {
        let st = &net.states[v as usize];
        if st.color.is_some() {
            return Err(SimError::AlreadyColored { node: v });
        }
        if !st.has_color(c) {
            return Err(SimError::ColorNotInPalette { node: v, color: c });
        }
    }
    let senders: Vec<NodeId> = attempts.iter().map(|a| a.0).collect();
    let trying = mask_of(net.n(), &senders);
    let mut candidate = vec![None; net.n()];
    for &(v, c) in &attempts {
        candidate[v as usize] = Some(c);
    }
    let mail = net.exchange(&senders, Audience::Only(&trying), |v, _, _, out| {
        out.broadcast(TrialMsg::Candidate(candidate[v as usize].expect("sender has a candidate")));
    })?;
    let mut newly = Vec::new();
    for &(v, c) in &attempts {
        let clash = mail.inbox(v).any(|(_, m)| matches!(m, TrialMsg::Candidate(x) if *x == c));
        if !clash {
            net.states[v as usize].color = Some(c);
            net.trace_event(v, "colored", &c.to_string());
            newly.push(v);
        }
    }
    announce_permanent(net, &newly)?;
    Ok(newly)
}

/// One RandomColorTrial iteration on the uncolored members of `active`.
pub fn random_color_trial(net: &mut Network, active: &[NodeId]) -> Result<Vec<NodeId>, SimError> {
    let mut attempts = Vec::with_capacity(active.len());
    for &v in active {
        if net.states[v as usize].color.is_some() {
            continue;
        }
        let palette = std::mem::take(&mut net.states[v as usize].palette);
        let pick = pick_uniform(&palette, net.rng(v));
        net.states[v as usize].palette = palette;
        attempts.push((v, pick.ok_or(SimError::EmptyPalette { node: v })?));
    }
    try_color(net, &attempts)
}

/// `iters` RCT iterations on `active`, stopping early once all are colored.
pub fn rct_loop(net: &mut Network, active: &[NodeId], iters: usize) -> Result<(), SimError> {
    let mut live: Vec<NodeId> = active.to_vec();
    for _ in 0..iters {
        live.retain(|&v| net.states[v as usize].color.is_none());
        if live.is_empty() {
            break;
        }
        random_color_trial(net, &live)?;
    }
    Ok(())
}

/// SlackGeneration: every uncolored node joins S with probability `p`, then one
/// RCT on G[S]. Returns S.
pub fn slack_generation(net: &mut Network, p: Sparsity) -> Result<Vec<NodeId>, SimError> {
    let (num, den) = (*p.numer() as u32, *p.denom() as u32);
    let mut sampled = Vec::new();
    for v in net.graph().nodes().collect::<Vec<_>>() {
        if net.states[v as usize].color.is_none() && net.rng(v).gen_ratio(num, den) {
            sampled.push(v);
        }
    }
    random_color_trial(net, &sampled)?;
    Ok(sampled)
}

/// Each participant tries `k` distinct colors at once and keeps the first one,
/// in sample order, that no participating neighbor also tried. Samples wider
/// than the budget are spread over extra (charged) rounds.
pub fn multi_trial(net: &mut Network, participants: &[(NodeId, usize)]) -> Result<Vec<NodeId>, SimError> {
    let mut samples: Vec<Vec<Color>> = vec![Vec::new(); net.n()];
    let mut senders = Vec::new();
    for &(v, k) in participants {
        let st = &net.states[v as usize];
        if st.color.is_some() {
            return Err(SimError::AlreadyColored { node: v });
        }
        if st.palette.is_empty() {
            return Err(SimError::EmptyPalette { node: v });
        }
        if k > st.palette.len() {
            let len = st.palette.len();
            net.warn(format!("multi_trial at node {v}: k={k} clamped to palette size {len}"));
        }
        let palette = std::mem::take(&mut net.states[v as usize].palette);
        samples[v as usize] = sample_colors(&palette, k.max(1), net.rng(v));
        net.states[v as usize].palette = palette;
        senders.push(v);
    }
    senders.sort_unstable();
    let mask = mask_of(net.n(), &senders);
    let (mail, _) = net.exchange_split(&senders, Audience::Only(&mask), |v, _, _, out| {
        out.broadcast(TrialMsg::Sample(samples[v as usize].clone()));
    })?;
    let mut newly = Vec::new();
    for &v in &senders {
        let mut blocked: Vec<Color> = mail
            .inbox(v)
            .flat_map(|(_, m)| match m {
                TrialMsg::Sample(cs) => cs.clone(),
                _ => Vec::new(),
            })
            .collect();
        blocked.sort_unstable();
        if let Some(&c) = samples[v as usize].iter().find(|c| blocked.binary_search(c).is_err()) {
            net.states[v as usize].color = Some(c);
            newly.push(v);
        }
    }
    announce_permanent(net, &newly)?;
    Ok(newly)
}

/// |Ψ(v)| minus the number of uncolored neighbors, counting only neighbors in
/// `scope` when given.
pub fn measure_slack(net: &Network, v: NodeId, scope: Option<&[bool]>) -> i64 {
    let st = &net.states[v as usize];
    let d = match scope {
        None => st.uncolored_degree,
        Some(mask) => net
            .graph()
            .neighbors(v)
            .iter()
            .filter(|&&u| mask[u as usize] && net.states[u as usize].color.is_none())
            .count(),
    };
    st.palette.len() as i64 - d as i64
}

/// Stores the current slack of every node in its snapshot field.
pub fn snapshot_slack(net: &mut Network) {
    for v in 0..net.n() as NodeId {
        net.states[v as usize].slack_snapshot = measure_slack(net, v, None);
    }
}
