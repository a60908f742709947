use thiserror::Error;

use crate::{Color, NodeId};

/// Hard failures raised inside a simulation. None of these are retried:
/// each one means either a CONGEST violation or an algorithm bug.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("graph is empty")]
    EmptyGraph,
    #[error("graph is not simple: {0}")]
    NotSimple(String),
    #[error("bandwidth of {bandwidth} bits cannot carry a {needed}-bit node ID")]
    BandwidthTooSmall { bandwidth: u32, needed: u32 },
    #[error("node {node} put {bits} bits on edge to {dst} in round {round}, budget is {budget}")]
    Bandwidth { node: NodeId, dst: NodeId, round: u64, bits: u32, budget: u32 },
    #[error("node {node} sent to non-neighbor {dst} in round {round}")]
    NotNeighbor { node: NodeId, dst: NodeId, round: u64 },
    #[error("cluster rooted at {root} is disconnected ({unreached} members unreachable)")]
    DisconnectedCluster { root: NodeId, unreached: usize },
    #[error("aggregate value of {bits} bits exceeds the {max}-bit limit")]
    ValueTooWide { bits: u32, max: u32 },
    #[error("node {node} has an empty palette")]
    EmptyPalette { node: NodeId },
    #[error("node {node} tried color {color} which is not in its palette")]
    ColorNotInPalette { node: NodeId, color: Color },
    #[error("node {node} is already colored")]
    AlreadyColored { node: NodeId },
    #[error("node {node} is sparse and has no almost-clique")]
    NotInClique { node: NodeId },
    #[error("non-edge {u}-{v} of clique {clique} has no relay after the round cap")]
    UncoveredNonEdge { clique: NodeId, u: NodeId, v: NodeId },
    #[error("node {node} has routing load {load}, cap is {cap}")]
    LoadCapExceeded { node: NodeId, load: usize, cap: usize },
    #[error("component of {size} nodes exceeds the cap of {cap}")]
    ComponentTooLarge { size: usize, cap: usize },
    #[error("colorspace reduction failed for cluster led by {leader}: {detail}")]
    ColorMapFailed { leader: NodeId, detail: String },
    #[error("no instance colored the whole cluster led by {leader}")]
    NoSuccessfulInstance { leader: NodeId },
    #[error("theory-mode precondition violated: {0}")]
    TheoryPrecondition(String),
    #[error("{phase}: {source}")]
    InPhase { phase: String, source: Box<SimError> },
}

impl SimError {
    pub fn in_phase(self, phase: &str) -> SimError {
        match self {
            e @ SimError::InPhase { .. } => e,
            e => SimError::InPhase { phase: phase.to_string(), source: Box::new(e) },
        }
    }
}
