//! Round-synchronous CONGEST simulator and a randomized (Δ+1)-list-coloring
//! pipeline built on top of it: almost-clique decomposition, clique overlays,
//! slack generation, sparse/dense coloring and small-degree coloring with
//! derandomized colorspace reduction.
//!
//! All `log` quantities are base 2.

pub mod acd;
pub mod dense_sparse;
pub mod error;
pub mod graph_io;
pub mod harness;
pub mod overlay;
pub mod sim_core;
pub mod small_degree;
pub mod trials;
pub mod util;

use serde::{Deserialize, Serialize};

pub use error::SimError;
pub use graph_io::{Graph, PaletteAssignment};
pub use harness::{run_pipeline, Mode, RunReport, SimConfig};
pub use sim_core::{Network, RoundStats};

pub type NodeId = u32;

/// A color from the colorspace `[1, U]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Color(pub u64);

impl std::fmt::Display for Color {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

/// Exact local sparsity and neighborhood-overlap thresholds.
pub type Sparsity = num_rational::Ratio<i64>;
/// Exact layer probabilities.
pub type Probability = num_rational::BigRational;
/// Float-backed layer probabilities for quick what-if calculations.
pub type ApproxProbability = f64;
