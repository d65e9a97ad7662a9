//! Tracking SIS infection diffusion on large graphs.
//!
//! The crate is organised bottom-up:
//!
//! * [`graph`] – simple graphs, random generators and degree distributions.
//! * [`sis`] – transition kernels and the agent-based SIS process.
//! * [`meanfield`] – the deterministic polynomial map that approximates it.
//! * [`sampling`] – uniform and respondent-driven observations of the state.
//! * [`filter`] – the polynomial-Gaussian filter and the slow-scale HMM filter.
//! * [`pcrlb`] – posterior Cramér–Rao bounds for the filter.
//! * [`evolution`] – preferential-attachment degree evolution, stochastic
//!   dominance and diffusion thresholds.
//! * [`empirics`] – event-log ingestion and empirical rate extraction.
//! * [`analytics`] – KS tests, power-law fits, deviation tables, baselines.
//! * [`experiments`] – end-to-end drivers shared by the CLI and the
//!   acceptance suite.

pub mod analytics;
pub mod empirics;
pub mod error;
pub mod evolution;
pub mod experiments;
pub mod filter;
pub mod graph;
pub mod meanfield;
pub mod pcrlb;
pub mod sampling;
pub mod sis;

pub use error::{Error, Result};
pub use evolution::{DominanceResult, EvolutionMatrix};
pub use filter::{FilterState, HmmBelief};
pub use graph::{DegreeDistribution, Graph, MultiGraph};
pub use meanfield::{DenseTensors, LambdaScope, PolynomialDynamics};
pub use sampling::Observation;
pub use sis::{InfectionState, TransitionKernel, UpdateScheme};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic RNG used throughout the crate.
pub type SimRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}
