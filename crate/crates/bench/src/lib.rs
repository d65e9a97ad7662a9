//! Shared fixtures for the benchmarks.

use epitrack_core::graph::generate_erdos_renyi_capped;
use epitrack_core::meanfield::build_dynamics;
use epitrack_core::{rng_from_seed, DegreeDistribution, Graph, InfectionState, PolynomialDynamics, TransitionKernel};

/// Mean-field dynamics on a power-law(2.7) law over degrees `1..=l`.
pub fn dynamics(l: usize) -> PolynomialDynamics {
    let k = TransitionKernel::random(l, 1.0, 11).expect("kernel");
    build_dynamics(&k, &DegreeDistribution::power_law(2.7, l).expect("law"), 100).expect("dynamics")
}

/// Capped Erdős–Rényi graph with a matching kernel and a random initial state.
pub fn agent_setup(nodes: usize) -> (Graph, TransitionKernel, InfectionState) {
    let g = generate_erdos_renyi_capped(nodes, 2.7, 8, 1).expect("graph");
    let k = TransitionKernel::random(g.max_degree(), 1.0, 2).expect("kernel");
    let state = InfectionState::random_by_degree(&g, &vec![0.5; g.max_degree()], &mut rng_from_seed(3));
    (g, k, state)
}
