//! Shared fixtures for the benchmarks.

use svcgraph_core::sim::{generate_topology, simulate_corpus, Densities, Scenario};
use svcgraph_core::telemetry::Partition;
use svcgraph_core::GraphInput;

/// Training inputs from a simulated layered corpus.
pub fn training_inputs(layer_sizes: &[usize], minutes: i64, seed: u64) -> (usize, Vec<GraphInput>) {
    let topology = generate_topology(layer_sizes, &Densities::default_for(layer_sizes.len()), seed)
        .expect("valid topology");
    let corpus = simulate_corpus(&Scenario::new(topology, seed), minutes).expect("simulation");
    let n = corpus.registry.len();
    let inputs = corpus
        .partition(Partition::Train)
        .map(|s| GraphInput::from_snapshot(s, n).expect("non-empty snapshot"))
        .collect();
    (n, inputs)
}
