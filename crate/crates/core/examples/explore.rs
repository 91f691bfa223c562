//! Greedy structure search, first over a table of fixed strengths and then
//! over relations trained on demand.

use rirl::data::{synth_generate, DagSpec};
use rirl::explore::{emit_round_log, explore, CandidateMap, ExploreConfig, FixedStrengths, TrainedStrengths};
use rirl::node::{train_node_autoencoder, NodeAeConfig};
use rirl::relation::RelationConfig;

fn main() -> rirl::Result<()> {
    let nodes = ["A", "B", "C"];
    let k = FixedStrengths::from_pairs(&[
        (&["A"][..], "B", 2.0),
        (&["A"][..], "C", 3.0),
        (&["B"][..], "C", 1.5),
        (&["A", "B"][..], "C", 2.5),
    ]);
    let state = explore(&nodes, &CandidateMap::forward(&nodes), &k, &ExploreConfig::default())?;
    print!("{}", emit_round_log(&state)?.text);

    let data = synth_generate(&DagSpec::tiered_five(), 800, 3)?;
    let node_cfg = NodeAeConfig {
        num_keys: 1,
        hidden: 16,
        latent_dim: 4,
        epochs: 5,
        ..NodeAeConfig::default()
    };
    let models = data
        .nodes
        .iter()
        .map(|s| train_node_autoencoder(s, &node_cfg).map(|t| t.model))
        .collect::<rirl::Result<Vec<_>>>()?;
    let names = data.names();
    let rel_cfg = RelationConfig {
        hidden: 16,
        epochs: 3,
        ..RelationConfig::default()
    };
    let oracle = TrainedStrengths::new(&data, models, rel_cfg);
    let cfg = ExploreConfig {
        max_rounds: 4,
        ..ExploreConfig::default()
    };
    let state = explore(&names, &CandidateMap::forward(&names), &oracle, &cfg)?;
    let edges: Vec<String> = state.edges.iter().map(|e| e.to_string()).collect();
    println!("selected from trained relations: {}", edges.join(", "));
    Ok(())
}
