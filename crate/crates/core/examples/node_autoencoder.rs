//! Trains the autoencoder of one synthetic node and reports held-out metrics.

use rirl::data::{synth_generate, DagSpec};
use rirl::node::{train_node_autoencoder, NodeAeConfig};

fn main() -> rirl::Result<()> {
    let data = synth_generate(&DagSpec::tiered_five(), 1000, 1)?;
    let cfg = NodeAeConfig {
        num_keys: 1,
        hidden: 32,
        latent_dim: 8,
        epochs: 10,
        ..NodeAeConfig::default()
    };
    let trained = train_node_autoencoder(data.node("A")?, &cfg)?;
    let m = &trained.metrics;
    println!("epoch losses: {:?}", trained.history);
    println!(
        "held-out: scaled RMSE {:.4}, unscaled RMSE {:.4}, mask BCE {:.4}, NSE {:?}",
        m.rmse_scaled, m.rmse_unscaled, m.mask_bce, m.nse
    );
    Ok(())
}
