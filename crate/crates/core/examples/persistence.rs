//! Saves a node autoencoder as a JSON document and loads it back.

use rirl::data::{synth_generate, DagSpec};
use rirl::node::{NodeAeConfig, NodeAutoencoder};
use rirl::persist::{load_model, save_model};

fn main() -> rirl::Result<()> {
    let data = synth_generate(&DagSpec::tiered_five(), 100, 1)?;
    let b = data.node("B")?;
    let model = NodeAutoencoder::new("B", b.dim(), b.scaler.clone(), &NodeAeConfig::default())?;
    let path = std::env::temp_dir().join("rirl-persist-example").join("B.json");
    save_model(&model, &path)?;
    let back: NodeAutoencoder = load_model(&path)?;
    println!("{} bytes written to {}; identical after reload: {}", std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0), path.display(), back == model);
    Ok(())
}
