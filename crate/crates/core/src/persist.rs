//! Versioned JSON documents for trained models.
//!
//! A document carries the schema version, the model kind, metadata about the
//! nodes involved, a summary of every layer shape and the model itself.
//! Floating-point values are written as the shortest decimal text that parses
//! back to the same bits.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::nn::{Activation, LayerSet};
use crate::node::NodeAutoencoder;
use crate::relation::MicroCausalModel;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub name: String,
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeMeta {
    pub name: String,
    pub attributes: Vec<String>,
    pub latent_dim: usize,
    pub num_keys: usize,
}

#[derive(Serialize, Deserialize)]
struct Document<M> {
    schema_version: u32,
    kind: String,
    nodes: Vec<NodeMeta>,
    layers: Vec<LayerShape>,
    model: M,
}

/// A model that can be stored as a document.
pub trait Persist: Serialize + DeserializeOwned + LayerSet {
    const KIND: &'static str;
    fn node_meta(&self) -> Vec<NodeMeta>;
    fn check(&self) -> Result<()>;
}

fn meta(ae: &NodeAutoencoder) -> NodeMeta {
    NodeMeta {
        name: ae.node.clone(),
        attributes: ae.scaler.attributes.clone(),
        latent_dim: ae.latent_dim(),
        num_keys: ae.keys.len(),
    }
}

impl Persist for NodeAutoencoder {
    const KIND: &'static str = "node-autoencoder";

    fn node_meta(&self) -> Vec<NodeMeta> {
        vec![meta(self)]
    }

    fn check(&self) -> Result<()> {
        self.validate()
    }
}

impl Persist for MicroCausalModel {
    const KIND: &'static str = "micro-causal";

    fn node_meta(&self) -> Vec<NodeMeta> {
        self.causes.iter().chain(std::iter::once(&self.effect)).map(meta).collect()
    }

    fn check(&self) -> Result<()> {
        for ae in self.causes.iter().chain(std::iter::once(&self.effect)) {
            ae.validate()?;
        }
        let names: Vec<&str> = self.causes.iter().map(|c| c.node.as_str()).collect();
        if names != self.id().causes.iter().map(String::as_str).collect::<Vec<_>>() || self.effect.node != self.id().effect {
            return Err(Error::shape(format!("relation {} does not match its node models", self.id())));
        }
        let n = self.window_n();
        let l = self.effect.latent_dim();
        ensure_len("relation input", self.relation.input_len(), self.causes.len() * n * l)?;
        ensure_len("relation output", self.relation.stack.out_dim(), l)
    }
}

fn shapes<M: LayerSet>(model: &M) -> Vec<LayerShape> {
    model
        .layers()
        .iter()
        .map(|l| LayerShape {
            name: l.name.clone(),
            inputs: l.in_dim(),
            outputs: l.out_dim(),
            activation: l.activation,
        })
        .collect()
}

/// Serializes `model` to a document string.
pub fn to_document<M: Persist>(model: &M) -> Result<String> {
    let doc = Document {
        schema_version: SCHEMA_VERSION,
        kind: M::KIND.to_string(),
        nodes: model.node_meta(),
        layers: shapes(model),
        model,
    };
    let mut text = serde_json::to_string_pretty(&doc).map_err(|e| Error::Persistence {
        path: Default::default(),
        msg: e.to_string(),
    })?;
    text.push('\n');
    Ok(text)
}

#[derive(Deserialize)]
struct Header {
    schema_version: u32,
    kind: String,
}

/// Parses a document string; `origin` names the source in errors.
pub fn from_document<M: Persist>(text: &str, origin: &Path) -> Result<M> {
    let header: Header = serde_json::from_str(text).map_err(|e| Error::persistence(origin, format!("unreadable model document: {e}")))?;
    if header.schema_version != SCHEMA_VERSION {
        return Err(Error::persistence(
            origin,
            format!("schema version {} is not supported (expected {SCHEMA_VERSION})", header.schema_version),
        ));
    }
    if header.kind != M::KIND {
        return Err(Error::persistence(origin, format!("document holds a {}, expected a {}", header.kind, M::KIND)));
    }
    let doc: Document<M> = serde_json::from_str(text).map_err(|e| Error::persistence(origin, format!("malformed model: {e}")))?;
    doc.model.check().map_err(|e| Error::persistence(origin, e))?;
    if doc.layers != shapes(&doc.model) {
        return Err(Error::persistence(origin, "layer summary does not match the stored weights"));
    }
    if doc.nodes != doc.model.node_meta() {
        return Err(Error::persistence(origin, "node metadata does not match the stored model"));
    }
    Ok(doc.model)
}

pub fn save_model<M: Persist>(model: &M, path: &Path) -> Result<()> {
    let text = to_document(model).map_err(|e| match e {
        Error::Persistence { msg, .. } => Error::persistence(path, msg),
        other => other,
    })?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::persistence(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::persistence(path, e))
}

pub fn load_model<M: Persist>(path: &Path) -> Result<M> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::persistence(path, e))?;
    from_document(&text, path)
}
