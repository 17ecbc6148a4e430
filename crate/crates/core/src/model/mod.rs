//! The network, its parameters and the autodiff tape it runs on.

pub mod config;
pub mod dist;
pub mod graph;
pub mod network;
pub mod params;

pub use config::{ModelConfig, Variant};
pub use graph::{Graph, NodeId};
pub use network::{CandidateFeatures, DecodeState, Emitted, Label, MessageContext, Model, StepNodes};
pub use params::{Gradients, ParamId, ParamStore, Tensor};
