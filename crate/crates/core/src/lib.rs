//! Temporal link prediction with significance-weighted neighbor aggregation.
//!
//! The pipeline ingests a continuous-time contact stream ([`graph`]), fits a
//! power law to repeat-contact gaps to size the forward-looking window
//! ([`powerlaw`]), ranks each node's neighbors by exponentially decayed contact
//! counts ([`significance`]), embeds nodes with a two-layer aggregation network
//! ([`model`], [`encoder`]), trains it with a significance-weighted cosine loss
//! ([`training`]) and scores held-out links by AUC and MAP ([`evaluation`]).
//! [`experiment`] ties the stages together for seeds, ablations and sweeps.

pub mod checkpoint;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod graph;
pub mod linalg;
pub mod model;
pub mod powerlaw;
pub mod rng;
pub mod significance;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
pub use graph::{Event, NodeId, TemporalGraph};
pub use model::{ModelDims, ModelParams, NodeFeatures};
