//! Trainable CLAP parameters: two encoders, the shared structured decoder,
//! the classifier and the two priors.

pub mod arch;
pub mod checkpoint;
mod clap;
mod components;
mod dims;
pub mod layers;
mod params;
mod posterior;

pub use arch::{ArchConfig, Architecture, ArchitectureRegistry, Backbone, DecoderNet, ForwardCtx};
pub use checkpoint::{
    load_checkpoint, load_into, read_checkpoint_meta, save_checkpoint, Checkpoint, OptimizerState,
};
pub use clap::{Batch, ClapModel, ModelConfig, VAR_FLOOR};
pub use components::{
    Classifier, ClassifierConfig, ConditionalPrior, Decoder, Likelihood, MixturePrior,
};
pub use dims::{label_config_index, ModelDims, MAX_LABELS};
pub use params::{Init, ParamStore};
pub use posterior::{sample_posterior, standard_normal, GaussianPosterior};
