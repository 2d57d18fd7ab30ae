//! Classifiers with pluggable heads, autoencoders and checkpoints.

mod autoencoder;
mod checkpoint;
mod model;

pub use autoencoder::{
    ae_forward, build_autoencoder, reconstruction_mse, train_autoencoder, AeTrainConfig, AutoencoderConfig,
    AutoencoderModel,
};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest, LayerEntry, CHECKPOINT_FORMAT};
pub use model::{
    argmax, build_classifier, Bound, ClassifierModel, Dense, Forward, Head, HeadConfig, InitScheme, ModelConfig,
};
