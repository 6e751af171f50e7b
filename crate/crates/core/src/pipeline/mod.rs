//! Training, super-resolution evaluation and the latent classifier.

mod classifier;
mod evaluate;
mod train;

pub use classifier::{
    classifier_grid, latent_features, train_latent_classifier, ClassifierConfig, ClassifierGrid, EncoderMode, GridData,
    LatentClassifier,
};
pub use evaluate::{evaluate_superres, SuperresRow};
pub use train::{train, train_step, Objective, TrainConfig, Trainer};
