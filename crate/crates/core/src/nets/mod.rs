//! Feed-forward networks trained from scratch: victim, clone, feature
//! extractor and attack generator.

mod generator;
pub mod loss;
mod mlp;
mod optim;
mod train;

pub use generator::{GeneratorModel, GeneratorTrace};
pub use mlp::{argmax, softmax, softmax_rows, Dense, ForwardTrace, Gradients, MlpModel, MODEL_FORMAT_VERSION};
pub use optim::{Adam, Optimizer, Sgd};
pub use train::{accuracy, train_classifier, TrainConfig, TrainOutcome};
