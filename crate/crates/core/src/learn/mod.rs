//! Neural networks, the self-organizing map and PCA.

pub mod layers;
pub mod network;
pub mod pca;
pub mod som;
pub mod tensor;
pub mod train;

pub use layers::{Layer, LayerKind, Padding};
pub use network::{Architecture, Gradients, NetworkModel};
pub use pca::{pca, PcaResult};
pub use som::{som_assign, som_fit, SomState};
pub use tensor::Tensor;
pub use train::{
    evaluate, predict, train_supervised, Dataset, Metrics, TrainConfig, TrainOutcome, ValidationPoint, EVAL_BATCH,
};
