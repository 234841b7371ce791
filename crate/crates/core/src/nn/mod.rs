//! Small dense/LSTM network engine with Adam and L1 regularization.

pub mod adam;
pub mod layers;
pub mod linalg;
pub mod loss;
pub mod model;
pub mod tensor;
pub mod train;

pub use adam::Adam;
pub use layers::{Activation, Dense, Dropout, Layer, Lstm};
pub use loss::Loss;
pub use model::Sequential;
pub use tensor::Tensor;
pub use train::{train, InMemory, LearningCurve, Samples, TrainAbort, TrainConfig};
