//! A small CPU training stack for convolutional networks whose pooling
//! layers support dropout: max-pooling dropout and stochastic pooling at
//! train time, and max, scaled max, probabilistic weighted and
//! activation-weighted pooling at test time.

pub mod arch;
pub mod data;
pub mod error;
pub mod experiment;
pub mod layers;
pub mod net;
pub mod pooling;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use pooling::{PoolSpec, RetainProb};
pub use rng::RngStream;
pub use tensor::Tensor4;
