//! Neural-network surrogate for the finite-liquidity exchange option price.
//!
//! [`dataset`] samples inputs and labels them with the Monte Carlo engine;
//! [`net`] is a dense ReLU network with a SoftPlus output trained by Adam.

mod codec;
pub mod dataset;
pub mod error;
pub mod net;

pub use dataset::{
    build_dataset, load_dataset, sample_inputs, Dataset, DatasetConfig, EngineSpec, LabeledSample,
    LognormalScheme, SampleInput, SamplingMethod,
};
pub use error::{Result, SurrogateError};
pub use net::{evaluate, load_model, save_model, train, Metrics, Mlp, NetConfig, TrainedModel};
