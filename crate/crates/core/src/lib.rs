//! Spiking convolutional sequence tagger with binary or ternary spikes.

pub mod cli;
pub mod data;
pub mod energy;
pub mod error;
pub mod layers;
pub mod metrics;
pub mod neuron;
pub mod persistence;
pub mod real;
pub mod seeds;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
