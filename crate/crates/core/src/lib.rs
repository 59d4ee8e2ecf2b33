//! Spiking neural network simulation and training with SLAYER-style
//! backpropagation of errors through time, weights and axonal delays.

pub mod backprop;
pub mod checkpoint;
pub mod error;
pub mod event_io;
pub mod forward;
pub mod gradcheck;
pub mod kernel;
pub mod loss;
pub mod optim;
pub mod signal;
pub mod soft;
pub mod topology;
pub mod trainer;

pub use error::{Error, Result};
pub use forward::NeuronConfig;
pub use signal::{SampledSignal, SimConfig, SpikeEvent, SpikeTrain};
pub use topology::{Network, NetworkSpec};
