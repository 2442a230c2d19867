//! Un-trained convolutional generators.
//!
//! Every hidden layer upsamples, convolves, applies ReLU and normalizes each
//! channel. The ConvDecoder upsamples by nearest neighbor and uses 3x3
//! kernels; the Deep Decoder upsamples bilinearly and uses 1x1 kernels. The
//! final layer is a 1x1 convolution that linearly combines the last hidden
//! channels into the output images.

mod config;
mod io;
mod probe;
mod state;

pub use config::{Architecture, DecoderConfig, SizeSchedule};
pub use io::{load_params, save_params, PARAM_MAGIC, PARAM_VERSION};
pub use probe::{area_downsample, layer_probe, least_squares, ProbeLayer};
pub use state::{layer_specs, DecoderGraph, DecoderState, LayerSpec};
