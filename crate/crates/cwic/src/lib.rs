//! Content-weighted image compression codec.
//!
//! The pipeline encodes an RGB image into a short bitstream in four stages:
//! a convolutional encoder maps pixels to a feature cuboid, a learned
//! channel-wise quantizer turns features into discrete levels, a learned
//! importance map decides how many channels are kept at each spatial
//! location, and a trimmed-convolution entropy model drives an arithmetic
//! coder that serializes the surviving symbols.  Decoding runs the same
//! machinery in reverse and is bit-exact with respect to the encoded
//! symbols.
//!
//! Modules follow the pipeline:
//!
//! * [`tensor`]: minimal f64 tensor engine (conv, sigmoid, depth-to-space,
//!   Adam) with hand-written backward passes.
//! * [`quant`]: channel-wise multi-level quantizer with learned step sizes.
//! * [`importance`]: importance-map quantization, mask construction, rate
//!   loss and the two-stage mask relaxation used in training.
//! * [`autoenc`]: encoder, decoder and importance subnetwork plus losses and
//!   the training loop.
//! * [`entropy`]: trimmed convolutions, coding orders and the convolutional
//!   entropy model that predicts per-symbol PMFs.
//! * [`coder`]: integer arithmetic coder and PMF quantization.
//! * [`container`]: bitstream and model file formats.
//! * [`codec`]: end-to-end encode / decode of images.
//! * [`ppm`]: binary PPM image I/O.
//! * [`synth`]: synthetic training corpus generator used by tests and the
//!   toy preset.

pub mod autoenc;
pub mod codec;
pub mod coder;
pub mod container;
pub mod entropy;
mod error;
pub mod importance;
pub mod metrics;
mod parallel;
pub mod ppm;
pub mod quant;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
