//! On-disk formats: the compressed bitstream and the trained model file.
//!
//! Both formats are little-endian with explicit length fields, never trust
//! their inputs, and fail with corrupt-data errors instead of panicking.
//! The bitstream carries a truncated digest of the model that produced it
//! so a decoder can refuse to run with mismatched weights.

mod bitstream;
mod model_file;

pub use bitstream::{
    read_bitstream, write_bitstream, BitstreamHeader, BITSTREAM_MAGIC, BITSTREAM_VERSION,
    HEADER_LEN,
};
pub use model_file::{
    load_model, load_model_file, save_model, save_model_file, ModelFileConfig, TrainedModel,
    DIGEST_LEN, MODEL_MAGIC, MODEL_VERSION,
};
