//! Convolutional entropy model over code cuboids.
//!
//! Symbols are arranged in a channel x height x width cuboid and coded in a
//! fixed order.  Trimmed convolutions zero out every kernel tap that would
//! touch a not-yet-decoded position, so a single forward pass yields, for
//! every position at once, the PMF of its symbol conditioned on the symbols
//! that precede it.  Two orders are supported: raster (row by row, channel by
//! channel) and inclined (wavefronts of constant channel+row+column), the
//! latter admitting plane-parallel decoding.

mod code;
mod mask;
mod model;
mod order;

pub use code::CodeCuboid;
pub use mask::{LayerKind, OrderKind, TrimMask};
pub use model::{
    entropy_objective, remap_codes, restore_codes, train_entropy_model,
    train_entropy_model_with_schedule, trimmed_conv_forward, EntropyTrainReport, PmfCuboid,
    TcaeConfig, TcaeModel, DEFAULT_ENTROPY_LR_LADDER, DEFAULT_ENTROPY_PATIENCE, PMF_FLOOR,
};
pub use order::{inclined_planes, raster_order};
