//! Minimal f64 tensor engine.
//!
//! The networks in this crate use a small fixed layer vocabulary
//! (convolution with optional stride, sigmoid, elementwise add and multiply,
//! depth-to-space) so there is no general autograd.  Each operation comes as
//! a forward function and a hand-written backward function; networks chain
//! them explicitly and cache whatever the backward pass needs.
//!
//! All arithmetic is f64.  Serialization narrows to f32 at the container
//! boundary, never here.

mod adam;
mod conv;
mod cuboid;
mod ops;
mod schedule;

pub use adam::{adam_step, AdamState};
pub use conv::{conv2d_backward, conv2d_forward, conv2d_forward_par, ConvGrads, ConvLayerParams};
pub use cuboid::FeatureCuboid;
pub use schedule::PlateauSchedule;
pub use ops::{
    add, add_assign, depth_to_space, mul, scale, sigmoid_backward, sigmoid_forward,
    space_to_depth,
};
