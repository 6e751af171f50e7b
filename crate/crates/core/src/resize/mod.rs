//! Arbitrary-factor resizing: size planning, bilinear interpolation and the
//! learnable resize block.

pub mod block;
pub mod interp;
pub mod plan;

pub use block::{learnable_resize_block, ResizeBlock};
pub use interp::{interp_resize, resize_tensor};
pub use plan::{compute_decode_plan, compute_resize_plan, fixed_factor_plan, layer_factor, Direction, ResizePlan};
