//! Time-embedded Gaussian splatting with confidence-gated depth-prior
//! distillation and keyframe-constrained streaming training.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments, clippy::type_complexity)]

pub mod error;
pub mod field;
pub mod gradcheck;
pub mod image;
pub mod io;
pub mod losses;
pub mod math;
pub mod metrics;
pub mod objective;
pub mod optim;
pub mod raster;
pub mod scalar;
pub mod stream;
pub mod synth;

pub use error::{Error, Result};
pub use field::{GaussianField, GaussianPrimitive};
pub use image::Image;
pub use raster::{Camera, RenderOutput};
