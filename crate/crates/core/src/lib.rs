//! RGB-polarization vision toolkit.
//!
//! * [`polar`]: Stokes parameters, AoLP/DoLP and their inverse.
//! * [`mosaic`]: division-of-focal-plane superpixel extraction.
//! * [`tensor`]: a small differentiable tensor kernel with verified gradients.
//! * [`pcdnet`]: polarization integration, material perception and
//!   cross-domain fusion modules, a toy twin encoder and an anchor head.
//! * [`eval`]: COCO-style single-class AP / AP50 / AP75.
//! * [`dataset`]: tensor files, triplet loading, annotation JSON and a
//!   seeded synthetic scene generator.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod dataset;
pub mod error;
pub mod eval;
pub mod mosaic;
pub mod pcdnet;
pub mod polar;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
