//! Texture analysis toolkit.
//!
//! Structural texture comes from a contourlet decomposition (Laplacian
//! pyramid plus a directional filter bank). Statistical texture comes from
//! quantizing feature self-similarity, counting and clipping the resulting
//! histogram, and re-assigning learned levels, either per sampled region or
//! as horizontal co-occurrence over a whole map. Distillation losses compare
//! teacher and student versions of those features.

pub mod cdm;
pub mod ctiem;
pub mod dfb;
pub mod error;
pub mod linalg;
pub mod losses;
pub mod nn;
pub mod pyramid;
pub mod sampler;
pub mod selftest;
pub mod tensor;
pub mod tiem;
pub mod weights;

pub use error::{Error, Result};
pub use tensor::{load_image, read_tensor, write_tensor, FeatureMap};
pub use weights::{default_weights, load_weights, write_weights, DefaultDims, WeightSet};
