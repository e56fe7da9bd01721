//! Patch-based classification of variable-width text-line images with
//! ensembles of conjoined networks (ECN).
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`], [`ops`], [`gradcheck`]: dense tensors, layer kernels with
//!   hand-written backward rules, and a finite-difference oracle.
//! - [`net`]: the patch CNN (`paper` and `mini` profiles) and checkpoints.
//! - [`sampler`]: line-image preprocessing, dense two-scale patch sampling,
//!   ensemble-sample generation, dataset indexes and a synthetic benchmark.
//! - [`train`]: momentum SGD for per-patch training and ECN fine-tuning.
//! - [`inference`]: whole-image aggregation rules and the fc5 linear baseline.
//! - [`eval`]: classification, joint detection/script and end-to-end scoring.

mod binio;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod inference;
pub mod net;
pub mod ops;
pub mod sampler;
pub mod seed;
pub mod tensor;
pub mod train;

/// Engine version recorded in every manifest.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use error::{Error, Result};
pub use net::{ForwardTrace, PatchNet, Phase};
pub use ops::Mode;
pub use tensor::{DType, Precision, Scalar, Tensor};
