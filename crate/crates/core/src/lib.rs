//! Data-free model merging and semantics-preserving latent transforms built
//! on vocabulary-defined semantic bases.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the bottom of this file fix the common instantiations.

pub mod alignment;
pub mod archive;
pub mod bundle;
pub mod decomposition;
pub mod error;
pub mod linalg;
pub mod merge;
pub mod scalar;
pub mod semantic;
pub mod tensor;
pub mod transform;

pub use archive::{read_archive, write_archive, TensorArchive};
pub use bundle::{load_lm_head, load_model_bundle, BundleSchema, HeadOrientation, LayerGroup, ModelBundle};
pub use error::{Error, Result};
pub use linalg::{pseudoinverse, PseudoinverseConfig};
pub use scalar::Scalar;
pub use semantic::{nearest_basis, semantic_bases, semantic_probabilities, SemanticBasisSet};
pub use tensor::Tensor;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type ModelBundle32 = ModelBundle<f32>;
pub type ModelBundle64 = ModelBundle<f64>;
pub type SemanticBasisSet32 = SemanticBasisSet<f32>;
pub type SemanticBasisSet64 = SemanticBasisSet<f64>;
pub type TransformPlan32 = transform::TransformPlan<f32>;
pub type TransformPlan64 = transform::TransformPlan<f64>;
pub type FusionVector32 = merge::FusionVector<f32>;
pub type FusionVector64 = merge::FusionVector<f64>;
pub type DistributionMatrix32 = alignment::DistributionMatrix<f32>;
pub type DistributionMatrix64 = alignment::DistributionMatrix<f64>;
