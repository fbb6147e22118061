//! Multi-scale speaker diarisation back-end.
//!
//! The pipeline turns per-segment speaker embeddings extracted at several
//! time scales (0.5 s / 1.0 s / 1.5 s windows by default) into
//! speaker-labelled turns:
//!
//! 1. [`segmentation`] — speech regions (from framewise SAD probabilities or
//!    given directly) are split into uniform segments per scale, and base
//!    segments are mapped to the closest-midpoint segment of each larger
//!    scale.
//! 2. [`embedding`] — multi-scale embeddings are loaded from disk or
//!    synthesized with known ground truth.
//! 3. [`affinity`] / [`gat`] — an L×L affinity matrix is built either by
//!    weighted cosine fusion across scales or by a small graph attention
//!    network scoring each segment pair.
//! 4. [`enhancement`] — optional iterative refinement of base-scale
//!    embeddings using blended row-stochastic attention maps.
//! 5. [`spectral`] — spectral clustering with eigenvalue-threshold speaker
//!    counting assigns a label to every base segment.
//! 6. [`scoring`] — DER with false-alarm / miss / confusion decomposition
//!    against a reference annotation.
//!
//! All numeric code is generic over the scalar type via [`scalar::Scalar`]
//! (`f32` or `f64`); concrete aliases for the common instantiations live at
//! the crate root.

pub mod affinity;
pub mod embedding;
pub mod enhancement;
pub mod error;
pub mod gat;
pub mod gat_train;
pub mod linalg;
pub mod pipeline;
pub mod rttm;
pub mod scalar;
pub mod scoring;
pub mod segmentation;
pub mod spectral;

mod binio;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Embedding dimensionality used by the on-disk formats and the synthetic
/// generator.
pub const EMBEDDING_DIM: usize = 256;

// Concrete aliases for the two supported scalar instantiations.
pub type AffinityMatrix32 = affinity::AffinityMatrix<f32>;
pub type AffinityMatrix64 = affinity::AffinityMatrix<f64>;
pub type MultiScaleEmbeddingSet32 = embedding::MultiScaleEmbeddingSet<f32>;
pub type MultiScaleEmbeddingSet64 = embedding::MultiScaleEmbeddingSet<f64>;
pub type GatModel32 = gat::GatModel<f32>;
pub type GatModel64 = gat::GatModel<f64>;
