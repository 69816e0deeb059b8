//! Attribute-level divergence between a training image set and a generated
//! image set.
//!
//! The pipeline, bottom-up:
//!
//! - [`embedding`]: embedding matrices and their centers.
//! - [`attributes`]: picking target attributes from caption phrase counts.
//! - [`scoring`]: CLIPScore and Heterogeneous CLIPScore (centered cosine)
//!   matrices, plus the top-k classification protocol.
//! - [`density`]: Gaussian KDE with Scott's-rule bandwidth, evaluated on
//!   regular grids.
//! - [`divergence`]: grid KL between fitted densities, aggregated into the
//!   single-attribute (SaD), paired-attribute (PaD) and k-way divergences.
//! - [`synth`]: synthetic score populations and the controlled validation
//!   experiments built on them.
//!
//! The crate is `no_std` (it needs `alloc`). Enable the `parallel` feature to
//! evaluate independent attributes, pairs and grid points on a rayon pool;
//! results are bit-identical to the sequential path.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod attributes;
pub mod density;
pub mod divergence;
pub mod embedding;
pub mod linalg;
mod par;
pub mod scoring;
pub mod stats;
pub mod synth;

pub use attributes::{AttributeError, AttributeSet, CaptionRecord, Selection};
pub use density::{DensityError, DensityModel, Grid};
pub use divergence::{DivergenceConfig, DivergenceError, DivergenceKind, DivergenceReport};
pub use embedding::{Center, EmbeddingError, EmbeddingKind, EmbeddingSet};
pub use scoring::{ClassificationResult, ScoreError, ScoreMatrix, ScoreMode};
pub use synth::{SynthError, SynthSpec};
