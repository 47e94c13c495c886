//! Content-based retrieval of natural scene images.
//!
//! The crate covers the full pipeline: dataset ingestion and fold planning,
//! global colour/texture descriptors, DoG keypoints with 128-D gradient
//! descriptors, k-means visual vocabularies (universal, per-category
//! integrated, upper/lower-half integrated), bag-of-visual-words and spatial
//! pyramid encodings, local semantic concept annotation with
//! concept-occurrence vectors, exhaustive Euclidean retrieval and MAP-based
//! evaluation.

pub mod bow;
pub mod concepts;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod global_features;
pub mod imaging;
pub mod keypoints;
pub mod pipeline;
pub mod retrieval;
pub mod rng;
pub mod store;
pub mod vocabulary;

pub use error::{Error, Result};
