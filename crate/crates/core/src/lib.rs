//! Visual product graph engine.
//!
//! Bidirectional visual retrieval between standalone product images and
//! composite scene images:
//!
//! - **reverse path** — given a product, retrieve inspirational scenes that
//!   contain a visually similar object ([`reverse`]);
//! - **forward path** — given a scene, decompose it into objects and retrieve
//!   shoppable products per object ([`forward`]).
//!
//! Both paths are served from a persistent signature-keyed feature store
//! ([`store`]) and HNSW indexes built over object and product embeddings
//! ([`index`]). Dataset-engineering utilities (hard-triplet mining, class
//! rebalancing, class-agnostic NMS) and the offline metric suite live in
//! [`triplets`], [`sampling`], [`nms`] and [`eval`]. Detection and embedding
//! are pluggable; the in-repo implementation is a deterministic synthetic
//! world ([`synth`]) so every pipeline claim can be checked against known
//! ground truth.

pub mod cache;
pub mod config;
pub mod engine;
pub mod error;
pub mod eval;
pub mod forward;
pub mod index;
pub mod jsonl;
pub mod nms;
pub mod reverse;
pub(crate) mod rng;
pub mod sampling;
pub(crate) mod stats;
pub mod store;
pub mod synth;
pub mod triplets;
pub mod types;

pub use error::{Result, VpgError};
pub use types::{
    BinaryEmbedding, BoundingBox, Category, DetectedObject, Domain, Embedding, ImageSignature,
    NearDupSignature, Taxonomy,
};
