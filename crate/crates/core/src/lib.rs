#![cfg_attr(not(feature = "std"), no_std)]
//! Core primitives for mining object recurrences out of detection corpora.
//!
//! Everything here is pure computation over in-memory data: the crate is
//! `no_std` + `alloc` when the default `std` feature is disabled. File
//! formats that are plain byte layouts (feature matrices, index files) are
//! encoded and decoded here; reading them from disk lives in the `forge`
//! crate.
//!
//! # Modules
//!
//! - [`features`] – object records, feature matrices, normalization, cosine.
//! - [`knn`] – exact and partitioned top-k cosine retrieval.
//! - [`graph`] – similarity-band filtering, the sparse neighbor graph and
//!   recurrence statistics.
//! - [`analysis`] – precision curves, similarity histograms, subsample
//!   scaling and per-class breakdowns.
//! - [`dataset`] – training-example assembly, grid composition, loss mask,
//!   channel stacking and the training manifest.
//! - [`guidance`] – classifier-free guidance combinators and condition
//!   dropout plans.
//! - [`eval`] – identity scoring, metric agreement and the quadruplet
//!   benchmark.
//! - [`label`] – labeling-session state for threshold calibration.
//! - [`synth`] – seeded synthetic corpora with planted recurrences.
//!
//! # Features
//!
//! - `std` *(default)* – links the standard library.
//! - `rayon` – parallelizes graph construction and partition assignment.
//!   Results are identical with and without it.

extern crate alloc;

pub mod analysis;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod features;
pub mod graph;
pub mod guidance;
pub mod image;
pub mod knn;
pub mod label;
mod par;
pub mod synth;

pub use error::{Error, Result};
pub use features::{BBox, FeatureMatrix, ObjectRecord};
pub use graph::{KnnGraph, RecurrenceStats, SimilarityBand};
pub use knn::{Index, IndexConfig, IndexMode, Neighbor, NeighborList};
