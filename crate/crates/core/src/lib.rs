//! Distributed maximum-likelihood approximate nearest neighbor search.
//!
//! The crate is organized along the recognition pipeline:
//!
//! - [`feature`]: image loading and HOG feature extraction.
//! - [`distance`]: chi-square distance, the precomputed reference distance
//!   matrix, and the per-query instrumented distance cache.
//! - [`cluster`]: k-means partitioning of the reference set with medoids.
//! - [`search`]: brute force, ML-ANN and the cluster-weighted D-ML-ANN engine.
//! - [`bench`]: measurement harness (accuracy, distance computations, time).
//! - [`synth`]: seeded synthetic histogram datasets.
//! - [`formats`]: on-disk artifacts (feature files, matrix, cluster models).

pub mod bench;
pub mod cluster;
pub mod distance;
mod error;
pub mod feature;
pub mod formats;
pub mod search;
pub mod synth;

pub use cluster::{kmeans, ClusterModel};
pub use distance::{chi_square, DistanceCounter, DistanceMatrix, QueryDistances, ReferenceSet};
pub use error::{Error, Result};
pub use feature::{
    extract_directory, extract_hog, load_image, FeatureVector, Geometry, GrayImage, HogParams, LabeledVector,
};
pub use search::{search_bruteforce, search_dmlann, search_mlann, BudgetUnit, QueryTrace, SearchParams, Termination};
