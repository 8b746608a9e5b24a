//! Localization of query photographs inside a Structure-from-Motion point
//! cloud.
//!
//! The crate covers the whole chain: bundler/keyfile ingestion ([`sfm`]),
//! approximate descriptor matching ([`index`]), minimal pose solvers and
//! frame conventions ([`geometry`]), reprojection inlier tests with the
//! image-coverage quality score ([`quality`]), the baseline and
//! co-occurrence/backmatching RANSAC pipelines ([`ransac`]), viewer exports
//! ([`export`]) and the benchmark harness with a synthetic scene generator
//! ([`benchmark`]).

// `!(x > y)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod benchmark;
pub mod cli;
pub mod dataset;
pub mod export;
pub mod geometry;
pub mod index;
pub mod quality;
pub mod ransac;
pub mod sfm;

pub use geometry::Pose;
pub use index::{DescriptorIndex, GoodMatch};
pub use ransac::{PoseEstimate, RansacError};
pub use sfm::{CameraRecord, Descriptor, Feature, ModelPoint, QueryImage, SfmModel};

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;
