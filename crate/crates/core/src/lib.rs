//! Rendering engine for articulated, skinned signed distance fields.
//!
//! World-space distances are answered by a hierarchical query: a coarse
//! signed K-nearest-neighbour distance over a posed template point cloud,
//! refined near the surface by inverse-skinning the query point into the
//! canonical frame and evaluating the canonical SDF there. On top of that
//! field the crate provides sphere-traced intersection, distance-field soft
//! shadows, discrete environment lighting with a GGX microfacet BRDF and a
//! least-squares light-probe estimator.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod camera;
pub mod error;
pub mod fixtures;
pub mod hdq;
pub mod imageio;
pub mod knn;
pub mod math;
pub mod probefit;
pub mod puppet;
pub mod render;
pub mod rig;
pub mod scene;
pub mod shade;
pub mod stats;
pub mod trace;

pub use error::{Error, Result};
pub use math::{Point3, Vec3};
