//! Policy-aware base pose search for mobile manipulation.
//!
//! Candidate base poses are rendered from a Gaussian-splat scene, scored by how closely the
//! view matches a manipulation policy's demonstration start frames (gated by object
//! visibility and collision), and the score is maximized with GP-UCB Bayesian optimization.
//! The crate also computes spatial and visual feasibility metrics and ships a synthetic
//! evaluation harness.

pub mod bopt;
pub mod descriptor;
pub mod geometry;
pub mod harness;
pub mod imaging;
pub mod metrics;
pub mod occupancy;
pub mod scoring;
pub mod splat;
