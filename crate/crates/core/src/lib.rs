//! Relational fusion networks for machine learning on road networks.
//!
//! The crate covers the whole pipeline: a small reverse-mode autodiff
//! engine ([`tensor`]), primal and dual road-network graphs ([`graph`]),
//! attribute encoding ([`features`]), the relational fusion model ([`rfn`])
//! and its baselines ([`baselines`]), the training protocol ([`learn`]) and
//! file formats plus a synthetic network generator ([`data`]).

pub mod baselines;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod features;
pub mod graph;
pub mod learn;
pub mod model;
pub mod network;
pub mod params;
pub mod rfn;
pub mod tensor;

pub use error::{Result, RfnError};
