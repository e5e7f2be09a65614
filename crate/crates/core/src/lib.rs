//! First passage percolation on the Newman-Watts small world.
//!
//! The crate builds weighted Newman-Watts graphs ([`nwgraph`]), grows
//! shortest-weight trees on them ([`fpp`]), simulates the two-type branching
//! process that approximates those trees ([`cmbp`]), computes the closed-form
//! constants of the limit theory ([`theory`]), solves the moment generating
//! function equations behind the epidemic curve ([`mgf`]) and ties it all
//! together into seeded, reproducible verification campaigns
//! ([`experiments`]).

pub mod cmbp;
pub mod experiments;
pub mod format;
pub mod fpp;
pub mod mgf;
pub mod nwgraph;
pub mod rng;
pub mod stats;
pub mod theory;
