//! Benchmark toolkit for data-driven discovery of differential equations.
//!
//! The crate simulates reference ODE and PDE systems, corrupts them with
//! calibrated noise, builds candidate term libraries, runs sparse regression
//! discovery methods and scores the recovered equations.

pub mod expr;
pub mod noise;
pub mod systems;
pub mod tensorgrid;
pub mod featlib;
pub mod discover;
pub mod evalx;
pub mod bench;
