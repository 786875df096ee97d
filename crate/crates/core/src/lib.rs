//! Simulation library for heavy-tailed boundary-growth processes: the
//! peeling walk and its conditioned variants, first-passage clocks and
//! geodesic-face statistics, discrete and continuous coalescing flows on the
//! torus, cell systems with tree metrics, and a reproducible Monte Carlo
//! harness.

pub mod flow_discrete;
pub mod model;
pub mod peeling;
pub mod perimeter;
pub mod numerics;
pub mod rng;
pub mod stats;
