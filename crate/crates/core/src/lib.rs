//! Deterministic cooperative-perception pipeline for vehicle/infrastructure
//! LiDAR networks, plus the analytical and simulated cost models that go
//! with it.
//!
//! The crate is `no_std` (it needs `alloc`). Everything that touches files,
//! configuration formats or the command line lives in the `coopsim` crate.
//!
//! Data flows through the modules in this order:
//!
//! 1. [`geometry`]: sensor frame to the shared global frame, then geo-fencing.
//! 2. [`pillars`]: voxelization into pillars and the per-pillar MLP encoder,
//!    one parameter set per node kind.
//! 3. [`fusion`]: pillar scatter, per-stream max fusion, and the cross-stream
//!    concat + convolution.
//! 4. [`backbone`]: multi-scale convolutional trunk.
//! 5. [`head`]: anchor head, box coding, losses and NMS decoding.
//!
//! [`eval`], [`costmodel`], [`netsim`] and [`scenegen`] sit around that
//! pipeline, and [`pipeline`] wires the stages together.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod backbone;
pub mod costmodel;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod geometry;
pub mod head;
pub(crate) mod math;
pub mod netsim;
pub mod nn;
pub mod node;
pub mod pillars;
pub mod pipeline;
pub mod scenegen;

pub use error::{Error, Result};
pub use node::{NodeId, Stream};
