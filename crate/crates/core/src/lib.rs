//! Kernels for studying latency attacks on object-detection post-processing.
//!
//! The crate is `no_std` (it needs `alloc`). Everything that touches a wall
//! clock goes through the [`Clock`](nms::Clock) trait so the same kernels run
//! on bare metal or under the std harness in `overload-lab`.
//!
//! Module map:
//!
//! - [`geometry`]: boxes, IoU-family metrics, anchor-grid decode.
//! - [`nms`]: matrix and greedy NMS kernels with timeout and candidate cap.
//! - [`costmodel`]: synthetic workloads, benchmark harness, piecewise-quadratic fit.
//! - [`detector`]: a fixed three-layer conv detector with exact input gradients.
//! - [`attack`]: confidence-maximizing PGD with spatial attention, plus ensembles.
//! - [`pipeline_sim`]: single-server FIFO request simulator.
//! - [`metrics`]: recall, percentile reports, object counts.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod attack;
pub mod costmodel;
pub mod detector;
mod error;
pub mod geometry;
pub mod metrics;
pub mod nms;
pub mod pipeline_sim;
pub mod rng;

pub use error::{Error, Result};
