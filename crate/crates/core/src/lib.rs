//! Core algorithms for holistic video understanding.
//!
//! Everything in this crate is IO-free and builds without `std` (an
//! allocator is required). The companion `holivid` crate carries file
//! formats, the command-line tool and the experiment drivers.
//!
//! Module map:
//!
//! * [`taxonomy`] label space, six-category partition, tag filters, statistics
//! * [`dataset`] manifests, the synthetic appearance/motion corpus, batching
//! * [`nn`] tensors-in, tensors-out layers with hand-written backward passes
//! * [`model`] the 2D/3D fusion network, its 3D baseline and heads
//! * [`loss`], [`optim`], [`train`] multi-label optimisation
//! * [`metrics`] AP / mAP, top-1, clustering accuracy
//! * [`kmeans`] Lloyd's algorithm with k-means++ seeding
#![no_std]

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod dataset;
pub mod error;
pub mod gemm;
pub mod kmeans;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod taxonomy;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
