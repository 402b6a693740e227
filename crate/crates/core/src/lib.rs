//! Dataset-shift benchmark for predictive uncertainty on 1-D biosignals.
//!
//! The pipeline: generate or ingest labeled signals ([`signal`]), perturb the
//! test split at severity degrees 0–5 ([`shift`]), turn signals into spectral
//! feature vectors ([`features`]), train a small classifier ([`neural`]), wrap
//! it in one of five uncertainty methods ([`uq`]) and score the resulting
//! predictive distributions ([`metrics`]). [`bench`] runs the whole
//! method × shift × degree matrix and writes CSV/SVG reports.
//!
//! Data-parallel loops go through [`par`], which uses rayon when the
//! `parallel` feature is on (the default) and plain iterators otherwise.
//! All randomness is drawn from seeded substreams ([`rng`]), so results do not
//! depend on the thread count.

pub mod bench;
pub mod error;
pub mod features;
pub mod metrics;
pub mod neural;
pub mod par;
pub mod rng;
pub mod shift;
pub mod signal;
pub mod uq;

pub use error::{Error, Result};
