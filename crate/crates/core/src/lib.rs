//! Astrocyte-augmented spiking neural network laboratory.
//!
//! - [`events`]: DAVIS 240C event parsing, the 42-bit packed event word and
//!   the `.ev42` container, spike rasters, a synthetic quadrant workload.
//! - [`network`]: the three-layer LIF network.
//! - [`astro`]: homeostatic astrocyte units.
//! - [`sim`]: window-by-window driver tying the two together.
//! - [`faults`]: fault injection and fault-deviation campaigns.
//! - [`perf`]: MAC-based throughput and latency accounting.
//! - [`dfx`]: live hyperparameter swaps at window boundaries and the
//!   adaptive tuning loop.
//! - [`train`]: Adam-trained softmax readout with early stopping.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod astro;
pub mod dfx;
pub mod events;
pub mod faults;
pub mod network;
pub mod perf;
pub mod sim;
pub mod train;
pub mod workload;
