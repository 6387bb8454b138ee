//! MNIST classifiers with a hidden layer of FitzHugh–Nagumo oscillators.
//!
//! - [`fhn`]: the oscillator vector field, fixed points, nullclines and RK4
//!   integration.
//! - [`nn`]: dense layers with manual backpropagation and the baseline
//!   784→100→10 classifier.
//! - [`dataset`]: IDX parsing and balanced subsets.
//! - [`config`]: `key = value` experiment configuration.
//! - [`experiments`]: the end-to-end stages and their CSV artifacts.
//! - [`hybrid`]: embedding FHN units into a trained network, the
//!   temporal-majority readout and surrogate-gradient training.

pub mod config;
pub mod dataset;
pub mod error;
pub mod experiments;
pub mod fhn;
pub mod hybrid;
pub mod nn;

pub use error::{Error, Result};
