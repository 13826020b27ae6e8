//! Physics-embedded neural network (PENN) for continuous joint-angle
//! estimation from surface EMG.
//!
//! The crate is organized bottom-up:
//!
//! - [`diffnet`]: reverse-mode differentiation, network layers, Adam.
//! - [`msk`]: Hill-type muscle model and hinge-joint dynamics.
//! - [`sim`]: explicit integration and synthetic trial generation.
//! - [`signal`]: Butterworth filtering, EMG envelope extraction, windowing.
//! - [`penn`]: the hybrid estimator, its losses, and two-phase training.
//! - [`eval`]: RMSE, R², and paired significance tests.
//! - [`config`] and [`io`]: run configuration and file formats.
//! - [`pipeline`]: the file-to-file commands behind the `penn` binary.

pub mod config;
pub mod diffnet;
pub mod eval;
pub mod io;
pub mod msk;
pub mod penn;
pub mod pipeline;
pub mod signal;
pub mod sim;
