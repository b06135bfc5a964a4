//! Link-level simulation and optimization of learned multicarrier waveforms.
//!
//! A transmit block is `Q x`: an `N x N` complex waveform matrix applied to a
//! vector of QAM symbols, extended with a cyclic prefix. The receiver applies
//! `Q^H` and a one-tap detector `q`. [`optimizer`] fits `Q`, `q` and a PAPR
//! threshold to a single channel realization by gradient descent on a joint
//! detection/PAPR objective; [`transceiver`] also provides OFDM and SC/FDE
//! baselines, and [`metrics`] measures PAPR CCDFs and bit error rates.

// `!(x > 0.0)` style checks are meant to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod cli;
pub mod error;
pub mod metrics;
pub mod modem;
pub mod numerics;
pub mod optimizer;
pub mod rng;
pub mod transceiver;

pub use error::{Error, Result};
