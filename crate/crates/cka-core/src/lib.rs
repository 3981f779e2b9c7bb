//! Simulation and key-rate evaluation for fully passive conference key
//! agreement over a balanced beam-splitter interference network.
//!
//! The crate is organised around the physical pipeline:
//!
//! * [`network`] — the layered 50:50 beam-splitter network and its
//!   Hadamard-type transfer matrix,
//! * [`source`] — the passive two-laser source: phase slices, output
//!   signals and the Fock-space transition law of the local channel,
//! * [`channel`] — loss, interference and threshold detection: click
//!   probabilities, pairwise error rates and Fock-state yields,
//! * [`phase_error`] — yield correction for the local channels and the
//!   phase-error-rate bound,
//! * [`keyrate`] — per-combination rates, branch cutting and the total
//!   passive rate plus the active-limit baseline,
//! * [`quadrature`] — deterministic adaptive cubature used by all of the
//!   above,
//! * [`mc`] — a Monte Carlo simulation of protocol rounds used as an
//!   independent validation oracle,
//! * [`validation`] — oracle implementations and the pass/fail check
//!   suite exposed by the command-line `validate` subcommand.
//!
//! ```
//! use cka_core::channel::ChannelConfig;
//! use cka_core::keyrate::{total_keyrate, BranchCutParams};
//! use cka_core::network::NetworkTopology;
//! use cka_core::source::SourceConfig;
//!
//! let topology = NetworkTopology::new(1, 2)?; // one splitter layer, two users
//! let source = SourceConfig::new(0.005, 4)?;  // intensity 0.005, four slices
//! let cfg = ChannelConfig::uniform(topology, source, 10.0, 1e-8)?;
//! let report = total_keyrate(&cfg, &BranchCutParams { x: 1, y: 1 }, 3)?;
//! assert!(report.rate_passive > 0.0);
//! assert!(report.rate_active_limit >= report.rate_passive);
//! # Ok::<(), cka_core::Error>(())
//! ```

pub mod channel;
pub mod error;
pub mod keyrate;
pub mod mc;
pub mod network;
pub mod phase_error;
pub mod quadrature;
pub mod source;
pub mod validation;

pub use error::{Error, Result};
