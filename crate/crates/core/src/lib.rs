//! Link-level Monte Carlo simulation of uplink combining in user-centric
//! cell-free massive MIMO networks.
//!
//! The crate is organized bottom-up:
//!
//! - [`scenario`]: random deployments with wrap-around, path loss, Rician
//!   factors, pilot assignment, user-centric clustering and power control.
//! - [`channel`]: LoS steering vectors, Gaussian local scattering
//!   covariances and per-block channel realizations.
//! - [`estimation`]: pilot transmission and phase-aware MMSE estimation.
//! - [`beamforming`]: centralized MMSE, local MMSE with large-scale fading
//!   decoding (LSFD), and local team MMSE (LTMMSE) combining.
//! - [`evaluation`]: use-and-then-forget (UatF) and coherent-decoding
//!   spectral efficiency bounds evaluated by Monte Carlo.
//! - [`experiment`]: JSON-configured sweeps that write CSV results.
//!
//! Random streams are derived from a single 64-bit seed by purpose, setup and
//! draw index (see [`rng`]), so every result is reproducible regardless of
//! how many worker threads are used.

pub mod beamforming;
pub mod channel;
pub mod error;
pub mod estimation;
pub mod evaluation;
pub mod experiment;
pub mod linalg;
pub mod quadrature;
pub mod rng;
pub mod scenario;
pub mod setup;

pub use beamforming::{BeamformerSet, Combiner, PiSet, Scheme};
pub use channel::{ChannelDraw, ChannelStats};
pub use error::{Error, Result};
pub use estimation::{EstimateSet, Estimator};
pub use evaluation::{Budgets, SeReport};
pub use experiment::{ExperimentConfig, ExperimentKind, ResultRow};
pub use linalg::{CMatrix, CVector, C64};
pub use scenario::{AreaConfig, Deployment, ServicePlan};
pub use setup::Setup;
