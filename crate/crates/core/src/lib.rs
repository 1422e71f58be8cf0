//! Gaussian-state modelling and key-rate evaluation for continuous-variable
//! QKD over passive 1-to-N optical networks.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channels;
pub mod error;
pub mod estimator;
pub mod gaussian;
pub mod keyrate;

pub use error::{Error, Result};

pub use channels::{ChannelParams, DetectorParams, NetworkScenario, NoisePlacement, UserLink};
pub use estimator::{CovarianceEstimate, QuadratureSamples, SampleMetadata};
pub use gaussian::{GaussianSystem, ModeRole, Quadrature, SymplecticMap};
pub use keyrate::{KeyRateReport, ModulationOptimum, OutcomeCovariance, UserRate};
