//! Kinetic and multi-fluid simulation of the quasineutrally scaled
//! Vlasov-Poisson system on the torus, Wasserstein distances between
//! phase-space measures, and the explicit stability and support-growth
//! envelopes used to validate them.

pub mod bounds;
pub mod correctors;
pub mod ensemble;
pub mod error;
pub mod field;
pub mod grid;
pub mod multifluid;
pub mod params;
pub mod poisson;
pub mod quadrature;
pub mod sampling;
pub mod snapshot;
pub mod transport;
pub mod vlasov;

pub use ensemble::ParticleEnsemble;
pub use error::{Error, Result};
pub use field::{GriddedField, SpectralField};
pub use grid::{make_grid, TorusGrid};
pub use params::QuasineutralParams;
