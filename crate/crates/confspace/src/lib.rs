//! Harmonic analysis on finite configuration spaces and the Markov dynamics of
//! continuum particle systems built on top of it.

pub mod configuration;
pub mod error;
pub mod families;
pub mod functionals;
pub mod generators;
pub mod harmonic;
pub mod hierarchy;
pub mod kernels;
pub mod lp;
pub mod models;
pub mod numeric;
pub mod rng;
pub mod simulator;

pub use configuration::{
    coherent_state, partitions, relative_energy, relative_energy_in, subconfigs, Boundary, ExtReal, FiniteConfig,
    PairPotential, Point, PointFn, Window,
};
pub use error::{Error, Result};
pub use harmonic::{k_inverse, k_transform, star_at, star_convolution, star_with_coherent, ConfigFn, Structure};
pub use kernels::Kernel;
pub use lp::{EstimateWithError, IntegrationMode, LPIntegrator, SectorEstimate};
