//! Rate coverage of downlink two-tier multi-antenna HetNets with biased
//! offloading and interference nulling (IN).
//!
//! Two engines compute the same quantity: [`analytics`] evaluates the
//! stochastic-geometry expressions, and [`simulator`] samples Poisson
//! deployments and explicit beamformers. [`optimizer`] searches the IN
//! degrees of freedom, the ABS resource fraction and the bias on top of them.

pub mod analytics;
pub mod association;
pub mod error;
pub mod optimizer;
pub mod quadrature;
pub mod simulator;
pub mod special_math;

pub use error::{Error, Result};
