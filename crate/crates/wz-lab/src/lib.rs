//! Numerical laboratory for smooth approximation of stochastic differential
//! equations: dyadic polygonal drivers, coupled mixed/limit integrators,
//! Monte Carlo support and convergence experiments, and Lyapunov condition
//! audits for the models under study.

pub mod builtins;
pub mod cli;
pub mod experiments;
pub mod expr;
pub mod fd;
pub mod integrate;
pub mod lyapunov;
pub mod models;
pub mod paths;
pub mod report;
pub mod rng;

pub use models::{AdmissibleRegion, CoefficientSystem, SdeModel, WzVariant};
pub use paths::{CameronMartinPath, DyadicWienerPath, PolygonalPath};
pub use rng::CounterRng;
