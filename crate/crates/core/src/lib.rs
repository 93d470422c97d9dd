//! Multistep-penalty training of neural ODEs and controllers on chaotic
//! systems, with invariant-statistics metrics and a least-squares-shadowing
//! gradient oracle.

pub mod autodiff;
pub mod lss;
pub mod metrics;
pub mod models;
pub mod mp;
pub mod ode;
pub mod systems;

mod spectral;
