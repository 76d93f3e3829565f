//! Stochastic point vortices, the stochastic 2D Navier-Stokes vorticity
//! equation with transport noise, and the tools to compare them.

pub mod error;
pub mod harness;
pub mod kernels;
pub mod mckean_vlasov;
pub mod metrics;
pub mod noise;
pub mod particles;
pub mod spde;
pub mod spectral;
pub mod torus;

mod binio;

pub use error::{Error, Result};
pub use torus::{TorusPoint, TWO_PI};
