//! Numerical experiments on scattering for the cubic Klein-Gordon equation
//! `u_tt - Laplacian u + m^2 u + lambda u^3 = 0` on a periodic box.

pub mod asymptotics;
pub mod dynamics;
pub mod error;
pub mod harness;
pub mod holomorphy;
pub mod io;
pub mod phase_space;
pub mod quadrature;
pub mod report;
pub mod scattering;
pub mod spectral;

pub use error::{Error, Result};
pub use phase_space::{Amplitude, CauchyData, MassShellFunction};
pub use report::ExperimentReport;
pub use spectral::{ComplexField, Grid, RealField, Spectrum};
