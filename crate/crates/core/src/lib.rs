//! Stationary solutions of the Vlasov-Poisson system around a fixed
//! background charge `mu`, built from the ansatz `f = F(|v|^2/2 + Q(x))`.
//!
//! The pipeline: a boundary profile `F0` is extended to negative energies
//! ([`profile`]), integrated over velocity into the density transform `g`
//! ([`gtransform`]), and the screened semilinear problem
//! `(sigma - Delta) Q = B[Q] + mu` is solved by splitting `Q = S + R` with
//! `S = Phi_sigma * mu` ([`sources`]) and a capped Picard iteration for `R`
//! ([`solver`]). [`reconstruct`] turns `Q` back into a phase-space density
//! and [`nonuniqueness`] compares the states obtained from two extensions.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fft;
pub mod field;
pub mod gtransform;
pub mod interp;
pub mod nonuniqueness;
pub mod profile;
pub mod quad;
pub mod reconstruct;
pub mod solver;
pub mod sources;

pub use error::{Error, Result};
pub use field::{Grid, RadialField, ScalarField};
pub use gtransform::{build_gtransform, verify_conditions, GTransform};
pub use profile::{extend, make_maxwellian, BoundaryProfile, ExtensionProfile};
pub use sources::ChargeMeasure;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
