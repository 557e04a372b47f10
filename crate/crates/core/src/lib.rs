//! Numerical companion for isothermal compressible flow with a
//! shear-dependent viscosity `S = P(|Du|)Du`: Young and Orlicz machinery,
//! constitutive certificates, a finite-volume solver, manufactured
//! solutions and relative-energy (weak-strong) certification.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod constitutive;
pub mod error;
pub mod grid;
pub mod mms;
pub mod quadrature;
pub mod rel_energy;
pub mod report;
pub mod solver;
pub mod tensor;
pub mod young;

pub use constitutive::{LawKind, PairSampling, ViscosityLaw};
pub use error::{Error, Result};
pub use grid::{Boundary, Grid, ScalarField, StrainMode, TensorField, VectorField};
pub use mms::TravelingWave;
pub use rel_energy::{GronwallFit, GronwallMode, LinearTolerance, ReferencePair};
pub use report::{CertificateEntry, CertificateReport, Constant, Provenance};
pub use solver::{FlowState, Forcing, SimConfig, Trajectory};
pub use tensor::Tensor3;
pub use young::YoungFunction;
