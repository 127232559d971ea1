//! Diffusive molecular communication inside a sphere whose inner surface is
//! covered by irreversible receptors.
//!
//! The crate is organized bottom-up:
//!
//! * [`specfun`] — spherical Bessel and associated Legendre functions;
//! * [`eigen`] — roots of the Robin eigenvalue equation and mode norms;
//! * [`cgf`] — the concentration Green's function as a truncated series;
//! * [`channel`] — observation probability at a transparent receiver;
//! * [`ook`] — on-off keying detection, analytic and Monte Carlo BER;
//! * [`pbs`] — an independent particle-based Brownian simulator.
//!
//! Units are SI throughout.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cgf;
pub mod channel;
pub mod csv;
pub mod eigen;
pub mod ook;
pub mod par;
pub mod pbs;
pub mod quad;
pub mod specfun;

pub use cgf::{Concentration, SphericalPoint, TruncationPolicy};
pub use channel::{Channel, ObservationPdf, Propagation, ReceiverSpec};

pub use eigen::{EigenvalueTable, Environment};
pub use par::Execution;
