//! Certification of asymptotic stability for interconnected polynomial
//! dynamical systems via vector Lyapunov functions and sum-of-squares
//! programming, with a power-systems front end.
//!
//! The crate is organized bottom-up:
//!
//! * [`poly`] — sparse multivariate polynomial arithmetic,
//! * [`sdp`] — a dense-block primal-dual interior-point semidefinite solver,
//! * [`sos`] — compilation of sum-of-squares programs onto [`sdp`],
//! * [`model`] — polynomial differential-algebraic systems and their
//!   decomposition into overlapping subsystems,
//! * [`power`] — structure-preserving grid models, equilibrium solving and
//!   polynomial recasting,
//! * [`roa`] — region-of-attraction estimation per subsystem,
//! * [`certify`] — the iterative level-set certification algorithm,
//! * [`control`] — synthesis of minimal local stabilizing controls,
//! * [`sim`] — time-domain validation of certificates.

pub mod certify;
pub mod control;
pub mod model;
pub mod poly;
pub mod power;
pub mod roa;
pub mod sdp;
pub mod sim;
pub mod sos;

pub use poly::{Monomial, PolyError, Polynomial, VarId, VarSpace};
pub use sdp::{SdpProblem, SdpSolution, SdpStatus, SolverOptions};
pub use sos::{SosProgram, SosResult};
