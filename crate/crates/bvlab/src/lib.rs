//! Exact-arithmetic laboratory for finite-dimensional Batalin-Vilkovisky
//! formalism.
//!
//! The crate evaluates perturbed Gaussian/Fresnel/Berezin integrals via
//! Feynman graph sums backed by brute-force Wick oracles, checks classical
//! and quantum master equations on graded polynomial algebras, performs
//! diagrammatic homotopy transfer of unimodular dgLa structures, and
//! synthesizes cellular BF building blocks from Whitney/Dupont simplicial
//! calculus. All algebraic computations are exact (big rationals); floats
//! appear only in the numeric quadrature oracles.

pub mod num;
pub mod linalg;
pub mod graded;
pub mod feyngraph;
pub mod wick;
pub mod asymptotics;
pub mod homotopy;
pub mod cellular;
pub mod io;

pub use crate::num::Rat;
