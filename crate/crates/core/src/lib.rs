//! Hydrogen sorption modelling for clays, shales and coals.
//!
//! The crate covers classical isotherm fitting by differential evolution,
//! Van't Hoff and isosteric thermodynamics, physics-informed feature
//! engineering, a physics-constrained neural regressor trained with a
//! three-phase curriculum, ensemble uncertainty with temperature scaling, and
//! an evaluation battery. A seeded synthetic population generator provides
//! ground truth for every stage.

// NaN-rejecting `!(x > 0.0)` checks and multi-array index loops are intended.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::type_complexity)]

pub mod acceptance;
pub mod baselines;
pub mod cli;
pub mod data;
pub mod eval;
pub mod features;
pub mod fit;
pub mod isotherm;
pub mod pinn;
pub mod seed;
pub mod stats;
pub mod synth;
pub mod thermo;
pub mod uq;

mod precise;

/// Molar gas constant, J/(mol·K).
pub const GAS_CONSTANT: f64 = 8.314462618;
