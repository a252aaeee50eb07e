//! Numerical analysis of singularly perturbed fast-slow systems
//!
//! ```text
//! dx/dt = f(x, y),    eps * dy/dt = A y + h(x)
//! ```
//!
//! with `A` Hurwitz. The crate parses system definitions, builds the reduced
//! (`eps = 0`) system and first-order slow-manifold expansions, checks
//! monotonicity structure and runs trajectory-level experiments: equilibrium
//! search, basin census and limit-cycle detection.

pub mod expr;
pub mod model;
pub mod reduction;
pub mod sim;
pub mod monotone;
pub mod analysis;
