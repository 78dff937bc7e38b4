//! Geometric optimisation on the cone of symmetric positive definite matrices.
//!
//! * [`spd`]: SPD/symmetric matrix types and spectral matrix functions.
//! * [`manifold`]: the affine-invariant Riemannian structure and the Thompson metric.
//! * [`optim`]: steepest descent, conjugate gradient and limited-memory Riemannian BFGS.
//! * [`fixed_point`]: Picard iteration in the Thompson metric, with trace scaling.
//! * [`ecd`]: maximum-likelihood scatter estimation for elliptically contoured laws.
//! * [`oracles`]: randomized checks of matrix inequalities and contraction bounds.

pub mod ecd;
pub mod error;
pub mod fixed_point;
pub mod io;
pub mod manifold;
pub mod oracles;
pub mod optim;
pub mod random;
pub mod spd;

pub use error::{Error, Result};
pub use manifold::ManifoldPoint;
pub use spd::{SpdMatrix, SymMatrix};
