//! Broken and gliding null bicharacteristics on Lorentzian manifolds with
//! timelike, strictly null-convex boundary, the lens relations they induce,
//! the principal-symbol content of the restricted Dirichlet-to-Neumann map,
//! and boundary reconstruction from blinded measurements.

pub mod dnsynth;
pub mod field;
pub mod flow;
pub mod geometry;
pub mod lens;
pub mod ode;
pub mod recon;
pub mod scenarios;
