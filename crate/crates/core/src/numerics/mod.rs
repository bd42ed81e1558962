//! Deterministic numeric foundation: seeded RNG, dense matrices, and a
//! reverse-mode differentiation tape.

pub mod check;
pub mod matrix;
pub mod params;
pub mod rng;
pub mod tape;

pub use matrix::{cosine, dot, leaky_relu, matvec, sigmoid, Matrix};
pub use params::{Gradients, ParamId, ParamSet};
pub use rng::Rng;
pub use tape::{NodeId, Src, Tape, PROB_EPS};
