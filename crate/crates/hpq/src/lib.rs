//! Spacelike submanifolds of the pseudo-hyperbolic space `H^{p,q}`.
//!
//! The ambient space is `R^{p,q+1}` with the quadratic form of signature
//! `(p, q+1)`; `H^{p,q}` is the quadric `Q(x) = -1`. Vectors are plain
//! coordinate columns in the diagonal basis unless a function says otherwise.

pub mod bochner;
pub mod cli;
pub mod curvature;
pub mod immersion;
pub mod jet;
pub mod plateau;
pub mod products;
pub mod pseudo_linalg;
pub mod spaceform;
