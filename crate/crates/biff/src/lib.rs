//! Interactive two-agent trajectory prediction with bi-level future fusion.
//!
//! The crate is organized around a small f64 autodiff engine ([`tensor`]),
//! SE(2) frame utilities ([`geom`]), a deterministic synthetic scenario
//! generator with preprocessing ([`scene`]), the polyline scene encoder
//! ([`encoder`]), a grid-based conditional-anchor provider ([`anchors`]),
//! the two fusion decoders ([`hfif`], [`lfbf`]) assembled in [`model`],
//! winner-takes-all training ([`training`]), joint metrics ([`evaluation`])
//! and an operational CLI ([`cli`]).
//!
//! See the `examples/` directory for one runnable example per capability.

pub mod anchors;
pub mod checkpoint;
pub mod checks;
pub mod cli;
pub mod config;
pub mod encoder;
pub mod evaluation;
pub mod geom;
pub mod hfif;
pub mod lfbf;
pub mod model;
pub mod nn;
pub mod scene;
pub mod tensor;
pub mod training;
