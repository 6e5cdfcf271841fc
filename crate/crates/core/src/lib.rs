//! Multitask spatial reasoning at desk scale.
//!
//! The crate is organised bottom-up:
//!
//! * [`autodiff`] is a small tape-based reverse-mode differentiation engine
//!   with the tensor operations the model needs, plus Adam.
//! * [`scenegen`] procedurally builds labelled scenes with analytic depth,
//!   3D coordinates, edge maps and object masks, and serialises datasets.
//! * [`featex`] holds the deterministic feature extractors: Canny edges,
//!   pinhole back-projection, normalisation, masking and pooling.
//! * [`model`] is a small vision-language transformer with depth, 3D and
//!   edge decoders trained with a weighted multitask loss.
//! * [`ensemble`] implements relation-aware, accuracy-weighted voting.
//! * [`harness`] computes metrics, comparison tables and charts and backs
//!   the `spatial-mtl` command-line tool.

pub mod autodiff;
pub mod ensemble;
pub mod featex;
pub mod harness;
pub mod model;
pub mod scenegen;

mod atomic;

pub use atomic::write_atomic;
