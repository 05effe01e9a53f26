//! Evolutionary meta-learning of gradient-based learners.
//!
//! The crate pairs a small re-differentiable autodiff engine ([`tape`], [`net`])
//! with outer-loop optimizers ([`evolution`]) and an inheritance engine
//! ([`lifetime`]) that scores genomes under Baldwinian, Lamarckian or Darwinian
//! rules. Task families live in [`sine`], [`rl`] and [`needle`]; [`maml`] is the
//! gradient-based meta-learning baseline.

pub mod error;
pub mod evolution;
pub mod lifetime;
pub mod maml;
pub mod needle;
pub mod net;
pub mod rl;
pub mod rng;
pub mod sine;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
