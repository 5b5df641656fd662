//! Exact laboratory for nonconventional ergodic averages.
//!
//! Finite measure-preserving `Z^{rd}`-systems are evaluated in exact
//! rational arithmetic: truncated and limiting averages, isotropy factors,
//! Furstenberg and Host–Kra self-joinings, one-step pleasant extensions and
//! pleasantness defects. A floating-point backend handles rotations of tori.

pub mod averages;
pub mod error;
pub mod extension;
pub mod factor;
pub mod joining;
pub mod lattice;
pub mod observable;
pub mod rational;
pub mod system;
pub mod torus;

pub use error::{Error, Result};
pub use observable::Observable;
pub use rational::Q;
pub use system::{FiniteSystem, GroupElement, PeriodBox, Perm};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
