//! Levenberg-Marquardt training of sigmoid MLPs on the E_ExpAbs error
//! measure, |τ| exp(Σe²/|τ|), with τ trained alongside the weights.
//!
//! Small τ behaves like cross-entropy, large τ like MSE. In dynamic mode τ
//! gets its own row in the extended Jacobian and is accelerated with
//! momentum and SuperSAB.

// `!(x > 0.0)` style checks are there to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod data;
pub mod error;
pub mod jacobian;
pub mod measures;
pub mod network;
pub mod trainer;

pub use error::{Error, Result};
pub use measures::Tau;
pub use network::{init_network, Network, NetworkSpec};
pub use trainer::{train, TrainerConfig};
