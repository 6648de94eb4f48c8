//! Differentiable stacks.

pub mod kernel;
pub mod pda;
pub mod rns;
pub mod superposition;

pub use kernel::{StackHandle, StackKernel};
pub use pda::{PdaSignature, Transition, TransitionWeights};
pub use rns::{RnsDp, ZetaInit};
