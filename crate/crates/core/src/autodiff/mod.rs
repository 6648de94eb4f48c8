//! Dense arrays, a reverse-mode tape, semirings and gradient checking.

mod array;
pub mod gradcheck;
pub mod semiring;
mod tape;

pub use array::Array;
pub use gradcheck::{finite_diff_check, GradCheckConfig, GradCheckReport};
pub use semiring::{Count, FloatSemiring, Log, Real, Semiring, SemiringMode};
pub use tape::{CustomOp, Gradients, NodeGrads, Op, ParamId, ParamStore, Tape, Var};
