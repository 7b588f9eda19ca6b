//! Dense arrays, a reverse-mode gradient tape, and an independent
//! finite-difference oracle.
//!
//! The tape records every forward operation eagerly and replays the record
//! backwards to accumulate adjoints. It is single-threaded per tape;
//! concurrency happens across tapes on disjoint data.

mod array;
mod fd;
pub mod gate;
mod tape;

pub use array::RealArray;
pub use fd::{finite_difference_grad, grad_rel_err, max_rel_err};
pub use tape::{sabotaged_op, Gradients, NodeId, Tape};
