//! Trace invariants and crash-injection fuzzing.
//!
//! [`check_trace`] verifies the two ordering rules every functional update
//! must obey: outside a commit, stores only touch memory allocated since
//! the section began; and every stored line is flushed before the next
//! fence. [`fuzz::crash_fuzz`] replays a scripted workload and, at every
//! event, recovers the images a power failure could leave and compares the
//! structures with an in-memory oracle.

pub mod fuzz;
pub mod script;
mod trace_check;

pub use fuzz::{crash_fuzz, FuzzConfig, FuzzReport, Sampling};
pub use script::{Model, Script, ScriptOp, Snapshot, Workload};
pub use trace_check::{check_trace, TraceChecker, Violation, ViolationKind};
