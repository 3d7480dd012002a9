//! Minimally ordered durable datastructures on a simulated persistent-memory
//! arena.
//!
//! Updates are purely functional: new nodes are written and flushed but
//! never fenced, and a failure-atomic section publishes its result with a
//! single fence followed by an atomic 8-byte root store. The arena models
//! caches, flushes and fences precisely enough to enumerate what a power
//! failure could leave behind, and the checker module turns that into a
//! crash-consistency fuzzer.

pub mod arena;
pub mod checker;
pub mod commit;
pub mod ds;
pub mod error;
pub mod flush_model;
pub mod node;
pub mod reclaim;

pub use arena::{
    Arena, ArenaOffset, ArenaOptions, CrashChoice, Fault, LineState, LineStatus, Persist,
    TraceEvent, TraceKind,
};
pub use commit::{Fase, ParentObject};
pub use ds::{DsKind, DsRoot};
pub use error::{Error, Result};
pub use flush_model::{FlushModelParams, Measurement};
pub use reclaim::{leak_check, recover, RecoveryReport};

/// Flush-model parameters in double precision, as used by the arena.
pub type FlushModelParamsF64 = FlushModelParams<f64>;
/// Flush-model parameters in single precision.
pub type FlushModelParamsF32 = FlushModelParams<f32>;
