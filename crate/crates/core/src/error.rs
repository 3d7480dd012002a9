use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt arena: {0}")]
    CorruptArena(String),
    #[error("arena size {size} is smaller than the {needed}-byte header")]
    ArenaTooSmall { size: u64, needed: u64 },
    #[error("out of persistent memory allocating {0} bytes")]
    OutOfMemory(u64),
    #[error("allocation table full")]
    AllocTableFull,
    #[error("invalid free of offset {0:#x}")]
    InvalidFree(u64),
    #[error("wild write of {len} bytes at {offset:#x}")]
    WildWrite { offset: u64, len: u64 },
    #[error("root {0:?} not found")]
    RootNotFound(String),
    #[error("root directory full")]
    DirectoryFull,
    #[error("root name {0:?} longer than 32 bytes")]
    NameTooLong(String),
    #[error("crash choice does not cover uncertain line {0}")]
    IncompleteChoice(u64),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("fit error: {0}")]
    Fit(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("index {index} out of bounds for length {len}")]
    OutOfBounds { index: u64, len: u64 },
    #[error("{0} is empty")]
    Empty(&'static str),
    #[error("wrong datastructure type: expected {expected}, found {found}")]
    TypeMismatch {
        expected: &'static str,
        found: String,
    },
    #[error("misuse: {0}")]
    Misuse(String),
    #[error("undo log capacity of {0} entries exceeded")]
    LogCapacity(usize),
    #[error("reference count accounting bug at {0:#x}")]
    Accounting(u64),
    #[error("corruption detected: {0}")]
    Corruption(String),
}
