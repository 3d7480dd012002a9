//! Arena-resident purely functional datastructures.
//!
//! Every update allocates fresh nodes, writes and flushes them, and returns
//! a new [`DsRoot`] version; nothing reachable from an existing version is
//! modified and no fence is issued. Lookups only read.

pub mod map;
pub mod queue;
pub mod set;
pub mod stack;
pub mod vector;

use std::fmt;

use crate::arena::{Arena, ArenaOffset};
use crate::error::{Error, Result};
use crate::node::{self, Header, NodeBuf, NodeKind, DSROOT_BYTES};
use crate::reclaim::{decref_recursive, Reclaim};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum DsKind {
    Map = 1,
    Set = 2,
    Vector = 3,
    Stack = 4,
    Queue = 5,
}

impl DsKind {
    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            1 => DsKind::Map,
            2 => DsKind::Set,
            3 => DsKind::Vector,
            4 => DsKind::Stack,
            5 => DsKind::Queue,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            DsKind::Map => "map",
            DsKind::Set => "set",
            DsKind::Vector => "vector",
            DsKind::Stack => "stack",
            DsKind::Queue => "queue",
        }
    }
}

impl fmt::Display for DsKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Top-level record of one version of a structure.
///
/// Layout: header, root reference, element count, two auxiliary words
/// (vector: tree height; queue: back chain and front length).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DsRoot {
    pub offset: ArenaOffset,
    pub kind: DsKind,
    pub flags: u8,
    pub root: u64,
    pub size: u64,
    pub aux0: u64,
    pub aux1: u64,
}

impl DsRoot {
    pub fn load(arena: &Arena, offset: ArenaOffset) -> Result<Self> {
        let h = node::header_at(arena, offset.get())?;
        if h.kind != NodeKind::DsRoot {
            return Err(Error::Corruption(format!(
                "{offset} holds a {:?} node, not a structure root",
                h.kind
            )));
        }
        let kind = DsKind::from_tag(h.small)
            .ok_or_else(|| Error::Corruption(format!("unknown structure type {}", h.small)))?;
        let o = offset.get();
        Ok(DsRoot {
            offset,
            kind,
            flags: h.flags,
            root: arena.read_u64(o + 8),
            size: arena.read_u64(o + 16),
            aux0: arena.read_u64(o + 24),
            aux1: arena.read_u64(o + 32),
        })
    }

    /// Loads and checks the structure type.
    pub fn load_as(arena: &Arena, offset: ArenaOffset, kind: DsKind) -> Result<Self> {
        let d = Self::load(arena, offset)?;
        d.expect(kind)?;
        Ok(d)
    }

    pub fn expect(&self, kind: DsKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::TypeMismatch {
                expected: kind.name(),
                found: self.kind.name().to_string(),
            });
        }
        Ok(())
    }

    pub fn len(&self) -> u64 {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    /// Allocates a new version record. References listed in `fresh` hand
    /// their creator reference to the record; others gain a reference.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn create(
        arena: &mut Arena,
        kind: DsKind,
        flags: u8,
        root: u64,
        size: u64,
        aux0: u64,
        aux1: u64,
        fresh: &[u64],
    ) -> Result<Self> {
        debug_assert_eq!(DSROOT_BYTES, 40);
        let mut b = NodeBuf::with_header(Header::new(NodeKind::DsRoot, kind as u8, flags, 0));
        b.push(root);
        b.push(size);
        b.push(aux0);
        b.push(aux1);
        let off = node::create_node(arena, &b, fresh)?;
        crate::commit::note_version(arena, off);
        Ok(DsRoot {
            offset: ArenaOffset::new(off),
            kind,
            flags,
            root,
            size,
            aux0,
            aux1,
        })
    }

    /// Logical content in canonical order: sorted key/value pairs for maps,
    /// sorted keys for sets, front-to-back elements for sequences.
    pub fn contents(&self, arena: &Arena) -> Result<Vec<u64>> {
        match self.kind {
            DsKind::Map => Ok(map::entries(arena, self)?
                .into_iter()
                .flat_map(|(k, v)| [k, v])
                .collect()),
            DsKind::Set => Ok(map::entries(arena, self)?
                .into_iter()
                .map(|(k, _)| k)
                .collect()),
            DsKind::Vector => vector::to_vec(arena, self),
            DsKind::Stack => stack::to_vec(arena, self),
            DsKind::Queue => queue::to_vec(arena, self),
        }
    }
}

/// Drops fresh references made by an update that failed part way.
pub(crate) fn release_fresh(arena: &mut Arena, fresh: &[u64]) {
    for &f in fresh {
        // Best effort: the original error is what the caller reports.
        let _ = decref_recursive(arena, ArenaOffset::new(f), Reclaim::Immediate);
    }
}

/// Runs `build`; if it fails, the fresh references it was meant to absorb
/// are released before the error propagates.
pub(crate) fn guarded<T>(
    arena: &mut Arena,
    fresh: &[u64],
    build: impl FnOnce(&mut Arena) -> Result<T>,
) -> Result<T> {
    match build(arena) {
        Ok(v) => Ok(v),
        Err(e) => {
            release_fresh(arena, fresh);
            Err(e)
        }
    }
}

/// Releases the caller's reference to a version it no longer needs.
pub fn drop_version(arena: &mut Arena, version: &DsRoot) -> Result<()> {
    crate::commit::forget_version(arena, version.offset.get());
    decref_recursive(arena, version.offset, Reclaim::Deferred)?;
    Ok(())
}
