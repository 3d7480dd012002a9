//! Self-describing node encoding shared by every structure.
//!
//! Each node starts with one header word:
//!
//! ```text
//! bits 0..8    kind tag
//! bits 8..16   small per-kind field (level, slot count, structure type)
//! bits 16..24  flags
//! bits 24..64  40-bit per-kind count
//! ```
//!
//! The tag lets recovery and reclamation enumerate a node's outgoing
//! references without knowing which structure it belongs to.

use crate::arena::{Arena, ArenaOffset, Fault};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum NodeKind {
    DsRoot = 1,
    Champ = 2,
    Collision = 3,
    VecLeaf = 4,
    VecInternal = 5,
    List = 6,
    Parent = 7,
    Blob = 8,
}

impl NodeKind {
    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            1 => NodeKind::DsRoot,
            2 => NodeKind::Champ,
            3 => NodeKind::Collision,
            4 => NodeKind::VecLeaf,
            5 => NodeKind::VecInternal,
            6 => NodeKind::List,
            7 => NodeKind::Parent,
            8 => NodeKind::Blob,
            _ => return None,
        })
    }
}

/// Champ/collision flag: entry values are blob references.
pub const FLAG_BLOB_VALUES: u8 = 1;

pub const DSROOT_BYTES: usize = 40;
pub const LIST_NODE_BYTES: usize = 24;
pub const PARENT_SLOT_BYTES: usize = 40;
pub const SLOT_NAME_LEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub kind: NodeKind,
    pub small: u8,
    pub flags: u8,
    pub count: u64,
}

impl Header {
    pub fn new(kind: NodeKind, small: u8, flags: u8, count: u64) -> Self {
        debug_assert!(count < 1 << 40);
        Header {
            kind,
            small,
            flags,
            count,
        }
    }

    pub fn encode(&self) -> u64 {
        self.kind as u64 | (self.small as u64) << 8 | (self.flags as u64) << 16 | self.count << 24
    }

    pub fn decode(word: u64) -> Option<Self> {
        Some(Header {
            kind: NodeKind::from_tag(word as u8)?,
            small: (word >> 8) as u8,
            flags: (word >> 16) as u8,
            count: word >> 24,
        })
    }
}

pub(crate) fn word(bytes: &[u8], index: usize) -> u64 {
    u64::from_le_bytes(bytes[index * 8..index * 8 + 8].try_into().expect("word"))
}

/// Little-endian word buffer used to assemble a node before it is written.
#[derive(Debug, Default)]
pub(crate) struct NodeBuf(Vec<u8>);

impl NodeBuf {
    pub fn with_header(h: Header) -> Self {
        let mut b = NodeBuf(Vec::with_capacity(64));
        b.push(h.encode());
        b
    }

    pub fn push(&mut self, w: u64) {
        self.0.extend_from_slice(&w.to_le_bytes());
    }

    pub fn push_bytes(&mut self, bytes: &[u8]) {
        self.0.extend_from_slice(bytes);
        let pad = (8 - self.0.len() % 8) % 8;
        self.0.extend(std::iter::repeat_n(0, pad));
    }

    pub fn bytes(&self) -> &[u8] {
        &self.0
    }
}

fn corrupt(what: impl Into<String>) -> Error {
    Error::Corruption(what.into())
}

/// Size in bytes a node with this header occupies, given its leading words.
fn expected_len(h: &Header, bytes: &[u8]) -> Result<usize> {
    Ok(match h.kind {
        NodeKind::DsRoot => DSROOT_BYTES,
        NodeKind::Champ => {
            if bytes.len() < 16 {
                return Err(corrupt("truncated champ node"));
            }
            let maps = word(bytes, 1);
            let data = (maps as u32).count_ones() as usize;
            let nodes = ((maps >> 32) as u32).count_ones() as usize;
            if maps as u32 & (maps >> 32) as u32 != 0 {
                return Err(corrupt("champ bitmaps overlap"));
            }
            16 + 16 * data + 8 * nodes
        }
        NodeKind::Collision => 8 + 16 * h.count as usize,
        NodeKind::VecLeaf | NodeKind::VecInternal => 8 + 8 * h.small as usize,
        NodeKind::List => LIST_NODE_BYTES,
        NodeKind::Parent => 8 + PARENT_SLOT_BYTES * h.count as usize,
        NodeKind::Blob => 8 + (h.count as usize).div_ceil(8) * 8,
    })
}

/// Outgoing references of a node whose allocation spans exactly `bytes`.
/// Fails on anything that does not parse as a well-formed node.
pub fn children(bytes: &[u8]) -> Result<Vec<u64>> {
    if bytes.len() < 8 {
        return Err(corrupt("node shorter than its header"));
    }
    let h = Header::decode(word(bytes, 0))
        .ok_or_else(|| corrupt(format!("unknown node tag {}", bytes[0])))?;
    let len = expected_len(&h, bytes)?;
    if len != bytes.len() {
        return Err(corrupt(format!(
            "{:?} node needs {len} bytes, allocation has {}",
            h.kind,
            bytes.len()
        )));
    }
    let mut out = Vec::new();
    match h.kind {
        NodeKind::DsRoot => {
            let kind = crate::ds::DsKind::from_tag(h.small)
                .ok_or_else(|| corrupt(format!("unknown structure type {}", h.small)))?;
            let root = word(bytes, 1);
            if root != 0 {
                out.push(root);
            }
            if kind == crate::ds::DsKind::Queue {
                let back = word(bytes, 3);
                if back != 0 {
                    out.push(back);
                }
            }
        }
        NodeKind::Champ => {
            let maps = word(bytes, 1);
            let data = (maps as u32).count_ones() as usize;
            let nodes = ((maps >> 32) as u32).count_ones() as usize;
            if h.flags & FLAG_BLOB_VALUES != 0 {
                out.extend(
                    (0..data)
                        .map(|i| word(bytes, 3 + 2 * i))
                        .filter(|&v| v != 0),
                );
            }
            out.extend((0..nodes).map(|i| word(bytes, 2 + 2 * data + i)));
        }
        NodeKind::Collision => {
            if h.flags & FLAG_BLOB_VALUES != 0 {
                let n = h.count as usize;
                out.extend((0..n).map(|i| word(bytes, 2 + 2 * i)).filter(|&v| v != 0));
            }
        }
        NodeKind::VecLeaf | NodeKind::Blob => {}
        NodeKind::VecInternal => {
            out.extend((0..h.small as usize).map(|i| word(bytes, 1 + i)));
        }
        NodeKind::List => {
            let next = word(bytes, 2);
            if next != 0 {
                out.push(next);
            }
        }
        NodeKind::Parent => {
            let n = h.count as usize;
            out.extend(
                (0..n)
                    .map(|i| word(bytes, 1 + 5 * i + 4))
                    .filter(|&v| v != 0),
            );
        }
    }
    if out.iter().any(|&c| c == 0 || c % 8 != 0) {
        return Err(corrupt("misaligned child reference"));
    }
    Ok(out)
}

pub fn header_at(arena: &Arena, offset: u64) -> Result<Header> {
    Header::decode(arena.read_u64(offset)).ok_or_else(|| corrupt(format!("no node at {offset:#x}")))
}

/// Bytes of the live allocation starting at `offset`.
pub fn node_bytes(arena: &Arena, offset: u64) -> Result<&[u8]> {
    let rec = arena
        .allocation(ArenaOffset::new(offset))
        .ok_or_else(|| corrupt(format!("{offset:#x} is not a live allocation")))?;
    Ok(arena.read(offset, rec.size as usize))
}

pub fn node_children(arena: &Arena, offset: u64) -> Result<Vec<u64>> {
    children(node_bytes(arena, offset)?)
}

/// Allocates, writes and flushes a node, then takes a reference on each of
/// its children except those in `fresh`, whose creator reference moves into
/// the new node. The new node starts with one reference, held by the caller.
pub(crate) fn create_node(arena: &mut Arena, buf: &NodeBuf, fresh: &[u64]) -> Result<u64> {
    let bytes = buf.bytes();
    let off = arena.pm_alloc(bytes.len() as u64)?;
    arena.pm_write(off, bytes)?;
    let len = bytes.len() as u64;
    if arena.fault() == Fault::DropFlush && len > 0 {
        let last_line = (off.get() + len - 1) / crate::arena::CACHELINE;
        let first_line = off.get() / crate::arena::CACHELINE;
        if last_line > first_line {
            arena.flush_range(off, last_line * crate::arena::CACHELINE - off.get());
        }
    } else {
        arena.flush_range(off, len);
    }
    let mut fresh: Vec<u64> = fresh.to_vec();
    for c in children(bytes)? {
        if let Some(pos) = fresh.iter().position(|&f| f == c) {
            fresh.swap_remove(pos);
        } else {
            arena.refs.incref(c);
        }
    }
    arena.refs.set_new(off.get());
    Ok(off.get())
}
