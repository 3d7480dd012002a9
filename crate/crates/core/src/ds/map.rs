//! Hash map as a compressed hash-array mapped prefix tree (CHAMP).
//!
//! 32-way nodes indexed by 5-bit slices of a 64-bit key hash. A node keeps
//! two bitmaps: `datamap` marks slots holding an inline entry, `nodemap`
//! slots holding a subtree; the packed entries precede the packed child
//! references. Seven bitmap levels consume 35 hash bits; keys that still
//! collide share a sorted collision node at level 7. Deletion keeps the
//! canonical shape: a subtree left with one entry is pulled up into its
//! parent.
//!
//! Values are either inline words or references to blob nodes holding wider
//! payloads; the choice is fixed per map.

use std::cell::Cell;

use crate::arena::{Arena, ArenaOffset, Fault};
use crate::ds::{guarded, release_fresh, DsKind, DsRoot};
use crate::error::{Error, Result};
use crate::node::{self, word, Header, NodeBuf, NodeKind, FLAG_BLOB_VALUES};

const BITS: u32 = 5;
const MASK: u64 = (1 << BITS) - 1;
/// Level at which hashes are exhausted and nodes become collision lists.
pub const COLLISION_LEVEL: u8 = 7;

/// Fixed avalanche mix (splitmix64 finalizer) so traces are reproducible.
pub fn hash(key: u64) -> u64 {
    let mut z = key ^ 0x9e37_79b9_7f4a_7c15;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fragment(h: u64, level: u8) -> u32 {
    ((h >> (BITS * level as u32)) & MASK) as u32
}

fn index(bitmap: u32, bit: u32) -> usize {
    (bitmap & (bit - 1)).count_ones() as usize
}

#[derive(Debug, Clone)]
struct Champ {
    level: u8,
    flags: u8,
    datamap: u32,
    nodemap: u32,
    entries: Vec<(u64, u64)>,
    children: Vec<u64>,
}

impl Champ {
    fn encode(&self) -> NodeBuf {
        let mut b = NodeBuf::with_header(Header::new(NodeKind::Champ, self.level, self.flags, 0));
        b.push(self.datamap as u64 | (self.nodemap as u64) << 32);
        for &(k, v) in &self.entries {
            b.push(k);
            b.push(v);
        }
        for &c in &self.children {
            b.push(c);
        }
        b
    }

    fn insert_entry(&mut self, bit: u32, kv: (u64, u64)) {
        let i = index(self.datamap, bit);
        self.datamap |= bit;
        self.entries.insert(i, kv);
    }

    fn remove_entry(&mut self, bit: u32) -> (u64, u64) {
        let i = index(self.datamap, bit);
        self.datamap &= !bit;
        self.entries.remove(i)
    }

    fn insert_child(&mut self, bit: u32, child: u64) {
        let i = index(self.nodemap, bit);
        self.nodemap |= bit;
        self.children.insert(i, child);
    }

    fn remove_child(&mut self, bit: u32) {
        let i = index(self.nodemap, bit);
        self.nodemap &= !bit;
        self.children.remove(i);
    }
}

enum Node {
    Champ(Champ),
    Collision { flags: u8, entries: Vec<(u64, u64)> },
}

fn read(arena: &Arena, off: u64) -> Result<Node> {
    let bytes = node::node_bytes(arena, off)?;
    let h = Header::decode(word(bytes, 0))
        .ok_or_else(|| Error::Corruption(format!("no map node at {off:#x}")))?;
    match h.kind {
        NodeKind::Champ => {
            let maps = word(bytes, 1);
            let datamap = maps as u32;
            let nodemap = (maps >> 32) as u32;
            let d = datamap.count_ones() as usize;
            let n = nodemap.count_ones() as usize;
            let entries = (0..d)
                .map(|i| (word(bytes, 2 + 2 * i), word(bytes, 3 + 2 * i)))
                .collect();
            let children = (0..n).map(|i| word(bytes, 2 + 2 * d + i)).collect();
            Ok(Node::Champ(Champ {
                level: h.small,
                flags: h.flags,
                datamap,
                nodemap,
                entries,
                children,
            }))
        }
        NodeKind::Collision => {
            let n = h.count as usize;
            let entries = (0..n)
                .map(|i| (word(bytes, 1 + 2 * i), word(bytes, 2 + 2 * i)))
                .collect();
            Ok(Node::Collision {
                flags: h.flags,
                entries,
            })
        }
        other => Err(Error::Corruption(format!(
            "{off:#x} holds a {other:?} node inside a map"
        ))),
    }
}

fn encode_collision(flags: u8, entries: &[(u64, u64)]) -> NodeBuf {
    let mut b = NodeBuf::with_header(Header::new(
        NodeKind::Collision,
        COLLISION_LEVEL,
        flags,
        entries.len() as u64,
    ));
    for &(k, v) in entries {
        b.push(k);
        b.push(v);
    }
    b
}

/// What the new value means for reference counting: a blob reference
/// handed over by the caller is absorbed by the node that stores it.
struct NewValue<'a> {
    key: u64,
    hash: u64,
    value: u64,
    flags: u8,
    absorbed: &'a Cell<bool>,
}

impl NewValue<'_> {
    fn blob(&self) -> bool {
        self.flags & FLAG_BLOB_VALUES != 0
    }

    /// Creates a node that stores the new value.
    fn create(&self, arena: &mut Arena, buf: &NodeBuf, extra_fresh: &[u64]) -> Result<u64> {
        let mut fresh = extra_fresh.to_vec();
        if self.blob() {
            fresh.push(self.value);
        }
        let off = guarded(arena, extra_fresh, |a| node::create_node(a, buf, &fresh))?;
        self.absorbed.set(true);
        Ok(off)
    }
}

/// Node holding two entries that agree on the hash below `level`.
fn merge(
    arena: &mut Arena,
    level: u8,
    existing: (u64, u64, u64),
    nv: &NewValue<'_>,
) -> Result<u64> {
    let (k1, h1, v1) = existing;
    if level >= COLLISION_LEVEL {
        let mut entries = vec![(k1, v1), (nv.key, nv.value)];
        entries.sort_unstable_by_key(|e| e.0);
        return nv.create(arena, &encode_collision(nv.flags, &entries), &[]);
    }
    let f1 = fragment(h1, level);
    let f2 = fragment(nv.hash, level);
    let mut c = Champ {
        level,
        flags: nv.flags,
        datamap: 0,
        nodemap: 0,
        entries: Vec::new(),
        children: Vec::new(),
    };
    if f1 != f2 {
        c.insert_entry(1 << f1, (k1, v1));
        c.insert_entry(1 << f2, (nv.key, nv.value));
        nv.create(arena, &c.encode(), &[])
    } else {
        let sub = merge(arena, level + 1, existing, nv)?;
        c.insert_child(1 << f1, sub);
        guarded(arena, &[sub], |a| node::create_node(a, &c.encode(), &[sub]))
    }
}

/// Path-copying insert; returns the new subtree and whether a key was added.
fn insert_rec(arena: &mut Arena, off: u64, level: u8, nv: &NewValue<'_>) -> Result<(u64, bool)> {
    match read(arena, off)? {
        Node::Collision { flags, mut entries } => {
            let added = match entries.binary_search_by_key(&nv.key, |e| e.0) {
                Ok(i) => {
                    entries[i].1 = nv.value;
                    false
                }
                Err(i) => {
                    entries.insert(i, (nv.key, nv.value));
                    true
                }
            };
            Ok((
                nv.create(arena, &encode_collision(flags, &entries), &[])?,
                added,
            ))
        }
        Node::Champ(mut c) => {
            let bit = 1u32 << fragment(nv.hash, level);
            if c.datamap & bit != 0 {
                let i = index(c.datamap, bit);
                let (k, v) = c.entries[i];
                if k == nv.key {
                    c.entries[i].1 = nv.value;
                    return Ok((nv.create(arena, &c.encode(), &[])?, false));
                }
                let sub = merge(arena, level + 1, (k, hash(k), v), nv)?;
                c.remove_entry(bit);
                c.insert_child(bit, sub);
                let n = guarded(arena, &[sub], |a| node::create_node(a, &c.encode(), &[sub]))?;
                Ok((n, true))
            } else if c.nodemap & bit != 0 {
                let i = index(c.nodemap, bit);
                let (sub, added) = insert_rec(arena, c.children[i], level + 1, nv)?;
                c.children[i] = sub;
                let n = guarded(arena, &[sub], |a| node::create_node(a, &c.encode(), &[sub]))?;
                Ok((n, added))
            } else {
                c.insert_entry(bit, (nv.key, nv.value));
                Ok((nv.create(arena, &c.encode(), &[])?, true))
            }
        }
    }
}

enum Removed {
    NotFound,
    Empty,
    /// The subtree shrank to one entry, to be inlined by the parent.
    Singleton(u64, u64),
    Node(u64),
}

fn remove_rec(arena: &mut Arena, off: u64, level: u8, key: u64, h: u64) -> Result<Removed> {
    match read(arena, off)? {
        Node::Collision { flags, mut entries } => {
            let Ok(i) = entries.binary_search_by_key(&key, |e| e.0) else {
                return Ok(Removed::NotFound);
            };
            entries.remove(i);
            match entries.len() {
                0 => Ok(Removed::Empty),
                1 => Ok(Removed::Singleton(entries[0].0, entries[0].1)),
                _ => Ok(Removed::Node(node::create_node(
                    arena,
                    &encode_collision(flags, &entries),
                    &[],
                )?)),
            }
        }
        Node::Champ(mut c) => {
            let bit = 1u32 << fragment(h, level);
            if c.datamap & bit != 0 {
                if c.entries[index(c.datamap, bit)].0 != key {
                    return Ok(Removed::NotFound);
                }
                c.remove_entry(bit);
                if c.entries.is_empty() && c.children.is_empty() {
                    return Ok(Removed::Empty);
                }
                if level > 0 && c.entries.len() == 1 && c.children.is_empty() {
                    let (k, v) = c.entries[0];
                    return Ok(Removed::Singleton(k, v));
                }
                Ok(Removed::Node(node::create_node(arena, &c.encode(), &[])?))
            } else if c.nodemap & bit != 0 {
                let i = index(c.nodemap, bit);
                match remove_rec(arena, c.children[i], level + 1, key, h)? {
                    Removed::NotFound => Ok(Removed::NotFound),
                    Removed::Node(sub) => {
                        c.children[i] = sub;
                        let n =
                            guarded(arena, &[sub], |a| node::create_node(a, &c.encode(), &[sub]))?;
                        Ok(Removed::Node(n))
                    }
                    Removed::Singleton(k, v) => {
                        if level > 0 && c.entries.is_empty() && c.children.len() == 1 {
                            return Ok(Removed::Singleton(k, v));
                        }
                        c.remove_child(bit);
                        c.insert_entry(bit, (k, v));
                        Ok(Removed::Node(node::create_node(arena, &c.encode(), &[])?))
                    }
                    Removed::Empty => {
                        c.remove_child(bit);
                        if c.entries.is_empty() && c.children.is_empty() {
                            return Ok(Removed::Empty);
                        }
                        Ok(Removed::Node(node::create_node(arena, &c.encode(), &[])?))
                    }
                }
            } else {
                Ok(Removed::NotFound)
            }
        }
    }
}

fn check_map(m: &DsRoot) -> Result<()> {
    match m.kind {
        DsKind::Map | DsKind::Set => Ok(()),
        other => Err(Error::TypeMismatch {
            expected: "map",
            found: other.name().to_string(),
        }),
    }
}

pub(crate) fn new_kind(arena: &mut Arena, kind: DsKind, flags: u8) -> Result<DsRoot> {
    DsRoot::create(arena, kind, flags, 0, 0, 0, 0, &[])
}

/// Empty map with inline 8-byte values.
pub fn new(arena: &mut Arena) -> Result<DsRoot> {
    new_kind(arena, DsKind::Map, 0)
}

/// Empty map whose values are stored out of line as byte blobs.
pub fn new_with_blob_values(arena: &mut Arena) -> Result<DsRoot> {
    new_kind(arena, DsKind::Map, FLAG_BLOB_VALUES)
}

fn insert_raw(
    arena: &mut Arena,
    m: &DsRoot,
    key: u64,
    value: u64,
    absorbed: &Cell<bool>,
) -> Result<DsRoot> {
    check_map(m)?;
    if arena.fault() == Fault::InPlaceWrite && m.flags & FLAG_BLOB_VALUES == 0 {
        if let Some(at) = value_slot(arena, m, key)? {
            arena.pm_write_u64(ArenaOffset::new(at), value)?;
            arena.pm_flush(ArenaOffset::new(at));
            return DsRoot::create(arena, m.kind, m.flags, m.root, m.size, 0, 0, &[]);
        }
    }
    let nv = NewValue {
        key,
        hash: hash(key),
        value,
        flags: m.flags,
        absorbed,
    };
    let (root, added) = if m.root == 0 {
        let mut c = Champ {
            level: 0,
            flags: m.flags,
            datamap: 0,
            nodemap: 0,
            entries: Vec::new(),
            children: Vec::new(),
        };
        c.insert_entry(1 << fragment(nv.hash, 0), (key, value));
        (nv.create(arena, &c.encode(), &[])?, true)
    } else {
        insert_rec(arena, m.root, 0, &nv)?
    };
    let size = m.size + added as u64;
    guarded(arena, &[root], |a| {
        DsRoot::create(a, m.kind, m.flags, root, size, 0, 0, &[root])
    })
}

/// New version with `key` bound to `value`.
pub fn insert(arena: &mut Arena, m: &DsRoot, key: u64, value: u64) -> Result<DsRoot> {
    if m.flags & FLAG_BLOB_VALUES != 0 {
        return Err(Error::Misuse(
            "map stores blob values; use insert_bytes".into(),
        ));
    }
    insert_raw(arena, m, key, value, &Cell::new(false))
}

/// New version with `key` bound to a copy of `value`, stored out of line.
pub fn insert_bytes(arena: &mut Arena, m: &DsRoot, key: u64, value: &[u8]) -> Result<DsRoot> {
    if m.flags & FLAG_BLOB_VALUES == 0 {
        return Err(Error::Misuse("map stores inline values; use insert".into()));
    }
    let mut b = NodeBuf::with_header(Header::new(NodeKind::Blob, 0, 0, value.len() as u64));
    b.push_bytes(value);
    let blob = node::create_node(arena, &b, &[])?;
    let absorbed = Cell::new(false);
    let r = insert_raw(arena, m, key, blob, &absorbed);
    if r.is_err() && !absorbed.get() {
        release_fresh(arena, &[blob]);
    }
    r
}

/// New version without `key`. Removing an absent key still yields a new
/// version with the same content.
pub fn remove(arena: &mut Arena, m: &DsRoot, key: u64) -> Result<DsRoot> {
    check_map(m)?;
    if m.root == 0 {
        return DsRoot::create(arena, m.kind, m.flags, 0, 0, 0, 0, &[]);
    }
    let (root, size, fresh) = match remove_rec(arena, m.root, 0, key, hash(key))? {
        Removed::NotFound => (m.root, m.size, None),
        Removed::Empty => (0, m.size - 1, None),
        Removed::Node(n) => (n, m.size - 1, Some(n)),
        Removed::Singleton(k, v) => {
            let mut c = Champ {
                level: 0,
                flags: m.flags,
                datamap: 0,
                nodemap: 0,
                entries: Vec::new(),
                children: Vec::new(),
            };
            c.insert_entry(1 << fragment(hash(k), 0), (k, v));
            let n = node::create_node(arena, &c.encode(), &[])?;
            (n, m.size - 1, Some(n))
        }
    };
    let fresh: Vec<u64> = fresh.into_iter().collect();
    guarded(arena, &fresh, |a| {
        DsRoot::create(a, m.kind, m.flags, root, size, 0, 0, &fresh)
    })
}

/// Arena offset of the value word for `key`, if present.
fn value_slot(arena: &Arena, m: &DsRoot, key: u64) -> Result<Option<u64>> {
    let h = hash(key);
    let mut off = m.root;
    let mut level = 0u8;
    while off != 0 {
        let hdr = node::header_at(arena, off)?;
        match hdr.kind {
            NodeKind::Champ => {
                let maps = arena.read_u64(off + 8);
                let datamap = maps as u32;
                let nodemap = (maps >> 32) as u32;
                let bit = 1u32 << fragment(h, level);
                if datamap & bit != 0 {
                    let i = index(datamap, bit) as u64;
                    let at = off + 16 + 16 * i;
                    return Ok((arena.read_u64(at) == key).then_some(at + 8));
                }
                if nodemap & bit == 0 {
                    return Ok(None);
                }
                let d = datamap.count_ones() as u64;
                off = arena.read_u64(off + 16 + 16 * d + 8 * index(nodemap, bit) as u64);
                level += 1;
            }
            NodeKind::Collision => {
                for i in 0..hdr.count {
                    let at = off + 8 + 16 * i;
                    if arena.read_u64(at) == key {
                        return Ok(Some(at + 8));
                    }
                }
                return Ok(None);
            }
            other => {
                return Err(Error::Corruption(format!(
                    "{off:#x} holds a {other:?} node inside a map"
                )))
            }
        }
    }
    Ok(None)
}

/// Raw value word for `key` (a blob reference for blob-valued maps).
pub fn get(arena: &Arena, m: &DsRoot, key: u64) -> Result<Option<u64>> {
    check_map(m)?;
    Ok(value_slot(arena, m, key)?.map(|at| arena.read_u64(at)))
}

pub fn contains_key(arena: &Arena, m: &DsRoot, key: u64) -> Result<bool> {
    Ok(get(arena, m, key)?.is_some())
}

/// Payload of a blob-valued entry.
pub fn get_bytes(arena: &Arena, m: &DsRoot, key: u64) -> Result<Option<Vec<u8>>> {
    if m.flags & FLAG_BLOB_VALUES == 0 {
        return Err(Error::Misuse("map stores inline values".into()));
    }
    match get(arena, m, key)? {
        None => Ok(None),
        Some(blob) => Ok(Some(blob_bytes(arena, blob)?.to_vec())),
    }
}

fn blob_bytes(arena: &Arena, blob: u64) -> Result<&[u8]> {
    let h = node::header_at(arena, blob)?;
    if h.kind != NodeKind::Blob {
        return Err(Error::Corruption(format!("{blob:#x} is not a blob")));
    }
    Ok(arena.read(blob + 8, h.count as usize))
}

/// All entries sorted by key. For blob-valued maps the value is the
/// blob's first little-endian word.
pub fn entries(arena: &Arena, m: &DsRoot) -> Result<Vec<(u64, u64)>> {
    check_map(m)?;
    let mut out = Vec::with_capacity(m.size as usize);
    let mut stack = Vec::new();
    if m.root != 0 {
        stack.push(m.root);
    }
    while let Some(off) = stack.pop() {
        match read(arena, off)? {
            Node::Champ(c) => {
                out.extend(c.entries);
                stack.extend(c.children);
            }
            Node::Collision { entries, .. } => out.extend(entries),
        }
    }
    if m.flags & FLAG_BLOB_VALUES != 0 {
        for e in &mut out {
            let b = blob_bytes(arena, e.1)?;
            let mut w = [0u8; 8];
            let n = b.len().min(8);
            w[..n].copy_from_slice(&b[..n]);
            e.1 = u64::from_le_bytes(w);
        }
    }
    out.sort_unstable_by_key(|e| e.0);
    Ok(out)
}

/// Number of map nodes (excluding the version record and blobs).
pub fn node_count(arena: &Arena, m: &DsRoot) -> Result<usize> {
    let mut n = 0;
    let mut stack = vec![m.root];
    while let Some(off) = stack.pop() {
        if off == 0 {
            continue;
        }
        n += 1;
        if let Node::Champ(c) = read(arena, off)? {
            stack.extend(c.children);
        }
    }
    Ok(n)
}
