//! Persistent vector as a strict radix tree.
//!
//! All leaves sit at the same depth and every node has `2^shift` slots; the
//! tree is filled left to right, so index `i` is found by slicing its bits.
//! An update copies the root-to-leaf path and shares everything else.

use crate::arena::{Arena, ArenaOffset, Fault};
use crate::ds::{guarded, DsKind, DsRoot};
use crate::error::{Error, Result};
use crate::node::{self, word, Header, NodeBuf, NodeKind};

/// Slot-count exponent used unless a caller asks otherwise (16-way nodes).
pub const DEFAULT_SHIFT: u8 = 4;

fn check(v: &DsRoot) -> Result<u32> {
    v.expect(DsKind::Vector)?;
    Ok(v.flags as u32)
}

fn leaf(elems: &[u64]) -> NodeBuf {
    let mut b = NodeBuf::with_header(Header::new(
        NodeKind::VecLeaf,
        elems.len() as u8,
        0,
        elems.len() as u64,
    ));
    for &e in elems {
        b.push(e);
    }
    b
}

fn internal(children: &[u64], count: u64) -> NodeBuf {
    let mut b = NodeBuf::with_header(Header::new(
        NodeKind::VecInternal,
        children.len() as u8,
        0,
        count,
    ));
    for &c in children {
        b.push(c);
    }
    b
}

/// Slots of a node: elements of a leaf or children of an internal node.
fn slots(arena: &Arena, off: u64) -> Result<(NodeKind, Vec<u64>)> {
    let bytes = node::node_bytes(arena, off)?;
    let h = Header::decode(word(bytes, 0))
        .ok_or_else(|| Error::Corruption(format!("no vector node at {off:#x}")))?;
    if !matches!(h.kind, NodeKind::VecLeaf | NodeKind::VecInternal) {
        return Err(Error::Corruption(format!(
            "{off:#x} holds a {:?} node inside a vector",
            h.kind
        )));
    }
    Ok((
        h.kind,
        (0..h.small as usize).map(|i| word(bytes, 1 + i)).collect(),
    ))
}

/// Empty vector with `2^shift`-way nodes (`shift` in 1..=5).
pub fn new_with_shift(arena: &mut Arena, shift: u8) -> Result<DsRoot> {
    if !(1..=5).contains(&shift) {
        return Err(Error::Domain(format!("vector shift {shift} outside 1..=5")));
    }
    DsRoot::create(arena, DsKind::Vector, shift, 0, 0, 0, 0, &[])
}

pub fn new(arena: &mut Arena) -> Result<DsRoot> {
    new_with_shift(arena, DEFAULT_SHIFT)
}

/// Chain of single-child nodes `level` deep ending in a leaf holding `value`.
fn new_path(arena: &mut Arena, level: u64, value: u64) -> Result<u64> {
    let mut off = node::create_node(arena, &leaf(&[value]), &[])?;
    for _ in 0..level {
        let below = off;
        off = guarded(arena, &[below], |a| {
            node::create_node(a, &internal(&[below], 1), &[below])
        })?;
    }
    Ok(off)
}

fn push_rec(
    arena: &mut Arena,
    off: u64,
    level: u64,
    index: u64,
    value: u64,
    shift: u32,
) -> Result<u64> {
    let (kind, mut s) = slots(arena, off)?;
    if level == 0 {
        if kind != NodeKind::VecLeaf {
            return Err(Error::Corruption(
                "vector leaf level holds an inner node".into(),
            ));
        }
        s.push(value);
        return node::create_node(arena, &leaf(&s), &[]);
    }
    let mask = (1u64 << shift) - 1;
    let idx = ((index >> (shift as u64 * level)) & mask) as usize;
    let sub = if idx < s.len() {
        push_rec(arena, s[idx], level - 1, index, value, shift)?
    } else {
        new_path(arena, level - 1, value)?
    };
    if idx < s.len() {
        s[idx] = sub;
    } else {
        s.push(sub);
    }
    guarded(arena, &[sub], |a| {
        node::create_node(a, &internal(&s, index + 1), &[sub])
    })
}

/// New version with `value` appended.
pub fn push_back(arena: &mut Arena, v: &DsRoot, value: u64) -> Result<DsRoot> {
    let shift = check(v)?;
    let height = v.aux0;
    let (root, height) = if v.root == 0 {
        (node::create_node(arena, &leaf(&[value]), &[])?, 0)
    } else if v.size == capacity(height, shift) {
        let path = new_path(arena, height, value)?;
        let children = [v.root, path];
        let r = guarded(arena, &[path], |a| {
            node::create_node(a, &internal(&children, v.size + 1), &[path])
        })?;
        (r, height + 1)
    } else {
        (
            push_rec(arena, v.root, height, v.size, value, shift)?,
            height,
        )
    };
    guarded(arena, &[root], |a| {
        DsRoot::create(
            a,
            DsKind::Vector,
            v.flags,
            root,
            v.size + 1,
            height,
            0,
            &[root],
        )
    })
}

fn capacity(height: u64, shift: u32) -> u64 {
    1u64.checked_shl(shift * (height as u32 + 1))
        .unwrap_or(u64::MAX)
}

fn update_rec(
    arena: &mut Arena,
    off: u64,
    level: u64,
    index: u64,
    value: u64,
    shift: u32,
) -> Result<u64> {
    let (_, mut s) = slots(arena, off)?;
    let mask = (1u64 << shift) - 1;
    let idx = ((index >> (shift as u64 * level)) & mask) as usize;
    if idx >= s.len() {
        return Err(Error::Corruption(format!(
            "vector path to {index} is short"
        )));
    }
    if level == 0 {
        s[idx] = value;
        return node::create_node(arena, &leaf(&s), &[]);
    }
    let count = node::header_at(arena, off)?.count;
    let sub = update_rec(arena, s[idx], level - 1, index, value, shift)?;
    s[idx] = sub;
    guarded(arena, &[sub], |a| {
        node::create_node(a, &internal(&s, count), &[sub])
    })
}

/// Offset of the leaf slot holding element `index`.
fn element_slot(arena: &Arena, v: &DsRoot, index: u64) -> Result<u64> {
    let shift = v.flags as u64;
    let mask = (1u64 << shift) - 1;
    let mut off = v.root;
    for level in (0..=v.aux0).rev() {
        let idx = (index >> (shift * level)) & mask;
        let at = off + 8 + 8 * idx;
        if level == 0 {
            return Ok(at);
        }
        off = arena.read_u64(at);
    }
    unreachable!("loop returns at level 0")
}

/// New version with element `index` replaced.
pub fn update(arena: &mut Arena, v: &DsRoot, index: u64, value: u64) -> Result<DsRoot> {
    let shift = check(v)?;
    if index >= v.size {
        return Err(Error::OutOfBounds { index, len: v.size });
    }
    if arena.fault() == Fault::InPlaceWrite {
        let at = element_slot(arena, v, index)?;
        arena.pm_write_u64(ArenaOffset::new(at), value)?;
        arena.pm_flush(ArenaOffset::new(at));
        return DsRoot::create(
            arena,
            DsKind::Vector,
            v.flags,
            v.root,
            v.size,
            v.aux0,
            0,
            &[],
        );
    }
    let root = update_rec(arena, v.root, v.aux0, index, value, shift)?;
    guarded(arena, &[root], |a| {
        DsRoot::create(a, DsKind::Vector, v.flags, root, v.size, v.aux0, 0, &[root])
    })
}

pub fn get(arena: &Arena, v: &DsRoot, index: u64) -> Result<u64> {
    check(v)?;
    if index >= v.size {
        return Err(Error::OutOfBounds { index, len: v.size });
    }
    Ok(arena.read_u64(element_slot(arena, v, index)?))
}

/// Elements in index order.
pub fn to_vec(arena: &Arena, v: &DsRoot) -> Result<Vec<u64>> {
    check(v)?;
    let mut out = Vec::with_capacity(v.size as usize);
    if v.root == 0 {
        return Ok(out);
    }
    let mut stack = vec![v.root];
    while let Some(off) = stack.pop() {
        let (kind, s) = slots(arena, off)?;
        match kind {
            NodeKind::VecLeaf => out.extend(s),
            _ => stack.extend(s.into_iter().rev()),
        }
    }
    if out.len() as u64 != v.size {
        return Err(Error::Corruption(format!(
            "vector holds {} elements, header says {}",
            out.len(),
            v.size
        )));
    }
    Ok(out)
}
