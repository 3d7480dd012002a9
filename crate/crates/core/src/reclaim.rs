//! Transient reference counts and crash recovery.
//!
//! Counts live only in DRAM. After a crash they are rebuilt from a
//! reachability scan of the root directory, which also rolls back an
//! interrupted multi-root commit and frees every allocation nothing
//! reaches.

use std::collections::{HashMap, HashSet};

use crate::arena::alloc::AllocRecord;
use crate::arena::layout::{
    Layout, UNDO_CAPACITY, UNDO_COMMITTED_OFFSET, UNDO_COUNT_OFFSET, UNDO_ENTRIES_OFFSET,
    UNDO_ENTRY_SIZE,
};
use crate::arena::{occupied_slots, scan_table, Arena, ArenaOffset, TraceKind};
use crate::error::{Error, Result};
use crate::node::{self, NodeKind};

/// In-edge counts of live nodes.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RefTable {
    counts: HashMap<u64, u32>,
}

impl RefTable {
    pub fn get(&self, offset: u64) -> u32 {
        self.counts.get(&offset).copied().unwrap_or(0)
    }

    pub fn incref(&mut self, offset: u64) {
        *self.counts.entry(offset).or_insert(0) += 1;
    }

    pub(crate) fn set_new(&mut self, offset: u64) {
        self.counts.insert(offset, 1);
    }

    /// Returns the remaining count.
    pub fn decref(&mut self, offset: u64) -> Result<u32> {
        match self.counts.get_mut(&offset) {
            Some(c) if *c > 0 => {
                *c -= 1;
                let left = *c;
                if left == 0 {
                    self.counts.remove(&offset);
                }
                Ok(left)
            }
            _ => Err(Error::Accounting(offset)),
        }
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, u32)> + '_ {
        self.counts.iter().map(|(&k, &v)| (k, v))
    }
}

/// How nodes whose count drops to zero give back their memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reclaim {
    /// Free at once. Only for nodes no durable reference can still reach.
    Immediate,
    /// Queue until the next fence makes the unlinking commit durable.
    Deferred,
}

pub fn incref(arena: &mut Arena, offset: ArenaOffset) {
    arena.refs.incref(offset.get());
}

/// Drops one reference; nodes reaching zero are reclaimed and release
/// their own children in turn. Returns the number of nodes reclaimed.
pub fn decref_recursive(arena: &mut Arena, offset: ArenaOffset, mode: Reclaim) -> Result<usize> {
    let mut stack = vec![offset.get()];
    let mut reclaimed = 0;
    while let Some(off) = stack.pop() {
        if arena.refs.decref(off)? > 0 {
            continue;
        }
        stack.extend(node::node_children(arena, off)?);
        match mode {
            Reclaim::Immediate => arena.pm_free(ArenaOffset::new(off))?,
            Reclaim::Deferred => arena.retire(off),
        }
        reclaimed += 1;
    }
    Ok(reclaimed)
}

/// Result of walking the reference graph from the root directory.
#[derive(Debug, Clone, Default)]
pub struct Reachability {
    /// In-edge count of every reachable node (root entries count as edges).
    pub in_edges: HashMap<u64, u32>,
}

impl Reachability {
    pub fn contains(&self, offset: u64) -> bool {
        self.in_edges.contains_key(&offset)
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Color {
    Gray,
    Black,
}

/// Iterative depth-first walk. `size_of` maps a node offset to the size of
/// the allocation starting there.
fn walk(
    arena: &Arena,
    roots: &[(String, ArenaOffset)],
    size_of: impl Fn(u64) -> Option<u64>,
) -> Result<Reachability> {
    let mut reach = Reachability::default();
    let mut color: HashMap<u64, Color> = HashMap::new();
    let mut stack: Vec<(u64, bool)> = Vec::new();
    let load = |off: u64| -> Result<Vec<u64>> {
        let size = size_of(off).ok_or_else(|| {
            Error::Corruption(format!("reference {off:#x} is not a live allocation"))
        })?;
        if off
            .checked_add(size)
            .is_none_or(|e| e > arena.layout().size)
        {
            return Err(Error::Corruption(format!(
                "node {off:#x} overruns the arena"
            )));
        }
        node::children(arena.read(off, size as usize))
    };
    for (name, root) in roots {
        let r = root.get();
        if size_of(r).is_none() {
            return Err(Error::Corruption(format!(
                "root {name:?} references {r:#x}, not a live allocation"
            )));
        }
        let h = node::header_at(arena, r)?;
        if !matches!(h.kind, NodeKind::DsRoot | NodeKind::Parent) {
            return Err(Error::Corruption(format!(
                "root {name:?} references a {:?} node",
                h.kind
            )));
        }
        *reach.in_edges.entry(r).or_insert(0) += 1;
        if !color.contains_key(&r) {
            stack.push((r, false));
        }
        while let Some((off, exiting)) = stack.pop() {
            if exiting {
                color.insert(off, Color::Black);
                continue;
            }
            if color.get(&off) == Some(&Color::Black) {
                continue;
            }
            color.insert(off, Color::Gray);
            stack.push((off, true));
            for c in load(off)? {
                *reach.in_edges.entry(c).or_insert(0) += 1;
                match color.get(&c) {
                    Some(Color::Gray) => {
                        return Err(Error::Corruption(format!("cycle through {c:#x}")))
                    }
                    Some(Color::Black) => {}
                    None => stack.push((c, false)),
                }
            }
        }
    }
    Ok(reach)
}

/// Reachability over the live allocator index of an open arena.
pub fn reachability(arena: &Arena) -> Result<Reachability> {
    let roots = arena.roots();
    walk(arena, &roots, |off| {
        arena.allocation(ArenaOffset::new(off)).map(|r| r.size)
    })
}

/// Bytes held by allocations that nothing reaches and that are not queued
/// for reclamation.
pub fn leak_check(arena: &Arena) -> Result<u64> {
    let reach = reachability(arena)?;
    let pending: HashSet<u64> = arena.pending_reclaim().collect();
    Ok(arena
        .allocations()
        .iter()
        .filter(|r| !reach.contains(r.offset) && !pending.contains(&r.offset))
        .map(|r| r.size)
        .sum())
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RecoveryReport {
    pub roots: Vec<(String, ArenaOffset)>,
    /// An uncommitted multi-root update was undone.
    pub rolled_back: bool,
    /// A committed multi-root update left its log behind and it was cleared.
    pub log_cleared: bool,
    pub freed_records: usize,
    pub freed_bytes: u64,
}

/// Brings a freshly opened image back to a consistent state: rolls back
/// an interrupted multi-root commit, rebuilds reference counts by
/// reachability and frees everything unreachable.
pub fn recover(arena: &mut Arena) -> Result<RecoveryReport> {
    let mut report = RecoveryReport::default();

    let count = arena.read_u64(UNDO_COUNT_OFFSET);
    let committed = arena.read_u64(UNDO_COMMITTED_OFFSET);
    if count > UNDO_CAPACITY as u64 {
        return Err(Error::Corruption(format!("undo log count {count}")));
    }
    if count > 0 || committed != 0 {
        arena.commit_begin();
        if count > 0 && committed == 0 {
            for i in (0..count).rev() {
                let entry = UNDO_ENTRIES_OFFSET + i * UNDO_ENTRY_SIZE;
                let target = arena.read_u64(entry);
                let old = arena.read_u64(entry + 8);
                let is_slot = (0..crate::arena::layout::ROOT_ENTRIES)
                    .any(|k| Layout::root_slot_offset(k) == target);
                if !is_slot {
                    return Err(Error::Corruption(format!(
                        "undo entry targets {target:#x}, not a root slot"
                    )));
                }
                arena.pm_write_u64(ArenaOffset::new(target), old)?;
                arena.pm_flush(ArenaOffset::new(target));
            }
            report.rolled_back = true;
        } else if count > 0 {
            report.log_cleared = true;
        }
        arena.pm_write_u64(ArenaOffset::new(UNDO_COUNT_OFFSET), 0)?;
        arena.pm_write_u64(ArenaOffset::new(UNDO_COMMITTED_OFFSET), 0)?;
        arena.pm_flush(ArenaOffset::new(UNDO_COUNT_OFFSET));
        arena.commit_end();
    }

    let layout = *arena.layout();
    let image_records = scan_table(arena.volatile_image(), &layout);
    let mut by_offset: HashMap<u64, Vec<AllocRecord>> = HashMap::new();
    for r in &image_records {
        by_offset.entry(r.offset).or_default().push(*r);
    }
    let roots = arena.roots();
    // The walk needs one size per offset; a node's encoding fixes which of
    // several duplicate records is the real one.
    let size_of = |off: u64| -> Option<u64> {
        let recs = by_offset.get(&off)?;
        if recs.len() == 1 {
            return Some(recs[0].size);
        }
        recs.iter()
            .map(|r| r.size)
            .find(|&s| node::children(arena.read(off, s as usize)).is_ok())
    };
    let reach = walk(arena, &roots, size_of)?;

    let mut keep: Vec<AllocRecord> = Vec::new();
    let mut kept_slots: HashSet<u64> = HashSet::new();
    for (&off, recs) in &by_offset {
        if !reach.contains(off) {
            continue;
        }
        let size = size_of(off).expect("reached nodes have a size");
        let rec = recs
            .iter()
            .filter(|r| r.size == size)
            .min_by_key(|r| r.slot)
            .expect("size came from a record");
        keep.push(*rec);
        kept_slots.insert(rec.slot);
    }
    keep.sort_by_key(|r| r.offset);
    for w in keep.windows(2) {
        if w[0].offset + w[0].size > w[1].offset {
            return Err(Error::Corruption(format!(
                "live allocations {:#x} and {:#x} overlap",
                w[0].offset, w[1].offset
            )));
        }
    }

    let sizes: HashMap<u64, (u64, u64)> = image_records
        .iter()
        .map(|r| (r.slot, (r.offset, r.size)))
        .collect();
    let mut freed_any = false;
    for slot in occupied_slots(arena.volatile_image(), &layout) {
        if kept_slots.contains(&slot) {
            continue;
        }
        if let Some(&(off, size)) = sizes.get(&slot) {
            arena.emit(TraceKind::Free, Some(off), Some(size));
            report.freed_bytes += size;
        }
        arena.invalidate_slot(slot);
        report.freed_records += 1;
        freed_any = true;
    }
    arena.reset_allocator(keep);
    arena.refs = RefTable {
        counts: reach.in_edges,
    };
    if freed_any || report.rolled_back || report.log_cleared {
        arena.pm_fence()?;
    }
    report.roots = roots;
    Ok(report)
}

#[cfg(test)]
mod tests;
