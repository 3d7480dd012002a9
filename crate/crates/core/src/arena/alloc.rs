//! Volatile index over the durable allocation table.
//!
//! The durable table is the source of truth across crashes; this index
//! (record map, free ranges, free table slots) is rebuilt whenever an arena
//! is opened.

use std::collections::{BTreeMap, BTreeSet};

use super::layout::Layout;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AllocRecord {
    pub offset: u64,
    pub size: u64,
    pub slot: u64,
}

#[derive(Debug, Clone)]
pub(crate) struct Allocator {
    records: BTreeMap<u64, AllocRecord>,
    free_by_offset: BTreeMap<u64, u64>,
    free_by_size: BTreeSet<(u64, u64)>,
    /// Free table slots below `slot_mark`; every slot from the mark up to
    /// `capacity` is free as well.
    free_slots: BTreeSet<u64>,
    slot_mark: u64,
    capacity: u64,
    live_bytes: u64,
}

impl Allocator {
    pub fn empty(layout: &Layout) -> Self {
        Self::from_records(layout, Vec::new())
    }

    /// Builds the index from a set of records assumed pairwise disjoint.
    /// Slots not named by a record are free.
    pub fn from_records(layout: &Layout, records: Vec<AllocRecord>) -> Self {
        let mut a = Allocator {
            records: BTreeMap::new(),
            free_by_offset: BTreeMap::new(),
            free_by_size: BTreeSet::new(),
            free_slots: BTreeSet::new(),
            slot_mark: 0,
            capacity: layout.table_capacity,
            live_bytes: 0,
        };
        a.slot_mark = records.iter().map(|r| r.slot + 1).max().unwrap_or(0);
        a.free_slots = (0..a.slot_mark).collect();
        let mut cursor = layout.data_start;
        let mut sorted = records;
        sorted.sort_by_key(|r| r.offset);
        for r in sorted {
            if r.offset > cursor {
                a.insert_free(cursor, r.offset - cursor);
            }
            cursor = cursor.max(r.offset + r.size);
            a.free_slots.remove(&r.slot);
            a.live_bytes += r.size;
            a.records.insert(r.offset, r);
        }
        if layout.size > cursor {
            a.insert_free(cursor, layout.size - cursor);
        }
        a
    }

    fn insert_free(&mut self, offset: u64, len: u64) {
        self.free_by_offset.insert(offset, len);
        self.free_by_size.insert((len, offset));
    }

    fn remove_free(&mut self, offset: u64, len: u64) {
        self.free_by_offset.remove(&offset);
        self.free_by_size.remove(&(len, offset));
    }

    /// Best fit, lowest offset among equal sizes. `size` must already be
    /// rounded to the allocation granule.
    pub fn take(&mut self, size: u64) -> Option<AllocRecord> {
        let slot = match self.free_slots.first() {
            Some(&s) => s,
            None if self.slot_mark < self.capacity => self.slot_mark,
            None => return None,
        };
        let &(len, offset) = self.free_by_size.range((size, 0)..).next()?;
        self.remove_free(offset, len);
        if len > size {
            self.insert_free(offset + size, len - size);
        }
        if slot == self.slot_mark {
            self.slot_mark += 1;
        } else {
            self.free_slots.remove(&slot);
        }
        let rec = AllocRecord { offset, size, slot };
        self.records.insert(offset, rec);
        self.live_bytes += size;
        Some(rec)
    }

    pub fn has_free_slot(&self) -> bool {
        !self.free_slots.is_empty() || self.slot_mark < self.capacity
    }

    pub fn release(&mut self, offset: u64) -> Option<AllocRecord> {
        let rec = self.records.remove(&offset)?;
        self.free_slots.insert(rec.slot);
        self.live_bytes -= rec.size;
        let mut start = rec.offset;
        let mut len = rec.size;
        if let Some((&prev, &plen)) = self.free_by_offset.range(..start).next_back() {
            if prev + plen == start {
                self.remove_free(prev, plen);
                start = prev;
                len += plen;
            }
        }
        if let Some(&nlen) = self.free_by_offset.get(&(start + len)) {
            self.remove_free(start + len, nlen);
            len += nlen;
        }
        self.insert_free(start, len);
        Some(rec)
    }

    pub fn record(&self, offset: u64) -> Option<&AllocRecord> {
        self.records.get(&offset)
    }

    /// True when `[offset, offset + len)` lies inside one live allocation.
    pub fn covers(&self, offset: u64, len: u64) -> bool {
        match self.records.range(..=offset).next_back() {
            Some((_, r)) => offset + len <= r.offset + r.size,
            None => false,
        }
    }

    pub fn records(&self) -> impl Iterator<Item = &AllocRecord> {
        self.records.values()
    }

    pub fn live_bytes(&self) -> u64 {
        self.live_bytes
    }

    pub fn free_bytes(&self) -> u64 {
        self.free_by_offset.values().sum()
    }

    pub fn live_count(&self) -> usize {
        self.records.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout() -> Layout {
        Layout::new(64 * 1024, 64).unwrap()
    }

    #[test]
    fn first_allocation_at_data_start() {
        let l = layout();
        let mut a = Allocator::empty(&l);
        let r = a.take(24).unwrap();
        assert_eq!(r.offset, l.data_start);
        assert_eq!(r.slot, 0);
    }

    #[test]
    fn reuse_after_release_and_coalesce() {
        let l = layout();
        let mut a = Allocator::empty(&l);
        let x = a.take(64).unwrap();
        let y = a.take(64).unwrap();
        assert!(x.offset + 64 <= y.offset);
        a.release(y.offset).unwrap();
        assert_eq!(a.take(64).unwrap().offset, y.offset);
        a.release(x.offset).unwrap();
        a.release(y.offset).unwrap();
        assert_eq!(a.free_bytes(), l.data_bytes());
        assert_eq!(a.free_by_offset.len(), 1);
    }

    #[test]
    fn exhaustion() {
        let l = layout();
        let mut a = Allocator::empty(&l);
        assert!(a.take(l.data_bytes() + 8).is_none());
        assert!(a.take(l.data_bytes()).is_some());
        assert!(a.take(8).is_none());
    }

    #[test]
    fn rebuild_matches() {
        let l = layout();
        let mut a = Allocator::empty(&l);
        for s in [8, 24, 40, 64] {
            a.take(s).unwrap();
        }
        let b = Allocator::from_records(&l, a.records().copied().collect());
        assert_eq!(a.free_bytes(), b.free_bytes());
        assert_eq!(a.live_bytes(), b.live_bytes());
        assert_eq!(a.free_slots, b.free_slots);
    }
}
