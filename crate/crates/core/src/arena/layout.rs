//! On-media layout of an arena file.
//!
//! ```text
//! 0      magic "MODARENA"
//! 8      format version (1)
//! 16     root directory: 64 entries x (32-byte name, 8-byte offset)
//! 2576   undo log: entry count, committed flag, 256 x (offset, old value)
//! 6720   allocation table header: capacity, data start (one line)
//! 6784   allocation table records: capacity x (offset, size)
//! ...    data area (line aligned)
//! ```
//!
//! All integers are little-endian.

use crate::error::{Error, Result};

pub const CACHELINE: u64 = 64;
pub const MAGIC: &[u8; 8] = b"MODARENA";
pub const FORMAT_VERSION: u64 = 1;

pub const ROOT_DIR_OFFSET: u64 = 16;
pub const ROOT_ENTRIES: usize = 64;
pub const ROOT_ENTRY_SIZE: u64 = 40;
pub const ROOT_NAME_LEN: usize = 32;

pub const UNDO_OFFSET: u64 = ROOT_DIR_OFFSET + ROOT_ENTRIES as u64 * ROOT_ENTRY_SIZE;
pub const UNDO_COUNT_OFFSET: u64 = UNDO_OFFSET;
pub const UNDO_COMMITTED_OFFSET: u64 = UNDO_OFFSET + 8;
pub const UNDO_ENTRIES_OFFSET: u64 = UNDO_OFFSET + 16;
pub const UNDO_CAPACITY: usize = 256;
pub const UNDO_ENTRY_SIZE: u64 = 16;
const UNDO_END: u64 = UNDO_ENTRIES_OFFSET + UNDO_CAPACITY as u64 * UNDO_ENTRY_SIZE;

pub const ALLOC_HEADER_OFFSET: u64 = align_up(UNDO_END, CACHELINE);
pub const ALLOC_RECORDS_OFFSET: u64 = ALLOC_HEADER_OFFSET + CACHELINE;
pub const ALLOC_RECORD_SIZE: u64 = 16;

pub const fn align_up(v: u64, align: u64) -> u64 {
    v.div_ceil(align) * align
}

pub fn line_of(offset: u64) -> u64 {
    offset / CACHELINE
}

/// Geometry derived from the arena size and allocation-table capacity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub size: u64,
    pub table_capacity: u64,
    pub data_start: u64,
}

impl Layout {
    pub fn new(size: u64, table_capacity: u64) -> Result<Self> {
        let data_start = align_up(
            ALLOC_RECORDS_OFFSET + table_capacity * ALLOC_RECORD_SIZE,
            CACHELINE,
        );
        if size < data_start + CACHELINE {
            return Err(Error::ArenaTooSmall {
                size,
                needed: data_start + CACHELINE,
            });
        }
        Ok(Self {
            size,
            table_capacity,
            data_start,
        })
    }

    /// Table capacity used when none is given: roughly one record per 80
    /// bytes of data, which fits small tree nodes.
    pub fn with_default_capacity(size: u64) -> Result<Self> {
        let capacity = (size / 96).max(64);
        Self::new(size, capacity)
    }

    pub fn data_bytes(&self) -> u64 {
        self.size - self.data_start
    }

    pub fn record_offset(&self, slot: u64) -> u64 {
        ALLOC_RECORDS_OFFSET + slot * ALLOC_RECORD_SIZE
    }

    /// Byte range holding allocator metadata (table header and records).
    pub fn metadata_range(&self) -> std::ops::Range<u64> {
        ALLOC_HEADER_OFFSET..self.data_start
    }

    pub fn root_entry_offset(index: usize) -> u64 {
        ROOT_DIR_OFFSET + index as u64 * ROOT_ENTRY_SIZE
    }

    /// Offset of the 8-byte reference field of a root-directory entry.
    pub fn root_slot_offset(index: usize) -> u64 {
        Self::root_entry_offset(index) + ROOT_NAME_LEN as u64
    }

    pub fn in_root_dir(offset: u64, len: u64) -> bool {
        offset >= ROOT_DIR_OFFSET && offset + len <= UNDO_OFFSET
    }

    pub fn in_undo_log(offset: u64, len: u64) -> bool {
        offset >= UNDO_OFFSET && offset + len <= UNDO_END
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_offsets() {
        assert_eq!(UNDO_OFFSET, 2576);
        assert_eq!(UNDO_END, 6688);
        assert_eq!(ALLOC_HEADER_OFFSET, 6720);
        assert_eq!(ALLOC_RECORDS_OFFSET % CACHELINE, 0);
    }

    #[test]
    fn root_slots_never_straddle_lines() {
        for i in 0..ROOT_ENTRIES {
            let off = Layout::root_slot_offset(i);
            assert_eq!(off % 8, 0);
            assert_eq!(line_of(off), line_of(off + 7));
        }
    }

    #[test]
    fn too_small() {
        assert!(matches!(
            Layout::new(4096, 16),
            Err(Error::ArenaTooSmall { .. })
        ));
    }
}
