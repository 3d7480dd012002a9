//! Simulated byte-addressable persistent memory.
//!
//! The arena keeps one volatile image of the region plus, for every line
//! written since the last fence that covered it, the line's last durable
//! content. A crash image is the volatile image with each uncertain line
//! resolved to either its volatile or its durable content.

pub mod alloc;
pub mod layout;
pub mod trace;

use std::collections::HashMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::os::unix::fs::FileExt;
use std::path::Path;

use crate::commit::FaseState;
use crate::error::{Error, Result};
use crate::flush_model::{group_latency, FlushModelParams};
use crate::reclaim::RefTable;

use alloc::{AllocRecord, Allocator};
use layout::*;
pub use layout::{Layout, CACHELINE};
pub use trace::{Counters, TraceEvent, TraceKind};

/// Byte offset into an arena. Zero is the null reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct ArenaOffset(u64);

impl ArenaOffset {
    pub const NULL: ArenaOffset = ArenaOffset(0);

    pub const fn new(raw: u64) -> Self {
        ArenaOffset(raw)
    }

    pub const fn get(self) -> u64 {
        self.0
    }

    pub const fn is_null(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for ArenaOffset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#x}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineStatus {
    CleanDurable,
    DirtyVolatile,
    FlushedUnfenced,
}

/// Durability state of one cacheline.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineState {
    pub status: LineStatus,
    pub durable_content: [u8; CACHELINE as usize],
    pub volatile_content: [u8; CACHELINE as usize],
}

#[derive(Debug, Clone)]
struct UncertainLine {
    status: LineStatus,
    durable: [u8; CACHELINE as usize],
}

/// Which content an uncertain line keeps across a crash.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Persist {
    Volatile,
    Durable,
}

#[derive(Debug, Clone)]
pub enum CrashChoice {
    /// Every uncertain line reached media.
    AllPersisted,
    /// No uncertain line reached media.
    AllLost,
    /// Explicit choice for each uncertain line, keyed by line index.
    PerLine(HashMap<u64, Persist>),
}

/// Seeded bugs used to check that the consistency checker notices them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fault {
    #[default]
    None,
    /// Node construction skips the flush of each node's last line.
    DropFlush,
    /// Commit skips the fence that makes shadows durable.
    DropFence,
    /// Updates of existing entries overwrite the old node in place.
    InPlaceWrite,
    /// Root references are stored as two 4-byte halves.
    TornRootWrite,
}

pub type Observer = Box<dyn FnMut(&Arena) + Send>;

#[derive(Debug, Clone)]
pub struct ArenaOptions {
    pub size: u64,
    /// Allocation-table capacity; derived from `size` when absent.
    pub table_capacity: Option<u64>,
    pub params: FlushModelParams<f64>,
    /// Retain trace events in memory. Counters are always maintained.
    pub record_trace: bool,
}

impl ArenaOptions {
    pub fn new(size: u64) -> Self {
        Self {
            size,
            table_capacity: None,
            params: FlushModelParams::default(),
            record_trace: true,
        }
    }

    pub fn table_capacity(mut self, capacity: u64) -> Self {
        self.table_capacity = Some(capacity);
        self
    }

    pub fn params(mut self, params: FlushModelParams<f64>) -> Self {
        self.params = params;
        self
    }

    pub fn record_trace(mut self, on: bool) -> Self {
        self.record_trace = on;
        self
    }

    fn layout(&self) -> Result<Layout> {
        let size = self.size / CACHELINE * CACHELINE;
        match self.table_capacity {
            Some(c) => Layout::new(size, c),
            None => Layout::with_default_capacity(size),
        }
    }
}

pub struct Arena {
    mem: Vec<u8>,
    uncertain: HashMap<u64, UncertainLine>,
    flushed: Vec<u64>,
    layout: Layout,
    alloc: Allocator,
    params: FlushModelParams<f64>,
    sim_time_ns: f64,
    pending_flushes: u64,
    in_commit: bool,
    record_trace: bool,
    events: Vec<TraceEvent>,
    next_seq: u64,
    counters: Counters,
    stream: Option<Box<dyn Write + Send>>,
    peak_live_bytes: u64,
    file: Option<File>,
    retired_current: Vec<u64>,
    retired_ready: Vec<u64>,
    fault: Fault,
    observer: Option<Observer>,
    pub(crate) refs: RefTable,
    pub(crate) fase: Option<FaseState>,
}

impl fmt::Debug for Arena {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Arena")
            .field("layout", &self.layout)
            .field("uncertain_lines", &self.uncertain.len())
            .field("live_bytes", &self.alloc.live_bytes())
            .field("sim_time_ns", &self.sim_time_ns)
            .finish_non_exhaustive()
    }
}

impl Arena {
    /// Fresh arena with no backing file.
    pub fn in_memory(options: ArenaOptions) -> Result<Self> {
        let layout = options.layout()?;
        let mut mem = vec![0u8; layout.size as usize];
        write_header(&mut mem, &layout);
        Ok(Self::assemble(
            mem,
            layout,
            Allocator::empty(&layout),
            &options,
        ))
    }

    /// Creates the arena file if absent (or empty), otherwise opens it and
    /// recovers. An existing file keeps its own size and geometry.
    pub fn create(path: impl AsRef<Path>, options: ArenaOptions) -> Result<Self> {
        let path = path.as_ref();
        let mut file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(false)
            .open(path)?;
        if file.metadata()?.len() == 0 {
            let layout = options.layout()?;
            file.set_len(layout.size)?;
            let mut mem = vec![0u8; layout.size as usize];
            write_header(&mut mem, &layout);
            file.write_all_at(&mem[..layout.data_start as usize], 0)?;
            file.sync_data()?;
            let mut arena = Self::assemble(mem, layout, Allocator::empty(&layout), &options);
            arena.file = Some(file);
            return Ok(arena);
        }
        let mut image = Vec::new();
        file.read_to_end(&mut image)?;
        let mut arena = Self::from_image(image, options.params)?;
        arena.record_trace = options.record_trace;
        arena.file = Some(file);
        crate::reclaim::recover(&mut arena)?;
        Ok(arena)
    }

    /// Opens an existing arena file and recovers it.
    pub fn open(path: impl AsRef<Path>, params: FlushModelParams<f64>) -> Result<Self> {
        let mut file = OpenOptions::new().read(true).write(true).open(path)?;
        let mut image = Vec::new();
        file.read_to_end(&mut image)?;
        let mut arena = Self::from_image(image, params)?;
        arena.file = Some(file);
        crate::reclaim::recover(&mut arena)?;
        Ok(arena)
    }

    /// Interprets raw bytes as a durable arena image. The allocator index is
    /// rebuilt from the table but no recovery runs; call
    /// [`crate::reclaim::recover`] before using the arena.
    pub fn from_image(image: Vec<u8>, params: FlushModelParams<f64>) -> Result<Self> {
        if image.len() < ALLOC_RECORDS_OFFSET as usize {
            return Err(Error::CorruptArena(format!(
                "image of {} bytes is too short",
                image.len()
            )));
        }
        if &image[0..8] != MAGIC {
            return Err(Error::CorruptArena("bad magic".into()));
        }
        let version = le_u64(&image, 8);
        if version != FORMAT_VERSION {
            return Err(Error::CorruptArena(format!(
                "unsupported version {version}"
            )));
        }
        let capacity = le_u64(&image, ALLOC_HEADER_OFFSET);
        let layout = Layout::new(image.len() as u64, capacity)
            .map_err(|e| Error::CorruptArena(e.to_string()))?;
        if le_u64(&image, ALLOC_HEADER_OFFSET + 8) != layout.data_start {
            return Err(Error::CorruptArena("data start mismatch".into()));
        }
        let records = scan_table(&image, &layout);
        let mut disjoint = Vec::new();
        let mut cursor = layout.data_start;
        let mut sorted = records;
        sorted.sort_by_key(|r| (r.offset, r.slot));
        for r in sorted {
            if r.offset >= cursor {
                cursor = r.offset + r.size;
                disjoint.push(r);
            }
        }
        let alloc = Allocator::from_records(&layout, disjoint);
        let options = ArenaOptions::new(layout.size).params(params);
        Ok(Self::assemble(image, layout, alloc, &options))
    }

    fn assemble(mem: Vec<u8>, layout: Layout, alloc: Allocator, options: &ArenaOptions) -> Self {
        let peak = alloc.live_bytes();
        Arena {
            mem,
            uncertain: HashMap::new(),
            flushed: Vec::new(),
            layout,
            alloc,
            params: options.params,
            sim_time_ns: 0.0,
            pending_flushes: 0,
            in_commit: false,
            record_trace: options.record_trace,
            events: Vec::new(),
            next_seq: 0,
            counters: Counters::default(),
            stream: None,
            peak_live_bytes: peak,
            file: None,
            retired_current: Vec::new(),
            retired_ready: Vec::new(),
            fault: Fault::None,
            observer: None,
            refs: RefTable::default(),
            fase: None,
        }
    }

    // ----- accessors -----

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &FlushModelParams<f64> {
        &self.params
    }

    pub fn sim_time_ns(&self) -> f64 {
        self.sim_time_ns
    }

    pub fn pending_flushes(&self) -> u64 {
        self.pending_flushes
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    /// Sequence number the next event will carry.
    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn trace(&self) -> &[TraceEvent] {
        &self.events
    }

    /// Removes and returns the retained events; sequence numbers continue.
    pub fn drain_trace(&mut self) -> Vec<TraceEvent> {
        std::mem::take(&mut self.events)
    }

    pub fn set_record_trace(&mut self, on: bool) {
        self.record_trace = on;
    }

    /// Streams every subsequent event in text form to `out`.
    pub fn set_trace_stream(&mut self, out: Option<Box<dyn Write + Send>>) {
        self.stream = out;
    }

    pub fn set_observer(&mut self, observer: Option<Observer>) {
        self.observer = observer;
    }

    pub fn fault(&self) -> Fault {
        self.fault
    }

    pub fn set_fault(&mut self, fault: Fault) {
        self.fault = fault;
    }

    pub fn in_commit(&self) -> bool {
        self.in_commit
    }

    pub fn live_bytes(&self) -> u64 {
        self.alloc.live_bytes()
    }

    pub fn live_allocations(&self) -> usize {
        self.alloc.live_count()
    }

    pub fn free_bytes(&self) -> u64 {
        self.alloc.free_bytes()
    }

    pub fn peak_live_bytes(&self) -> u64 {
        self.peak_live_bytes
    }

    pub fn allocation(&self, offset: ArenaOffset) -> Option<AllocRecord> {
        self.alloc.record(offset.get()).copied()
    }

    pub fn allocations(&self) -> Vec<AllocRecord> {
        self.alloc.records().copied().collect()
    }

    /// Offsets retired by reclamation that are waiting for a fence before
    /// their memory can be reused.
    pub fn pending_reclaim(&self) -> impl Iterator<Item = u64> + '_ {
        self.retired_current
            .iter()
            .chain(&self.retired_ready)
            .copied()
    }

    /// Whole volatile image.
    pub fn volatile_image(&self) -> &[u8] {
        &self.mem
    }

    pub fn read(&self, offset: u64, len: usize) -> &[u8] {
        &self.mem[offset as usize..offset as usize + len]
    }

    pub fn read_u64(&self, offset: u64) -> u64 {
        le_u64(&self.mem, offset)
    }

    pub fn line_state(&self, line: u64) -> LineState {
        let start = (line * CACHELINE) as usize;
        let mut volatile_content = [0u8; CACHELINE as usize];
        volatile_content.copy_from_slice(&self.mem[start..start + CACHELINE as usize]);
        match self.uncertain.get(&line) {
            Some(u) => LineState {
                status: u.status,
                durable_content: u.durable,
                volatile_content,
            },
            None => LineState {
                status: LineStatus::CleanDurable,
                durable_content: volatile_content,
                volatile_content,
            },
        }
    }

    /// Lines that are not `CleanDurable`, sorted.
    pub fn uncertain_lines(&self) -> Vec<u64> {
        let mut v: Vec<u64> = self.uncertain.keys().copied().collect();
        v.sort_unstable();
        v
    }

    /// Uncertain lines whose durable content differs from the volatile one;
    /// only these can change a crash image.
    pub fn divergent_lines(&self) -> Vec<u64> {
        let mut v: Vec<u64> = self
            .uncertain
            .iter()
            .filter(|(&line, u)| {
                let s = (line * CACHELINE) as usize;
                u.durable[..] != self.mem[s..s + CACHELINE as usize]
            })
            .map(|(&line, _)| line)
            .collect();
        v.sort_unstable();
        v
    }

    pub(crate) fn durable_line(&self, line: u64) -> Option<&[u8; CACHELINE as usize]> {
        self.uncertain.get(&line).map(|u| &u.durable)
    }

    // ----- events -----

    pub(crate) fn emit(&mut self, kind: TraceKind, offset: Option<u64>, size: Option<u64>) {
        let ev = TraceEvent::new(self.next_seq, kind, offset, size);
        self.next_seq += 1;
        self.counters.record(kind, size);
        if let Some(out) = self.stream.as_mut() {
            // A broken trace sink must not change arena semantics.
            let _ = writeln!(out, "{ev}");
        }
        if self.record_trace {
            self.events.push(ev);
        }
        if let Some(mut obs) = self.observer.take() {
            obs(self);
            self.observer = Some(obs);
        }
    }

    // ----- allocation -----

    pub fn pm_alloc(&mut self, nbytes: u64) -> Result<ArenaOffset> {
        if nbytes == 0 {
            return Err(Error::Domain("zero-byte allocation".into()));
        }
        let size = align_up(nbytes, 8);
        if !self.alloc.has_free_slot() {
            return Err(Error::AllocTableFull);
        }
        let rec = self.alloc.take(size).ok_or(Error::OutOfMemory(size))?;
        self.peak_live_bytes = self.peak_live_bytes.max(self.alloc.live_bytes());
        self.emit(TraceKind::Alloc, Some(rec.offset), Some(size));
        let at = self.layout.record_offset(rec.slot);
        let mut buf = [0u8; 16];
        buf[..8].copy_from_slice(&rec.offset.to_le_bytes());
        buf[8..].copy_from_slice(&size.to_le_bytes());
        self.store(at, &buf);
        self.pm_flush(ArenaOffset(at));
        Ok(ArenaOffset(rec.offset))
    }

    pub fn pm_free(&mut self, offset: ArenaOffset) -> Result<()> {
        let rec = self
            .alloc
            .release(offset.get())
            .ok_or(Error::InvalidFree(offset.get()))?;
        self.emit(TraceKind::Free, Some(rec.offset), Some(rec.size));
        self.invalidate_slot(rec.slot);
        Ok(())
    }

    pub(crate) fn invalidate_slot(&mut self, slot: u64) {
        let at = self.layout.record_offset(slot) + 8;
        self.store(at, &0u64.to_le_bytes());
        self.pm_flush(ArenaOffset(at));
    }

    /// Replaces the allocator index; used by recovery.
    pub(crate) fn reset_allocator(&mut self, records: Vec<AllocRecord>) {
        self.alloc = Allocator::from_records(&self.layout, records);
        self.peak_live_bytes = self.alloc.live_bytes();
        self.retired_current.clear();
        self.retired_ready.clear();
    }

    /// Queues a node for release once a later fence has made the commit that
    /// unlinked it durable.
    pub(crate) fn retire(&mut self, offset: u64) {
        self.retired_current.push(offset);
    }

    /// Frees every retired node whose unlinking commit is durable.
    pub(crate) fn release_ready(&mut self) -> Result<()> {
        let ready = std::mem::take(&mut self.retired_ready);
        for off in ready {
            self.pm_free(ArenaOffset(off))?;
        }
        Ok(())
    }

    // ----- stores -----

    /// Checked store: the range must lie in a live allocation, or in the
    /// root directory / undo log while a commit is open.
    pub fn pm_write(&mut self, offset: ArenaOffset, bytes: &[u8]) -> Result<()> {
        let off = offset.get();
        let len = bytes.len() as u64;
        let in_region = off
            .checked_add(len)
            .is_some_and(|end| end <= self.layout.size);
        let allowed = in_region
            && len > 0
            && (self.alloc.covers(off, len)
                || (self.in_commit
                    && (Layout::in_root_dir(off, len) || Layout::in_undo_log(off, len))));
        if !allowed {
            return Err(Error::WildWrite { offset: off, len });
        }
        self.store(off, bytes);
        Ok(())
    }

    pub fn pm_write_u64(&mut self, offset: ArenaOffset, value: u64) -> Result<()> {
        self.pm_write(offset, &value.to_le_bytes())
    }

    fn store(&mut self, off: u64, bytes: &[u8]) {
        let first = off / CACHELINE;
        let last = (off + bytes.len() as u64 - 1) / CACHELINE;
        for line in first..=last {
            let s = (line * CACHELINE) as usize;
            let mem = &self.mem;
            self.uncertain
                .entry(line)
                .and_modify(|u| u.status = LineStatus::DirtyVolatile)
                .or_insert_with(|| {
                    let mut durable = [0u8; CACHELINE as usize];
                    durable.copy_from_slice(&mem[s..s + CACHELINE as usize]);
                    UncertainLine {
                        status: LineStatus::DirtyVolatile,
                        durable,
                    }
                });
        }
        self.mem[off as usize..off as usize + bytes.len()].copy_from_slice(bytes);
        self.emit(TraceKind::Write, Some(off), Some(bytes.len() as u64));
    }

    pub fn pm_flush(&mut self, offset: ArenaOffset) {
        let line = offset.get() / CACHELINE;
        if let Some(u) = self.uncertain.get_mut(&line) {
            if u.status == LineStatus::DirtyVolatile {
                u.status = LineStatus::FlushedUnfenced;
                self.flushed.push(line);
            }
        }
        self.pending_flushes += 1;
        self.emit(TraceKind::Flush, Some(offset.get()), None);
    }

    /// Flushes every line overlapping `[offset, offset + len)`.
    pub fn flush_range(&mut self, offset: ArenaOffset, len: u64) {
        if len == 0 {
            return;
        }
        let first = offset.get() / CACHELINE;
        let last = (offset.get() + len - 1) / CACHELINE;
        for line in first..=last {
            let at = if line == first {
                offset.get()
            } else {
                line * CACHELINE
            };
            self.pm_flush(ArenaOffset(at));
        }
    }

    pub fn pm_fence(&mut self) -> Result<()> {
        let mut durable_now = Vec::new();
        for line in std::mem::take(&mut self.flushed) {
            if let Some(u) = self.uncertain.get(&line) {
                if u.status == LineStatus::FlushedUnfenced {
                    self.uncertain.remove(&line);
                    durable_now.push(line);
                }
            }
        }
        self.sim_time_ns += group_latency(self.pending_flushes, &self.params);
        self.pending_flushes = 0;
        self.retired_ready.append(&mut self.retired_current);
        if let Some(file) = &self.file {
            durable_now.sort_unstable();
            durable_now.dedup();
            let mut i = 0;
            while i < durable_now.len() {
                let mut j = i + 1;
                while j < durable_now.len() && durable_now[j] == durable_now[j - 1] + 1 {
                    j += 1;
                }
                let s = (durable_now[i] * CACHELINE) as usize;
                let e = ((durable_now[j - 1] + 1) * CACHELINE) as usize;
                file.write_all_at(&self.mem[s..e], s as u64)?;
                i = j;
            }
        }
        self.emit(TraceKind::Fence, None, None);
        Ok(())
    }

    pub(crate) fn commit_begin(&mut self) {
        self.in_commit = true;
        self.emit(TraceKind::CommitBegin, None, None);
    }

    pub(crate) fn commit_end(&mut self) {
        self.in_commit = false;
        self.emit(TraceKind::CommitEnd, None, None);
    }

    /// Fences everything outstanding and syncs the backing file.
    pub fn shutdown(mut self) -> Result<()> {
        let lines = self.uncertain_lines();
        for line in lines {
            self.pm_flush(ArenaOffset(line * CACHELINE));
        }
        self.pm_fence()?;
        if let Some(f) = &self.file {
            f.sync_data()?;
        }
        Ok(())
    }

    // ----- root directory -----

    fn entry_name(&self, index: usize) -> &[u8] {
        let s = Layout::root_entry_offset(index) as usize;
        &self.mem[s..s + ROOT_NAME_LEN]
    }

    fn entry_slot(&self, index: usize) -> u64 {
        self.read_u64(Layout::root_slot_offset(index))
    }

    fn find_entry(&self, name: &[u8; ROOT_NAME_LEN]) -> Option<usize> {
        (0..ROOT_ENTRIES).find(|&i| self.entry_slot(i) != 0 && self.entry_name(i) == name)
    }

    pub fn get_root(&self, name: &str) -> Result<ArenaOffset> {
        let key = encode_name(name)?;
        self.find_entry(&key)
            .map(|i| ArenaOffset(self.entry_slot(i)))
            .ok_or_else(|| Error::RootNotFound(name.to_string()))
    }

    pub fn has_root(&self, name: &str) -> bool {
        self.get_root(name).is_ok()
    }

    /// Bound root names and their references, in directory order.
    pub fn roots(&self) -> Vec<(String, ArenaOffset)> {
        (0..ROOT_ENTRIES)
            .filter(|&i| self.entry_slot(i) != 0)
            .map(|i| {
                (
                    decode_name(self.entry_name(i)),
                    ArenaOffset(self.entry_slot(i)),
                )
            })
            .collect()
    }

    /// Index of the directory entry for `name`, writing the name into an
    /// empty entry if it is not bound yet. Must run inside a commit; the
    /// name becomes durable with the commit fence.
    pub(crate) fn reserve_root(&mut self, name: &str) -> Result<usize> {
        let key = encode_name(name)?;
        if let Some(i) = self.find_entry(&key) {
            return Ok(i);
        }
        let i = (0..ROOT_ENTRIES)
            .find(|&i| self.entry_slot(i) == 0 && self.entry_name(i) == key)
            .or_else(|| (0..ROOT_ENTRIES).find(|&i| self.entry_slot(i) == 0))
            .ok_or(Error::DirectoryFull)?;
        if self.entry_name(i) != key {
            let base = Layout::root_entry_offset(i);
            for (k, chunk) in key.chunks(8).enumerate() {
                self.pm_write(ArenaOffset(base + 8 * k as u64), chunk)?;
            }
            self.flush_range(ArenaOffset(base), ROOT_NAME_LEN as u64);
        }
        Ok(i)
    }

    /// Names an entry that was reserved but never bound, if any, so a second
    /// reservation in the same commit finds it.
    fn reserved_index(&self, name: &str) -> Result<Option<usize>> {
        let key = encode_name(name)?;
        Ok(self.find_entry(&key).or_else(|| {
            (0..ROOT_ENTRIES).find(|&i| self.entry_slot(i) == 0 && self.entry_name(i) == key)
        }))
    }

    /// Atomically points `name` at `offset` and flushes the entry.
    pub fn set_root(&mut self, name: &str, offset: ArenaOffset) -> Result<()> {
        if !self.in_commit {
            return Err(Error::Misuse("set_root outside a commit".into()));
        }
        let index = match self.reserved_index(name)? {
            Some(i) => i,
            None => self.reserve_root(name)?,
        };
        let at = Layout::root_slot_offset(index);
        self.write_reference(ArenaOffset(at), offset.get())?;
        self.pm_flush(ArenaOffset(at));
        Ok(())
    }

    /// 8-byte reference store used by every commit path.
    pub(crate) fn write_reference(&mut self, at: ArenaOffset, value: u64) -> Result<()> {
        if self.fault == Fault::TornRootWrite {
            let b = value.to_le_bytes();
            self.pm_write(at, &b[..4])?;
            self.pm_write(ArenaOffset(at.get() + 4), &b[4..])
        } else {
            self.pm_write_u64(at, value)
        }
    }

    // ----- crashes -----

    /// Bytes that would survive a crash under `choice`.
    pub fn crash_image(&self, choice: &CrashChoice) -> Result<Vec<u8>> {
        let mut image = self.mem.clone();
        for (&line, u) in &self.uncertain {
            let keep = match choice {
                CrashChoice::AllPersisted => Persist::Volatile,
                CrashChoice::AllLost => Persist::Durable,
                CrashChoice::PerLine(map) => {
                    *map.get(&line).ok_or(Error::IncompleteChoice(line))?
                }
            };
            if keep == Persist::Durable {
                let s = (line * CACHELINE) as usize;
                image[s..s + CACHELINE as usize].copy_from_slice(&u.durable);
            }
        }
        Ok(image)
    }

    /// Like [`crash_image`](Self::crash_image) but decides per line with a
    /// closure; lines not divergent are left as is.
    pub fn crash_image_with(&self, mut keep: impl FnMut(u64) -> Persist) -> Vec<u8> {
        let mut image = self.mem.clone();
        for (&line, u) in &self.uncertain {
            if keep(line) == Persist::Durable {
                let s = (line * CACHELINE) as usize;
                image[s..s + CACHELINE as usize].copy_from_slice(&u.durable);
            }
        }
        image
    }

    /// Simulates a power failure. The returned arena holds the surviving
    /// image with every line clean and an empty trace; it has not been
    /// recovered.
    pub fn crash(&self, choice: &CrashChoice) -> Result<Arena> {
        let image = self.crash_image(choice)?;
        let mut a = Arena::from_image(image, self.params)?;
        a.record_trace = self.record_trace;
        Ok(a)
    }
}

fn write_header(mem: &mut [u8], layout: &Layout) {
    mem[0..8].copy_from_slice(MAGIC);
    mem[8..16].copy_from_slice(&FORMAT_VERSION.to_le_bytes());
    let h = ALLOC_HEADER_OFFSET as usize;
    mem[h..h + 8].copy_from_slice(&layout.table_capacity.to_le_bytes());
    mem[h + 8..h + 16].copy_from_slice(&layout.data_start.to_le_bytes());
}

pub(crate) fn le_u64(buf: &[u8], offset: u64) -> u64 {
    let o = offset as usize;
    u64::from_le_bytes(buf[o..o + 8].try_into().expect("8 bytes"))
}

/// Valid (nonzero size) records in the durable table that describe an
/// aligned range inside the data area.
pub(crate) fn scan_table(image: &[u8], layout: &Layout) -> Vec<AllocRecord> {
    (0..layout.table_capacity)
        .filter_map(|slot| {
            let at = layout.record_offset(slot);
            let size = le_u64(image, at + 8);
            if size == 0 {
                return None;
            }
            let offset = le_u64(image, at);
            let sane = offset.is_multiple_of(8)
                && size.is_multiple_of(8)
                && offset >= layout.data_start
                && offset.checked_add(size).is_some_and(|e| e <= layout.size);
            sane.then_some(AllocRecord { offset, size, slot })
        })
        .collect()
}

/// Every slot whose size field is nonzero, sane or not.
pub(crate) fn occupied_slots(image: &[u8], layout: &Layout) -> Vec<u64> {
    (0..layout.table_capacity)
        .filter(|&slot| le_u64(image, layout.record_offset(slot) + 8) != 0)
        .collect()
}

pub(crate) fn encode_name(name: &str) -> Result<[u8; ROOT_NAME_LEN]> {
    let b = name.as_bytes();
    if b.is_empty() || b.len() > ROOT_NAME_LEN || b.contains(&0) {
        return Err(Error::NameTooLong(name.to_string()));
    }
    let mut out = [0u8; ROOT_NAME_LEN];
    out[..b.len()].copy_from_slice(b);
    Ok(out)
}

pub(crate) fn decode_name(raw: &[u8]) -> String {
    let end = raw.iter().position(|&b| b == 0).unwrap_or(raw.len());
    String::from_utf8_lossy(&raw[..end]).into_owned()
}

#[cfg(test)]
mod tests;
