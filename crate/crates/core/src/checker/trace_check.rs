use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::ops::Range;

use crate::arena::layout::line_of;
use crate::arena::{TraceEvent, TraceKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ViolationKind {
    /// Store outside a commit to memory not allocated in the current FASE.
    WriteToOldMemory,
    /// A stored line reached a fence (or the end of the trace) unflushed.
    UnflushedWrite,
    /// A commit-region store to existing memory that is not one aligned
    /// 8-byte word.
    TornCommit,
    /// A recovered crash image matched neither admissible state.
    AtomicityBreach,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Offending event, or the crash point for atomicity breaches.
    pub seq: u64,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at {}: {}", self.kind, self.seq, self.detail)
    }
}

/// Streaming form of [`check_trace`]: feed events in order, then call
/// [`finish`](Self::finish).
#[derive(Debug)]
pub struct TraceChecker {
    metadata: Range<u64>,
    next_seq: Option<u64>,
    in_commit: bool,
    /// Allocations made since the last commit ended: offset to size.
    fresh: BTreeMap<u64, u64>,
    /// Written lines not yet flushed, with the seq of their last store.
    dirty: HashMap<u64, u64>,
    violations: Vec<Violation>,
}

impl TraceChecker {
    /// `metadata` is the allocator's own table, whose bookkeeping stores
    /// are exempt from the fresh-memory rule.
    pub fn new(metadata: Range<u64>) -> Self {
        TraceChecker {
            metadata,
            next_seq: None,
            in_commit: false,
            fresh: BTreeMap::new(),
            dirty: HashMap::new(),
            violations: Vec::new(),
        }
    }

    fn is_fresh(&self, off: u64, len: u64) -> bool {
        self.fresh
            .range(..=off)
            .next_back()
            .is_some_and(|(&o, &s)| off + len <= o + s)
    }

    fn report(&mut self, kind: ViolationKind, seq: u64, detail: String) {
        self.violations.push(Violation { kind, seq, detail });
    }

    fn flush_check(&mut self, at: &str) {
        let mut lines: Vec<(u64, u64)> = self.dirty.drain().collect();
        lines.sort_unstable_by_key(|&(line, seq)| (seq, line));
        for (line, seq) in lines {
            self.report(
                ViolationKind::UnflushedWrite,
                seq,
                format!("line {line} written at {seq} was not flushed before {at}"),
            );
        }
    }

    /// Fails only on malformed input (sequence gaps, missing fields).
    pub fn feed(&mut self, ev: &TraceEvent) -> Result<()> {
        if let Some(want) = self.next_seq {
            if ev.seq != want {
                return Err(Error::Parse(format!(
                    "trace sequence jumps from {} to {}",
                    want - 1,
                    ev.seq
                )));
            }
        }
        self.next_seq = Some(ev.seq + 1);
        let need = |v: Option<u64>, what: &str| {
            v.ok_or_else(|| Error::Parse(format!("event {} lacks its {what}", ev.seq)))
        };
        match ev.kind {
            TraceKind::Alloc => {
                let off = need(ev.offset, "offset")?;
                let size = need(ev.size, "size")?;
                self.fresh.insert(off, size);
            }
            TraceKind::Free => {
                let off = need(ev.offset, "offset")?;
                self.fresh.remove(&off);
            }
            TraceKind::Write => {
                let off = need(ev.offset, "offset")?;
                let len = need(ev.size, "size")?;
                if len == 0 {
                    return Err(Error::Parse(format!("event {} is an empty write", ev.seq)));
                }
                for line in line_of(off)..=line_of(off + len - 1) {
                    self.dirty.insert(line, ev.seq);
                }
                let metadata = off >= self.metadata.start && off + len <= self.metadata.end;
                let fresh = self.is_fresh(off, len);
                if self.in_commit {
                    if !fresh && !metadata && (off % 8 != 0 || len != 8) {
                        self.report(
                            ViolationKind::TornCommit,
                            ev.seq,
                            format!(
                                "commit store of {len} bytes at {off:#x} is not one aligned word"
                            ),
                        );
                    }
                } else if !fresh && !metadata {
                    self.report(
                        ViolationKind::WriteToOldMemory,
                        ev.seq,
                        format!("store of {len} bytes at {off:#x} outside memory allocated in this section"),
                    );
                }
            }
            TraceKind::Flush => {
                let off = need(ev.offset, "offset")?;
                self.dirty.remove(&line_of(off));
            }
            TraceKind::Fence => self.flush_check(&format!("fence {}", ev.seq)),
            TraceKind::CommitBegin => self.in_commit = true,
            TraceKind::CommitEnd => {
                self.in_commit = false;
                self.fresh.clear();
            }
        }
        Ok(())
    }

    pub fn violations(&self) -> &[Violation] {
        &self.violations
    }

    /// Applies the end-of-trace flush rule and returns every violation.
    pub fn finish(mut self) -> Vec<Violation> {
        self.flush_check("the end of the trace");
        self.violations
    }
}

/// Checks a complete trace. `metadata` is the allocation-table region of
/// the arena that produced it (see [`Layout::metadata_range`]).
///
/// [`Layout::metadata_range`]: crate::arena::Layout::metadata_range
pub fn check_trace(events: &[TraceEvent], metadata: Range<u64>) -> Result<Vec<Violation>> {
    let mut c = TraceChecker::new(metadata);
    for ev in events {
        c.feed(ev)?;
    }
    Ok(c.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arena::{Arena, ArenaOptions, Fault};
    use crate::ds::{map, stack, vector};

    fn arena() -> Arena {
        Arena::in_memory(ArenaOptions::new(1 << 20).record_trace(true)).unwrap()
    }

    fn check(a: &Arena) -> Vec<Violation> {
        check_trace(a.trace(), a.layout().metadata_range()).unwrap()
    }

    fn workload(a: &mut Arena) {
        for i in 0..20 {
            a.update_root("m", map::new, |a, m| map::insert(a, m, i % 7, i))
                .unwrap();
            a.update_root("s", stack::new, |a, s| stack::push(a, s, i))
                .unwrap();
            a.update_root("v", vector::new, |a, v| {
                if v.len() < 5 {
                    vector::push_back(a, v, i)
                } else {
                    vector::update(a, v, i % 5, i)
                }
            })
            .unwrap();
        }
    }

    #[test]
    fn library_traces_are_clean() {
        let mut a = arena();
        workload(&mut a);
        assert_eq!(check(&a), vec![]);
    }

    #[test]
    fn deleted_flush_is_reported_once() {
        let mut a = arena();
        workload(&mut a);
        let mut t = a.trace().to_vec();
        let i = t.iter().rposition(|e| e.kind == TraceKind::Flush).unwrap();
        let line = line_of(t[i].offset.unwrap());
        t.remove(i);
        for (n, e) in t.iter_mut().enumerate() {
            e.seq = n as u64;
        }
        let v = check_trace(&t, a.layout().metadata_range()).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ViolationKind::UnflushedWrite);
        assert!(v[0].detail.contains(&format!("line {line} ")));
    }

    #[test]
    fn write_to_old_memory_is_reported() {
        let mut a = arena();
        workload(&mut a);
        let old = a.root_version("s").unwrap();
        let n = a.trace().len() as u64;
        let mut t = a.trace().to_vec();
        t.push(TraceEvent::new(
            n,
            TraceKind::Write,
            Some(old.offset.get()),
            Some(8),
        ));
        t.push(TraceEvent::new(
            n + 1,
            TraceKind::Flush,
            Some(old.offset.get()),
            None,
        ));
        let v = check_trace(&t, a.layout().metadata_range()).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ViolationKind::WriteToOldMemory);
        assert_eq!(v[0].seq, n);
    }

    #[test]
    fn seeded_faults_are_flagged() {
        for (fault, kind) in [
            (Fault::DropFlush, ViolationKind::UnflushedWrite),
            (Fault::InPlaceWrite, ViolationKind::WriteToOldMemory),
            (Fault::TornRootWrite, ViolationKind::TornCommit),
        ] {
            let mut a = arena();
            a.set_fault(fault);
            workload(&mut a);
            let v = check(&a);
            assert!(v.iter().any(|x| x.kind == kind), "{fault:?}: {v:?}");
        }
    }

    #[test]
    fn malformed_traces_are_errors() {
        let t = [
            TraceEvent::new(0, TraceKind::Fence, None, None),
            TraceEvent::new(2, TraceKind::Fence, None, None),
        ];
        assert!(matches!(check_trace(&t, 0..0), Err(Error::Parse(_))));
        let t = [TraceEvent::new(0, TraceKind::Write, None, None)];
        assert!(check_trace(&t, 0..0).is_err());
    }

    #[test]
    fn streaming_matches_batch() {
        let mut a = arena();
        a.set_fault(Fault::DropFlush);
        workload(&mut a);
        let mut c = TraceChecker::new(a.layout().metadata_range());
        for chunk in a.trace().chunks(7) {
            for e in chunk {
                c.feed(e).unwrap();
            }
        }
        assert_eq!(c.finish(), check(&a));
    }
}
