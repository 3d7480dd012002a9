//! Event trace of persistent-memory activity.
//!
//! Text form, one event per line: `SEQ KIND OFFSET SIZE` where `SEQ` is
//! decimal, `OFFSET` and `SIZE` are lowercase hex without prefix and `-`
//! marks an absent field.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TraceKind {
    Alloc,
    Write,
    Flush,
    Fence,
    CommitBegin,
    CommitEnd,
    Free,
}

impl TraceKind {
    pub fn code(self) -> &'static str {
        match self {
            TraceKind::Alloc => "A",
            TraceKind::Write => "W",
            TraceKind::Flush => "F",
            TraceKind::Fence => "S",
            TraceKind::CommitBegin => "CB",
            TraceKind::CommitEnd => "CE",
            TraceKind::Free => "R",
        }
    }

    fn has_offset(self) -> bool {
        !matches!(
            self,
            TraceKind::Fence | TraceKind::CommitBegin | TraceKind::CommitEnd
        )
    }

    fn has_size(self) -> bool {
        matches!(self, TraceKind::Alloc | TraceKind::Write | TraceKind::Free)
    }
}

impl FromStr for TraceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "A" => TraceKind::Alloc,
            "W" => TraceKind::Write,
            "F" => TraceKind::Flush,
            "S" => TraceKind::Fence,
            "CB" => TraceKind::CommitBegin,
            "CE" => TraceKind::CommitEnd,
            "R" => TraceKind::Free,
            other => return Err(Error::Parse(format!("unknown event kind {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TraceEvent {
    pub seq: u64,
    pub kind: TraceKind,
    pub offset: Option<u64>,
    pub size: Option<u64>,
}

impl TraceEvent {
    pub fn new(seq: u64, kind: TraceKind, offset: Option<u64>, size: Option<u64>) -> Self {
        Self {
            seq,
            kind,
            offset,
            size,
        }
    }
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.seq, self.kind.code())?;
        match self.offset {
            Some(o) => write!(f, " {o:x}")?,
            None => f.write_str(" -")?,
        }
        match self.size {
            Some(s) => write!(f, " {s:x}"),
            None => f.write_str(" -"),
        }
    }
}

impl FromStr for TraceEvent {
    type Err = Error;

    fn from_str(line: &str) -> Result<Self> {
        let mut parts = line.split_whitespace();
        let mut next = |what: &str| {
            parts
                .next()
                .ok_or_else(|| Error::Parse(format!("missing {what} in {line:?}")))
        };
        let seq = next("seq")?
            .parse::<u64>()
            .map_err(|e| Error::Parse(format!("bad seq in {line:?}: {e}")))?;
        let kind: TraceKind = next("kind")?.parse()?;
        let hex = |field: &str| -> Result<Option<u64>> {
            if field == "-" {
                Ok(None)
            } else {
                u64::from_str_radix(field, 16)
                    .map(Some)
                    .map_err(|e| Error::Parse(format!("bad hex {field:?}: {e}")))
            }
        };
        let offset = hex(next("offset")?)?;
        let size = hex(next("size")?)?;
        if offset.is_some() != kind.has_offset() || size.is_some() != kind.has_size() {
            return Err(Error::Parse(format!(
                "fields do not match kind in {line:?}"
            )));
        }
        Ok(TraceEvent::new(seq, kind, offset, size))
    }
}

/// Running totals, maintained whether or not events are retained.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    pub events: u64,
    pub allocs: u64,
    pub alloc_bytes: u64,
    pub writes: u64,
    pub write_bytes: u64,
    pub flushes: u64,
    pub fences: u64,
    pub frees: u64,
    pub free_bytes: u64,
    pub commits: u64,
}

impl Counters {
    pub(crate) fn record(&mut self, kind: TraceKind, size: Option<u64>) {
        self.events += 1;
        let size = size.unwrap_or(0);
        match kind {
            TraceKind::Alloc => {
                self.allocs += 1;
                self.alloc_bytes += size;
            }
            TraceKind::Write => {
                self.writes += 1;
                self.write_bytes += size;
            }
            TraceKind::Flush => self.flushes += 1,
            TraceKind::Fence => self.fences += 1,
            TraceKind::Free => {
                self.frees += 1;
                self.free_bytes += size;
            }
            TraceKind::CommitBegin => self.commits += 1,
            TraceKind::CommitEnd => {}
        }
    }

    /// Per-field difference `self - earlier`.
    pub fn since(&self, earlier: &Counters) -> Counters {
        Counters {
            events: self.events - earlier.events,
            allocs: self.allocs - earlier.allocs,
            alloc_bytes: self.alloc_bytes - earlier.alloc_bytes,
            writes: self.writes - earlier.writes,
            write_bytes: self.write_bytes - earlier.write_bytes,
            flushes: self.flushes - earlier.flushes,
            fences: self.fences - earlier.fences,
            frees: self.frees - earlier.frees,
            free_bytes: self.free_bytes - earlier.free_bytes,
            commits: self.commits - earlier.commits,
        }
    }
}

pub fn write_trace<W: Write>(mut out: W, events: &[TraceEvent]) -> Result<()> {
    for e in events {
        writeln!(out, "{e}")?;
    }
    Ok(())
}

/// Parses a trace, requiring dense sequence numbers.
pub fn read_trace<R: BufRead>(input: R) -> Result<Vec<TraceEvent>> {
    let mut events: Vec<TraceEvent> = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ev: TraceEvent = line.parse()?;
        if let Some(prev) = events.last() {
            if ev.seq != prev.seq + 1 {
                return Err(Error::Parse(format!(
                    "sequence gap: {} follows {}",
                    ev.seq, prev.seq
                )));
            }
        }
        events.push(ev);
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn text_form() {
        let e = TraceEvent::new(7, TraceKind::Write, Some(0x1a40), Some(0x18));
        assert_eq!(e.to_string(), "7 W 1a40 18");
        let f = TraceEvent::new(8, TraceKind::Fence, None, None);
        assert_eq!(f.to_string(), "8 S - -");
        let fl = TraceEvent::new(9, TraceKind::Flush, Some(0x40), None);
        assert_eq!(fl.to_string(), "9 F 40 -");
    }

    #[test]
    fn rejects_gaps_and_mismatched_fields() {
        assert!(read_trace("0 S - -\n2 S - -\n".as_bytes()).is_err());
        assert!("0 S 10 -".parse::<TraceEvent>().is_err());
        assert!("0 W 10 -".parse::<TraceEvent>().is_err());
        assert!("0 Q - -".parse::<TraceEvent>().is_err());
    }

    fn arb_event() -> impl Strategy<Value = (TraceKind, u64, u64)> {
        (0usize..7, any::<u64>(), 1u64..1 << 40).prop_map(|(k, o, s)| {
            let kind = [
                TraceKind::Alloc,
                TraceKind::Write,
                TraceKind::Flush,
                TraceKind::Fence,
                TraceKind::CommitBegin,
                TraceKind::CommitEnd,
                TraceKind::Free,
            ][k];
            (kind, o, s)
        })
    }

    proptest! {
        #[test]
        fn text_round_trip(raw in prop::collection::vec(arb_event(), 0..64)) {
            let events: Vec<_> = raw
                .into_iter()
                .enumerate()
                .map(|(i, (kind, o, s))| {
                    TraceEvent::new(
                        i as u64,
                        kind,
                        kind.has_offset().then_some(o),
                        kind.has_size().then_some(s),
                    )
                })
                .collect();
            let mut buf = Vec::new();
            write_trace(&mut buf, &events).unwrap();
            prop_assert_eq!(read_trace(&buf[..]).unwrap(), events);
        }
    }
}
