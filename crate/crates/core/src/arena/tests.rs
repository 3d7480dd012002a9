use std::collections::HashMap;

use proptest::prelude::*;

use super::*;
use crate::flush_model::group_latency;

fn small() -> Arena {
    Arena::in_memory(ArenaOptions::new(64 * 1024).table_capacity(64)).unwrap()
}

#[test]
fn fresh_arena_is_empty() {
    let a = Arena::in_memory(ArenaOptions::new(64 << 20)).unwrap();
    assert!(a.roots().is_empty());
    assert!(matches!(a.get_root("m"), Err(Error::RootNotFound(_))));
    assert_eq!(a.live_bytes(), 0);
}

#[test]
fn first_alloc_at_data_start() {
    let mut a = small();
    let off = a.pm_alloc(24).unwrap();
    assert_eq!(off.get(), a.layout().data_start);
    let kinds: Vec<_> = a.trace().iter().map(|e| e.kind).collect();
    assert_eq!(
        kinds,
        [TraceKind::Alloc, TraceKind::Write, TraceKind::Flush]
    );
}

#[test]
fn allocations_are_disjoint_and_exhaust() {
    let mut a = small();
    let x = a.pm_alloc(64).unwrap().get();
    let y = a.pm_alloc(64).unwrap().get();
    assert!(x + 64 <= y || y + 64 <= x);
    let rest = a.free_bytes();
    assert!(matches!(a.pm_alloc(rest + 8), Err(Error::OutOfMemory(_))));
}

#[test]
fn free_then_reuse_and_invalid_frees() {
    let mut a = small();
    let _x = a.pm_alloc(40).unwrap();
    let y = a.pm_alloc(40).unwrap();
    a.pm_free(y).unwrap();
    assert_eq!(a.pm_alloc(40).unwrap(), y);
    assert!(matches!(
        a.pm_free(ArenaOffset::NULL),
        Err(Error::InvalidFree(0))
    ));
    a.pm_free(y).unwrap();
    assert!(matches!(a.pm_free(y), Err(Error::InvalidFree(_))));
}

#[test]
fn writes_dirty_lines_and_respect_allocations() {
    let mut a = small();
    let off = a.pm_alloc(128).unwrap();
    a.pm_write(off, &[1; 8]).unwrap();
    let line = off.get() / CACHELINE;
    assert_eq!(a.line_state(line).status, LineStatus::DirtyVolatile);
    a.pm_write(ArenaOffset::new(off.get() + 60), &[2; 8])
        .unwrap();
    assert_eq!(a.line_state(line + 1).status, LineStatus::DirtyVolatile);
    a.pm_free(off).unwrap();
    assert!(matches!(
        a.pm_write(off, &[3; 8]),
        Err(Error::WildWrite { .. })
    ));
    // Header areas are writable only inside a commit.
    assert!(a
        .pm_write(ArenaOffset::new(layout::UNDO_OFFSET), &[0; 8])
        .is_err());
}

#[test]
fn flush_and_fence_transitions() {
    let mut a = small();
    let off = a.pm_alloc(8).unwrap();
    let line = off.get() / CACHELINE;
    a.pm_write_u64(off, 7).unwrap();
    a.pm_flush(off);
    assert_eq!(a.line_state(line).status, LineStatus::FlushedUnfenced);
    a.pm_write_u64(off, 8).unwrap();
    assert_eq!(a.line_state(line).status, LineStatus::DirtyVolatile);
    a.pm_flush(off);
    a.pm_fence().unwrap();
    let st = a.line_state(line);
    assert_eq!(st.status, LineStatus::CleanDurable);
    assert_eq!(st.durable_content, st.volatile_content);
    // Flushing a clean line records the event but changes nothing.
    let before = a.counters().flushes;
    a.pm_flush(off);
    assert_eq!(a.counters().flushes, before + 1);
    assert_eq!(a.line_state(line).status, LineStatus::CleanDurable);
}

#[test]
fn fence_costs() {
    let mut a = small();
    a.pm_fence().unwrap();
    assert_eq!(a.sim_time_ns(), 0.0);
    let off = a.pm_alloc(8).unwrap();
    a.pm_fence().unwrap();
    // The allocation issued exactly one flush (its table record).
    assert_eq!(a.sim_time_ns(), 353.0);
    let t0 = a.sim_time_ns();
    for _ in 0..16 {
        a.pm_flush(off);
    }
    a.pm_fence().unwrap();
    let dt = a.sim_time_ns() - t0;
    assert!((dt - 1306.1).abs() < 1e-9, "{dt}");
}

#[test]
fn root_directory_read_your_write() {
    let mut a = small();
    let x = a.pm_alloc(40).unwrap();
    assert!(a.set_root("m", x).is_err(), "outside commit");
    a.commit_begin();
    a.set_root("m", x).unwrap();
    a.commit_end();
    assert_eq!(a.get_root("m").unwrap(), x);
    assert_eq!(a.roots(), vec![("m".to_string(), x)]);
}

#[test]
fn root_write_lost_without_fence() {
    let mut a = small();
    let x = a.pm_alloc(40).unwrap();
    a.commit_begin();
    a.set_root("m", x).unwrap();
    a.pm_fence().unwrap();
    a.commit_end();
    let y = a.pm_alloc(40).unwrap();
    a.commit_begin();
    a.set_root("m", y).unwrap();
    a.commit_end();
    let lost = a.crash(&CrashChoice::AllLost).unwrap();
    assert_eq!(lost.get_root("m").unwrap(), x);
    let kept = a.crash(&CrashChoice::AllPersisted).unwrap();
    assert_eq!(kept.get_root("m").unwrap(), y);
}

#[test]
fn directory_capacity() {
    let mut a = small();
    let x = a.pm_alloc(8).unwrap();
    a.commit_begin();
    for i in 0..layout::ROOT_ENTRIES {
        a.set_root(&format!("r{i}"), x).unwrap();
    }
    assert!(matches!(
        a.set_root("overflow", x),
        Err(Error::DirectoryFull)
    ));
    assert!(matches!(
        a.set_root("a-name-that-is-longer-than-32-bytes", x),
        Err(Error::NameTooLong(_))
    ));
}

#[test]
fn crash_choices() {
    let mut a = small();
    let off = a.pm_alloc(8).unwrap();
    a.pm_fence().unwrap();
    a.pm_write_u64(off, 99).unwrap();
    let line = off.get() / CACHELINE;
    let missing = CrashChoice::PerLine(HashMap::new());
    assert!(matches!(a.crash(&missing), Err(Error::IncompleteChoice(l)) if l == line));
    let kept = a.crash(&CrashChoice::AllPersisted).unwrap();
    assert_eq!(kept.volatile_image(), a.volatile_image());
    let lost = a.crash(&CrashChoice::AllLost).unwrap();
    assert_eq!(lost.read_u64(off.get()), 0);
    assert!(lost.uncertain_lines().is_empty());
    assert!(lost.trace().is_empty());
}

#[test]
fn file_backed_reopen() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("arena.pm");
    {
        let a = Arena::create(&path, ArenaOptions::new(256 * 1024)).unwrap();
        a.shutdown().unwrap();
    }
    let image = std::fs::read(&path).unwrap();
    let b = Arena::open(&path, Default::default()).unwrap();
    assert_eq!(b.volatile_image(), &image[..]);
    std::fs::write(&path, b"NOTARENA").unwrap();
    assert!(matches!(
        Arena::open(&path, Default::default()),
        Err(Error::CorruptArena(_))
    ));
}

#[test]
fn too_small_arena() {
    assert!(matches!(
        Arena::in_memory(ArenaOptions::new(4096)),
        Err(Error::ArenaTooSmall { .. })
    ));
}

// ----- property tests against an independent line-state interpreter -----

#[derive(Debug, Clone)]
enum Op {
    Alloc(u64),
    Free(usize),
    Write(usize, u64, u8, u8),
    Flush(usize, u64),
    Fence,
}

fn arb_ops() -> impl Strategy<Value = Vec<Op>> {
    let op = prop_oneof![
        (1u64..200).prop_map(Op::Alloc),
        (0usize..16).prop_map(Op::Free),
        (0usize..16, 0u64..200, 1u8..80, any::<u8>())
            .prop_map(|(i, o, l, b)| Op::Write(i, o, l, b)),
        (0usize..16, 0u64..200).prop_map(|(i, o)| Op::Flush(i, o)),
        Just(Op::Fence),
    ];
    prop::collection::vec(op, 1..120)
}

/// Reference model: statuses follow directly from the event kinds; durable
/// bytes change only when a fence retires a flushed line.
struct Model {
    status: HashMap<u64, LineStatus>,
    volatile: Vec<u8>,
    durable: Vec<u8>,
}

impl Model {
    fn apply(&mut self, ev: &TraceEvent, arena: &Arena) {
        match ev.kind {
            TraceKind::Write => {
                let off = ev.offset.unwrap();
                let len = ev.size.unwrap();
                for line in off / CACHELINE..=(off + len - 1) / CACHELINE {
                    self.status.insert(line, LineStatus::DirtyVolatile);
                }
                let s = off as usize;
                self.volatile[s..s + len as usize].copy_from_slice(arena.read(off, len as usize));
            }
            TraceKind::Flush => {
                let line = ev.offset.unwrap() / CACHELINE;
                if self.status.get(&line) == Some(&LineStatus::DirtyVolatile) {
                    self.status.insert(line, LineStatus::FlushedUnfenced);
                }
            }
            TraceKind::Fence => {
                let done: Vec<u64> = self
                    .status
                    .iter()
                    .filter(|(_, s)| **s == LineStatus::FlushedUnfenced)
                    .map(|(l, _)| *l)
                    .collect();
                for line in done {
                    self.status.remove(&line);
                    let s = (line * CACHELINE) as usize;
                    let e = s + CACHELINE as usize;
                    let v = self.volatile[s..e].to_vec();
                    self.durable[s..e].copy_from_slice(&v);
                }
            }
            _ => {}
        }
    }
}

fn run_ops(ops: &[Op], mut check: impl FnMut(&Arena, &Model)) -> Arena {
    let mut a = small();
    let mut model = Model {
        status: HashMap::new(),
        volatile: a.volatile_image().to_vec(),
        durable: a.volatile_image().to_vec(),
    };
    let mut live: Vec<(ArenaOffset, u64)> = Vec::new();
    for op in ops {
        let mark = a.trace().len();
        match *op {
            Op::Alloc(n) => {
                if let Ok(off) = a.pm_alloc(n) {
                    live.push((off, layout::align_up(n, 8)));
                }
            }
            Op::Free(i) if !live.is_empty() => {
                let (off, _) = live.remove(i % live.len());
                a.pm_free(off).unwrap();
            }
            Op::Write(i, o, l, b) if !live.is_empty() => {
                let (off, size) = live[i % live.len()];
                let start = o % size;
                let len = (l as u64).min(size - start);
                a.pm_write(ArenaOffset::new(off.get() + start), &vec![b; len as usize])
                    .unwrap();
            }
            Op::Flush(i, o) if !live.is_empty() => {
                let (off, size) = live[i % live.len()];
                a.pm_flush(ArenaOffset::new(off.get() + o % size));
            }
            Op::Fence => a.pm_fence().unwrap(),
            _ => {}
        }
        let new: Vec<TraceEvent> = a.trace()[mark..].to_vec();
        for ev in &new {
            model.apply(ev, &a);
        }
        check(&a, &model);
    }
    a
}

proptest! {
    #[test]
    fn line_states_match_interpreter(ops in arb_ops()) {
        run_ops(&ops, |a, m| {
            for line in 0..a.layout().size / CACHELINE {
                let expect = m.status.get(&line).copied().unwrap_or(LineStatus::CleanDurable);
                assert_eq!(a.line_state(line).status, expect, "line {line}");
            }
            assert_eq!(a.crash_image(&CrashChoice::AllLost).unwrap(), m.durable);
            assert_eq!(a.volatile_image(), &m.volatile[..]);
        });
    }

    #[test]
    fn clean_lines_survive_every_choice(ops in arb_ops(), seed in any::<u64>()) {
        let a = run_ops(&ops, |_, _| {});
        let lost = a.crash_image(&CrashChoice::AllLost).unwrap();
        let mut bits = seed;
        let image = a.crash_image_with(|_| {
            bits = bits.rotate_left(1) ^ 0x9e37_79b9_7f4a_7c15;
            if bits & 1 == 0 { Persist::Volatile } else { Persist::Durable }
        });
        let uncertain = a.uncertain_lines();
        for line in 0..a.layout().size / CACHELINE {
            let s = (line * CACHELINE) as usize;
            let e = s + CACHELINE as usize;
            if !uncertain.contains(&line) {
                prop_assert_eq!(&image[s..e], &lost[s..e]);
            }
        }
    }

    #[test]
    fn aligned_words_never_tear(ops in arb_ops(), seed in any::<u64>()) {
        // Every 8-byte aligned word of any crash image equals the durable or
        // the volatile value of that word.
        let a = run_ops(&ops, |_, _| {});
        let lost = a.crash_image(&CrashChoice::AllLost).unwrap();
        let vol = a.volatile_image();
        let mut bits = seed;
        let image = a.crash_image_with(|_| {
            bits = bits.wrapping_mul(6364136223846793005).wrapping_add(1);
            if bits >> 63 == 0 { Persist::Volatile } else { Persist::Durable }
        });
        for w in (0..image.len()).step_by(8) {
            let word = &image[w..w + 8];
            prop_assert!(word == &lost[w..w + 8] || word == &vol[w..w + 8]);
        }
    }

    #[test]
    fn time_is_sum_of_group_latencies(ops in arb_ops()) {
        let a = run_ops(&ops, |_, _| {});
        let mut expect = 0.0;
        let mut k = 0;
        for ev in a.trace() {
            match ev.kind {
                TraceKind::Flush => k += 1,
                TraceKind::Fence => {
                    expect += group_latency(k, a.params());
                    k = 0;
                }
                _ => {}
            }
        }
        prop_assert_eq!(a.sim_time_ns(), expect);
        prop_assert_eq!(a.pending_flushes(), k);
    }

    #[test]
    fn sequence_numbers_dense(ops in arb_ops()) {
        let a = run_ops(&ops, |_, _| {});
        for (i, ev) in a.trace().iter().enumerate() {
            prop_assert_eq!(ev.seq, i as u64);
        }
    }
}
