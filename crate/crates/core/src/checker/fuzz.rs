//! Crash-injection fuzzing.
//!
//! The workload runs on a small in-memory arena with an observer attached.
//! After every event of every FASE the observer builds the crash images the
//! current cache state allows, recovers each one and checks that every
//! structure holds an admissible oracle state and that nothing leaked.
//!
//! Admissible states: a commit's root store is ordered by the fence of the
//! *next* commit, so until FASE `k` issues its first fence a crash may
//! still lose FASE `k - 1`. Before that fence the admissible states are
//! those before FASE `k - 1` and before FASE `k`; after it, those before
//! and after FASE `k`.
//!
//! Only divergent lines (durable content differs from cached content)
//! change an image, and of those only lines recovery can read matter: the
//! root directory, undo log, allocation records naming a node reachable in
//! some image, and the lines of such nodes. Reachability is over-approximated
//! across both versions of every word, so pruning the rest is sound.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::io::Write;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arena::layout::{
    line_of, ALLOC_RECORDS_OFFSET, ALLOC_RECORD_SIZE, ROOT_ENTRIES, UNDO_CAPACITY,
    UNDO_COUNT_OFFSET, UNDO_ENTRIES_OFFSET, UNDO_ENTRY_SIZE,
};
use crate::arena::{Arena, ArenaOptions, Fault, CACHELINE};
use crate::checker::script::{self, Script, Snapshot};
use crate::checker::{Violation, ViolationKind};
use crate::error::{Error, Result};
use crate::flush_model::FlushModelParams;
use crate::reclaim::{leak_check, recover};

const LINE: usize = CACHELINE as usize;

/// How crash images are chosen at each crash point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    /// Every combination when at most [`FuzzConfig::exhaustive_limit`]
    /// relevant lines diverge, otherwise `fallback_samples` random ones.
    Exhaustive,
    /// This many random combinations plus the two extremes.
    Samples(usize),
}

#[derive(Debug, Clone)]
pub struct FuzzConfig {
    pub sampling: Sampling,
    pub seed: u64,
    pub fault: Fault,
    pub arena_size: u64,
    pub table_capacity: u64,
    pub exhaustive_limit: usize,
    pub fallback_samples: usize,
    /// Stop injecting crashes once a violation is found (mutant hunting).
    pub stop_on_violation: bool,
}

impl Default for FuzzConfig {
    fn default() -> Self {
        FuzzConfig {
            sampling: Sampling::Exhaustive,
            seed: 0,
            fault: Fault::None,
            arena_size: 128 << 10,
            table_capacity: 1024,
            exhaustive_limit: 16,
            fallback_samples: 256,
            stop_on_violation: false,
        }
    }
}

/// Outcome at one event position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrashPoint {
    /// Seq of the event after which the crash is injected.
    pub seq: u64,
    /// Index of the FASE (counting update ops only).
    pub fase: usize,
    pub divergent_lines: usize,
    pub relevant_lines: usize,
    /// Distinct crash images covered.
    pub choices_tested: u64,
    pub exhaustive: bool,
    /// Image set identical to the previous point's; its result was reused.
    pub reused: bool,
    pub violations: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FuzzReport {
    pub fases: usize,
    pub points: Vec<CrashPoint>,
    pub violations: Vec<Violation>,
    /// Images actually rebuilt and recovered.
    pub recoveries: u64,
    /// Largest number of bytes leaked by any recovered image.
    pub max_leak: u64,
}

impl FuzzReport {
    pub fn crash_points(&self) -> usize {
        self.points.len()
    }

    pub fn choices_tested(&self) -> u64 {
        self.points.iter().map(|p| p.choices_tested).sum()
    }

    pub fn breaches(&self) -> usize {
        self.violations
            .iter()
            .filter(|v| v.kind == ViolationKind::AtomicityBreach)
            .count()
    }

    pub fn all_exhaustive(&self) -> bool {
        self.points.iter().all(|p| p.exhaustive)
    }

    /// Machine-readable form: `crash_point,choices_tested,violations`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["crash_point", "choices_tested", "violations"])
            .map_err(csv_err)?;
        for p in &self.points {
            w.write_record([
                p.seq.to_string(),
                p.choices_tested.to_string(),
                p.violations.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

impl fmt::Display for FuzzReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} FASEs, {} crash points, {} images covered ({} recovered), {} violations, max leak {} bytes",
            self.fases,
            self.crash_points(),
            self.choices_tested(),
            self.recoveries,
            self.violations.len(),
            self.max_leak
        )?;
        for v in self.violations.iter().take(10) {
            writeln!(f, "  {v}")?;
        }
        Ok(())
    }
}

struct FaseCtx {
    index: usize,
    fences_at_start: u64,
}

struct Fuzzer {
    cfg: FuzzConfig,
    params: FlushModelParams<f64>,
    states: Vec<Snapshot>,
    current: Option<FaseCtx>,
    prev_sig: Option<u64>,
    prev_outcome: (u64, usize, bool),
    report: FuzzReport,
}

/// Both versions of the word at `off`: cached, and durable if different.
fn word_versions(a: &Arena, off: u64) -> [Option<u64>; 2] {
    let v = a.read_u64(off);
    let d = a.durable_line(off / CACHELINE).map(|l| {
        let i = (off % CACHELINE) as usize;
        u64::from_le_bytes(l[i..i + 8].try_into().expect("8 bytes"))
    });
    [Some(v), d.filter(|&d| d != v)]
}

/// Lines recovery might read in some crash image.
fn relevant_lines(a: &Arena, divergent: &[u64]) -> BTreeSet<u64> {
    let layout = a.layout();
    let records_first = line_of(ALLOC_RECORDS_OFFSET);
    let data_first = line_of(layout.data_start);

    // Allocation sizes named by either version of the table.
    let mut sizes: HashMap<u64, u64> = HashMap::new();
    let mut note = |off: u64, size: u64| {
        if size != 0 && off.is_multiple_of(8) && off >= layout.data_start && off < layout.size {
            let e = sizes.entry(off).or_insert(0);
            *e = (*e).max(size.min(layout.size - off));
        }
    };
    for r in a.allocations() {
        note(r.offset, r.size);
    }
    let mut record_lines: Vec<(u64, Vec<u64>)> = Vec::new();
    for &line in divergent {
        if line < records_first || line >= data_first {
            continue;
        }
        let durable = a.durable_line(line).expect("divergent line is uncertain");
        let mut named = Vec::new();
        for k in 0..(CACHELINE / ALLOC_RECORD_SIZE) {
            let at = line * CACHELINE + k * ALLOC_RECORD_SIZE;
            if at < ALLOC_RECORDS_OFFSET {
                continue;
            }
            let i = (k * ALLOC_RECORD_SIZE) as usize;
            let d_off = u64::from_le_bytes(durable[i..i + 8].try_into().expect("8"));
            let d_size = u64::from_le_bytes(durable[i + 8..i + 16].try_into().expect("8"));
            note(d_off, d_size);
            named.push(d_off);
            named.push(a.read_u64(at));
        }
        record_lines.push((line, named));
    }

    let mut roots = Vec::new();
    for i in 0..ROOT_ENTRIES {
        roots.extend(
            word_versions(a, crate::arena::Layout::root_slot_offset(i))
                .into_iter()
                .flatten(),
        );
    }
    let count = word_versions(a, UNDO_COUNT_OFFSET)
        .into_iter()
        .flatten()
        .max()
        .unwrap_or(0)
        .min(UNDO_CAPACITY as u64);
    for i in 0..count {
        let e = UNDO_ENTRIES_OFFSET + i * UNDO_ENTRY_SIZE + 8;
        roots.extend(word_versions(a, e).into_iter().flatten());
    }

    let mut seen: HashSet<u64> = HashSet::new();
    let mut queue: VecDeque<u64> = roots
        .into_iter()
        .filter(|r| sizes.contains_key(r))
        .collect();
    let mut lines = BTreeSet::new();
    while let Some(off) = queue.pop_front() {
        if !seen.insert(off) {
            continue;
        }
        let size = sizes[&off];
        for line in line_of(off)..=line_of(off + size - 1) {
            lines.insert(line);
        }
        for w in 0..size / 8 {
            for v in word_versions(a, off + 8 * w).into_iter().flatten() {
                if sizes.contains_key(&v) && !seen.contains(&v) {
                    queue.push_back(v);
                }
            }
        }
    }

    divergent
        .iter()
        .copied()
        .filter(|&l| {
            if l < records_first {
                true
            } else if l < data_first {
                record_lines
                    .iter()
                    .find(|(line, _)| *line == l)
                    .is_some_and(|(_, named)| named.iter().any(|o| seen.contains(o)))
            } else {
                lines.contains(&l)
            }
        })
        .collect()
}

impl Fuzzer {
    fn admissible(&self, ctx: &FaseCtx, fenced: bool) -> [usize; 2] {
        let k = ctx.index;
        if fenced {
            [k, k + 1]
        } else {
            [k.saturating_sub(1), k]
        }
    }

    fn on_event(&mut self, a: &Arena) {
        let Some(ctx) = self.current.as_ref() else {
            return;
        };
        if self.cfg.stop_on_violation && !self.report.violations.is_empty() {
            return;
        }
        let seq = a.next_seq() - 1;
        let fase = ctx.index;
        let fenced = a.counters().fences > ctx.fences_at_start;
        let admissible = self.admissible(ctx, fenced);
        let divergent = a.divergent_lines();
        let relevant: Vec<u64> = relevant_lines(a, &divergent).into_iter().collect();

        let mut h = DefaultHasher::new();
        (fase, fenced).hash(&mut h);
        for &l in &relevant {
            l.hash(&mut h);
            a.durable_line(l).hash(&mut h);
            let s = (l * CACHELINE) as usize;
            a.volatile_image()[s..s + LINE].hash(&mut h);
        }
        let sig = h.finish();
        if self.prev_sig == Some(sig) {
            let (choices, violations, exhaustive) = self.prev_outcome;
            self.report.points.push(CrashPoint {
                seq,
                fase,
                divergent_lines: divergent.len(),
                relevant_lines: relevant.len(),
                choices_tested: choices,
                exhaustive,
                reused: true,
                violations,
            });
            return;
        }

        let n = relevant.len();
        let exhaustive = match self.cfg.sampling {
            Sampling::Exhaustive => n <= self.cfg.exhaustive_limit,
            Sampling::Samples(_) => false,
        };
        let durable: Vec<[u8; LINE]> = relevant
            .iter()
            .map(|&l| *a.durable_line(l).expect("divergent line is uncertain"))
            .collect();
        let volatile: Vec<[u8; LINE]> = relevant
            .iter()
            .map(|&l| {
                let s = (l * CACHELINE) as usize;
                a.volatile_image()[s..s + LINE].try_into().expect("line")
            })
            .collect();
        let mut image = a.volatile_image().to_vec();
        let set_line = |image: &mut [u8], i: usize, keep_durable: bool| {
            let s = (relevant[i] * CACHELINE) as usize;
            let src = if keep_durable {
                &durable[i]
            } else {
                &volatile[i]
            };
            image[s..s + LINE].copy_from_slice(src);
        };

        let mut masks: Vec<u64> = Vec::new();
        if exhaustive {
            // Gray code order: consecutive images differ in one line.
            masks.extend((0..1u64 << n).map(|i| i ^ (i >> 1)));
        } else {
            let k = match self.cfg.sampling {
                Sampling::Samples(k) => k,
                Sampling::Exhaustive => self.cfg.fallback_samples,
            };
            let full = if n >= 64 { u64::MAX } else { (1u64 << n) - 1 };
            let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ seq.rotate_left(17));
            let mut seen = HashSet::new();
            for m in [0, full] {
                if seen.insert(m) {
                    masks.push(m);
                }
            }
            for _ in 0..k {
                let m = if n <= 64 {
                    rng.gen::<u64>() & full
                } else {
                    rng.gen::<u64>()
                };
                if seen.insert(m) {
                    masks.push(m);
                }
            }
        }

        let mut violations = 0;
        let mut current: u64 = 0;
        for &mask in &masks {
            let diff = mask ^ current;
            for i in 0..n.min(64) {
                if diff >> i & 1 == 1 {
                    set_line(&mut image, i, mask >> i & 1 == 1);
                }
            }
            // Lines past the 64th stay cached when sampling very wide states.
            current = mask;
            if self.cfg.stop_on_violation && violations > 0 {
                break;
            }
            self.report.recoveries += 1;
            if let Err(detail) = self.evaluate(&image, admissible) {
                violations += 1;
                self.report.violations.push(Violation {
                    kind: ViolationKind::AtomicityBreach,
                    seq,
                    detail: format!("FASE {fase}, durable-line mask {mask:#x}: {detail}"),
                });
            }
        }
        let choices = masks.len() as u64;
        self.prev_sig = Some(sig);
        self.prev_outcome = (choices, violations, exhaustive);
        self.report.points.push(CrashPoint {
            seq,
            fase,
            divergent_lines: divergent.len(),
            relevant_lines: n,
            choices_tested: choices,
            exhaustive,
            reused: false,
            violations,
        });
    }

    fn evaluate(
        &mut self,
        image: &[u8],
        admissible: [usize; 2],
    ) -> std::result::Result<(), String> {
        let mut r = Arena::from_image(image.to_vec(), self.params).map_err(|e| e.to_string())?;
        recover(&mut r).map_err(|e| format!("recovery failed: {e}"))?;
        let snap = script::snapshot(&r).map_err(|e| format!("enumeration failed: {e}"))?;
        let leak = leak_check(&r).map_err(|e| e.to_string())?;
        self.report.max_leak = self.report.max_leak.max(leak);
        if leak != 0 {
            return Err(format!("{leak} bytes leaked after recovery"));
        }
        if admissible.iter().any(|&i| self.states[i] == snap) {
            Ok(())
        } else {
            Err(format!(
                "recovered {snap:?}, expected state {} or {}",
                admissible[0], admissible[1]
            ))
        }
    }
}

/// Replays `script`, injecting crashes after every event of every FASE.
///
/// Fails only if the workload itself cannot run on an unmutated library;
/// with a fault injected, a workload failure is reported as a violation.
pub fn crash_fuzz(script: &Script, cfg: &FuzzConfig) -> Result<FuzzReport> {
    let states = script.oracle_states()?;
    let mut arena =
        Arena::in_memory(ArenaOptions::new(cfg.arena_size).table_capacity(cfg.table_capacity))?;
    arena.set_fault(cfg.fault);
    let fuzzer = Arc::new(Mutex::new(Fuzzer {
        cfg: cfg.clone(),
        params: *arena.params(),
        states,
        current: None,
        prev_sig: None,
        prev_outcome: (0, 0, true),
        report: FuzzReport::default(),
    }));
    let hook = fuzzer.clone();
    arena.set_observer(Some(Box::new(move |a: &Arena| {
        hook.lock().expect("fuzzer lock").on_event(a);
    })));

    let mut k = 0;
    for op in &script.ops {
        if !op.is_update() {
            script::apply(&mut arena, op)?;
            continue;
        }
        fuzzer.lock().expect("fuzzer lock").current = Some(FaseCtx {
            index: k,
            fences_at_start: arena.counters().fences,
        });
        let r = script::apply(&mut arena, op);
        let mut f = fuzzer.lock().expect("fuzzer lock");
        f.current = None;
        f.report.fases += 1;
        if let Err(e) = r {
            if cfg.fault == Fault::None {
                return Err(e);
            }
            let seq = arena.next_seq().saturating_sub(1);
            f.report.violations.push(Violation {
                kind: ViolationKind::AtomicityBreach,
                seq,
                detail: format!("workload failed in FASE {k}: {e}"),
            });
            break;
        }
        k += 1;
    }
    arena.set_observer(None);
    let report = std::mem::take(&mut fuzzer.lock().expect("fuzzer lock").report);
    Ok(report)
}
