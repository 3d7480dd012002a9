//! Acceptance run: one PASS or FAIL line per criterion, nonzero exit if any
//! criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use mod_bench::{measure_growth, measure_sharing, run_bench, BenchConfig, BenchWorkload};
use mod_core::arena::{Arena, ArenaOptions, Fault, TraceKind};
use mod_core::checker::script::{self, Model};
use mod_core::checker::{check_trace, crash_fuzz, FuzzConfig, Script, ViolationKind, Workload};
use mod_core::ds::queue;
use mod_core::flush_model::{
    avg_flush_latency, fit_karp_flatt, group_latency, latency_reduction, sample, FlushModelParams,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn fail(e: impl std::fmt::Display) -> String {
    e.to_string()
}

const STRUCTURES: [Workload; 6] = [
    Workload::Map,
    Workload::Set,
    Workload::Stack,
    Workload::Queue,
    Workload::Vector,
    Workload::VecSwap,
];

fn one_fence_per_fase() -> Outcome {
    let workloads = [
        BenchWorkload::Map,
        BenchWorkload::Set,
        BenchWorkload::Stack,
        BenchWorkload::Queue,
        BenchWorkload::Vector,
        BenchWorkload::VecSwap,
    ];
    let mut parts = Vec::new();
    for w in workloads {
        let cfg = BenchConfig {
            iterations: 10_000,
            arena_size: 64 << 20,
            ..BenchConfig::new(w)
        };
        let r = run_bench(&cfg).map_err(fail)?;
        if r.ops != 10_000 || r.fences_min != 1 || r.fences_max != 1 {
            return Err(format!(
                "{w}: {} ops, fences per op between {} and {}",
                r.ops, r.fences_min, r.fences_max
            ));
        }
        parts.push(format!("{w} {}", r.fences_per_op));
    }
    Ok(format!("fences/op: {}", parts.join(", ")))
}

fn failure_atomicity() -> Outcome {
    let mut parts = Vec::new();
    for w in STRUCTURES {
        let s = Script::generate(w, 200, 64, 42);
        let r = crash_fuzz(&s, &FuzzConfig::default()).map_err(fail)?;
        if !r.violations.is_empty() || r.max_leak != 0 || !r.all_exhaustive() {
            return Err(format!(
                "{}: {} violations, {} breaches, max leak {}, exhaustive {}",
                w.name(),
                r.violations.len(),
                r.breaches(),
                r.max_leak,
                r.all_exhaustive()
            ));
        }
        parts.push(format!(
            "{} {} points/{} images",
            w.name(),
            r.crash_points(),
            r.choices_tested()
        ));
    }
    Ok(format!(
        "0 breaches, leak 0, all exhaustive: {}",
        parts.join(", ")
    ))
}

/// Replays `script` on an arena with `fault` injected and checks its trace.
fn traced_violations(script: &Script, fault: Fault) -> Result<Vec<ViolationKind>, String> {
    let mut a = Arena::in_memory(ArenaOptions::new(1 << 20)).map_err(fail)?;
    a.set_fault(fault);
    for op in &script.ops {
        // A mutant may corrupt state badly enough to fail an operation; the
        // trace up to that point is still evidence.
        if script::apply(&mut a, op).is_err() {
            break;
        }
    }
    let v = check_trace(a.trace(), a.layout().metadata_range()).map_err(fail)?;
    Ok(v.into_iter().map(|v| v.kind).collect())
}

fn mutation_sensitivity() -> Outcome {
    let mut detected = Vec::new();
    let mut missed = Vec::new();

    let map = Script::generate(Workload::Map, 100, 16, 1);
    let vec = Script::generate(Workload::Vector, 100, 16, 1);
    let stack = Script::generate(Workload::Stack, 100, 16, 1);

    let k = traced_violations(&map, Fault::DropFlush)?;
    match k.contains(&ViolationKind::UnflushedWrite) {
        true => detected.push("drop-flush (check_trace)"),
        false => missed.push("drop-flush"),
    }

    let cfg = FuzzConfig {
        fault: Fault::DropFence,
        stop_on_violation: true,
        ..FuzzConfig::default()
    };
    let r = crash_fuzz(&stack, &cfg).map_err(fail)?;
    match r.breaches() > 0 {
        true => detected.push("drop-fence (crash_fuzz)"),
        false => missed.push("drop-fence"),
    }

    let k = traced_violations(&vec, Fault::InPlaceWrite)?;
    match k.contains(&ViolationKind::WriteToOldMemory) {
        true => detected.push("in-place write (check_trace)"),
        false => missed.push("in-place write"),
    }

    let k = traced_violations(&stack, Fault::TornRootWrite)?;
    match k.contains(&ViolationKind::TornCommit) {
        true => detected.push("torn root write (check_trace)"),
        false => missed.push("torn root write"),
    }

    if missed.is_empty() {
        Ok(format!("4/4 detected: {}", detected.join(", ")))
    } else {
        Err(format!(
            "{}/4 detected, missed {}",
            detected.len(),
            missed.join(", ")
        ))
    }
}

fn structural_sharing() -> Outcome {
    let mut parts = Vec::new();
    for w in [BenchWorkload::Map, BenchWorkload::Vector] {
        let r = measure_sharing(w, 1_000_000, 1000, 42, 512 << 20).map_err(fail)?;
        if r.fraction >= 1e-4 || r.fraction.is_nan() {
            return Err(r.to_string());
        }
        parts.push(r.to_string());
    }
    Ok(parts.join("; "))
}

fn flush_model() -> Outcome {
    let p = FlushModelParams::<f64>::default();
    let one = avg_flush_latency(1, &p).map_err(fail)?;
    if one != 353.0 {
        return Err(format!("avg(1) = {one}"));
    }
    let red = latency_reduction(16, &p).map_err(fail)?;
    if !(0.74..=0.79).contains(&red) {
        return Err(format!("reduction at 16 = {red}"));
    }
    // Eight flushes each followed by a fence versus eight sharing one.
    let speedup = 1.0 - group_latency(8, &p) / (8.0 * group_latency(1, &p));
    if !(0.70..=0.78).contains(&speedup) {
        return Err(format!("8-vs-1 speedup = {speedup}"));
    }
    let truth = FlushModelParams::<f64>::new(0.23, 410.0).map_err(fail)?;
    let pts = sample(&truth, &[1, 2, 4, 8, 16, 32]).map_err(fail)?;
    let fit = fit_karp_flatt::<f64>(&pts).map_err(fail)?;
    let err = (fit.serial_fraction - truth.serial_fraction)
        .abs()
        .max((fit.base_latency_ns - truth.base_latency_ns).abs());
    if err > 1e-9 {
        return Err(format!("Karp-Flatt round trip off by {err}"));
    }
    Ok(format!(
        "avg(1) = {one} ns, reduction(16) = {:.3}%, 8-vs-1 speedup = {:.2}%, fit error {err:.1e}",
        red * 100.0,
        speedup * 100.0
    ))
}

fn oracle_equivalence() -> Outcome {
    let mut checked = 0usize;
    for w in STRUCTURES {
        for seed in 0..5u64 {
            let s = Script::generate(w, 10_000, 512, seed);
            let mut a =
                Arena::in_memory(ArenaOptions::new(32 << 20).record_trace(false)).map_err(fail)?;
            let mut m = Model::default();
            for (i, op) in s.ops.iter().enumerate() {
                let got = script::apply(&mut a, op).map_err(fail)?;
                let want = m.apply(op).map_err(fail)?;
                if got != want {
                    return Err(format!(
                        "{} seed {seed} op {i} {op:?}: {got:?} vs {want:?}",
                        w.name()
                    ));
                }
                let sample_point = i % 500 == 499 || i + 1 == s.ops.len();
                if sample_point && script::snapshot(&a).map_err(fail)? != m.snapshot() {
                    return Err(format!(
                        "{} seed {seed}: contents differ after op {i}",
                        w.name()
                    ));
                }
            }
            checked += s.ops.len();
        }
    }
    Ok(format!("{checked} ops over 6 workloads x 5 seeds match"))
}

fn growth() -> Outcome {
    let stack = measure_growth(BenchWorkload::Stack, 1000, 2000, 16 << 20).map_err(fail)?;
    if (stack.ratio - 2.0).abs() >= 0.1 {
        return Err(stack.to_string());
    }
    let map = measure_growth(BenchWorkload::Map, 100_000, 200_000, 256 << 20).map_err(fail)?;
    if !(1.5..=2.5).contains(&map.ratio) {
        return Err(map.to_string());
    }
    Ok(format!("stack {:.4}, map {:.4}", stack.ratio, map.ratio))
}

fn queue_reversal() -> Outcome {
    const LIST_NODE_BYTES: u64 = 24;
    let mut parts = Vec::new();
    for k in [1u64, 2, 7, 64, 500] {
        let mut a = Arena::in_memory(ArenaOptions::new(4 << 20)).map_err(fail)?;
        for i in 0..k {
            a.update_root("q", queue::new, |a, q| queue::enqueue(a, q, i))
                .map_err(fail)?;
        }
        a.drain_trace();
        let q = a.root_version("q").map_err(fail)?;
        if q.root != 0 {
            return Err(format!("front not empty after {k} enqueues"));
        }
        let mut f = a.begin_fase().map_err(fail)?;
        let (q2, v) = queue::dequeue(&mut f, &q).map_err(fail)?;
        f.commit_single("q", &q2).map_err(fail)?;
        let nodes = a
            .trace()
            .iter()
            .filter(|e| e.kind == TraceKind::Alloc && e.size == Some(LIST_NODE_BYTES))
            .count() as u64;
        if nodes != k || v != 0 {
            return Err(format!(
                "k = {k}: {nodes} list nodes allocated, dequeued {v}"
            ));
        }
        parts.push(format!("k={k}: {nodes}"));
    }
    Ok(format!(
        "list nodes allocated by the reversing dequeue: {}",
        parts.join(", ")
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("one fence per FASE", one_fence_per_fase),
        ("failure atomicity", failure_atomicity),
        ("mutation sensitivity", mutation_sensitivity),
        ("structural sharing", structural_sharing),
        ("flush-latency model", flush_model),
        ("oracle equivalence", oracle_equivalence),
        ("growth sanity", growth),
        ("queue reversal", queue_reversal),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = check();
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {} {name} ({secs:.1} s): {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {} {name} ({secs:.1} s): {detail}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {}/{} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
