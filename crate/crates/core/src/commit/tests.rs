use std::sync::{Arc, Mutex};

use super::*;
use crate::arena::{ArenaOptions, CrashChoice, TraceKind};
use crate::ds::{map, stack};
use crate::reclaim::{leak_check, recover};

fn arena() -> Arena {
    Arena::in_memory(ArenaOptions::new(1 << 20).record_trace(true)).unwrap()
}

fn fences(a: &Arena) -> u64 {
    a.counters().fences
}

fn stack_of(a: &Arena, name: &str) -> Vec<u64> {
    a.root_version(name).unwrap().contents(a).unwrap()
}

fn push(a: &mut Arena, name: &str, v: u64) {
    a.update_root(name, stack::new, |a, s| stack::push(a, s, v))
        .unwrap();
}

#[test]
fn single_commit_costs_one_fence() {
    let mut a = arena();
    push(&mut a, "s", 1);
    let before = fences(&a);
    push(&mut a, "s", 2);
    assert_eq!(fences(&a) - before, 1);
    assert_eq!(stack_of(&a, "s"), vec![2, 1]);
    let kinds: Vec<TraceKind> = a.trace().iter().map(|e| e.kind).collect();
    let cb = kinds
        .iter()
        .rposition(|&k| k == TraceKind::CommitBegin)
        .unwrap();
    let ce = kinds
        .iter()
        .rposition(|&k| k == TraceKind::CommitEnd)
        .unwrap();
    assert!(kinds[cb..ce].contains(&TraceKind::Fence));
}

#[test]
fn root_store_becomes_durable_at_the_next_fence() {
    let mut a = arena();
    push(&mut a, "s", 1);
    push(&mut a, "s", 2);
    let mut lost = a.crash(&CrashChoice::AllLost).unwrap();
    recover(&mut lost).unwrap();
    assert_eq!(stack_of(&lost, "s"), vec![1]);
    let mut kept = a.crash(&CrashChoice::AllPersisted).unwrap();
    recover(&mut kept).unwrap();
    assert_eq!(stack_of(&kept, "s"), vec![2, 1]);
    push(&mut a, "t", 9);
    let mut lost = a.crash(&CrashChoice::AllLost).unwrap();
    recover(&mut lost).unwrap();
    assert_eq!(stack_of(&lost, "s"), vec![2, 1]);
}

#[test]
fn replaced_versions_wait_for_a_later_fence() {
    let mut a = arena();
    push(&mut a, "s", 1);
    let old = a.root_version("s").unwrap();
    push(&mut a, "s", 2);
    assert!(a.allocation(old.offset).is_some());
    assert!(a.pending_reclaim().any(|o| o == old.offset.get()));
    push(&mut a, "s", 3);
    assert!(a.allocation(old.offset).is_none());
    assert_eq!(leak_check(&a).unwrap(), 0);
}

#[test]
fn intermediates_are_released() {
    let mut a = arena();
    let mut f = a.begin_fase().unwrap();
    let m = map::new(&mut f).unwrap();
    let m1 = map::insert(&mut f, &m, 1, 1).unwrap();
    let m2 = map::insert(&mut f, &m1, 2, 2).unwrap();
    f.commit_single("m", &m2).unwrap();
    push(&mut a, "other", 0);
    push(&mut a, "other", 0);
    assert_eq!(leak_check(&a).unwrap(), 0);
    let reach = crate::reclaim::reachability(&a).unwrap();
    let pending = a.pending_reclaim().count();
    assert_eq!(a.live_allocations(), reach.in_edges.len() + pending);
}

#[test]
fn abort_frees_everything() {
    let mut a = arena();
    push(&mut a, "s", 1);
    let live = a.live_bytes();
    {
        let mut f = a.begin_fase().unwrap();
        let s = f.root_version("s").unwrap();
        let s = stack::push(&mut f, &s, 5).unwrap();
        stack::push(&mut f, &s, 6).unwrap();
    }
    assert_eq!(a.live_bytes(), live);
    assert!(!a.in_fase());
    assert_eq!(stack_of(&a, "s"), vec![1]);
}

#[test]
fn nested_fase_is_misuse() {
    let mut a = arena();
    let mut f = a.begin_fase().unwrap();
    assert!(matches!(f.begin_fase(), Err(Error::Misuse(_))));
}

#[test]
fn sibling_commit_is_one_fence_and_atomic() {
    let mut a = arena();
    let mut f = a.begin_fase().unwrap();
    let x = stack::new(&mut f).unwrap();
    let y = stack::new(&mut f).unwrap();
    f.commit_siblings("p", &[("x", &x), ("y", &y)]).unwrap();
    let before = fences(&a);
    let mut f = a.begin_fase().unwrap();
    let p = ParentObject::load_root(&f, "p").unwrap();
    let x = p.child(&f, "x").unwrap();
    let y = p.child(&f, "y").unwrap();
    let x = stack::push(&mut f, &x, 1).unwrap();
    let y = stack::push(&mut f, &y, 2).unwrap();
    f.stage_child("p", "x", &x).unwrap();
    f.stage_child("p", "y", &y).unwrap();
    f.commit().unwrap();
    assert_eq!(fences(&a) - before, 1);
    let p = ParentObject::load_root(&a, "p").unwrap();
    assert_eq!(p.child(&a, "x").unwrap().contents(&a).unwrap(), vec![1]);
    assert_eq!(p.child(&a, "y").unwrap().contents(&a).unwrap(), vec![2]);
    push(&mut a, "z", 0);
    push(&mut a, "z", 0);
    assert_eq!(leak_check(&a).unwrap(), 0);
}

/// Crash images captured after every event of one FASE.
fn images_during(a: &mut Arena, body: impl FnOnce(&mut Arena)) -> Vec<Vec<Vec<u8>>> {
    let out = Arc::new(Mutex::new(Vec::new()));
    let sink = out.clone();
    a.set_observer(Some(Box::new(move |ar: &Arena| {
        let lines = ar.divergent_lines();
        let mut imgs = vec![
            ar.crash_image(&CrashChoice::AllPersisted).unwrap(),
            ar.crash_image(&CrashChoice::AllLost).unwrap(),
        ];
        // Every single-line deviation from each extreme.
        for &l in &lines {
            imgs.push(ar.crash_image_with(|x| {
                if x == l {
                    crate::arena::Persist::Durable
                } else {
                    crate::arena::Persist::Volatile
                }
            }));
            imgs.push(ar.crash_image_with(|x| {
                if x == l {
                    crate::arena::Persist::Volatile
                } else {
                    crate::arena::Persist::Durable
                }
            }));
        }
        sink.lock().unwrap().push(imgs);
    })));
    body(a);
    a.set_observer(None);
    let v = std::mem::take(&mut *out.lock().unwrap());
    v
}

#[test]
fn unrelated_commit_is_all_or_nothing() {
    let mut a = arena();
    push(&mut a, "a", 1);
    push(&mut a, "b", 1);
    push(&mut a, "c", 0);
    let before = fences(&a);
    let points = images_during(&mut a, |a| {
        let mut f = a.begin_fase().unwrap();
        let x = f.root_version("a").unwrap();
        let y = f.root_version("b").unwrap();
        let x = stack::push(&mut f, &x, 2).unwrap();
        let y = stack::push(&mut f, &y, 2).unwrap();
        f.commit_unrelated(&[("a", &x), ("b", &y)]).unwrap();
    });
    assert_eq!(fences(&a) - before, 4);
    let mut seen_new = false;
    for imgs in points {
        for img in imgs {
            let mut r = Arena::from_image(img, *a.params()).unwrap();
            recover(&mut r).unwrap();
            let sa = stack_of(&r, "a");
            let sb = stack_of(&r, "b");
            assert_eq!(sa, sb, "roots diverged after crash");
            seen_new |= sa.len() == 2;
            assert_eq!(leak_check(&r).unwrap(), 0);
        }
    }
    assert!(seen_new);
    assert_eq!(stack_of(&a, "a"), vec![2, 1]);
}

#[test]
fn undo_log_capacity() {
    let mut a = Arena::in_memory(ArenaOptions::new(4 << 20)).unwrap();
    let mut f = a.begin_fase().unwrap();
    let names: Vec<String> = (0..=UNDO_CAPACITY).map(|i| format!("r{i}")).collect();
    let s = stack::new(&mut f).unwrap();
    let ups: Vec<(&str, &DsRoot)> = names.iter().map(|n| (n.as_str(), &s)).collect();
    assert!(matches!(
        f.commit_unrelated(&ups),
        Err(Error::LogCapacity(UNDO_CAPACITY))
    ));
}
