use std::collections::HashMap;

use proptest::prelude::*;

use super::*;
use crate::arena::{ArenaOptions, CrashChoice};
use crate::ds::{map, queue, stack, vector, DsRoot};

fn arena() -> Arena {
    Arena::in_memory(ArenaOptions::new(1 << 20)).unwrap()
}

#[test]
fn shared_nodes_survive_one_release() {
    let mut a = arena();
    let s0 = stack::new(&mut a).unwrap();
    let s1 = stack::push(&mut a, &s0, 1).unwrap();
    let s2 = stack::push(&mut a, &s1, 2).unwrap();
    let cell = s1.root;
    assert_eq!(a.refs.get(cell), 2);
    decref_recursive(&mut a, s1.offset, Reclaim::Immediate).unwrap();
    assert_eq!(a.refs.get(cell), 1);
    assert!(a.allocation(ArenaOffset::new(cell)).is_some());
    let freed = decref_recursive(&mut a, s2.offset, Reclaim::Immediate).unwrap();
    assert_eq!(freed, 3);
    assert!(a.allocation(ArenaOffset::new(cell)).is_none());
}

#[test]
fn over_release_is_an_accounting_error() {
    let mut a = arena();
    let s = stack::new(&mut a).unwrap();
    decref_recursive(&mut a, s.offset, Reclaim::Immediate).unwrap();
    assert!(matches!(
        decref_recursive(&mut a, s.offset, Reclaim::Immediate),
        Err(Error::Accounting(_))
    ));
}

#[test]
fn recovery_frees_unreachable_allocations() {
    let mut a = arena();
    a.update_root("s", stack::new, |a, s| stack::push(a, s, 1))
        .unwrap();
    let orphan = a.pm_alloc(100).unwrap();
    a.flush_range(orphan, 100);
    a.pm_fence().unwrap();
    // Versions retired by the last commit are unreachable too.
    let pending: Vec<u64> = a.pending_reclaim().collect();
    let pending_bytes: u64 = pending
        .iter()
        .map(|&o| a.allocation(ArenaOffset::new(o)).unwrap().size)
        .sum();
    let mut c = a.crash(&CrashChoice::AllPersisted).unwrap();
    let r = recover(&mut c).unwrap();
    assert_eq!(r.freed_records, 1 + pending.len());
    assert_eq!(r.freed_bytes, 104 + pending_bytes);
    assert!(c.allocation(orphan).is_none());
    assert_eq!(leak_check(&c).unwrap(), 0);
    assert_eq!(r.roots.len(), 1);
}

#[test]
fn recovery_is_idempotent() {
    let mut a = arena();
    for i in 0..5 {
        a.update_root("q", queue::new, |a, q| queue::enqueue(a, q, i))
            .unwrap();
    }
    a.pm_alloc(64).unwrap();
    let mut c = a.crash(&CrashChoice::AllLost).unwrap();
    recover(&mut c).unwrap();
    let once = c.volatile_image().to_vec();
    let counts: HashMap<u64, u32> = c.refs.iter().collect();
    let second = recover(&mut c).unwrap();
    assert_eq!(second.freed_records, 0);
    assert_eq!(c.volatile_image(), &once[..]);
    assert_eq!(c.refs.iter().collect::<HashMap<_, _>>(), counts);
}

#[test]
fn recovery_rejects_cycles() {
    let mut a = arena();
    let s = stack::new(&mut a).unwrap();
    let s = stack::push(&mut a, &s, 1).unwrap();
    let f = a.begin_fase().unwrap();
    f.commit_single("s", &s).unwrap();
    // Point the list cell back at itself.
    a.pm_write_u64(ArenaOffset::new(s.root + 16), s.root)
        .unwrap();
    a.pm_flush(ArenaOffset::new(s.root + 16));
    let mut c = a.crash(&CrashChoice::AllPersisted).unwrap();
    assert!(matches!(recover(&mut c), Err(Error::Corruption(_))));
}

#[derive(Debug, Clone)]
enum Op {
    Map(u64, u64),
    Unmap(u64),
    Push(u64),
    Pop,
    Enq(u64),
    Deq,
    VecPush(u64),
    VecSet(u64, u64),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        (0u64..64, any::<u64>()).prop_map(|(k, v)| Op::Map(k, v)),
        (0u64..64).prop_map(Op::Unmap),
        any::<u64>().prop_map(Op::Push),
        Just(Op::Pop),
        any::<u64>().prop_map(Op::Enq),
        Just(Op::Deq),
        any::<u64>().prop_map(Op::VecPush),
        (any::<u64>(), any::<u64>()).prop_map(|(i, v)| Op::VecSet(i, v)),
    ]
}

fn apply(a: &mut Arena, op: &Op) -> Result<()> {
    let (name, init): (&str, fn(&mut Arena) -> Result<DsRoot>) = match op {
        Op::Map(..) | Op::Unmap(_) => ("m", map::new),
        Op::Push(_) | Op::Pop => ("s", stack::new),
        Op::Enq(_) | Op::Deq => ("q", queue::new),
        Op::VecPush(_) | Op::VecSet(..) => ("v", vector::new),
    };
    a.update_root(name, init, |a, d| match *op {
        Op::Map(k, v) => map::insert(a, d, k, v),
        Op::Unmap(k) => map::remove(a, d, k),
        Op::Push(v) => stack::push(a, d, v),
        Op::Pop if d.is_empty() => stack::push(a, d, 0),
        Op::Pop => stack::pop(a, d).map(|p| p.0),
        Op::Enq(v) => queue::enqueue(a, d, v),
        Op::Deq if d.is_empty() => queue::enqueue(a, d, 0),
        Op::Deq => queue::dequeue(a, d).map(|p| p.0),
        Op::VecPush(v) => vector::push_back(a, d, v),
        Op::VecSet(_, v) if d.is_empty() => vector::push_back(a, d, v),
        Op::VecSet(i, v) => vector::update(a, d, i % d.size, v),
    })?;
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Counts equal in-edges from live roots and live nodes; nothing leaks.
    #[test]
    fn counts_match_reachability(ops in prop::collection::vec(op(), 1..120)) {
        let mut a = arena();
        for op in &ops {
            apply(&mut a, op).unwrap();
            let reach = reachability(&a).unwrap();
            let counts: HashMap<u64, u32> = a.refs.iter().collect();
            prop_assert_eq!(&counts, &reach.in_edges);
            prop_assert_eq!(leak_check(&a).unwrap(), 0);
        }
        let mut c = a.crash(&CrashChoice::AllPersisted).unwrap();
        recover(&mut c).unwrap();
        let counts: HashMap<u64, u32> = c.refs.iter().collect();
        prop_assert_eq!(counts, reachability(&c).unwrap().in_edges);
        prop_assert_eq!(c.live_allocations(), c.refs.len());
    }
}
