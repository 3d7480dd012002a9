//! Persistent FIFO queue built from two cons lists.
//!
//! Dequeues pop the front list; enqueues push onto the back list. When the
//! front runs dry the back list is reversed into a new front, allocating
//! one node per element moved.

use crate::arena::{Arena, ArenaOffset};
use crate::ds::stack::{cons, list_to_vec, uncons};
use crate::ds::{guarded, release_fresh, DsKind, DsRoot};
use crate::error::{Error, Result};
use crate::reclaim::{decref_recursive, Reclaim};

pub fn new(arena: &mut Arena) -> Result<DsRoot> {
    DsRoot::create(arena, DsKind::Queue, 0, 0, 0, 0, 0, &[])
}

pub fn enqueue(arena: &mut Arena, q: &DsRoot, value: u64) -> Result<DsRoot> {
    q.expect(DsKind::Queue)?;
    let back = cons(arena, value, q.aux0)?;
    guarded(arena, &[back], |a| {
        DsRoot::create(
            a,
            DsKind::Queue,
            0,
            q.root,
            q.size + 1,
            back,
            q.aux1,
            &[back],
        )
    })
}

/// New version without the oldest element, and that element.
pub fn dequeue(arena: &mut Arena, q: &DsRoot) -> Result<(DsRoot, u64)> {
    q.expect(DsKind::Queue)?;
    if q.root != 0 {
        let (v, next) = uncons(arena, q.root)?;
        let out = DsRoot::create(
            arena,
            DsKind::Queue,
            0,
            next,
            q.size - 1,
            q.aux0,
            q.aux1 - 1,
            &[],
        )?;
        return Ok((out, v));
    }
    if q.aux0 == 0 {
        return Err(Error::Empty("queue"));
    }
    // Newest first; consing in this order leaves the oldest at the head.
    let mut back = Vec::new();
    list_to_vec(arena, q.aux0, &mut back)?;
    let mut head = 0;
    for &e in &back {
        let prev = head;
        head = match cons(arena, e, prev) {
            Ok(h) => h,
            Err(err) => {
                if prev != 0 {
                    release_fresh(arena, &[prev]);
                }
                return Err(err);
            }
        };
        if prev != 0 {
            // The new node holds the only reference to `prev` now.
            arena.refs.decref(prev)?;
        }
    }
    let (v, next) = uncons(arena, head)?;
    let k = back.len() as u64;
    let out = guarded(arena, &[head], |a| {
        DsRoot::create(a, DsKind::Queue, 0, next, q.size - 1, 0, k - 1, &[])
    })?;
    // The popped head was never published; nothing durable can reach it.
    decref_recursive(arena, ArenaOffset::new(head), Reclaim::Immediate)?;
    Ok((out, v))
}

pub fn front(arena: &Arena, q: &DsRoot) -> Result<Option<u64>> {
    q.expect(DsKind::Queue)?;
    if q.root != 0 {
        return Ok(Some(uncons(arena, q.root)?.0));
    }
    let mut back = Vec::new();
    list_to_vec(arena, q.aux0, &mut back)?;
    Ok(back.last().copied())
}

/// Elements from oldest to newest.
pub fn to_vec(arena: &Arena, q: &DsRoot) -> Result<Vec<u64>> {
    q.expect(DsKind::Queue)?;
    let mut out = Vec::with_capacity(q.size as usize);
    list_to_vec(arena, q.root, &mut out)?;
    let mut back = Vec::new();
    list_to_vec(arena, q.aux0, &mut back)?;
    out.extend(back.into_iter().rev());
    Ok(out)
}
