//! Persistent stack as a singly linked cons list.

use crate::arena::Arena;
use crate::ds::{guarded, DsKind, DsRoot};
use crate::error::{Error, Result};
use crate::node::{self, Header, NodeBuf, NodeKind};

pub(crate) fn cons(arena: &mut Arena, elem: u64, next: u64) -> Result<u64> {
    let mut b = NodeBuf::with_header(Header::new(NodeKind::List, 0, 0, 0));
    b.push(elem);
    b.push(next);
    node::create_node(arena, &b, &[])
}

/// Element and successor of a list node.
pub(crate) fn uncons(arena: &Arena, off: u64) -> Result<(u64, u64)> {
    let h = node::header_at(arena, off)?;
    if h.kind != NodeKind::List {
        return Err(Error::Corruption(format!("{off:#x} is not a list node")));
    }
    Ok((arena.read_u64(off + 8), arena.read_u64(off + 16)))
}

pub(crate) fn list_to_vec(arena: &Arena, mut off: u64, out: &mut Vec<u64>) -> Result<()> {
    while off != 0 {
        let (e, next) = uncons(arena, off)?;
        out.push(e);
        off = next;
    }
    Ok(())
}

pub fn new(arena: &mut Arena) -> Result<DsRoot> {
    DsRoot::create(arena, DsKind::Stack, 0, 0, 0, 0, 0, &[])
}

pub fn push(arena: &mut Arena, s: &DsRoot, value: u64) -> Result<DsRoot> {
    s.expect(DsKind::Stack)?;
    let head = cons(arena, value, s.root)?;
    guarded(arena, &[head], |a| {
        DsRoot::create(a, DsKind::Stack, 0, head, s.size + 1, 0, 0, &[head])
    })
}

/// New version without the top element, and that element.
pub fn pop(arena: &mut Arena, s: &DsRoot) -> Result<(DsRoot, u64)> {
    s.expect(DsKind::Stack)?;
    if s.root == 0 {
        return Err(Error::Empty("stack"));
    }
    let (top, next) = uncons(arena, s.root)?;
    let v = DsRoot::create(arena, DsKind::Stack, 0, next, s.size - 1, 0, 0, &[])?;
    Ok((v, top))
}

pub fn peek(arena: &Arena, s: &DsRoot) -> Result<Option<u64>> {
    s.expect(DsKind::Stack)?;
    if s.root == 0 {
        return Ok(None);
    }
    Ok(Some(uncons(arena, s.root)?.0))
}

/// Elements from top to bottom.
pub fn to_vec(arena: &Arena, s: &DsRoot) -> Result<Vec<u64>> {
    s.expect(DsKind::Stack)?;
    let mut out = Vec::with_capacity(s.size as usize);
    list_to_vec(arena, s.root, &mut out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arena::ArenaOptions;

    #[test]
    fn push_pop_lifo() {
        let mut a = Arena::in_memory(ArenaOptions::new(1 << 20)).unwrap();
        let mut s = new(&mut a).unwrap();
        for i in 1..=3 {
            s = push(&mut a, &s, i).unwrap();
        }
        assert_eq!(to_vec(&a, &s).unwrap(), vec![3, 2, 1]);
        let (t, top) = pop(&mut a, &s).unwrap();
        assert_eq!(top, 3);
        assert_eq!(to_vec(&a, &t).unwrap(), vec![2, 1]);
        assert_eq!(to_vec(&a, &s).unwrap(), vec![3, 2, 1]);
        let e = new(&mut a).unwrap();
        assert!(matches!(pop(&mut a, &e), Err(Error::Empty("stack"))));
    }

    #[test]
    fn push_allocates_one_node_and_one_version() {
        let mut a = Arena::in_memory(ArenaOptions::new(1 << 20)).unwrap();
        let s = new(&mut a).unwrap();
        let before = *a.counters();
        push(&mut a, &s, 9).unwrap();
        let d = a.counters().since(&before);
        assert_eq!(d.allocs, 2);
        assert_eq!(d.alloc_bytes, 24 + 40);
        assert_eq!(d.fences, 0);
    }
}
