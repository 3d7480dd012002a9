//! Hash set: a map whose value word is ignored.

use crate::arena::Arena;
use crate::ds::{map, DsKind, DsRoot};
use crate::error::Result;

pub fn new(arena: &mut Arena) -> Result<DsRoot> {
    map::new_kind(arena, DsKind::Set, 0)
}

pub fn insert(arena: &mut Arena, s: &DsRoot, key: u64) -> Result<DsRoot> {
    s.expect(DsKind::Set)?;
    map::insert(arena, s, key, 0)
}

pub fn remove(arena: &mut Arena, s: &DsRoot, key: u64) -> Result<DsRoot> {
    s.expect(DsKind::Set)?;
    map::remove(arena, s, key)
}

pub fn contains(arena: &Arena, s: &DsRoot, key: u64) -> Result<bool> {
    s.expect(DsKind::Set)?;
    map::contains_key(arena, s, key)
}

/// Members in ascending order.
pub fn to_vec(arena: &Arena, s: &DsRoot) -> Result<Vec<u64>> {
    s.expect(DsKind::Set)?;
    Ok(map::entries(arena, s)?
        .into_iter()
        .map(|(k, _)| k)
        .collect())
}
