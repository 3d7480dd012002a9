//! Failure-atomic sections (FASEs) and the commit protocols that publish
//! their results.
//!
//! A FASE builds new versions of one or more structures with ordinary
//! functional updates, none of which fence. Publishing costs exactly one
//! fence when a single root reference changes: the fence orders every
//! shadow node before the 8-byte root store, which itself becomes durable
//! with the next fence (of this arena's next commit or shutdown). Updating
//! several structures that live under one parent object is still a single
//! root store. Unrelated roots go through a small undo log.
//!
//! Versions created during the FASE but not published are released after
//! the commit. Old versions unlinked by a commit are reclaimed only after a
//! later fence, since until then a crash may revert to them.

use std::collections::HashMap;
use std::ops::{Deref, DerefMut};

use crate::arena::layout::{
    Layout, UNDO_CAPACITY, UNDO_COMMITTED_OFFSET, UNDO_COUNT_OFFSET, UNDO_ENTRIES_OFFSET,
    UNDO_ENTRY_SIZE,
};
use crate::arena::{decode_name, encode_name, Arena, ArenaOffset, Fault};
use crate::ds::DsRoot;
use crate::error::{Error, Result};
use crate::node::{self, Header, NodeBuf, NodeKind, PARENT_SLOT_BYTES, SLOT_NAME_LEN};
use crate::reclaim::{decref_recursive, Reclaim};

/// Bookkeeping of the open FASE.
#[derive(Debug, Default)]
pub struct FaseState {
    /// Versions created in this FASE, each holding its creator reference.
    versions: Vec<u64>,
    staged: Vec<Staged>,
}

#[derive(Debug, Clone)]
enum Staged {
    Root {
        name: String,
        version: u64,
    },
    Child {
        parent: String,
        slot: String,
        version: u64,
    },
}

pub(crate) fn note_version(arena: &mut Arena, offset: u64) {
    if let Some(f) = arena.fase.as_mut() {
        f.versions.push(offset);
    }
}

pub(crate) fn forget_version(arena: &mut Arena, offset: u64) {
    if let Some(f) = arena.fase.as_mut() {
        if let Some(i) = f.versions.iter().rposition(|&v| v == offset) {
            f.versions.swap_remove(i);
        }
    }
}

/// Open failure-atomic section. Dereferences to the arena so updates can be
/// applied directly; dropping it without committing aborts.
pub struct Fase<'a> {
    arena: &'a mut Arena,
    open: bool,
}

impl Arena {
    /// Starts a FASE. Sections do not nest.
    pub fn begin_fase(&mut self) -> Result<Fase<'_>> {
        if self.fase.is_some() {
            return Err(Error::Misuse("nested FASE".into()));
        }
        if self.in_commit() {
            return Err(Error::Misuse("FASE started inside a commit".into()));
        }
        self.fase = Some(FaseState::default());
        Ok(Fase {
            arena: self,
            open: true,
        })
    }

    pub fn in_fase(&self) -> bool {
        self.fase.is_some()
    }

    /// Current version bound to `name`.
    pub fn root_version(&self, name: &str) -> Result<DsRoot> {
        DsRoot::load(self, self.get_root(name)?)
    }

    /// Runs `update` on the current version of `name` (or `init` if the
    /// name is unbound) inside a FASE and publishes the result.
    pub fn update_root(
        &mut self,
        name: &str,
        init: impl FnOnce(&mut Arena) -> Result<DsRoot>,
        update: impl FnOnce(&mut Arena, &DsRoot) -> Result<DsRoot>,
    ) -> Result<DsRoot> {
        let mut f = self.begin_fase()?;
        let cur = match f.get_root(name) {
            Ok(off) => DsRoot::load(&f, off)?,
            Err(Error::RootNotFound(_)) => init(&mut f)?,
            Err(e) => return Err(e),
        };
        let next = update(&mut f, &cur)?;
        f.commit_single(name, &next)?;
        Ok(next)
    }
}

impl Deref for Fase<'_> {
    type Target = Arena;
    fn deref(&self) -> &Arena {
        self.arena
    }
}

impl DerefMut for Fase<'_> {
    fn deref_mut(&mut self) -> &mut Arena {
        self.arena
    }
}

impl Drop for Fase<'_> {
    fn drop(&mut self) {
        if self.open {
            // Errors here would only come from accounting bugs; the section
            // is being discarded either way.
            let _ = abort_state(self.arena);
        }
    }
}

fn state(arena: &mut Arena) -> &mut FaseState {
    arena.fase.as_mut().expect("open FASE has state")
}

fn abort_state(arena: &mut Arena) -> Result<()> {
    let st = arena.fase.take().unwrap_or_default();
    // Nothing durable references a version born in this FASE.
    for v in st.versions.into_iter().rev() {
        decref_recursive(arena, ArenaOffset::new(v), Reclaim::Immediate)?;
    }
    Ok(())
}

/// Hands a staged version's reference to its new owner: the creator
/// reference if this FASE made it, otherwise a new one.
fn claim(versions: &mut Vec<u64>, arena: &mut Arena, version: u64) {
    match versions.iter().rposition(|&v| v == version) {
        Some(i) => {
            versions.swap_remove(i);
        }
        None => arena.refs.incref(version),
    }
}

/// Releases unpublished versions and, once their unlinking is queued, the
/// replaced ones.
fn finish(arena: &mut Arena, mut versions: Vec<u64>, old: Vec<u64>) -> Result<()> {
    arena.release_ready()?;
    for o in old {
        decref_recursive(arena, ArenaOffset::new(o), Reclaim::Deferred)?;
    }
    versions.reverse();
    for v in versions {
        decref_recursive(arena, ArenaOffset::new(v), Reclaim::Deferred)?;
    }
    Ok(())
}

impl Fase<'_> {
    /// Records that `name` should point at `version` when the FASE commits.
    pub fn stage_root(&mut self, name: &str, version: &DsRoot) -> Result<()> {
        encode_name(name)?;
        state(self.arena).staged.push(Staged::Root {
            name: name.to_string(),
            version: version.offset.get(),
        });
        Ok(())
    }

    /// Records that slot `slot` of the parent object bound to `parent`
    /// should hold `version` when the FASE commits.
    pub fn stage_child(&mut self, parent: &str, slot: &str, version: &DsRoot) -> Result<()> {
        encode_name(parent)?;
        encode_name(slot)?;
        state(self.arena).staged.push(Staged::Child {
            parent: parent.to_string(),
            slot: slot.to_string(),
            version: version.offset.get(),
        });
        Ok(())
    }

    /// Commits whatever was staged with the cheapest applicable protocol.
    pub fn commit(mut self) -> Result<()> {
        let staged = std::mem::take(&mut state(self.arena).staged);
        if staged.is_empty() {
            self.open = false;
            let st = self.arena.fase.take().unwrap_or_default();
            return finish(self.arena, st.versions, Vec::new());
        }
        if staged.iter().all(|s| matches!(s, Staged::Root { .. })) {
            let mut last: HashMap<String, u64> = HashMap::new();
            let mut order = Vec::new();
            for s in staged {
                if let Staged::Root { name, version } = s {
                    if last.insert(name.clone(), version).is_none() {
                        order.push(name);
                    }
                }
            }
            let roots: Vec<(String, u64)> =
                order.into_iter().map(|n| (n.clone(), last[&n])).collect();
            if roots.len() == 1 {
                return self.single(&roots[0].0, roots[0].1);
            }
            return self.unrelated(&roots);
        }
        let mut parent = None;
        let mut slots: Vec<(String, u64)> = Vec::new();
        for s in staged {
            match s {
                Staged::Child {
                    parent: p,
                    slot,
                    version,
                } => {
                    if parent.get_or_insert_with(|| p.clone()) != &p {
                        return Err(Error::Misuse(
                            "staged children of different parents in one FASE".into(),
                        ));
                    }
                    match slots.iter_mut().find(|(n, _)| *n == slot) {
                        Some(e) => e.1 = version,
                        None => slots.push((slot, version)),
                    }
                }
                Staged::Root { .. } => {
                    return Err(Error::Misuse(
                        "staged both roots and parent slots in one FASE".into(),
                    ))
                }
            }
        }
        self.siblings(&parent.expect("at least one child"), &slots)
    }

    /// Publishes one new version of one root: one fence.
    pub fn commit_single(self, name: &str, version: &DsRoot) -> Result<()> {
        encode_name(name)?;
        self.single(name, version.offset.get())
    }

    fn single(mut self, name: &str, version: u64) -> Result<()> {
        self.open = false;
        let arena = &mut *self.arena;
        let mut st = arena.fase.take().unwrap_or_default();
        let old = arena.get_root(name).ok().map(|o| o.get());
        claim(&mut st.versions, arena, version);
        publish(arena, name, version)?;
        finish(arena, st.versions, old.into_iter().collect())
    }

    /// Publishes new versions of several structures held by one parent
    /// object: the parent is copied with the new slot values and its root
    /// reference swapped with one fence. Slots not yet present are added.
    pub fn commit_siblings(self, parent: &str, updates: &[(&str, &DsRoot)]) -> Result<()> {
        let slots: Vec<(String, u64)> = updates
            .iter()
            .map(|(s, v)| (s.to_string(), v.offset.get()))
            .collect();
        self.siblings(parent, &slots)
    }

    fn siblings(mut self, parent: &str, updates: &[(String, u64)]) -> Result<()> {
        encode_name(parent)?;
        let arena = &mut *self.arena;
        let old = match arena.get_root(parent) {
            Ok(o) => Some(ParentObject::load(arena, o)?),
            Err(Error::RootNotFound(_)) => None,
            Err(e) => return Err(e),
        };
        let mut slots = old.as_ref().map(|p| p.slots.clone()).unwrap_or_default();
        for (name, v) in updates {
            encode_name(name)?;
            match slots.iter_mut().find(|(n, _)| n == name) {
                Some(e) => e.1 = *v,
                None => slots.push((name.clone(), *v)),
            }
        }
        let buf = ParentObject::encode(&slots)?;
        // Updated slots take over their creator references; the rest are
        // shared with the old parent and gain one.
        let mut st = arena.fase.take().unwrap_or_default();
        let mut fresh = Vec::new();
        for (_, v) in updates {
            if let Some(i) = st.versions.iter().rposition(|x| x == v) {
                st.versions.swap_remove(i);
                fresh.push(*v);
            }
        }
        let created = node::create_node(arena, &buf, &fresh);
        let new_parent = match created {
            Ok(p) => p,
            Err(e) => {
                st.versions.extend(fresh);
                arena.fase = Some(st);
                return Err(e);
            }
        };
        self.open = false;
        publish(arena, parent, new_parent)?;
        finish(
            arena,
            st.versions,
            old.map(|p| p.offset.get()).into_iter().collect(),
        )
    }

    /// Publishes new versions of unrelated roots atomically through the
    /// undo log. Costs four fences.
    pub fn commit_unrelated(self, updates: &[(&str, &DsRoot)]) -> Result<()> {
        let roots: Vec<(String, u64)> = updates
            .iter()
            .map(|(n, v)| (n.to_string(), v.offset.get()))
            .collect();
        self.unrelated(&roots)
    }

    fn unrelated(mut self, roots: &[(String, u64)]) -> Result<()> {
        if roots.len() > UNDO_CAPACITY {
            return Err(Error::LogCapacity(UNDO_CAPACITY));
        }
        for (i, (n, _)) in roots.iter().enumerate() {
            encode_name(n)?;
            if roots[..i].iter().any(|(m, _)| m == n) {
                return Err(Error::Misuse(format!("root {n:?} updated twice")));
            }
        }
        if roots.len() == 1 {
            let (n, v) = &roots[0];
            return self.single(n, *v);
        }
        self.open = false;
        let arena = &mut *self.arena;
        let mut st = arena.fase.take().unwrap_or_default();
        let mut old = Vec::new();
        for (name, v) in roots {
            if let Ok(o) = arena.get_root(name) {
                old.push(o.get());
            }
            claim(&mut st.versions, arena, *v);
        }

        arena.commit_begin();
        let r = (|| -> Result<()> {
            let mut indices = Vec::with_capacity(roots.len());
            for (name, _) in roots {
                indices.push(arena.reserve_root(name)?);
            }
            // Shadows and names durable before anything is logged.
            fence(arena)?;
            for (k, &i) in indices.iter().enumerate() {
                let slot = Layout::root_slot_offset(i);
                let e = UNDO_ENTRIES_OFFSET + k as u64 * UNDO_ENTRY_SIZE;
                let cur = arena.read_u64(slot);
                arena.pm_write_u64(ArenaOffset::new(e), slot)?;
                arena.pm_write_u64(ArenaOffset::new(e + 8), cur)?;
            }
            arena.pm_write_u64(ArenaOffset::new(UNDO_COMMITTED_OFFSET), 0)?;
            arena.pm_write_u64(ArenaOffset::new(UNDO_COUNT_OFFSET), roots.len() as u64)?;
            arena.flush_range(
                ArenaOffset::new(UNDO_COUNT_OFFSET),
                16 + roots.len() as u64 * UNDO_ENTRY_SIZE,
            );
            fence(arena)?;
            for (&i, (_, v)) in indices.iter().zip(roots) {
                let slot = ArenaOffset::new(Layout::root_slot_offset(i));
                arena.write_reference(slot, *v)?;
                arena.pm_flush(slot);
            }
            fence(arena)?;
            arena.pm_write_u64(ArenaOffset::new(UNDO_COMMITTED_OFFSET), 1)?;
            arena.pm_flush(ArenaOffset::new(UNDO_COMMITTED_OFFSET));
            fence(arena)?;
            // Either outcome of this store recovers to the new roots.
            arena.pm_write_u64(ArenaOffset::new(UNDO_COUNT_OFFSET), 0)?;
            arena.pm_write_u64(ArenaOffset::new(UNDO_COMMITTED_OFFSET), 0)?;
            arena.pm_flush(ArenaOffset::new(UNDO_COUNT_OFFSET));
            Ok(())
        })();
        arena.commit_end();
        r?;
        finish(arena, st.versions, old)
    }

    /// Discards every version built in this FASE.
    pub fn abort(mut self) -> Result<()> {
        self.open = false;
        abort_state(self.arena)
    }
}

fn fence(arena: &mut Arena) -> Result<()> {
    if arena.fault() == Fault::DropFence {
        return Ok(());
    }
    arena.pm_fence()
}

/// The single-reference commit: order shadows, then swing the root.
fn publish(arena: &mut Arena, name: &str, target: u64) -> Result<()> {
    arena.commit_begin();
    let r = (|| {
        arena.reserve_root(name)?;
        fence(arena)?;
        arena.set_root(name, ArenaOffset::new(target))
    })();
    arena.commit_end();
    r
}

/// Named slots referencing structure versions, published under one root so
/// that several structures can change with a single reference store.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParentObject {
    pub offset: ArenaOffset,
    pub slots: Vec<(String, u64)>,
}

impl ParentObject {
    pub fn load(arena: &Arena, offset: ArenaOffset) -> Result<Self> {
        let h = node::header_at(arena, offset.get())?;
        if h.kind != NodeKind::Parent {
            return Err(Error::TypeMismatch {
                expected: "parent object",
                found: format!("{:?}", h.kind),
            });
        }
        let base = offset.get() + 8;
        let slots = (0..h.count)
            .map(|i| {
                let at = base + i * PARENT_SLOT_BYTES as u64;
                let name = decode_name(arena.read(at, SLOT_NAME_LEN));
                (name, arena.read_u64(at + SLOT_NAME_LEN as u64))
            })
            .collect();
        Ok(ParentObject { offset, slots })
    }

    /// Loads the parent object bound to root `name`.
    pub fn load_root(arena: &Arena, name: &str) -> Result<Self> {
        Self::load(arena, arena.get_root(name)?)
    }

    fn encode(slots: &[(String, u64)]) -> Result<NodeBuf> {
        let mut b = NodeBuf::with_header(Header::new(NodeKind::Parent, 0, 0, slots.len() as u64));
        for (name, v) in slots {
            b.push_bytes(&encode_name(name)?);
            b.push(*v);
        }
        Ok(b)
    }

    pub fn child(&self, arena: &Arena, slot: &str) -> Result<DsRoot> {
        let (_, v) = self
            .slots
            .iter()
            .find(|(n, _)| n == slot)
            .ok_or_else(|| Error::RootNotFound(slot.to_string()))?;
        DsRoot::load(arena, ArenaOffset::new(*v))
    }
}

#[cfg(test)]
mod tests;
