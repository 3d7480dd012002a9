//! Scripted workloads and the in-memory oracle they are checked against.
//!
//! Every mutating op runs as one FASE on a fixed root: `map`, `set`,
//! `stack`, `queue`, `vector`, or the `left`/`right` slots of the parent
//! object `pair`. [`ScriptOp::Transfer`] moves the top of `stack` onto
//! `queue` with a two-root commit.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arena::Arena;
use crate::commit::ParentObject;
use crate::ds::{map, queue, set, stack, vector, DsRoot};
use crate::error::{Error, Result};
use crate::node::{self, NodeKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScriptOp {
    MapInsert(u64, u64),
    MapRemove(u64),
    MapGet(u64),
    SetInsert(u64),
    SetRemove(u64),
    SetContains(u64),
    Push(u64),
    Pop,
    Enqueue(u64),
    Dequeue,
    VecPush(u64),
    VecUpdate(u64, u64),
    VecGet(u64),
    /// Reads two elements and writes them back exchanged in one FASE.
    VecSwap(u64, u64),
    /// Pops `stack` and enqueues the value on `queue` atomically.
    Transfer,
    /// Pushes `v` on `pair/left` and `v + 1` on `pair/right` atomically.
    PairPush(u64),
}

impl ScriptOp {
    /// Whether the op runs a FASE (as opposed to a read-only lookup).
    pub fn is_update(&self) -> bool {
        !matches!(
            self,
            ScriptOp::MapGet(_) | ScriptOp::SetContains(_) | ScriptOp::VecGet(_)
        )
    }
}

/// Logical content of every bound structure, by root name (`parent/slot`
/// for structures under a parent object).
pub type Snapshot = BTreeMap<String, Vec<u64>>;

/// Reference model built from standard collections.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Model {
    map: Option<BTreeMap<u64, u64>>,
    set: Option<BTreeSet<u64>>,
    stack: Option<Vec<u64>>,
    queue: Option<VecDeque<u64>>,
    vector: Option<Vec<u64>>,
    pair: Option<(Vec<u64>, Vec<u64>)>,
}

impl Model {
    /// Applies `op`; returns the value a lookup or removal observes.
    pub fn apply(&mut self, op: &ScriptOp) -> Result<Option<u64>> {
        Ok(match *op {
            ScriptOp::MapInsert(k, v) => {
                self.map.get_or_insert_with(BTreeMap::new).insert(k, v);
                None
            }
            ScriptOp::MapRemove(k) => {
                self.map.get_or_insert_with(BTreeMap::new).remove(&k);
                None
            }
            ScriptOp::MapGet(k) => self.map.as_ref().and_then(|m| m.get(&k).copied()),
            ScriptOp::SetInsert(k) => {
                self.set.get_or_insert_with(BTreeSet::new).insert(k);
                None
            }
            ScriptOp::SetRemove(k) => {
                self.set.get_or_insert_with(BTreeSet::new).remove(&k);
                None
            }
            ScriptOp::SetContains(k) => {
                Some(self.set.as_ref().is_some_and(|s| s.contains(&k)) as u64)
            }
            ScriptOp::Push(v) => {
                self.stack.get_or_insert_with(Vec::new).push(v);
                None
            }
            ScriptOp::Pop => Some(
                self.stack
                    .get_or_insert_with(Vec::new)
                    .pop()
                    .ok_or(Error::Empty("stack"))?,
            ),
            ScriptOp::Enqueue(v) => {
                self.queue.get_or_insert_with(VecDeque::new).push_back(v);
                None
            }
            ScriptOp::Dequeue => Some(
                self.queue
                    .get_or_insert_with(VecDeque::new)
                    .pop_front()
                    .ok_or(Error::Empty("queue"))?,
            ),
            ScriptOp::VecPush(v) => {
                self.vector.get_or_insert_with(Vec::new).push(v);
                None
            }
            ScriptOp::VecUpdate(i, v) => {
                let vec = self.vector.get_or_insert_with(Vec::new);
                let len = vec.len() as u64;
                *vec.get_mut(i as usize)
                    .ok_or(Error::OutOfBounds { index: i, len })? = v;
                None
            }
            ScriptOp::VecGet(i) => {
                let vec = self.vector.get_or_insert_with(Vec::new);
                let len = vec.len() as u64;
                Some(
                    *vec.get(i as usize)
                        .ok_or(Error::OutOfBounds { index: i, len })?,
                )
            }
            ScriptOp::VecSwap(i, j) => {
                let vec = self.vector.get_or_insert_with(Vec::new);
                let len = vec.len() as u64;
                if i >= len || j >= len {
                    return Err(Error::OutOfBounds {
                        index: i.max(j),
                        len,
                    });
                }
                vec.swap(i as usize, j as usize);
                None
            }
            ScriptOp::Transfer => {
                let v = self
                    .stack
                    .get_or_insert_with(Vec::new)
                    .pop()
                    .ok_or(Error::Empty("stack"))?;
                self.queue.get_or_insert_with(VecDeque::new).push_back(v);
                Some(v)
            }
            ScriptOp::PairPush(v) => {
                let p = self.pair.get_or_insert_with(Default::default);
                p.0.push(v);
                p.1.push(v.wrapping_add(1));
                None
            }
        })
    }

    pub fn snapshot(&self) -> Snapshot {
        let mut s = Snapshot::new();
        if let Some(m) = &self.map {
            s.insert("map".into(), m.iter().flat_map(|(&k, &v)| [k, v]).collect());
        }
        if let Some(m) = &self.set {
            s.insert("set".into(), m.iter().copied().collect());
        }
        if let Some(m) = &self.stack {
            s.insert("stack".into(), m.iter().rev().copied().collect());
        }
        if let Some(m) = &self.queue {
            s.insert("queue".into(), m.iter().copied().collect());
        }
        if let Some(m) = &self.vector {
            s.insert("vector".into(), m.clone());
        }
        if let Some((l, r)) = &self.pair {
            s.insert("pair/left".into(), l.iter().rev().copied().collect());
            s.insert("pair/right".into(), r.iter().rev().copied().collect());
        }
        s
    }
}

/// Content of every structure reachable from the root directory.
pub fn snapshot(arena: &Arena) -> Result<Snapshot> {
    let mut s = Snapshot::new();
    for (name, off) in arena.roots() {
        match node::header_at(arena, off.get())?.kind {
            NodeKind::Parent => {
                for (slot, child) in ParentObject::load(arena, off)?.slots {
                    let d = DsRoot::load(arena, crate::arena::ArenaOffset::new(child))?;
                    s.insert(format!("{name}/{slot}"), d.contents(arena)?);
                }
            }
            _ => {
                s.insert(name, DsRoot::load(arena, off)?.contents(arena)?);
            }
        }
    }
    Ok(s)
}

fn load_or(
    arena: &mut Arena,
    name: &str,
    init: fn(&mut Arena) -> Result<DsRoot>,
) -> Result<DsRoot> {
    match arena.root_version(name) {
        Ok(d) => Ok(d),
        Err(Error::RootNotFound(_)) => init(arena),
        Err(e) => Err(e),
    }
}

/// Runs `op` against the arena; updates run as one FASE each.
pub fn apply(arena: &mut Arena, op: &ScriptOp) -> Result<Option<u64>> {
    let mut out = None;
    match *op {
        ScriptOp::MapInsert(k, v) => {
            arena.update_root("map", map::new, |a, m| map::insert(a, m, k, v))?;
        }
        ScriptOp::MapRemove(k) => {
            arena.update_root("map", map::new, |a, m| map::remove(a, m, k))?;
        }
        ScriptOp::MapGet(k) => {
            return match arena.root_version("map") {
                Ok(m) => map::get(arena, &m, k),
                Err(Error::RootNotFound(_)) => Ok(None),
                Err(e) => Err(e),
            }
        }
        ScriptOp::SetInsert(k) => {
            arena.update_root("set", set::new, |a, s| set::insert(a, s, k))?;
        }
        ScriptOp::SetRemove(k) => {
            arena.update_root("set", set::new, |a, s| set::remove(a, s, k))?;
        }
        ScriptOp::SetContains(k) => {
            return match arena.root_version("set") {
                Ok(s) => Ok(Some(set::contains(arena, &s, k)? as u64)),
                Err(Error::RootNotFound(_)) => Ok(Some(0)),
                Err(e) => Err(e),
            }
        }
        ScriptOp::Push(v) => {
            arena.update_root("stack", stack::new, |a, s| stack::push(a, s, v))?;
        }
        ScriptOp::Pop => {
            arena.update_root("stack", stack::new, |a, s| {
                let (n, v) = stack::pop(a, s)?;
                out = Some(v);
                Ok(n)
            })?;
        }
        ScriptOp::Enqueue(v) => {
            arena.update_root("queue", queue::new, |a, q| queue::enqueue(a, q, v))?;
        }
        ScriptOp::Dequeue => {
            arena.update_root("queue", queue::new, |a, q| {
                let (n, v) = queue::dequeue(a, q)?;
                out = Some(v);
                Ok(n)
            })?;
        }
        ScriptOp::VecPush(v) => {
            arena.update_root("vector", vector::new, |a, x| vector::push_back(a, x, v))?;
        }
        ScriptOp::VecUpdate(i, v) => {
            arena.update_root("vector", vector::new, |a, x| vector::update(a, x, i, v))?;
        }
        ScriptOp::VecGet(i) => {
            let v = arena.root_version("vector")?;
            return Ok(Some(vector::get(arena, &v, i)?));
        }
        ScriptOp::VecSwap(i, j) => {
            arena.update_root("vector", vector::new, |a, x| {
                let vi = vector::get(a, x, i)?;
                let vj = vector::get(a, x, j)?;
                let y = vector::update(a, x, i, vj)?;
                vector::update(a, &y, j, vi)
            })?;
        }
        ScriptOp::Transfer => {
            let mut f = arena.begin_fase()?;
            let s = load_or(&mut f, "stack", stack::new)?;
            let q = load_or(&mut f, "queue", queue::new)?;
            let (s, v) = stack::pop(&mut f, &s)?;
            let q = queue::enqueue(&mut f, &q, v)?;
            f.commit_unrelated(&[("stack", &s), ("queue", &q)])?;
            out = Some(v);
        }
        ScriptOp::PairPush(v) => {
            let mut f = arena.begin_fase()?;
            let (l, r) = match ParentObject::load_root(&f, "pair") {
                Ok(p) => (p.child(&f, "left")?, p.child(&f, "right")?),
                Err(Error::RootNotFound(_)) => (stack::new(&mut f)?, stack::new(&mut f)?),
                Err(e) => return Err(e),
            };
            let l = stack::push(&mut f, &l, v)?;
            let r = stack::push(&mut f, &r, v.wrapping_add(1))?;
            f.stage_child("pair", "left", &l)?;
            f.stage_child("pair", "right", &r)?;
            f.commit()?;
        }
    }
    Ok(out)
}

/// Families of generated scripts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Workload {
    Map,
    Set,
    Stack,
    Queue,
    Vector,
    VecSwap,
    /// All of the above plus multi-root commits.
    Mixed,
}

impl Workload {
    pub const ALL: [Workload; 7] = [
        Workload::Map,
        Workload::Set,
        Workload::Stack,
        Workload::Queue,
        Workload::Vector,
        Workload::VecSwap,
        Workload::Mixed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Workload::Map => "map",
            Workload::Set => "set",
            Workload::Stack => "stack",
            Workload::Queue => "queue",
            Workload::Vector => "vector",
            Workload::VecSwap => "vec-swap",
            Workload::Mixed => "mixed",
        }
    }
}

/// A deterministic op sequence.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Script {
    pub ops: Vec<ScriptOp>,
}

impl Script {
    pub fn new(ops: Vec<ScriptOp>) -> Self {
        Script { ops }
    }

    pub fn fase_count(&self) -> usize {
        self.ops.iter().filter(|o| o.is_update()).count()
    }

    /// Random script of `len` ops that keeps every structure at or below
    /// `max_len` elements and never pops an empty structure.
    pub fn generate(workload: Workload, len: usize, max_len: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = Model::default();
        let key_space = (max_len as u64 * 2).max(2);
        let mut ops = Vec::with_capacity(len);
        while ops.len() < len {
            let w = match workload {
                Workload::Mixed => match rng.gen_range(0..8) {
                    0 => Workload::Map,
                    1 => Workload::Set,
                    2 => Workload::Stack,
                    3 => Workload::Queue,
                    4 => Workload::Vector,
                    5 => Workload::VecSwap,
                    _ => Workload::Mixed,
                },
                w => w,
            };
            let snap = model.snapshot();
            let size = |n: &str| snap.get(n).map_or(0, |v| v.len());
            let grow =
                |rng: &mut ChaCha8Rng, n: usize| n == 0 || (n < max_len && rng.gen_bool(0.6));
            let v = rng.gen::<u32>() as u64;
            let op = match w {
                Workload::Map => {
                    let k = rng.gen_range(0..key_space);
                    match rng.gen_range(0..4) {
                        0 => ScriptOp::MapGet(k),
                        _ if grow(&mut rng, size("map") / 2) => ScriptOp::MapInsert(k, v),
                        _ => ScriptOp::MapRemove(k),
                    }
                }
                Workload::Set => {
                    let k = rng.gen_range(0..key_space);
                    match rng.gen_range(0..4) {
                        0 => ScriptOp::SetContains(k),
                        _ if grow(&mut rng, size("set")) => ScriptOp::SetInsert(k),
                        _ => ScriptOp::SetRemove(k),
                    }
                }
                Workload::Stack => {
                    if grow(&mut rng, size("stack")) {
                        ScriptOp::Push(v)
                    } else {
                        ScriptOp::Pop
                    }
                }
                Workload::Queue => {
                    if grow(&mut rng, size("queue")) {
                        ScriptOp::Enqueue(v)
                    } else {
                        ScriptOp::Dequeue
                    }
                }
                Workload::Vector | Workload::VecSwap => {
                    let n = size("vector") as u64;
                    if n < 2 || (n < max_len as u64 && rng.gen_bool(0.3)) {
                        ScriptOp::VecPush(v)
                    } else if w == Workload::VecSwap {
                        ScriptOp::VecSwap(rng.gen_range(0..n), rng.gen_range(0..n))
                    } else if rng.gen_bool(0.25) {
                        ScriptOp::VecGet(rng.gen_range(0..n))
                    } else {
                        ScriptOp::VecUpdate(rng.gen_range(0..n), v)
                    }
                }
                Workload::Mixed => {
                    let left = snap.get("pair/left").map_or(0, |v| v.len());
                    if size("stack") > 0 && size("queue") < max_len && rng.gen_bool(0.5) {
                        ScriptOp::Transfer
                    } else if left < max_len {
                        ScriptOp::PairPush(v)
                    } else {
                        ScriptOp::Push(v)
                    }
                }
            };
            if matches!(op, ScriptOp::Push(_)) && size("stack") >= max_len {
                continue;
            }
            model.apply(&op).expect("generator only emits valid ops");
            ops.push(op);
        }
        Script { ops }
    }

    /// Oracle state before the first op and after every update op.
    pub fn oracle_states(&self) -> Result<Vec<Snapshot>> {
        let mut m = Model::default();
        let mut out = vec![m.snapshot()];
        for op in &self.ops {
            m.apply(op)?;
            if op.is_update() {
                out.push(m.snapshot());
            }
        }
        Ok(out)
    }
}
