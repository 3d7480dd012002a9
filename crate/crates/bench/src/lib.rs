//! Benchmark harness for the durable datastructures.
//!
//! Each workload runs a fixed number of iterations against an in-memory
//! arena. One iteration is one failure-atomic update plus one lookup; the
//! arena counters are sampled around every iteration so the report can give
//! per-operation flush, fence and allocation figures. The full event trace is
//! streamed through the trace checker as the run progresses and any
//! violation aborts the run.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::PathBuf;
use std::str::FromStr;
use std::time::{Duration, Instant};

use mod_core::arena::Counters;
use mod_core::checker::TraceChecker;
use mod_core::ds::{map, queue, set, stack, vector};
use mod_core::flush_model::{self, FlushModelParams, Measurement};
use mod_core::reclaim::reachability;
use mod_core::{Arena, ArenaOptions, DsRoot};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Core(#[from] mod_core::Error),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(
        "unknown workload {0:?} (expected one of map, set, stack, queue, vector, vec-swap, bfs)"
    )]
    UnknownWorkload(String),
    #[error("invalid size {0:?}")]
    InvalidSize(String),
    #[error("trace check found {count} violation(s), first: {first}")]
    TraceViolations { count: usize, first: String },
    #[error("result disagrees with the in-memory oracle: {0}")]
    OracleMismatch(String),
}

pub type Result<T, E = BenchError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BenchWorkload {
    Map,
    Set,
    Stack,
    Queue,
    Vector,
    VecSwap,
    Bfs,
}

impl BenchWorkload {
    pub const ALL: [BenchWorkload; 7] = [
        BenchWorkload::Map,
        BenchWorkload::Set,
        BenchWorkload::Stack,
        BenchWorkload::Queue,
        BenchWorkload::Vector,
        BenchWorkload::VecSwap,
        BenchWorkload::Bfs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BenchWorkload::Map => "map",
            BenchWorkload::Set => "set",
            BenchWorkload::Stack => "stack",
            BenchWorkload::Queue => "queue",
            BenchWorkload::Vector => "vector",
            BenchWorkload::VecSwap => "vec-swap",
            BenchWorkload::Bfs => "bfs",
        }
    }
}

impl fmt::Display for BenchWorkload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BenchWorkload {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        BenchWorkload::ALL
            .into_iter()
            .find(|w| w.name() == s)
            .ok_or_else(|| BenchError::UnknownWorkload(s.to_string()))
    }
}

/// Parses a byte count with an optional `K`, `M` or `G` suffix (powers of
/// 1024).
pub fn parse_size(s: &str) -> Result<u64> {
    let t = s.trim();
    let (digits, shift) = match t.chars().last().map(|c| c.to_ascii_uppercase()) {
        Some('K') => (&t[..t.len() - 1], 10),
        Some('M') => (&t[..t.len() - 1], 20),
        Some('G') => (&t[..t.len() - 1], 30),
        _ => (t, 0),
    };
    let n: u64 = digits
        .parse()
        .map_err(|_| BenchError::InvalidSize(s.to_string()))?;
    n.checked_shl(shift)
        .filter(|v| v >> shift == n)
        .ok_or_else(|| BenchError::InvalidSize(s.to_string()))
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub workload: BenchWorkload,
    pub iterations: u64,
    pub seed: u64,
    /// Map value size; values wider than one word are stored as blobs.
    pub value_size: u64,
    pub arena_size: u64,
    pub report_path: Option<PathBuf>,
    pub trace_path: Option<PathBuf>,
    /// Elements loaded into the vector before measuring.
    pub prefill: u64,
    pub graph_nodes: u64,
    pub graph_degree: u64,
}

impl BenchConfig {
    pub fn new(workload: BenchWorkload) -> Self {
        BenchConfig {
            workload,
            iterations: 100_000,
            seed: 42,
            value_size: 8,
            arena_size: 1 << 30,
            report_path: None,
            trace_path: None,
            prefill: 4096,
            graph_nodes: 10_000,
            graph_degree: 12,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(BenchError::InvalidConfig(
                "iterations must be at least 1".into(),
            ));
        }
        if self.value_size == 0 {
            return Err(BenchError::InvalidConfig(
                "value size must be at least 1".into(),
            ));
        }
        if matches!(
            self.workload,
            BenchWorkload::Vector | BenchWorkload::VecSwap
        ) && self.prefill == 0
        {
            return Err(BenchError::InvalidConfig(
                "vector workloads need a prefill".into(),
            ));
        }
        if self.workload == BenchWorkload::Bfs {
            if self.graph_nodes == 0 {
                return Err(BenchError::InvalidConfig(
                    "graph needs at least one node".into(),
                ));
            }
            if self.graph_degree == 0 && self.graph_nodes > 1 {
                return Err(BenchError::InvalidConfig(
                    "graph degree must be positive".into(),
                ));
            }
        }
        Ok(())
    }
}

pub const REPORT_HEADER: &str = "workload,ops,fences_per_op,flushes_per_op_mean,\
flushes_per_op_median,alloc_bytes_per_op,sim_time_ns,peak_live_bytes";

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub workload: BenchWorkload,
    pub ops: u64,
    pub fences_per_op: f64,
    pub flushes_per_op_mean: f64,
    pub flushes_per_op_median: f64,
    pub alloc_bytes_per_op: f64,
    pub alloc_bytes_per_op_median: f64,
    /// Smallest and largest fence count seen in one operation.
    pub fences_min: u64,
    pub fences_max: u64,
    pub sim_time_ns: f64,
    pub peak_live_bytes: u64,
    pub trace_events: u64,
    /// Nodes visited by the bfs workload.
    pub visited: Option<u64>,
    /// Host time; not part of the CSV so reports stay reproducible.
    pub wall_time: Duration,
}

impl BenchReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.workload,
            self.ops,
            self.fences_per_op,
            self.flushes_per_op_mean,
            self.flushes_per_op_median,
            self.alloc_bytes_per_op,
            self.sim_time_ns,
            self.peak_live_bytes
        )
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{REPORT_HEADER}")?;
        writeln!(out, "{}", self.csv_row())?;
        Ok(())
    }
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "workload            {}", self.workload)?;
        writeln!(f, "operations          {}", self.ops)?;
        writeln!(
            f,
            "fences/op           {:.4} (min {}, max {})",
            self.fences_per_op, self.fences_min, self.fences_max
        )?;
        writeln!(
            f,
            "flushes/op          mean {:.2}, median {}",
            self.flushes_per_op_mean, self.flushes_per_op_median
        )?;
        writeln!(
            f,
            "alloc bytes/op      mean {:.1}, median {}",
            self.alloc_bytes_per_op, self.alloc_bytes_per_op_median
        )?;
        writeln!(f, "simulated time      {:.0} ns", self.sim_time_ns)?;
        writeln!(f, "peak live bytes     {}", self.peak_live_bytes)?;
        writeln!(
            f,
            "trace events        {} checked, 0 violations",
            self.trace_events
        )?;
        if let Some(v) = self.visited {
            writeln!(f, "bfs visited         {v} nodes")?;
        }
        write!(
            f,
            "wall time           {:.3} s",
            self.wall_time.as_secs_f64()
        )
    }
}

fn median(v: &mut [u64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_unstable();
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m] as f64
    } else {
        (v[m - 1] as f64 + v[m] as f64) / 2.0
    }
}

/// Per-operation counter deltas plus the streaming trace check.
struct Meter {
    checker: TraceChecker,
    events: u64,
    flushes: Vec<u64>,
    fences: Vec<u64>,
    alloc_bytes: Vec<u64>,
    sim_start: f64,
}

impl Meter {
    fn new(arena: &Arena) -> Self {
        Meter {
            checker: TraceChecker::new(arena.layout().metadata_range()),
            events: 0,
            flushes: Vec::new(),
            fences: Vec::new(),
            alloc_bytes: Vec::new(),
            sim_start: arena.sim_time_ns(),
        }
    }

    /// Feeds retained events to the checker and fails on the first
    /// violation.
    fn check(&mut self, arena: &mut Arena) -> Result<()> {
        for ev in arena.drain_trace() {
            self.checker.feed(&ev)?;
            self.events += 1;
        }
        if let Some(v) = self.checker.violations().first() {
            return Err(BenchError::TraceViolations {
                count: self.checker.violations().len(),
                first: v.to_string(),
            });
        }
        Ok(())
    }

    /// Starts the measured phase; setup work stays out of the figures.
    fn reset_clock(&mut self, arena: &Arena) {
        self.sim_start = arena.sim_time_ns();
    }

    fn op<T>(
        &mut self,
        arena: &mut Arena,
        body: impl FnOnce(&mut Arena) -> Result<T>,
    ) -> Result<T> {
        let before = *arena.counters();
        let out = body(arena)?;
        let after = *arena.counters();
        self.flushes.push(after.flushes - before.flushes);
        self.fences.push(after.fences - before.fences);
        self.alloc_bytes
            .push(after.alloc_bytes - before.alloc_bytes);
        self.check(arena)?;
        Ok(out)
    }

    fn finish(
        mut self,
        arena: &mut Arena,
        workload: BenchWorkload,
        visited: Option<u64>,
        started: Instant,
    ) -> Result<BenchReport> {
        self.check(arena)?;
        let events = self.events;
        let sim = arena.sim_time_ns() - self.sim_start;
        let violations = self.checker.finish();
        if let Some(v) = violations.first() {
            return Err(BenchError::TraceViolations {
                count: violations.len(),
                first: v.to_string(),
            });
        }
        let ops = self.fences.len() as u64;
        let mean = |v: &[u64]| v.iter().sum::<u64>() as f64 / ops.max(1) as f64;
        Ok(BenchReport {
            workload,
            ops,
            fences_per_op: mean(&self.fences),
            flushes_per_op_mean: mean(&self.flushes),
            flushes_per_op_median: median(&mut self.flushes),
            alloc_bytes_per_op: mean(&self.alloc_bytes),
            alloc_bytes_per_op_median: median(&mut self.alloc_bytes),
            fences_min: self.fences.iter().copied().min().unwrap_or(0),
            fences_max: self.fences.iter().copied().max().unwrap_or(0),
            sim_time_ns: sim,
            peak_live_bytes: arena.peak_live_bytes(),
            trace_events: events,
            visited,
            wall_time: started.elapsed(),
        })
    }
}

fn mismatch(what: impl Into<String>) -> BenchError {
    BenchError::OracleMismatch(what.into())
}

/// Runs one workload and, if configured, writes the CSV report.
pub fn run_bench(config: &BenchConfig) -> Result<BenchReport> {
    config.validate()?;
    let started = Instant::now();
    let mut arena = Arena::in_memory(ArenaOptions::new(config.arena_size))?;
    if let Some(path) = &config.trace_path {
        arena.set_trace_stream(Some(Box::new(BufWriter::new(File::create(path)?))));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut meter = Meter::new(&arena);
    let mut visited = None;
    match config.workload {
        BenchWorkload::Map => run_map(&mut arena, &mut meter, &mut rng, config)?,
        BenchWorkload::Set => run_set(&mut arena, &mut meter, &mut rng, config)?,
        BenchWorkload::Stack => run_stack(&mut arena, &mut meter, &mut rng, config)?,
        BenchWorkload::Queue => run_queue(&mut arena, &mut meter, &mut rng, config)?,
        BenchWorkload::Vector | BenchWorkload::VecSwap => {
            run_vector(&mut arena, &mut meter, &mut rng, config)?
        }
        BenchWorkload::Bfs => visited = Some(run_bfs(&mut arena, &mut meter, config)?),
    }
    let report = meter.finish(&mut arena, config.workload, visited, started)?;
    // Dropping the stream flushes the trace file.
    arena.set_trace_stream(None);
    if let Some(path) = &config.report_path {
        let mut out = BufWriter::new(File::create(path)?);
        report.write_csv(&mut out)?;
        out.flush()?;
    }
    Ok(report)
}

fn run_map(
    arena: &mut Arena,
    meter: &mut Meter,
    rng: &mut ChaCha8Rng,
    cfg: &BenchConfig,
) -> Result<()> {
    let blobs = cfg.value_size > 8;
    let key_space = cfg.iterations;
    let mut oracle: HashMap<u64, Vec<u8>> = HashMap::new();
    let init = |a: &mut Arena| {
        if blobs {
            map::new_with_blob_values(a)
        } else {
            map::new(a)
        }
    };
    for _ in 0..cfg.iterations {
        let key = rng.gen_range(0..key_space);
        let mut bytes = vec![0u8; cfg.value_size as usize];
        rng.fill(&mut bytes[..]);
        let probe = rng.gen_range(0..key_space);
        let found = meter.op(arena, |a| {
            let m = if blobs {
                a.update_root("map", init, |a, m| map::insert_bytes(a, m, key, &bytes))?
            } else {
                let v = word_of(&bytes);
                a.update_root("map", init, |a, m| map::insert(a, m, key, v))?
            };
            Ok(if blobs {
                map::get_bytes(a, &m, probe)?
            } else {
                map::get(a, &m, probe)?.map(|v| v.to_le_bytes()[..cfg.value_size as usize].to_vec())
            })
        })?;
        oracle.insert(key, bytes);
        if found.as_ref() != oracle.get(&probe) {
            return Err(mismatch(format!("map lookup of {probe}")));
        }
    }
    Ok(())
}

/// Little-endian word holding up to eight bytes.
fn word_of(bytes: &[u8]) -> u64 {
    let mut w = [0u8; 8];
    w[..bytes.len()].copy_from_slice(bytes);
    u64::from_le_bytes(w)
}

fn run_set(
    arena: &mut Arena,
    meter: &mut Meter,
    rng: &mut ChaCha8Rng,
    cfg: &BenchConfig,
) -> Result<()> {
    let key_space = cfg.iterations;
    let mut oracle = HashSet::new();
    for _ in 0..cfg.iterations {
        let key = rng.gen_range(0..key_space);
        let probe = rng.gen_range(0..key_space);
        let found = meter.op(arena, |a| {
            let s = a.update_root("set", set::new, |a, s| set::insert(a, s, key))?;
            Ok(set::contains(a, &s, probe)?)
        })?;
        oracle.insert(key);
        if found != oracle.contains(&probe) {
            return Err(mismatch(format!("set membership of {probe}")));
        }
    }
    Ok(())
}

fn run_stack(
    arena: &mut Arena,
    meter: &mut Meter,
    rng: &mut ChaCha8Rng,
    cfg: &BenchConfig,
) -> Result<()> {
    let mut oracle: Vec<u64> = Vec::new();
    for _ in 0..cfg.iterations {
        let push = oracle.is_empty() || rng.gen_bool(0.5);
        let value: u64 = rng.gen();
        let (popped, top) = meter.op(arena, |a| {
            let mut f = a.begin_fase()?;
            let s = current(&mut f, "stack", stack::new)?;
            let (s, popped) = if push {
                (stack::push(&mut f, &s, value)?, None)
            } else {
                let (s, v) = stack::pop(&mut f, &s)?;
                (s, Some(v))
            };
            f.commit_single("stack", &s)?;
            Ok((popped, stack::peek(a, &s)?))
        })?;
        if push {
            oracle.push(value);
        } else if popped != oracle.pop() {
            return Err(mismatch("stack pop"));
        }
        if top != oracle.last().copied() {
            return Err(mismatch("stack peek"));
        }
    }
    Ok(())
}

fn run_queue(
    arena: &mut Arena,
    meter: &mut Meter,
    rng: &mut ChaCha8Rng,
    cfg: &BenchConfig,
) -> Result<()> {
    let mut oracle: VecDeque<u64> = VecDeque::new();
    for _ in 0..cfg.iterations {
        let enq = oracle.is_empty() || rng.gen_bool(0.5);
        let value: u64 = rng.gen();
        let (taken, front) = meter.op(arena, |a| {
            let mut f = a.begin_fase()?;
            let q = current(&mut f, "queue", queue::new)?;
            let (q, taken) = if enq {
                (queue::enqueue(&mut f, &q, value)?, None)
            } else {
                let (q, v) = queue::dequeue(&mut f, &q)?;
                (q, Some(v))
            };
            f.commit_single("queue", &q)?;
            Ok((taken, queue::front(a, &q)?))
        })?;
        if enq {
            oracle.push_back(value);
        } else if taken != oracle.pop_front() {
            return Err(mismatch("queue dequeue"));
        }
        if front != oracle.front().copied() {
            return Err(mismatch("queue front"));
        }
    }
    Ok(())
}

/// Current version of `name`, or a fresh empty structure inside the FASE.
fn current(
    arena: &mut Arena,
    name: &str,
    init: impl FnOnce(&mut Arena) -> mod_core::Result<DsRoot>,
) -> mod_core::Result<DsRoot> {
    if arena.has_root(name) {
        arena.root_version(name)
    } else {
        init(arena)
    }
}

fn run_vector(
    arena: &mut Arena,
    meter: &mut Meter,
    rng: &mut ChaCha8Rng,
    cfg: &BenchConfig,
) -> Result<()> {
    let mut oracle: Vec<u64> = (0..cfg.prefill).collect();
    {
        let mut f = arena.begin_fase()?;
        let mut v = vector::new(&mut f)?;
        for &x in &oracle {
            v = vector::push_back(&mut f, &v, x)?;
        }
        f.commit_single("vector", &v)?;
    }
    meter.check(arena)?;
    meter.reset_clock(arena);
    let n = cfg.prefill;
    let swap = cfg.workload == BenchWorkload::VecSwap;
    for _ in 0..cfg.iterations {
        let i = rng.gen_range(0..n);
        let j = rng.gen_range(0..n);
        let value: u64 = rng.gen();
        let probe = rng.gen_range(0..n);
        let seen = meter.op(arena, |a| {
            let v = if swap {
                // Two lookups and two chained updates, one commit.
                a.update_root("vector", vector::new, |a, x| {
                    let vi = vector::get(a, x, i)?;
                    let vj = vector::get(a, x, j)?;
                    let y = vector::update(a, x, i, vj)?;
                    vector::update(a, &y, j, vi)
                })?
            } else {
                a.update_root("vector", vector::new, |a, x| vector::update(a, x, i, value))?
            };
            Ok(vector::get(a, &v, probe)?)
        })?;
        if swap {
            oracle.swap(i as usize, j as usize);
        } else {
            oracle[i as usize] = value;
        }
        if seen != oracle[probe as usize] {
            return Err(mismatch(format!("vector element {probe}")));
        }
    }
    Ok(())
}

/// Seeded connected undirected graph: a random spanning tree plus random
/// extra edges up to `nodes * degree / 2` edges. Adjacency lists are
/// sorted.
pub fn random_graph(nodes: u64, degree: u64, seed: u64) -> Vec<Vec<u64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adj: Vec<Vec<u64>> = vec![Vec::new(); nodes as usize];
    let mut edges: HashSet<(u64, u64)> = HashSet::new();
    let mut add = |adj: &mut Vec<Vec<u64>>, u: u64, v: u64| {
        let e = (u.min(v), u.max(v));
        if u != v && edges.insert(e) {
            adj[u as usize].push(v);
            adj[v as usize].push(u);
            true
        } else {
            false
        }
    };
    for v in 1..nodes {
        let u = rng.gen_range(0..v);
        add(&mut adj, u, v);
    }
    let max_edges = nodes * nodes.saturating_sub(1) / 2;
    let target = (nodes * degree / 2).min(max_edges);
    let mut have = nodes.saturating_sub(1);
    while have < target {
        let u = rng.gen_range(0..nodes);
        let v = rng.gen_range(0..nodes);
        if add(&mut adj, u, v) {
            have += 1;
        }
    }
    for list in &mut adj {
        list.sort_unstable();
    }
    adj
}

/// Visit order of a breadth-first traversal from node 0.
pub fn bfs_order(adj: &[Vec<u64>]) -> Vec<u64> {
    if adj.is_empty() {
        return Vec::new();
    }
    let mut seen = vec![false; adj.len()];
    let mut order = Vec::with_capacity(adj.len());
    let mut q = VecDeque::from([0u64]);
    seen[0] = true;
    while let Some(u) = q.pop_front() {
        order.push(u);
        for &v in &adj[u as usize] {
            if !seen[v as usize] {
                seen[v as usize] = true;
                q.push_back(v);
            }
        }
    }
    order
}

/// Breadth-first search whose frontier lives in a durable queue; every
/// enqueue and every dequeue is its own FASE.
fn run_bfs(arena: &mut Arena, meter: &mut Meter, cfg: &BenchConfig) -> Result<u64> {
    let adj = random_graph(cfg.graph_nodes, cfg.graph_degree, cfg.seed);
    let expected = bfs_order(&adj);
    let enqueue = |meter: &mut Meter, arena: &mut Arena, v: u64| {
        meter.op(arena, |a| {
            a.update_root("bfs", queue::new, |a, q| queue::enqueue(a, q, v))?;
            Ok(())
        })
    };
    let mut seen = vec![false; adj.len()];
    let mut order = Vec::with_capacity(adj.len());
    seen[0] = true;
    enqueue(meter, arena, 0)?;
    loop {
        let next = meter.op(arena, |a| {
            let mut f = a.begin_fase()?;
            let q = f.root_version("bfs")?;
            if q.is_empty() {
                f.abort()?;
                return Ok(None);
            }
            let (q, v) = queue::dequeue(&mut f, &q)?;
            f.commit_single("bfs", &q)?;
            Ok(Some(v))
        })?;
        let Some(u) = next else { break };
        order.push(u);
        for &v in &adj[u as usize] {
            if !seen[v as usize] {
                seen[v as usize] = true;
                enqueue(meter, arena, v)?;
            }
        }
    }
    // The final probe of the empty queue is not an operation.
    meter.flushes.pop();
    meter.fences.pop();
    meter.alloc_bytes.pop();
    if order != expected {
        return Err(mismatch("bfs visit order"));
    }
    let distinct: HashSet<u64> = order.iter().copied().collect();
    if distinct.len() != adj.len() {
        return Err(mismatch(format!(
            "bfs visited {} of {} nodes",
            distinct.len(),
            adj.len()
        )));
    }
    Ok(order.len() as u64)
}

/// Bytes of allocations reachable from the root directory.
pub fn reachable_bytes(arena: &Arena) -> Result<u64> {
    let reach = reachability(arena)?;
    Ok(arena
        .allocations()
        .iter()
        .filter(|r| reach.contains(r.offset))
        .map(|r| r.size)
        .sum())
}

fn growth_options(arena_size: u64) -> ArenaOptions {
    ArenaOptions::new(arena_size).record_trace(false)
}

/// Grows a structure to `target` elements one FASE at a time, starting from
/// whatever is bound to its root.
fn grow(arena: &mut Arena, workload: BenchWorkload, from: u64, target: u64) -> Result<()> {
    for i in from..target {
        match workload {
            BenchWorkload::Map => {
                arena.update_root("map", map::new, |a, m| map::insert(a, m, i, !i))?;
            }
            BenchWorkload::Set => {
                arena.update_root("set", set::new, |a, s| set::insert(a, s, i))?;
            }
            BenchWorkload::Stack => {
                arena.update_root("stack", stack::new, |a, s| stack::push(a, s, i))?;
            }
            BenchWorkload::Queue => {
                arena.update_root("queue", queue::new, |a, q| queue::enqueue(a, q, i))?;
            }
            BenchWorkload::Vector | BenchWorkload::VecSwap => {
                arena.update_root("vector", vector::new, |a, v| vector::push_back(a, v, i))?;
            }
            BenchWorkload::Bfs => {
                return Err(BenchError::InvalidConfig(
                    "growth is measured on map, set, stack, queue or vector".into(),
                ))
            }
        }
    }
    // Two empty sections retire and then free the last replaced version.
    for _ in 0..2 {
        arena.begin_fase()?.commit()?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthReport {
    pub workload: BenchWorkload,
    pub n1: u64,
    pub n2: u64,
    pub bytes1: u64,
    pub bytes2: u64,
    pub ratio: f64,
}

impl fmt::Display for GrowthReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {} elements = {} bytes, {} elements = {} bytes, ratio {:.4}",
            self.workload, self.n1, self.bytes1, self.n2, self.bytes2, self.ratio
        )
    }
}

/// Live structure bytes at `n2` elements divided by those at `n1`.
pub fn measure_growth(
    workload: BenchWorkload,
    n1: u64,
    n2: u64,
    arena_size: u64,
) -> Result<GrowthReport> {
    if n2 <= n1 || n1 == 0 {
        return Err(BenchError::InvalidConfig(format!(
            "growth needs 0 < n1 < n2, got {n1} and {n2}"
        )));
    }
    let mut arena = Arena::in_memory(growth_options(arena_size))?;
    grow(&mut arena, workload, 0, n1)?;
    let bytes1 = reachable_bytes(&arena)?;
    grow(&mut arena, workload, n1, n2)?;
    let bytes2 = reachable_bytes(&arena)?;
    Ok(GrowthReport {
        workload,
        n1,
        n2,
        bytes1,
        bytes2,
        ratio: bytes2 as f64 / bytes1 as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SharingReport {
    pub workload: BenchWorkload,
    pub elements: u64,
    pub updates: u64,
    pub live_bytes: u64,
    pub mean_new_bytes: f64,
    /// `mean_new_bytes / live_bytes`.
    pub fraction: f64,
}

impl fmt::Display for SharingReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {} elements, {} live bytes, {:.1} new bytes per update ({:.5}%)",
            self.workload,
            self.elements,
            self.live_bytes,
            self.mean_new_bytes,
            self.fraction * 100.0
        )
    }
}

/// Builds a map or vector of `elements` entries, then measures the bytes
/// newly allocated by `updates` random single-element updates relative to
/// the live size of the structure.
pub fn measure_sharing(
    workload: BenchWorkload,
    elements: u64,
    updates: u64,
    seed: u64,
    arena_size: u64,
) -> Result<SharingReport> {
    if !matches!(workload, BenchWorkload::Map | BenchWorkload::Vector)
        || elements == 0
        || updates == 0
    {
        return Err(BenchError::InvalidConfig(
            "sharing is measured on a non-empty map or vector".into(),
        ));
    }
    let mut arena = Arena::in_memory(growth_options(arena_size))?;
    grow(&mut arena, workload, 0, elements)?;
    let live_bytes = reachable_bytes(&arena)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0u64;
    for _ in 0..updates {
        let i = rng.gen_range(0..elements);
        let value: u64 = rng.gen();
        let before: Counters = *arena.counters();
        match workload {
            BenchWorkload::Map => {
                arena.update_root("map", map::new, |a, m| map::insert(a, m, i, value))?;
            }
            _ => {
                arena.update_root("vector", vector::new, |a, v| vector::update(a, v, i, value))?;
            }
        }
        total += arena.counters().alloc_bytes - before.alloc_bytes;
    }
    let mean = total as f64 / updates as f64;
    Ok(SharingReport {
        workload,
        elements,
        updates,
        live_bytes,
        mean_new_bytes: mean,
        fraction: mean / live_bytes as f64,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlushModelFit {
    pub params: FlushModelParams<f64>,
    /// `(concurrency, measured, model)` per input point.
    pub rows: Vec<(u64, f64, f64)>,
    pub reduction_at_16: f64,
}

impl fmt::Display for FlushModelFit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "serial fraction  {:.6}", self.params.serial_fraction)?;
        writeln!(f, "base latency     {:.3} ns", self.params.base_latency_ns)?;
        writeln!(f, "{:>6} {:>12} {:>12}", "n", "measured", "model")?;
        for (n, m, p) in &self.rows {
            writeln!(f, "{n:>6} {m:>12.3} {p:>12.3}")?;
        }
        write!(f, "reduction at n=16: {:.2}%", self.reduction_at_16 * 100.0)
    }
}

/// Fits the flush model to `concurrency,avg_latency_ns` rows and tabulates
/// the fit against the input.
pub fn bench_flush_model<R: Read>(csv: R) -> Result<FlushModelFit> {
    let points: Vec<Measurement> = flush_model::read_measurements(csv)?;
    let params = flush_model::fit_karp_flatt::<f64>(&points)?;
    let mut rows = Vec::with_capacity(points.len());
    for p in &points {
        rows.push((
            p.concurrency,
            p.avg_latency_ns,
            flush_model::avg_flush_latency(p.concurrency, &params)?,
        ));
    }
    Ok(FlushModelFit {
        params,
        rows,
        reduction_at_16: flush_model::latency_reduction(16, &params)?,
    })
}
