//! Resource bounds, binding and static scheduling.
//!
//! Capacities come from the parallel loop structure of the program. Nodes
//! are bound round-robin to numbered operator instances in trace order and
//! then list-scheduled in one pass over the trace. Nodes inside reduction
//! trees are finally pushed as late as their consumers allow.

mod brute;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interp::{DataflowGraph, NodeId, Reduction};
use crate::ir::{ArithKind, LoopNestProgram, Statement};

pub use brute::{brute_force_schedule, brute_force_schedule_any_order, BRUTE_FORCE_LIMIT};

#[derive(Debug, Error, PartialEq)]
pub enum SchedError {
    #[error("instance too large for exhaustive search: {0} nodes (limit {BRUTE_FORCE_LIMIT})")]
    TooLarge(usize),
    #[error("stage boundary {boundary} outside [0, {total}]")]
    BoundaryOutOfRange { boundary: u64, total: u64 },
    #[error("stage boundaries must be strictly increasing")]
    BoundariesNotIncreasing,
    #[error("cannot split {total} intervals into {stages} stages")]
    StageCount { stages: usize, total: u64 },
    #[error("bad resource file: {0}")]
    Config(String),
}

/// Latency and initiation interval of one operator kind.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperatorSpec {
    pub latency: u32,
    pub ii: u32,
}

/// Default latencies in cycles.
pub fn default_spec(kind: ArithKind) -> OperatorSpec {
    let latency = match kind {
        ArithKind::Addf | ArithKind::Subf | ArithKind::Mulf => 2,
        ArithKind::Fmac => 3,
        ArithKind::Divf | ArithKind::Sqrtf => 8,
        _ => 0,
    };
    OperatorSpec { latency, ii: 1 }
}

/// Number of operator instances available for a kind. Serialized as a
/// number or the string `"unbounded"`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Capacity {
    Bounded(u32),
    Unbounded,
}

impl Serialize for Capacity {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Capacity::Bounded(k) => s.serialize_u32(*k),
            Capacity::Unbounded => s.serialize_str("unbounded"),
        }
    }
}

impl<'de> Deserialize<'de> for Capacity {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match serde_json::Value::deserialize(d)? {
            serde_json::Value::String(s) if s == "unbounded" => Ok(Capacity::Unbounded),
            serde_json::Value::Number(n) => n
                .as_u64()
                .and_then(|k| u32::try_from(k).ok())
                .map(Capacity::Bounded)
                .ok_or_else(|| serde::de::Error::custom(format!("bad capacity {n}"))),
            v => Err(serde::de::Error::custom(format!("expected a number or \"unbounded\", got {v}"))),
        }
    }
}

impl fmt::Display for Capacity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Capacity::Bounded(k) => write!(f, "{k}"),
            Capacity::Unbounded => f.write_str("unbounded"),
        }
    }
}

/// Per-kind operator specs and capacities. Kinds without an explicit
/// capacity are unbounded.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResourceModel {
    pub specs: BTreeMap<ArithKind, OperatorSpec>,
    pub capacity: BTreeMap<ArithKind, Capacity>,
}

impl Default for ResourceModel {
    fn default() -> Self {
        ResourceModel {
            specs: ArithKind::ALL.iter().map(|&k| (k, default_spec(k))).collect(),
            capacity: BTreeMap::new(),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigEntry {
    latency: Option<u32>,
    ii: Option<u32>,
    capacity: Option<Capacity>,
}

impl ResourceModel {
    pub fn spec(&self, kind: ArithKind) -> OperatorSpec {
        self.specs.get(&kind).copied().unwrap_or_else(|| default_spec(kind))
    }

    pub fn latency(&self, kind: ArithKind) -> u64 {
        self.spec(kind).latency as u64
    }

    pub fn ii(&self, kind: ArithKind) -> u64 {
        self.spec(kind).ii.max(1) as u64
    }

    pub fn capacity(&self, kind: ArithKind) -> Capacity {
        self.capacity.get(&kind).copied().unwrap_or(Capacity::Unbounded)
    }

    pub fn with_capacities(mut self, caps: &BTreeMap<ArithKind, Capacity>) -> Self {
        self.capacity.extend(caps);
        self
    }

    /// Uniform latency for every kind; handy in tests.
    pub fn uniform(latency: u32) -> Self {
        ResourceModel {
            specs: ArithKind::ALL.iter().map(|&k| (k, OperatorSpec { latency, ii: 1 })).collect(),
            capacity: BTreeMap::new(),
        }
    }

    /// Apply a JSON resource file `{kind: {latency, ii, capacity}}` on top of `self`.
    pub fn apply_config(mut self, json: &str) -> Result<Self, SchedError> {
        let entries: BTreeMap<String, ConfigEntry> =
            serde_json::from_str(json).map_err(|e| SchedError::Config(e.to_string()))?;
        for (name, e) in entries {
            let kind: ArithKind = name.parse().map_err(SchedError::Config)?;
            let mut spec = self.spec(kind);
            if let Some(l) = e.latency {
                spec.latency = l;
            }
            if let Some(ii) = e.ii {
                if ii == 0 {
                    return Err(SchedError::Config(format!("{name}: ii must be at least 1")));
                }
                spec.ii = ii;
            }
            self.specs.insert(kind, spec);
            if let Some(c) = e.capacity {
                if c == Capacity::Bounded(0) {
                    return Err(SchedError::Config(format!("{name}: capacity must be at least 1")));
                }
                self.capacity.insert(kind, c);
            }
        }
        Ok(self)
    }
}

/// Parallelism bound of a program.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResourceBound {
    /// `K_i` of every top-level nest: product of its parallel iteration extents.
    pub k_per_nest: Vec<u64>,
    /// `max_i K_i`.
    pub k: u64,
    pub capacities: BTreeMap<ArithKind, Capacity>,
}

fn count_static(body: &[Statement], mult: u64, counts: &mut BTreeMap<ArithKind, u64>, k: &mut u64) {
    for s in body {
        match s {
            Statement::For { body, .. } => count_static(body, mult, counts, k),
            Statement::ParallelFor { ranges, body, .. } => {
                let m = mult * ranges.iter().map(|r| r.trip_count()).product::<u64>();
                *k = (*k).max(m);
                count_static(body, m, counts, k);
            }
            Statement::Arith { kind, .. } => *counts.entry(*kind).or_default() += mult,
            _ => {}
        }
    }
}

/// Per-nest parallelism and per-kind capacities: for each kind, the maximum
/// over nests of (parallel instances x occurrences of that kind in one body).
pub fn compute_resource_bound(program: &LoopNestProgram) -> ResourceBound {
    let mut k_per_nest = Vec::new();
    let mut caps: BTreeMap<ArithKind, u64> = BTreeMap::new();
    for s in &program.body {
        let mut counts = BTreeMap::new();
        let mut k = 1;
        count_static(std::slice::from_ref(s), 1, &mut counts, &mut k);
        k_per_nest.push(k);
        for (kind, c) in counts {
            let e = caps.entry(kind).or_default();
            *e = (*e).max(c);
        }
    }
    // Rewrites introduce kinds the program does not contain.
    let mulf = caps.get(&ArithKind::Mulf).copied().unwrap_or(0);
    let fmac = caps.entry(ArithKind::Fmac).or_default();
    *fmac = (*fmac).max(mulf);
    let select = caps.get(&ArithKind::Select).copied().unwrap_or(0);
    let relu = caps.entry(ArithKind::Relu).or_default();
    *relu = (*relu).max(select);
    let capacities = ArithKind::ALL
        .iter()
        .map(|&kind| (kind, Capacity::Bounded(caps.get(&kind).copied().unwrap_or(0).clamp(1, u32::MAX as u64) as u32)))
        .collect();
    ResourceBound { k: k_per_nest.iter().copied().max().unwrap_or(0), k_per_nest, capacities }
}

/// Instance assignment of every node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Binding {
    /// Instance index per node, in trace order.
    pub instance: Vec<u32>,
    /// Number of distinct instances used per kind.
    pub instances_used: BTreeMap<ArithKind, u32>,
}

/// Round-robin: the n-th node of a kind (in trace order) gets instance `n mod K`.
pub fn bind(dfg: &DataflowGraph, model: &ResourceModel) -> Binding {
    let mut counter: BTreeMap<ArithKind, u64> = BTreeMap::new();
    let mut instance = Vec::with_capacity(dfg.len());
    for n in dfg.nodes() {
        let c = counter.entry(n.kind).or_default();
        let j = match model.capacity(n.kind) {
            Capacity::Bounded(k) => *c % k.max(1) as u64,
            Capacity::Unbounded => *c,
        };
        *c += 1;
        instance.push(j as u32);
    }
    let instances_used = counter
        .into_iter()
        .map(|(kind, n)| {
            let used = match model.capacity(kind) {
                Capacity::Bounded(k) => n.min(k as u64),
                Capacity::Unbounded => n,
            };
            (kind, used as u32)
        })
        .collect();
    Binding { instance, instances_used }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    /// Start cycle per node, in trace order.
    pub start: Vec<u64>,
    pub total_intervals: u64,
    #[serde(default)]
    pub stage_boundaries: Vec<u64>,
}

/// Longest chain of zero-latency operators allowed within one cycle.
pub const MAX_COMBINATIONAL_CHAIN: u32 = 4;

fn ready_time(dfg: &DataflowGraph, model: &ResourceModel, start: &[u64], n: NodeId) -> u64 {
    dfg.node(n)
        .operands()
        .iter()
        .filter_map(|&o| dfg.producer(o))
        .map(|p| start[p.index()] + model.latency(dfg.node(p).kind))
        .max()
        .unwrap_or(0)
}

fn total_of(dfg: &DataflowGraph, model: &ResourceModel, start: &[u64]) -> u64 {
    dfg.nodes().iter().zip(start).map(|(n, &s)| s + model.latency(n.kind)).max().unwrap_or(0)
}

/// List schedule in trace order, then ALAP placement inside reduction trees.
pub fn schedule(dfg: &DataflowGraph, binding: &Binding, model: &ResourceModel) -> Schedule {
    let asap = list_schedule(dfg, binding, model);
    let total = asap.total_intervals;
    let start = alap_trees(dfg, binding, model, asap.start);
    debug_assert_eq!(total_of(dfg, model, &start), total);
    Schedule { start, total_intervals: total, stage_boundaries: Vec::new() }
}

/// Greedy earliest start in trace order, without the ALAP pass.
pub fn list_schedule(dfg: &DataflowGraph, binding: &Binding, model: &ResourceModel) -> Schedule {
    let mut start = vec![0u64; dfg.len()];
    let mut comb = vec![0u32; dfg.len()];
    let mut last: BTreeMap<(ArithKind, u32), u64> = BTreeMap::new();
    for (i, n) in dfg.nodes().iter().enumerate() {
        let key = (n.kind, binding.instance[i]);
        let mut t = ready_time(dfg, model, &start, NodeId(i as u32));
        if let Some(&prev) = last.get(&key) {
            t = t.max(prev + model.ii(n.kind));
        }
        if model.latency(n.kind) == 0 {
            let depth_at = |t: u64| {
                1 + n
                    .operands()
                    .iter()
                    .filter_map(|&o| dfg.producer(o))
                    .filter(|p| model.latency(dfg.node(*p).kind) == 0 && start[p.index()] == t)
                    .map(|p| comb[p.index()])
                    .max()
                    .unwrap_or(0)
            };
            let mut d = depth_at(t);
            if d > MAX_COMBINATIONAL_CHAIN {
                t += 1;
                d = depth_at(t);
            }
            comb[i] = d;
        }
        start[i] = t;
        last.insert(key, t);
    }
    let total_intervals = total_of(dfg, model, &start);
    Schedule { start, total_intervals, stage_boundaries: Vec::new() }
}

/// Move non-root nodes of reduction trees as late as their consumers and
/// their instance successors allow. Zero-latency nodes stay put so chaining
/// depth is unaffected.
fn alap_trees(dfg: &DataflowGraph, binding: &Binding, model: &ResourceModel, mut start: Vec<u64>) -> Vec<u64> {
    let users = dfg.node_users();
    let uses = dfg.use_counts();
    let mut next_on_instance = vec![None; dfg.len()];
    let mut last: BTreeMap<(ArithKind, u32), usize> = BTreeMap::new();
    for (i, n) in dfg.nodes().iter().enumerate().rev() {
        let key = (n.kind, binding.instance[i]);
        next_on_instance[i] = last.insert(key, i);
    }
    for (i, n) in dfg.nodes().iter().enumerate().rev() {
        let Some(Reduction::Tree(t)) = n.reduction else { continue };
        let lat = model.latency(n.kind);
        let consumers = &users[i];
        let internal = !consumers.is_empty()
            && consumers.len() as u32 == uses[n.result.index()]
            && consumers.iter().all(|c| dfg.node(*c).reduction == Some(Reduction::Tree(t)));
        if lat == 0 || !internal {
            continue;
        }
        let mut latest = consumers.iter().map(|c| start[c.index()] - lat).min().unwrap();
        if let Some(nx) = next_on_instance[i] {
            latest = latest.min(start[nx] - model.ii(n.kind));
        }
        if latest > start[i] {
            start[i] = latest;
        }
    }
    start
}

/// Longest path through the graph, summing latencies.
pub fn critical_path(dfg: &DataflowGraph, model: &ResourceModel) -> u64 {
    let mut fin = vec![0u64; dfg.len()];
    for (i, n) in dfg.nodes().iter().enumerate() {
        let ready = n
            .operands()
            .iter()
            .filter_map(|&o| dfg.producer(o))
            .map(|p| fin[p.index()])
            .max()
            .unwrap_or(0);
        fin[i] = ready + model.latency(n.kind);
    }
    fin.into_iter().max().unwrap_or(0)
}

/// Empty iff every node is scheduled, every data edge respects latency,
/// every instance index is within capacity and same-instance nodes issue in
/// trace order at least II apart.
pub fn validate_schedule(dfg: &DataflowGraph, binding: &Binding, sched: &Schedule, model: &ResourceModel) -> Vec<String> {
    let mut d = Vec::new();
    if sched.start.len() != dfg.len() || binding.instance.len() != dfg.len() {
        d.push(format!(
            "schedule covers {} nodes and binding {} nodes, graph has {}",
            sched.start.len(),
            binding.instance.len(),
            dfg.len()
        ));
        return d;
    }
    for (i, n) in dfg.nodes().iter().enumerate() {
        for &o in n.operands() {
            if let Some(p) = dfg.producer(o) {
                let pk = dfg.node(p).kind;
                let ready = sched.start[p.index()] + model.latency(pk);
                if ready > sched.start[i] {
                    d.push(format!(
                        "precedence: edge {p} ({pk}) -> n{i} ({}) needs start >= {ready}, got {}",
                        n.kind, sched.start[i]
                    ));
                }
            }
        }
        if let Capacity::Bounded(k) = model.capacity(n.kind) {
            if binding.instance[i] >= k {
                d.push(format!("capacity: n{i} bound to {} instance {} but K = {k}", n.kind, binding.instance[i]));
            }
        }
    }
    let mut prev: BTreeMap<(ArithKind, u32), usize> = BTreeMap::new();
    for (i, n) in dfg.nodes().iter().enumerate() {
        let key = (n.kind, binding.instance[i]);
        if let Some(p) = prev.insert(key, i) {
            let ii = model.ii(n.kind);
            if sched.start[i] < sched.start[p] + ii {
                d.push(format!(
                    "resource: n{p} and n{i} share {} instance {} but start at {} and {} (II {ii})",
                    n.kind, key.1, sched.start[p], sched.start[i]
                ));
            }
        }
    }
    let total = total_of(dfg, model, &sched.start);
    if total != sched.total_intervals {
        d.push(format!("total_intervals is {} but the last node completes at {total}", sched.total_intervals));
    }
    d
}

/// Either a number of roughly equal stages or explicit boundary cycles.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StageRequest {
    Count(usize),
    Boundaries(Vec<u64>),
}

pub fn assign_stages(total: u64, request: &StageRequest) -> Result<Vec<u64>, SchedError> {
    match request {
        StageRequest::Count(0) => Err(SchedError::StageCount { stages: 0, total }),
        StageRequest::Count(n) => {
            let n = *n as u64;
            if n > 1 && n > total {
                return Err(SchedError::StageCount { stages: n as usize, total });
            }
            Ok((1..n).map(|i| i * total / n).collect())
        }
        StageRequest::Boundaries(b) => {
            for w in b.windows(2) {
                if w[1] <= w[0] {
                    return Err(SchedError::BoundariesNotIncreasing);
                }
            }
            if let Some(&bad) = b.iter().find(|&&x| x > total) {
                return Err(SchedError::BoundaryOutOfRange { boundary: bad, total });
            }
            Ok(b.clone())
        }
    }
}

/// Lengths of the stages cut by `boundaries`.
pub fn stage_lengths(total: u64, boundaries: &[u64]) -> Vec<u64> {
    let mut cuts = vec![0];
    cuts.extend_from_slice(boundaries);
    cuts.push(total);
    cuts.windows(2).map(|w| w[1] - w[0]).collect()
}
