//! Cycle-level simulation of a scheduled graph and the design reports.
//!
//! [`simulate`] walks the static schedule one cycle at a time. A node reads
//! its operands at its start cycle and its result becomes visible at
//! `start + latency`; zero-latency nodes chain within a cycle in trace order.
//! Any read of a value that is not yet visible is reported, so a schedule
//! that passes [`validate_schedule`] simulates to exactly the values of
//! [`evaluate_numeric`](crate::interp::evaluate_numeric) under format rules.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::fpformat::{FPValue, FloatFormat, EXC_INF, EXC_NAN, EXC_NORMAL, EXC_ZERO};
use crate::interp::{DataflowGraph, EvalError, NodeId, ValueId, ValueOrigin};
use crate::sched::{stage_lengths, validate_schedule, Binding, ResourceModel, Schedule};
use crate::tensor::Tensor;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("schedule is invalid: {}", .0.join("; "))]
    InvalidSchedule(Vec<String>),
    #[error(transparent)]
    Input(#[from] EvalError),
    #[error("n{node} reads {value} at cycle {cycle} before it is available")]
    Hazard { node: u32, value: ValueId, cycle: u64 },
}

/// Values held in stage registers at one boundary.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageLatch {
    pub cycle: u64,
    pub values: Vec<(ValueId, FPValue)>,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize)]
pub struct CycleTrace {
    /// Nodes issuing at each cycle `0..=total_intervals`.
    pub issues: Vec<Vec<NodeId>>,
    /// Nodes whose results become visible at each cycle.
    pub completions: Vec<Vec<NodeId>>,
    pub latches: Vec<StageLatch>,
    /// Flat row-major output vectors per output buffer.
    pub outputs: BTreeMap<String, Vec<FPValue>>,
}

/// Values produced by a node no later than `boundary` and still read by a
/// node starting at or after it (or by an output port). Leaves and constants
/// never cross: every stage has its own copy.
pub fn crossing_values(dfg: &DataflowGraph, sched: &Schedule, model: &ResourceModel, boundary: u64) -> Vec<ValueId> {
    let users = dfg.node_users();
    let mut is_output = vec![false; dfg.values().len()];
    for o in dfg.outputs() {
        is_output[o.value.index()] = true;
    }
    let mut out = Vec::new();
    for (i, n) in dfg.nodes().iter().enumerate() {
        let done = sched.start[i] + model.latency(n.kind);
        if done > boundary {
            continue;
        }
        let read_later = users[i].iter().any(|u| sched.start[u.index()] >= boundary)
            || (is_output[n.result.index()] && boundary <= sched.total_intervals);
        if read_later {
            out.push(n.result);
        }
    }
    out
}

/// Run the schedule on concrete inputs under `fmt` arithmetic.
pub fn simulate(
    dfg: &DataflowGraph,
    sched: &Schedule,
    binding: &Binding,
    model: &ResourceModel,
    fmt: FloatFormat,
    inputs: &BTreeMap<String, Tensor>,
) -> Result<CycleTrace, SimError> {
    let diags = validate_schedule(dfg, binding, sched, model);
    if !diags.is_empty() {
        return Err(SimError::InvalidSchedule(diags));
    }
    let nv = dfg.values().len();
    let mut val = vec![fmt.zero(); nv];
    // Cycle from which each value can be read.
    let mut visible = vec![u64::MAX; nv];
    for (i, origin) in dfg.values().iter().enumerate() {
        match *origin {
            ValueOrigin::Const(c) => {
                val[i] = fmt.encode(c);
                visible[i] = 0;
            }
            ValueOrigin::Input { buffer, offset } => {
                let b = &dfg.buffers()[buffer as usize];
                let t = inputs.get(&b.name).ok_or_else(|| EvalError::MissingInput(b.name.clone()))?;
                let expected = b.shape.num_elements();
                if t.data.len() != expected {
                    return Err(EvalError::SizeMismatch { buffer: b.name.clone(), expected, actual: t.data.len() }.into());
                }
                val[i] = fmt.encode(t.data[offset as usize]);
                visible[i] = 0;
            }
            ValueOrigin::Op(_) => {}
        }
    }

    let total = sched.total_intervals;
    let cycles = total as usize + 1;
    let mut trace = CycleTrace {
        issues: vec![Vec::new(); cycles],
        completions: vec![Vec::new(); cycles],
        ..Default::default()
    };
    for (i, n) in dfg.nodes().iter().enumerate() {
        let s = sched.start[i];
        trace.issues[s as usize].push(NodeId(i as u32));
        trace.completions[(s + model.latency(n.kind)) as usize].push(NodeId(i as u32));
    }
    // In-flight results keyed by the cycle they land.
    let mut pending: BTreeMap<u64, Vec<(usize, FPValue)>> = BTreeMap::new();
    let mut boundaries = sched.stage_boundaries.iter().copied().peekable();
    let mut ops = Vec::with_capacity(3);
    for c in 0..=total {
        if let Some(land) = pending.remove(&c) {
            for (v, x) in land {
                val[v] = x;
                visible[v] = c;
            }
        }
        for &nid in &trace.issues[c as usize] {
            let n = dfg.node(nid);
            ops.clear();
            for &o in n.operands() {
                if visible[o.index()] > c {
                    return Err(SimError::Hazard { node: nid.0, value: o, cycle: c });
                }
                ops.push(val[o.index()]);
            }
            let r = fmt.apply(n.kind, &ops);
            let lat = model.latency(n.kind);
            if lat == 0 {
                val[n.result.index()] = r;
                visible[n.result.index()] = c;
            } else {
                pending.entry(c + lat).or_default().push((n.result.index(), r));
            }
        }
        while boundaries.peek() == Some(&c) {
            boundaries.next();
            let values = crossing_values(dfg, sched, model, c).into_iter().map(|v| (v, val[v.index()])).collect();
            trace.latches.push(StageLatch { cycle: c, values });
        }
    }
    for o in dfg.outputs() {
        let b = &dfg.buffers()[o.buffer as usize];
        let out = trace.outputs.entry(b.name.clone()).or_insert_with(|| vec![fmt.zero(); b.shape.num_elements()]);
        out[o.offset as usize] = val[o.value.index()];
    }
    Ok(trace)
}

/// Parse a clock period in nanoseconds with at most three decimals into
/// integer picoseconds.
pub fn parse_clock_ns(s: &str) -> Result<u64, String> {
    let s = s.trim();
    let (whole, frac) = s.split_once('.').unwrap_or((s, ""));
    if whole.is_empty() && frac.is_empty() || frac.len() > 3 || !frac.chars().all(|c| c.is_ascii_digit()) {
        return Err(format!("clock period `{s}` must be a decimal number of ns with at most 3 decimals"));
    }
    let w: u64 = if whole.is_empty() { 0 } else { whole.parse().map_err(|_| format!("bad clock period `{s}`"))? };
    let f: u64 = format!("{frac:0<3}").parse().unwrap_or(0);
    let ps = w.checked_mul(1000).and_then(|x| x.checked_add(f)).ok_or_else(|| format!("clock period `{s}` too large"))?;
    if ps == 0 {
        return Err("clock period must be positive".into());
    }
    Ok(ps)
}

/// Integer picoseconds rendered with the given unit scale (1000 for ns,
/// 1_000_000 for us), trailing zeros trimmed.
fn fixed(ps: u128, scale: u128) -> String {
    let whole = ps / scale;
    let frac = ps % scale;
    if frac == 0 {
        return whole.to_string();
    }
    let digits = scale.to_string().len() - 1;
    let s = format!("{whole}.{frac:0digits$}");
    s.trim_end_matches('0').to_string()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LatencyReport {
    pub total_intervals: u64,
    pub clock_period_ps: u64,
    pub stage_lengths: Vec<u64>,
    pub end_to_end_ps: u128,
    /// Longest stage times the clock period.
    pub throughput_ps_per_sample: u128,
}

impl LatencyReport {
    pub fn end_to_end_ns(&self) -> String {
        fixed(self.end_to_end_ps, 1000)
    }

    pub fn end_to_end_us(&self) -> String {
        fixed(self.end_to_end_ps, 1_000_000)
    }

    pub fn throughput_us_per_sample(&self) -> String {
        fixed(self.throughput_ps_per_sample, 1_000_000)
    }

    pub fn clock_period_ns(&self) -> String {
        fixed(self.clock_period_ps as u128, 1000)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "total intervals      {}", self.total_intervals);
        let _ = writeln!(s, "clock period         {} ns", self.clock_period_ns());
        let _ = writeln!(s, "end-to-end latency   {} ns ({} us)", self.end_to_end_ns(), self.end_to_end_us());
        let lens: Vec<String> = self.stage_lengths.iter().map(|l| l.to_string()).collect();
        let _ = writeln!(s, "stage lengths        {}", lens.join(", "));
        let _ = writeln!(s, "throughput           {} us/sample", self.throughput_us_per_sample());
        s
    }
}

pub fn latency_report(total_intervals: u64, stage_boundaries: &[u64], clock_period_ps: u64) -> LatencyReport {
    let lengths = stage_lengths(total_intervals, stage_boundaries);
    let longest = lengths.iter().copied().max().unwrap_or(0);
    LatencyReport {
        total_intervals,
        clock_period_ps,
        stage_lengths: lengths,
        end_to_end_ps: total_intervals as u128 * clock_period_ps as u128,
        throughput_ps_per_sample: longest as u128 * clock_period_ps as u128,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct BoundaryWires {
    pub cycle: u64,
    pub values: usize,
    pub wires: u64,
}

/// Wires needed at each stage boundary: crossing values times word width.
pub fn bus_width_report(
    dfg: &DataflowGraph,
    sched: &Schedule,
    model: &ResourceModel,
    boundaries: &[u64],
    fmt: FloatFormat,
) -> Vec<BoundaryWires> {
    boundaries
        .iter()
        .map(|&b| {
            let values = crossing_values(dfg, sched, model, b).len();
            BoundaryWires { cycle: b, values, wires: values as u64 * fmt.total_width() as u64 }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize)]
pub struct WeightHistogram {
    /// Count per binary exponent `floor(log2 |w|)` of finite nonzero weights.
    pub buckets: BTreeMap<i32, usize>,
    pub zeros: usize,
    pub non_finite: usize,
    /// Finite weights that encode to infinity in the format.
    pub overflow: usize,
    /// Nonzero weights that flush to zero in the format.
    pub underflow: usize,
}

impl WeightHistogram {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("exponent,count\n");
        for (e, c) in &self.buckets {
            let _ = writeln!(s, "{e},{c}");
        }
        s
    }
}

pub fn weight_histogram<'a>(weights: impl IntoIterator<Item = &'a Tensor>, fmt: FloatFormat) -> WeightHistogram {
    let mut h = WeightHistogram::default();
    for t in weights {
        for &w in &t.data {
            if !w.is_finite() {
                h.non_finite += 1;
                continue;
            }
            if w == 0.0 {
                h.zeros += 1;
                continue;
            }
            let e = w.abs().log2().floor() as i32;
            // log2 can round across a power of two; fix up from the bits.
            let e = if 2f64.powi(e) > w.abs() { e - 1 } else if 2f64.powi(e + 1) <= w.abs() { e + 1 } else { e };
            *h.buckets.entry(e).or_default() += 1;
            match fmt.fields(fmt.encode(w)).exception {
                EXC_INF => h.overflow += 1,
                EXC_ZERO => h.underflow += 1,
                EXC_NORMAL | EXC_NAN => {}
                _ => unreachable!(),
            }
        }
    }
    h
}
