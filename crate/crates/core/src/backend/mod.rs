//! Verilog emission for a scheduled graph.
//!
//! The top module is driven by one binary cycle counter. Each operator
//! instance has its operands selected by `cycle == start` compares over the
//! nodes bound to it; every node result is captured into a holding register
//! at its completion cycle and is also visible combinationally during that
//! cycle, so zero-latency chains work within one cycle. Weights are
//! registered constants, inputs are one port per element read by the graph.

mod lint;
mod ops;
mod testbench;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::cosim::crossing_values;
use crate::fpformat::{FPValue, FloatFormat};
use crate::interp::{DataflowGraph, ValueId, ValueOrigin};
use crate::ir::{ArithKind, BufferKind};
use crate::sched::{validate_schedule, Binding, ResourceModel, Schedule};
use crate::tensor::Tensor;

pub use lint::lint;
pub use ops::{emit_operator_library, module_name};
pub use testbench::{emit_testbench, random_graph_inputs, Testbench};

#[derive(Debug, Error, PartialEq)]
pub enum BackendError {
    #[error("no tensor for weight buffer `{0}`")]
    MissingWeight(String),
    #[error("weight `{buffer}` has {actual} elements, expected {expected}")]
    WeightSize { buffer: String, expected: usize, actual: usize },
    #[error("schedule is invalid: {}", .0.join("; "))]
    InvalidSchedule(Vec<String>),
    #[error(transparent)]
    Eval(#[from] crate::interp::EvalError),
}

/// Verilog-safe rendering of a buffer name.
pub fn sanitize(name: &str) -> String {
    let mut s: String = name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' }).collect();
    if !s.starts_with(|c: char| c.is_ascii_alphabetic()) {
        s.insert(0, 'b');
    }
    s
}

pub fn literal(fmt: FloatFormat, v: FPValue) -> String {
    let digits = (fmt.total_width() as usize).div_ceil(4);
    format!("{}'h{:0digits$x}", fmt.total_width(), v.0)
}

/// Input port per input-buffer leaf, sorted by buffer then offset.
pub fn input_ports(dfg: &DataflowGraph) -> Vec<(String, ValueId, u32, u32)> {
    let mut ports: Vec<_> = dfg
        .leaves()
        .iter()
        .filter_map(|&v| match dfg.origin(v) {
            ValueOrigin::Input { buffer, offset } if dfg.buffers()[buffer as usize].kind == BufferKind::Input => {
                Some((format!("in_{}_{offset}", sanitize(&dfg.buffers()[buffer as usize].name)), v, buffer, offset))
            }
            _ => None,
        })
        .collect();
    ports.sort_by_key(|p| (p.2, p.3));
    ports
}

/// Output port per output cell, in output order.
pub fn output_ports(dfg: &DataflowGraph) -> Vec<(String, ValueId)> {
    dfg.outputs()
        .iter()
        .map(|o| (format!("out_{}_{}", sanitize(&dfg.buffers()[o.buffer as usize].name), o.offset), o.value))
        .collect()
}

fn counter_width(total: u64) -> u32 {
    (64 - total.leading_zeros()).max(1)
}

/// Encoded value of every weight leaf.
fn weight_words(
    dfg: &DataflowGraph,
    fmt: FloatFormat,
    weights: &BTreeMap<String, Tensor>,
) -> Result<BTreeMap<ValueId, FPValue>, BackendError> {
    let mut out = BTreeMap::new();
    for &v in dfg.leaves() {
        let ValueOrigin::Input { buffer, offset } = dfg.origin(v) else { continue };
        let b = &dfg.buffers()[buffer as usize];
        if b.kind != BufferKind::Weight {
            continue;
        }
        let t = weights.get(&b.name).ok_or_else(|| BackendError::MissingWeight(b.name.clone()))?;
        if t.data.len() != b.shape.num_elements() {
            return Err(BackendError::WeightSize {
                buffer: b.name.clone(),
                expected: b.shape.num_elements(),
                actual: t.data.len(),
            });
        }
        out.insert(v, fmt.encode(t.data[offset as usize]));
    }
    Ok(out)
}

const PORTS: [&str; 3] = ["a", "b", "c"];

/// Emit the top module. The schedule must validate against `model`.
pub fn emit_rtl(
    dfg: &DataflowGraph,
    sched: &Schedule,
    binding: &Binding,
    model: &ResourceModel,
    fmt: FloatFormat,
    weights: &BTreeMap<String, Tensor>,
) -> Result<String, BackendError> {
    let diags = validate_schedule(dfg, binding, sched, model);
    if !diags.is_empty() {
        return Err(BackendError::InvalidSchedule(diags));
    }
    let w = fmt.total_width();
    let wdecl = format!("[{}:0]", w - 1);
    let zero = literal(fmt, FPValue(0));
    let total = sched.total_intervals;
    let cw = counter_width(total);
    let wwords = weight_words(dfg, fmt, weights)?;
    let inputs = input_ports(dfg);
    let outputs = output_ports(dfg);
    let done_at: Vec<u64> =
        dfg.nodes().iter().enumerate().map(|(i, n)| sched.start[i] + model.latency(n.kind)).collect();

    let mut s = String::new();
    let _ = writeln!(s, "// {} nodes, {} intervals, format {fmt}, word width {w}", dfg.len(), total);
    let _ = writeln!(s, "`timescale 1ns / 1ps");
    let _ = writeln!(s, "module top (");
    let _ = writeln!(s, "    input wire clk,");
    let _ = writeln!(s, "    input wire rst,");
    let _ = writeln!(s, "    input wire start,");
    for (name, ..) in &inputs {
        let _ = writeln!(s, "    input wire {wdecl} {name},");
    }
    for (name, _) in &outputs {
        let _ = writeln!(s, "    output reg {wdecl} {name},");
    }
    let _ = writeln!(s, "    output reg done\n);");
    let _ = writeln!(s, "    localparam TOTAL = {total};");
    let _ = writeln!(s, "    reg [{}:0] cycle;", cw - 1);
    let _ = writeln!(s, "    reg running;\n");
    s.push_str(
        "    always @(posedge clk) begin
        if (rst) begin
            cycle <= 0;
            running <= 1'b0;
            done <= 1'b0;
        end else if (start && !running) begin
            cycle <= 0;
            running <= 1'b1;
            done <= 1'b0;
        end else if (running) begin
            if (cycle == TOTAL) begin
                running <= 1'b0;
                done <= 1'b1;
            end else begin
                cycle <= cycle + 1'b1;
            end
        end
    end\n\n",
    );

    // leaves and constants
    for (name, v, ..) in &inputs {
        let _ = writeln!(s, "    wire {wdecl} v{} = {name};", v.0);
    }
    for (v, word) in &wwords {
        let _ = writeln!(s, "    reg {wdecl} v{} = {};", v.0, literal(fmt, *word));
    }
    for &v in dfg.constants() {
        if let ValueOrigin::Const(c) = dfg.origin(v) {
            let _ = writeln!(s, "    wire {wdecl} v{} = {};", v.0, literal(fmt, fmt.encode(c)));
        }
    }

    // instance grouping
    let mut groups: BTreeMap<(ArithKind, u32), Vec<usize>> = BTreeMap::new();
    for (i, n) in dfg.nodes().iter().enumerate() {
        groups.entry((n.kind, binding.instance[i])).or_default().push(i);
    }
    let inst = |i: usize| format!("u_{}_{}", dfg.nodes()[i].kind, binding.instance[i]);
    for (kind, k) in groups.keys() {
        let _ = writeln!(s, "    wire {wdecl} u_{kind}_{k}_y;");
    }

    // node results
    for (i, n) in dfg.nodes().iter().enumerate() {
        let r = n.result.0;
        let _ = writeln!(s, "    reg {wdecl} v{r}_q;");
        let _ = writeln!(s, "    wire {wdecl} v{r} = (cycle == {}) ? {}_y : v{r}_q;", done_at[i], inst(i));
    }

    // stage registers
    let mut stage_of: BTreeMap<ValueId, Vec<(u64, String)>> = BTreeMap::new();
    for (k, &b) in sched.stage_boundaries.iter().enumerate() {
        for v in crossing_values(dfg, sched, model, b) {
            let name = format!("st{}_v{}", k + 1, v.0);
            let _ = writeln!(s, "    reg {wdecl} {name};");
            stage_of.entry(v).or_default().push((b, name));
        }
    }
    // Operand source for a consumer starting at `start`: the latest stage
    // register latched strictly before it, else the value net.
    let source = |v: ValueId, start: u64| -> String {
        stage_of
            .get(&v)
            .and_then(|regs| regs.iter().rev().find(|(b, _)| *b < start))
            .map(|(_, n)| n.clone())
            .unwrap_or_else(|| format!("v{}", v.0))
    };

    // operator instances
    s.push('\n');
    for ((kind, k), members) in &groups {
        let name = format!("u_{kind}_{k}");
        let arity = kind.arity();
        for (p, port) in PORTS.iter().enumerate().take(arity) {
            if members.len() == 1 {
                let i = members[0];
                let src = source(dfg.nodes()[i].operands()[p], sched.start[i]);
                let _ = writeln!(s, "    wire {wdecl} {name}_{port} = {src};");
            } else {
                let _ = write!(s, "    wire {wdecl} {name}_{port} =");
                for &i in members {
                    let src = source(dfg.nodes()[i].operands()[p], sched.start[i]);
                    let _ = write!(s, "\n        (cycle == {}) ? {src} :", sched.start[i]);
                }
                let _ = writeln!(s, "\n        {zero};");
            }
        }
        let conns: Vec<String> = PORTS[..arity].iter().map(|p| format!(".{p}({name}_{p})")).collect();
        let _ = writeln!(s, "    {} {name} (.clk(clk), {}, .y({name}_y));", module_name(*kind), conns.join(", "));
    }

    // captures per cycle
    let mut at: BTreeMap<u64, Vec<String>> = BTreeMap::new();
    for (i, n) in dfg.nodes().iter().enumerate() {
        at.entry(done_at[i]).or_default().push(format!("v{}_q <= {}_y;", n.result.0, inst(i)));
    }
    for (k, &b) in sched.stage_boundaries.iter().enumerate() {
        for v in crossing_values(dfg, sched, model, b) {
            at.entry(b).or_default().push(format!("st{}_v{} <= v{};", k + 1, v.0, v.0));
        }
    }
    for (name, v) in &outputs {
        let c = dfg.producer(*v).map(|p| done_at[p.index()]).unwrap_or(0);
        at.entry(c).or_default().push(format!("{name} <= v{};", v.0));
    }
    s.push_str("\n    always @(posedge clk) begin\n        if (running) begin\n            case (cycle)\n");
    for (c, lines) in &at {
        let _ = writeln!(s, "                {c}: begin");
        for l in lines {
            let _ = writeln!(s, "                    {l}");
        }
        s.push_str("                end\n");
    }
    s.push_str("                default: begin\n                end\n            endcase\n        end\n    end\nendmodule\n");
    Ok(s)
}
