//! Symbolic interpretation of loop-nest programs.
//!
//! [`trace`] runs a program over its whole iteration space with symbols in
//! place of numbers. Every buffer is a flat table from linear cell offset to
//! the SSA value last stored there, so a load after a store simply returns
//! the stored value and no memory operation survives into the resulting
//! [`DataflowGraph`]. [`evaluate_numeric`] then runs the graph under a chosen
//! set of arithmetic rules.

mod dfg;
mod eval;
pub mod reference;
mod trace;

use std::collections::BTreeMap;
use std::time::Duration;

use serde::Serialize;

use crate::ir::{ArithKind, BufferKind};

pub use dfg::{DataflowGraph, DfgBuilder, GraphBuffer, Node, NodeId, OutputCell, Reduction, ValueId, ValueOrigin};
pub(crate) use dfg::Rewriter;
pub use eval::{evaluate_f64, evaluate_numeric, EvalError, EvaluationRules, F64Rules, FormatRules};
pub use trace::{trace, trace_with_stats, TraceError};

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TraceStats {
    pub node_counts: BTreeMap<ArithKind, usize>,
    pub total_nodes: usize,
    pub input_elements: usize,
    pub weight_elements: usize,
    pub output_elements: usize,
    pub constants: usize,
    #[serde(skip)]
    pub wall_time: Option<Duration>,
}

impl TraceStats {
    pub fn count(&self, kind: ArithKind) -> usize {
        self.node_counts.get(&kind).copied().unwrap_or(0)
    }
}

/// Summary counts of a graph. Wall time is only filled in by [`trace_with_stats`].
pub fn trace_stats(dfg: &DataflowGraph) -> TraceStats {
    let mut s = TraceStats { total_nodes: dfg.len(), constants: dfg.constants().len(), ..Default::default() };
    for n in dfg.nodes() {
        *s.node_counts.entry(n.kind).or_default() += 1;
    }
    for &v in dfg.leaves() {
        if let ValueOrigin::Input { buffer, .. } = dfg.origin(v) {
            match dfg.buffers()[buffer as usize].kind {
                BufferKind::Weight => s.weight_elements += 1,
                _ => s.input_elements += 1,
            }
        }
    }
    s.output_elements = dfg.outputs().len();
    s
}
