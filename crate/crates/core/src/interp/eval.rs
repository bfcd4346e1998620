use std::collections::BTreeMap;

use thiserror::Error;

use super::dfg::{DataflowGraph, ValueOrigin};
use crate::fpformat::{apply_f64, FPValue, FloatFormat};
use crate::ir::ArithKind;
use crate::tensor::Tensor;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no tensor supplied for buffer `{0}`")]
    MissingInput(String),
    #[error("tensor for buffer `{buffer}` has {actual} elements, expected {expected}")]
    SizeMismatch { buffer: String, expected: usize, actual: usize },
}

/// Arithmetic used when evaluating a graph numerically.
pub trait EvaluationRules {
    type Value: Copy;
    fn lift(&self, x: f64) -> Self::Value;
    fn apply(&self, kind: ArithKind, operands: &[Self::Value]) -> Self::Value;
}

/// Plain f64 arithmetic.
#[derive(Clone, Copy, Debug, Default)]
pub struct F64Rules;

impl EvaluationRules for F64Rules {
    type Value = f64;

    fn lift(&self, x: f64) -> f64 {
        x
    }

    fn apply(&self, kind: ArithKind, operands: &[f64]) -> f64 {
        apply_f64(kind, operands)
    }
}

/// Bit-exact custom-format arithmetic; inputs, weights and constants are
/// rounded into the format first.
#[derive(Clone, Copy, Debug)]
pub struct FormatRules(pub FloatFormat);

impl EvaluationRules for FormatRules {
    type Value = FPValue;

    fn lift(&self, x: f64) -> FPValue {
        self.0.encode(x)
    }

    fn apply(&self, kind: ArithKind, operands: &[FPValue]) -> FPValue {
        self.0.apply(kind, operands)
    }
}

/// Evaluate every node in trace order. `inputs` must hold a tensor for each
/// input and weight buffer with a leaf in the graph. Returns one flat
/// row-major vector per output buffer.
pub fn evaluate_numeric<R: EvaluationRules>(
    dfg: &DataflowGraph,
    inputs: &BTreeMap<String, Tensor>,
    rules: &R,
) -> Result<BTreeMap<String, Vec<R::Value>>, EvalError> {
    let zero = rules.lift(0.0);
    let mut vals = vec![zero; dfg.values().len()];
    for &v in dfg.constants() {
        if let ValueOrigin::Const(c) = dfg.origin(v) {
            vals[v.index()] = rules.lift(c);
        }
    }
    for &v in dfg.leaves() {
        if let ValueOrigin::Input { buffer, offset } = dfg.origin(v) {
            let b = &dfg.buffers()[buffer as usize];
            let t = inputs.get(&b.name).ok_or_else(|| EvalError::MissingInput(b.name.clone()))?;
            let expected = b.shape.num_elements();
            if t.data.len() != expected {
                return Err(EvalError::SizeMismatch { buffer: b.name.clone(), expected, actual: t.data.len() });
            }
            vals[v.index()] = rules.lift(t.data[offset as usize]);
        }
    }
    let mut ops = Vec::with_capacity(3);
    for n in dfg.nodes() {
        ops.clear();
        ops.extend(n.operands().iter().map(|o| vals[o.index()]));
        vals[n.result.index()] = rules.apply(n.kind, &ops);
    }
    let mut out: BTreeMap<String, Vec<R::Value>> = BTreeMap::new();
    for o in dfg.outputs() {
        let b = &dfg.buffers()[o.buffer as usize];
        let v = out.entry(b.name.clone()).or_insert_with(|| vec![zero; b.shape.num_elements()]);
        v[o.offset as usize] = vals[o.value.index()];
    }
    Ok(out)
}

/// f64 evaluation returning shaped tensors.
pub fn evaluate_f64(dfg: &DataflowGraph, inputs: &BTreeMap<String, Tensor>) -> Result<BTreeMap<String, Tensor>, EvalError> {
    let flat = evaluate_numeric(dfg, inputs, &F64Rules)?;
    Ok(flat
        .into_iter()
        .map(|(name, data)| {
            let shape = dfg.buffers()[dfg.buffer_index(&name).unwrap() as usize].shape.clone();
            (name, Tensor::new(shape, data))
        })
        .collect())
}
