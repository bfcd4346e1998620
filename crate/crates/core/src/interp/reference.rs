//! Slow, memory-faithful f64 interpreter of loop-nest programs.
//!
//! Keeps real buffers and a name environment and executes every load and
//! store literally. Shares no code with the symbolic tracer, which makes it
//! usable as an oracle for forwarding.

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::fpformat::apply_f64;
use crate::ir::{BufferKind, IndexExpr, IndexOp, IndexOperand, LoopNestProgram, Statement};
use crate::tensor::Tensor;

#[derive(Debug, Error, PartialEq)]
pub enum ReferenceError {
    #[error("missing tensor for buffer `{0}`")]
    MissingInput(String),
    #[error("read of uninitialized cell {0}{1:?}")]
    Uninitialized(String, Vec<i64>),
    #[error("index {1:?} out of bounds for `{0}`")]
    OutOfBounds(String, Vec<i64>),
}

struct Mem {
    shape: Vec<usize>,
    data: Vec<Option<f64>>,
}

struct Machine<'a> {
    mem: HashMap<&'a str, Mem>,
    ints: HashMap<&'a str, i64>,
    floats: HashMap<&'a str, f64>,
}

impl<'a> Machine<'a> {
    fn cell(&self, buffer: &str, indices: &[IndexExpr]) -> Result<usize, ReferenceError> {
        let idx: Vec<i64> =
            indices.iter().map(|e| e.terms.iter().map(|t| self.ints[t.as_str()]).sum::<i64>() + e.constant).collect();
        let m = &self.mem[buffer];
        let mut off = 0usize;
        for (&i, &d) in idx.iter().zip(&m.shape) {
            if i < 0 || i as usize >= d {
                return Err(ReferenceError::OutOfBounds(buffer.to_string(), idx));
            }
            off = off * d + i as usize;
        }
        Ok(off)
    }

    fn run(&mut self, body: &'a [Statement]) -> Result<(), ReferenceError> {
        for s in body {
            match s {
                Statement::For { iv, range, body } => {
                    let mut i = range.lower;
                    while i < range.upper {
                        self.ints.insert(iv, i);
                        self.run(body)?;
                        i += range.step;
                    }
                }
                Statement::ParallelFor { ivs, ranges, body } if !ranges.is_empty() => {
                    // Nested sequential enumeration, first iv outermost.
                    let mut stack = vec![(0usize, ranges[0].lower)];
                    while let Some((level, v)) = stack.pop() {
                        let r = ranges[level];
                        if v >= r.upper {
                            continue;
                        }
                        stack.push((level, v + r.step));
                        self.ints.insert(&ivs[level], v);
                        if level + 1 == ranges.len() {
                            self.run(body)?;
                        } else {
                            stack.push((level + 1, ranges[level + 1].lower));
                        }
                    }
                }
                Statement::ParallelFor { .. } => {}
                Statement::Load { result, buffer, indices } => {
                    let off = self.cell(buffer, indices)?;
                    let v = self.mem[buffer.as_str()].data[off].ok_or_else(|| {
                        let shape = crate::tensor::TensorShape::new(self.mem[buffer.as_str()].shape.clone());
                        ReferenceError::Uninitialized(
                            buffer.clone(),
                            shape.unravel(off).into_iter().map(|x| x as i64).collect(),
                        )
                    })?;
                    self.floats.insert(result, v);
                }
                Statement::Store { buffer, indices, operand } => {
                    let off = self.cell(buffer, indices)?;
                    let v = self.floats[operand.as_str()];
                    self.mem.get_mut(buffer.as_str()).unwrap().data[off] = Some(v);
                }
                Statement::Arith { result, kind, operands, .. } => {
                    let x: Vec<f64> = operands.iter().map(|o| self.floats[o.as_str()]).collect();
                    self.floats.insert(result, apply_f64(*kind, &x));
                }
                Statement::ConstF { result, value } => {
                    self.floats.insert(result, *value);
                }
                Statement::IndexArith { result, kind, operands } => {
                    let get = |o: &IndexOperand| match o {
                        IndexOperand::Name(n) => self.ints[n.as_str()],
                        IndexOperand::Const(c) => *c,
                    };
                    let (a, b) = (get(&operands[0]), get(&operands[1]));
                    let v = match kind {
                        IndexOp::Addi => a + b,
                        IndexOp::Muli => a * b,
                    };
                    self.ints.insert(result, v);
                }
            }
        }
        Ok(())
    }
}

/// Execute `program` on concrete inputs and weights; returns every output buffer.
pub fn execute(
    program: &LoopNestProgram,
    inputs: &BTreeMap<String, Tensor>,
) -> Result<BTreeMap<String, Tensor>, ReferenceError> {
    let mut mem = HashMap::new();
    for b in program.buffers() {
        let n = b.shape.num_elements();
        let data = if b.kind.is_leaf_source() {
            let t = inputs.get(&b.id).ok_or_else(|| ReferenceError::MissingInput(b.id.clone()))?;
            t.data.iter().map(|&x| Some(x)).collect()
        } else {
            vec![None; n]
        };
        mem.insert(b.id.as_str(), Mem { shape: b.shape.dims().to_vec(), data });
    }
    let mut m = Machine { mem, ints: HashMap::new(), floats: HashMap::new() };
    m.run(&program.body)?;
    let mut out = BTreeMap::new();
    for b in program.buffers().filter(|b| b.kind == BufferKind::Output) {
        let mem = &m.mem[b.id.as_str()];
        let mut data = Vec::with_capacity(mem.data.len());
        for (off, c) in mem.data.iter().enumerate() {
            let idx = b.shape.unravel(off).into_iter().map(|x| x as i64).collect();
            data.push(c.ok_or_else(|| ReferenceError::Uninitialized(b.id.clone(), idx))?);
        }
        out.insert(b.id.clone(), Tensor::new(b.shape.clone(), data));
    }
    Ok(out)
}
