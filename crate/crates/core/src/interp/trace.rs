use std::collections::HashMap;
use std::time::Instant;

use thiserror::Error;

use super::dfg::{DataflowGraph, DfgBuilder, Reduction, ValueId};
use super::TraceStats;
use crate::ir::{
    validate, ArithKind, BufferKind, Diagnostic, IndexExpr, IndexOp, IndexOperand, LoopNestProgram, LoopRange,
    Statement,
};

#[derive(Debug, Error, PartialEq)]
pub enum TraceError {
    #[error("program is not well formed: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Diagnostic>),
    #[error("read of uninitialized cell {buffer}{index:?} at {path}")]
    UninitializedRead { path: String, buffer: String, index: Vec<i64> },
    #[error("index {index:?} out of bounds for buffer {buffer} of shape {shape} at {path}")]
    OutOfBounds { path: String, buffer: String, index: Vec<i64>, shape: String },
    #[error(
        "parallel dependence in nest {nest}: instance {reader:?} {access} cell {buffer}{index:?} written by sibling instance {writer:?}"
    )]
    ParallelDependence {
        nest: String,
        access: &'static str,
        reader: Vec<i64>,
        writer: Vec<i64>,
        buffer: String,
        index: Vec<i64>,
    },
    #[error("output cell {buffer}{index:?} is never written")]
    UndefinedOutput { buffer: String, index: Vec<i64> },
}

const NONE: u32 = u32::MAX;

struct RIdx {
    terms: Vec<usize>,
    constant: i64,
}

enum ROp {
    Slot(usize),
    Const(i64),
}

enum RStmt {
    For { iv: usize, range: LoopRange, body: Vec<RStmt> },
    Par { ivs: Vec<usize>, ranges: Vec<LoopRange>, body: Vec<RStmt>, path: String },
    Load { dst: usize, buf: usize, idx: Vec<RIdx>, path: String },
    Store { src: usize, buf: usize, idx: Vec<RIdx>, path: String },
    Arith { dst: usize, kind: ArithKind, ops: [usize; 3], reduce: bool },
    Const { dst: usize, value: ValueId },
    IndexArith { dst: usize, kind: IndexOp, a: ROp, b: ROp },
}

#[derive(Clone, Copy)]
enum Slot {
    Index(usize),
    Value(usize),
}

struct Resolver<'a> {
    buffers: HashMap<&'a str, usize>,
    scopes: Vec<HashMap<&'a str, Slot>>,
    n_index: usize,
    n_value: usize,
}

impl<'a> Resolver<'a> {
    fn lookup(&self, name: &str) -> Slot {
        self.scopes.iter().rev().find_map(|s| s.get(name).copied()).expect("validated program")
    }

    fn index(&self, name: &str) -> usize {
        match self.lookup(name) {
            Slot::Index(i) => i,
            Slot::Value(_) => unreachable!("validated program"),
        }
    }

    fn value(&self, name: &str) -> usize {
        match self.lookup(name) {
            Slot::Value(i) => i,
            Slot::Index(_) => unreachable!("validated program"),
        }
    }

    fn def_index(&mut self, name: &'a str) -> usize {
        let s = self.n_index;
        self.n_index += 1;
        self.scopes.last_mut().unwrap().insert(name, Slot::Index(s));
        s
    }

    fn def_value(&mut self, name: &'a str) -> usize {
        let s = self.n_value;
        self.n_value += 1;
        self.scopes.last_mut().unwrap().insert(name, Slot::Value(s));
        s
    }

    fn idx(&self, e: &[IndexExpr]) -> Vec<RIdx> {
        e.iter()
            .map(|e| RIdx { terms: e.terms.iter().map(|t| self.index(t)).collect(), constant: e.constant })
            .collect()
    }

    fn block(&mut self, body: &'a [Statement], path: &str, b: &mut DfgBuilder) -> Vec<RStmt> {
        body.iter().enumerate().map(|(i, s)| self.stmt(s, &format!("{path}.body[{i}]"), b)).collect()
    }

    fn stmt(&mut self, s: &'a Statement, path: &str, b: &mut DfgBuilder) -> RStmt {
        match s {
            Statement::For { iv, range, body } => {
                self.scopes.push(HashMap::new());
                let iv = self.def_index(iv);
                let body = self.block(body, path, b);
                self.scopes.pop();
                RStmt::For { iv, range: *range, body }
            }
            Statement::ParallelFor { ivs, ranges, body } => {
                self.scopes.push(HashMap::new());
                let ivs = ivs.iter().map(|v| self.def_index(v)).collect();
                let body = self.block(body, path, b);
                self.scopes.pop();
                RStmt::Par { ivs, ranges: ranges.clone(), body, path: path.to_string() }
            }
            Statement::Load { result, buffer, indices } => {
                let idx = self.idx(indices);
                let dst = self.def_value(result);
                RStmt::Load { dst, buf: self.buffers[buffer.as_str()], idx, path: path.to_string() }
            }
            Statement::Store { buffer, indices, operand } => RStmt::Store {
                src: self.value(operand),
                buf: self.buffers[buffer.as_str()],
                idx: self.idx(indices),
                path: path.to_string(),
            },
            Statement::Arith { result, kind, operands, reduce } => {
                let mut ops = [0; 3];
                for (slot, o) in ops.iter_mut().zip(operands) {
                    *slot = self.value(o);
                }
                RStmt::Arith { dst: self.def_value(result), kind: *kind, ops, reduce: *reduce }
            }
            Statement::ConstF { result, value } => RStmt::Const { dst: self.def_value(result), value: b.constant(*value) },
            Statement::IndexArith { result, kind, operands } => {
                let op = |o: &IndexOperand| match o {
                    IndexOperand::Name(n) => ROp::Slot(self.index(n)),
                    IndexOperand::Const(c) => ROp::Const(*c),
                };
                let (a, c) = (op(&operands[0]), op(&operands[1]));
                RStmt::IndexArith { dst: self.def_index(result), kind: *kind, a, b: c }
            }
        }
    }
}

struct TBuf {
    name: String,
    dims: Vec<usize>,
    strides: Vec<usize>,
    kind: BufferKind,
    graph_id: Option<u32>,
    cells: Vec<u32>,
    writer: Vec<u32>,
}

struct ParCtx {
    start: u32,
    current: u32,
    path: String,
}

struct Instance {
    /// Start id of the nest this instance belongs to.
    nest_start: u32,
    parent: u32,
    ivs: Vec<i64>,
}

struct Tracer {
    b: DfgBuilder,
    bufs: Vec<TBuf>,
    index: Vec<i64>,
    values: Vec<ValueId>,
    par: Vec<ParCtx>,
    /// Parallel body instances; id 0 stands for "outside any parallel nest".
    instances: Vec<Instance>,
    chain_tail: HashMap<ValueId, u32>,
    chain_kind: Vec<ArithKind>,
}

fn eval_idx(index: &[i64], e: &RIdx) -> i64 {
    e.terms.iter().map(|&t| index[t]).sum::<i64>() + e.constant
}

impl Tracer {
    fn address(&self, buf: usize, idx: &[RIdx], path: &str) -> Result<usize, TraceError> {
        let b = &self.bufs[buf];
        let mut off = 0usize;
        for (k, e) in idx.iter().enumerate() {
            let v = eval_idx(&self.index, e);
            if v < 0 || v as usize >= b.dims[k] {
                return Err(TraceError::OutOfBounds {
                    path: path.to_string(),
                    buffer: b.name.clone(),
                    index: idx.iter().map(|e| eval_idx(&self.index, e)).collect(),
                    shape: format!("{:?}", b.dims),
                });
            }
            off += v as usize * b.strides[k];
        }
        Ok(off)
    }

    fn unravel(&self, buf: usize, off: usize) -> Vec<i64> {
        let b = &self.bufs[buf];
        b.strides.iter().zip(&b.dims).map(|(&s, &d)| ((off / s) % d) as i64).collect()
    }

    fn check_parallel(&self, buf: usize, off: usize, access: &'static str) -> Result<(), TraceError> {
        let w = self.bufs[buf].writer[off];
        if w == 0 {
            return Ok(());
        }
        for ctx in &self.par {
            if w >= ctx.start && w < ctx.current {
                let mut sibling = w;
                while self.instances[sibling as usize].nest_start != ctx.start {
                    sibling = self.instances[sibling as usize].parent;
                }
                return Err(TraceError::ParallelDependence {
                    nest: ctx.path.clone(),
                    access,
                    reader: self.instances[ctx.current as usize].ivs.clone(),
                    writer: self.instances[sibling as usize].ivs.clone(),
                    buffer: self.bufs[buf].name.clone(),
                    index: self.unravel(buf, off),
                });
            }
        }
        Ok(())
    }

    fn block(&mut self, body: &[RStmt]) -> Result<(), TraceError> {
        for s in body {
            self.stmt(s)?;
        }
        Ok(())
    }

    fn stmt(&mut self, s: &RStmt) -> Result<(), TraceError> {
        match s {
            RStmt::For { iv, range, body } => {
                let mut i = range.lower;
                while i < range.upper {
                    self.index[*iv] = i;
                    self.block(body)?;
                    i += range.step;
                }
            }
            RStmt::Par { ivs, ranges, body, path } => {
                if ranges.iter().any(|r| r.trip_count() == 0) {
                    return Ok(());
                }
                let start = self.instances.len() as u32;
                let parent = self.par.last().map_or(0, |c| c.current);
                self.par.push(ParCtx { start, current: start, path: path.clone() });
                let mut cur: Vec<i64> = ranges.iter().map(|r| r.lower).collect();
                loop {
                    for (&iv, &v) in ivs.iter().zip(&cur) {
                        self.index[iv] = v;
                    }
                    let id = self.instances.len() as u32;
                    self.instances.push(Instance { nest_start: start, parent, ivs: cur.clone() });
                    self.par.last_mut().unwrap().current = id;
                    self.block(body)?;
                    // odometer increment, last iv fastest
                    let mut k = cur.len();
                    loop {
                        if k == 0 {
                            self.par.pop();
                            return Ok(());
                        }
                        k -= 1;
                        cur[k] += ranges[k].step;
                        if cur[k] < ranges[k].upper {
                            break;
                        }
                        cur[k] = ranges[k].lower;
                    }
                }
            }
            RStmt::Load { dst, buf, idx, path } => {
                let off = self.address(*buf, idx, path)?;
                self.check_parallel(*buf, off, "reads")?;
                let b = &mut self.bufs[*buf];
                let cell = b.cells[off];
                let v = if cell != NONE {
                    ValueId(cell)
                } else if let (true, Some(g)) = (b.kind.is_leaf_source(), b.graph_id) {
                    let v = self.b.input(g, off as u32);
                    b.cells[off] = v.0;
                    v
                } else {
                    return Err(TraceError::UninitializedRead {
                        path: path.clone(),
                        buffer: b.name.clone(),
                        index: self.unravel(*buf, off),
                    });
                };
                self.values[*dst] = v;
            }
            RStmt::Store { src, buf, idx, path } => {
                let off = self.address(*buf, idx, path)?;
                self.check_parallel(*buf, off, "overwrites")?;
                let writer = self.par.last().map_or(0, |c| c.current);
                let b = &mut self.bufs[*buf];
                b.cells[off] = self.values[*src].0;
                b.writer[off] = writer;
            }
            RStmt::Arith { dst, kind, ops, reduce } => {
                let operands: Vec<ValueId> = ops[..kind.arity()].iter().map(|&o| self.values[o]).collect();
                let tag = if *reduce {
                    let chain = match self.chain_tail.remove(&operands[0]) {
                        Some(c) if self.chain_kind[c as usize] == *kind => c,
                        _ => {
                            self.chain_kind.push(*kind);
                            (self.chain_kind.len() - 1) as u32
                        }
                    };
                    Some(chain)
                } else {
                    None
                };
                let r = self.b.tagged_node(*kind, &operands, tag.map(Reduction::Chain));
                if let Some(c) = tag {
                    self.chain_tail.insert(r, c);
                }
                self.values[*dst] = r;
            }
            RStmt::Const { dst, value } => self.values[*dst] = *value,
            RStmt::IndexArith { dst, kind, a, b } => {
                let get = |o: &ROp| match o {
                    ROp::Slot(s) => self.index[*s],
                    ROp::Const(c) => *c,
                };
                let (x, y) = (get(a), get(b));
                self.index[*dst] = match kind {
                    IndexOp::Addi => x + y,
                    IndexOp::Muli => x * y,
                };
            }
        }
        Ok(())
    }
}

/// Symbolically execute `program` over its full iteration space and return
/// the load/store-free dataflow graph.
pub fn trace(program: &LoopNestProgram) -> Result<DataflowGraph, TraceError> {
    let diags = validate(program);
    if !diags.is_empty() {
        return Err(TraceError::Invalid(diags));
    }
    let mut b = DfgBuilder::new();
    let mut bufs = Vec::new();
    let mut names = HashMap::new();
    for (i, d) in program.buffers().enumerate() {
        let graph_id = match d.kind {
            BufferKind::Intermediate => None,
            k => Some(b.add_buffer(d.id.clone(), d.shape.clone(), k)),
        };
        let n = d.shape.num_elements();
        bufs.push(TBuf {
            name: d.id.clone(),
            dims: d.shape.dims().to_vec(),
            strides: d.shape.strides(),
            kind: d.kind,
            graph_id,
            cells: vec![NONE; n],
            writer: vec![0; n],
        });
        names.insert(d.id.as_str(), i);
    }
    let mut r = Resolver { buffers: names, scopes: vec![HashMap::new()], n_index: 0, n_value: 0 };
    let body: Vec<RStmt> =
        program.body.iter().enumerate().map(|(i, s)| r.stmt(s, &format!("body[{i}]"), &mut b)).collect();

    let mut t = Tracer {
        b,
        bufs,
        index: vec![0; r.n_index],
        values: vec![ValueId(0); r.n_value],
        par: Vec::new(),
        instances: vec![Instance { nest_start: 0, parent: 0, ivs: Vec::new() }],
        chain_tail: HashMap::new(),
        chain_kind: Vec::new(),
    };
    t.block(&body)?;

    for buf in 0..t.bufs.len() {
        let tb = &t.bufs[buf];
        if tb.kind != BufferKind::Output {
            continue;
        }
        let g = tb.graph_id.unwrap();
        if let Some(off) = tb.cells.iter().position(|&c| c == NONE) {
            return Err(TraceError::UndefinedOutput { buffer: tb.name.clone(), index: t.unravel(buf, off) });
        }
        let cells = tb.cells.clone();
        for (off, c) in cells.into_iter().enumerate() {
            t.b.output(g, off as u32, ValueId(c));
        }
    }
    Ok(t.b.finish())
}

/// [`trace`] plus summary statistics including wall time.
pub fn trace_with_stats(program: &LoopNestProgram) -> Result<(DataflowGraph, TraceStats), TraceError> {
    let t0 = Instant::now();
    let g = trace(program)?;
    let elapsed = t0.elapsed();
    let mut stats = super::trace_stats(&g);
    stats.wall_time = Some(elapsed);
    Ok((g, stats))
}
