use std::collections::HashMap;
use std::fmt::{self, Write};

use crate::ir::{ArithKind, BufferKind};
use crate::tensor::TensorShape;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize)]
#[serde(transparent)]
pub struct ValueId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl ValueId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ValueId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// Where an SSA value comes from.
#[derive(Clone, Copy, Debug)]
pub enum ValueOrigin {
    Op(NodeId),
    Const(f64),
    /// Never-written cell of an input or weight buffer.
    Input { buffer: u32, offset: u32 },
}

impl PartialEq for ValueOrigin {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (ValueOrigin::Op(a), ValueOrigin::Op(b)) => a == b,
            (ValueOrigin::Const(a), ValueOrigin::Const(b)) => a.to_bits() == b.to_bits(),
            (ValueOrigin::Input { buffer: a, offset: b }, ValueOrigin::Input { buffer: c, offset: d }) => {
                a == c && b == d
            }
            _ => false,
        }
    }
}

/// Accumulation structure a node belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Reduction {
    /// Member of a sequential accumulation chain recorded at trace time.
    Chain(u32),
    /// Member of a balanced reduction tree built from a chain.
    Tree(u32),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub kind: ArithKind,
    operands: [ValueId; 3],
    pub result: ValueId,
    pub reduction: Option<Reduction>,
}

impl Node {
    pub fn operands(&self) -> &[ValueId] {
        &self.operands[..self.kind.arity()]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphBuffer {
    pub name: String,
    pub shape: TensorShape,
    pub kind: BufferKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OutputCell {
    pub buffer: u32,
    pub offset: u32,
    pub value: ValueId,
}

/// Fully unrolled, load/store-free SSA graph. Node order is trace order:
/// every operand of a node is defined by an earlier node, a leaf or a constant.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct DataflowGraph {
    buffers: Vec<GraphBuffer>,
    values: Vec<ValueOrigin>,
    nodes: Vec<Node>,
    leaves: Vec<ValueId>,
    constants: Vec<ValueId>,
    outputs: Vec<OutputCell>,
}

impl DataflowGraph {
    pub fn buffers(&self) -> &[GraphBuffer] {
        &self.buffers
    }

    pub fn buffer_index(&self, name: &str) -> Option<u32> {
        self.buffers.iter().position(|b| b.name == name).map(|i| i as u32)
    }

    pub fn values(&self) -> &[ValueOrigin] {
        &self.values
    }

    pub fn origin(&self, v: ValueId) -> ValueOrigin {
        self.values[v.index()]
    }

    /// Nodes in trace order.
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, n: NodeId) -> &Node {
        &self.nodes[n.index()]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Input and weight element leaves, in creation order.
    pub fn leaves(&self) -> &[ValueId] {
        &self.leaves
    }

    pub fn constants(&self) -> &[ValueId] {
        &self.constants
    }

    /// Output cells sorted by (buffer, offset).
    pub fn outputs(&self) -> &[OutputCell] {
        &self.outputs
    }

    /// Node producing `v`, if it is an operation result.
    pub fn producer(&self, v: ValueId) -> Option<NodeId> {
        match self.values[v.index()] {
            ValueOrigin::Op(n) => Some(n),
            _ => None,
        }
    }

    /// Number of node operand slots and output cells referencing each value.
    pub fn use_counts(&self) -> Vec<u32> {
        let mut uses = vec![0u32; self.values.len()];
        for n in &self.nodes {
            for o in n.operands() {
                uses[o.index()] += 1;
            }
        }
        for o in &self.outputs {
            uses[o.value.index()] += 1;
        }
        uses
    }

    /// Consumer nodes of every node's result, in trace order.
    pub fn node_users(&self) -> Vec<Vec<NodeId>> {
        let mut users = vec![Vec::new(); self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            for o in n.operands() {
                if let Some(p) = self.producer(*o) {
                    let list: &mut Vec<NodeId> = &mut users[p.index()];
                    if list.last() != Some(&NodeId(i as u32)) {
                        list.push(NodeId(i as u32));
                    }
                }
            }
        }
        users
    }

    /// Deterministic text dump: one line per buffer, leaf, constant, node and output.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (i, b) in self.buffers.iter().enumerate() {
            writeln!(out, "buffer b{i} {} {} {}", b.kind.name(), b.name, b.shape).unwrap();
        }
        for &v in &self.leaves {
            if let ValueOrigin::Input { buffer, offset } = self.origin(v) {
                let b = &self.buffers[buffer as usize];
                let idx = b.shape.unravel(offset as usize);
                writeln!(out, "leaf {v} {}{:?}", b.name, idx).unwrap();
            }
        }
        for &v in &self.constants {
            if let ValueOrigin::Const(c) = self.origin(v) {
                writeln!(out, "const {v} {c:?}").unwrap();
            }
        }
        for (i, n) in self.nodes.iter().enumerate() {
            write!(out, "n{i} {}", n.kind).unwrap();
            for o in n.operands() {
                write!(out, " {o}").unwrap();
            }
            write!(out, " -> {}", n.result).unwrap();
            match n.reduction {
                Some(Reduction::Chain(c)) => write!(out, " chain{c}").unwrap(),
                Some(Reduction::Tree(t)) => write!(out, " tree{t}").unwrap(),
                None => {}
            }
            out.push('\n');
        }
        for o in &self.outputs {
            let b = &self.buffers[o.buffer as usize];
            writeln!(out, "output {}{:?} = {}", b.name, b.shape.unravel(o.offset as usize), o.value).unwrap();
        }
        out
    }
}

/// Incremental constructor for [`DataflowGraph`]. Leaves and constants are
/// interned so each (buffer, offset) and each constant bit pattern gets one value.
#[derive(Default)]
pub struct DfgBuilder {
    g: DataflowGraph,
    leaf_ids: HashMap<(u32, u32), ValueId>,
    const_ids: HashMap<u64, ValueId>,
}

impl DfgBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, shape: impl Into<TensorShape>, kind: BufferKind) -> u32 {
        self.g.buffers.push(GraphBuffer { name: name.into(), shape: shape.into(), kind });
        (self.g.buffers.len() - 1) as u32
    }

    fn new_value(&mut self, origin: ValueOrigin) -> ValueId {
        self.g.values.push(origin);
        ValueId((self.g.values.len() - 1) as u32)
    }

    pub fn input(&mut self, buffer: u32, offset: u32) -> ValueId {
        if let Some(&v) = self.leaf_ids.get(&(buffer, offset)) {
            return v;
        }
        let v = self.new_value(ValueOrigin::Input { buffer, offset });
        self.g.leaves.push(v);
        self.leaf_ids.insert((buffer, offset), v);
        v
    }

    pub fn constant(&mut self, x: f64) -> ValueId {
        if let Some(&v) = self.const_ids.get(&x.to_bits()) {
            return v;
        }
        let v = self.new_value(ValueOrigin::Const(x));
        self.g.constants.push(v);
        self.const_ids.insert(x.to_bits(), v);
        v
    }

    pub fn node(&mut self, kind: ArithKind, operands: &[ValueId]) -> ValueId {
        self.tagged_node(kind, operands, None)
    }

    /// Panics if the operand count does not match the kind or an operand
    /// does not exist yet.
    pub fn tagged_node(&mut self, kind: ArithKind, operands: &[ValueId], reduction: Option<Reduction>) -> ValueId {
        assert_eq!(operands.len(), kind.arity(), "operand count for {kind}");
        let mut ops = [ValueId(0); 3];
        for (slot, &o) in ops.iter_mut().zip(operands) {
            assert!(o.index() < self.g.values.len(), "operand {o} not yet defined");
            *slot = o;
        }
        let node = NodeId(self.g.nodes.len() as u32);
        let result = self.new_value(ValueOrigin::Op(node));
        self.g.nodes.push(Node { kind, operands: ops, result, reduction });
        result
    }

    pub fn output(&mut self, buffer: u32, offset: u32, value: ValueId) {
        self.g.outputs.push(OutputCell { buffer, offset, value });
    }

    pub fn value_count(&self) -> usize {
        self.g.values.len()
    }

    pub fn finish(mut self) -> DataflowGraph {
        self.g.outputs.sort_by_key(|o| (o.buffer, o.offset));
        self.g.outputs.dedup_by_key(|o| (o.buffer, o.offset));
        self.g
    }
}

/// Copies a graph node by node while letting a rewrite replace nodes.
/// Buffers, leaves and constants are carried over in their original order.
pub(crate) struct Rewriter<'a> {
    pub src: &'a DataflowGraph,
    pub b: DfgBuilder,
    pub map: Vec<Option<ValueId>>,
}

impl<'a> Rewriter<'a> {
    pub fn new(src: &'a DataflowGraph) -> Self {
        let mut b = DfgBuilder::new();
        for buf in &src.buffers {
            b.add_buffer(buf.name.clone(), buf.shape.clone(), buf.kind);
        }
        let mut map = vec![None; src.values.len()];
        for &v in &src.leaves {
            if let ValueOrigin::Input { buffer, offset } = src.origin(v) {
                map[v.index()] = Some(b.input(buffer, offset));
            }
        }
        for &v in &src.constants {
            if let ValueOrigin::Const(c) = src.origin(v) {
                map[v.index()] = Some(b.constant(c));
            }
        }
        Rewriter { src, b, map }
    }

    pub fn get(&self, v: ValueId) -> ValueId {
        self.map[v.index()].expect("value used before its definition")
    }

    pub fn operands(&self, n: &Node) -> Vec<ValueId> {
        n.operands().iter().map(|&o| self.get(o)).collect()
    }

    /// Copy node `n` unchanged (apart from operand renaming).
    pub fn copy(&mut self, n: &Node, reduction: Option<Reduction>) {
        let ops = self.operands(n);
        let r = self.b.tagged_node(n.kind, &ops, reduction);
        self.map[n.result.index()] = Some(r);
    }

    pub fn finish(mut self) -> DataflowGraph {
        for o in &self.src.outputs {
            let v = self.map[o.value.index()].expect("output value dropped by rewrite");
            self.b.output(o.buffer, o.offset, v);
        }
        self.b.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builder_interns_leaves_and_constants() {
        let mut b = DfgBuilder::new();
        let x = b.add_buffer("x", vec![2], BufferKind::Input);
        let y = b.add_buffer("y", vec![1], BufferKind::Output);
        let a = b.input(x, 0);
        assert_eq!(b.input(x, 0), a);
        let c = b.constant(0.0);
        assert_eq!(b.constant(0.0), c);
        assert_ne!(b.constant(-0.0), c);
        let s = b.node(ArithKind::Addf, &[a, c]);
        b.output(y, 0, s);
        let g = b.finish();
        assert_eq!(g.len(), 1);
        assert_eq!(g.use_counts()[s.index()], 1);
        assert_eq!(g.producer(s), Some(NodeId(0)));
        let dump = g.dump();
        assert!(dump.contains("n0 addf v0 v1 -> v3"), "{dump}");
        assert!(dump.contains("output y[0] = v3"), "{dump}");
    }

    #[test]
    #[should_panic]
    fn builder_rejects_forward_references() {
        let mut b = DfgBuilder::new();
        b.node(ArithKind::Neg, &[ValueId(5)]);
    }
}
