//! Rewrites applied between tracing and scheduling.
//!
//! Order is fixed: [`hoist_globals`] on the loop-nest program, then
//! [`recompose_relu`], [`fuse_mac`] and [`reduce_fors`] on the traced graph.
//! Every rewrite is idempotent.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::interp::{DataflowGraph, NodeId, Reduction, Rewriter, ValueId, ValueOrigin};
use crate::ir::{ArithKind, BufferKind, LoopNestProgram};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct TransformStats {
    pub name: &'static str,
    pub matches: usize,
    pub applied: usize,
}

#[derive(Debug, Error, PartialEq)]
pub enum TransformError {
    #[error("reduction marker {chain} does not name a chain: {reason}")]
    NotAChain { chain: u32, reason: String },
}

/// Move weight buffers from the body allocation region to the parameter list.
pub fn hoist_globals(program: &LoopNestProgram) -> (LoopNestProgram, TransformStats) {
    let mut p = program.clone();
    let (weights, locals): (Vec<_>, Vec<_>) = p.locals.into_iter().partition(|b| b.kind == BufferKind::Weight);
    let n = weights.len();
    p.locals = locals;
    p.params.extend(weights);
    (p, TransformStats { name: "hoist_globals", matches: n, applied: n })
}

fn is_pos_zero(g: &DataflowGraph, v: ValueId) -> bool {
    matches!(g.origin(v), ValueOrigin::Const(c) if c.to_bits() == 0)
}

/// Replace `c = cmpfugt(x, 0); y = select(c, x, 0)` with `y = relu(x)` when
/// `c` has no other use.
pub fn recompose_relu(g: &DataflowGraph) -> (DataflowGraph, TransformStats) {
    let uses = g.use_counts();
    let mut drop = vec![false; g.len()];
    let mut relu_of = vec![None; g.len()];
    let mut matches = 0;
    for (i, n) in g.nodes().iter().enumerate() {
        if n.kind != ArithKind::Select {
            continue;
        }
        let [c, x, z] = [n.operands()[0], n.operands()[1], n.operands()[2]];
        let Some(cn) = g.producer(c) else { continue };
        let cmp = g.node(cn);
        if cmp.kind == ArithKind::Cmpfugt && cmp.operands()[0] == x && is_pos_zero(g, cmp.operands()[1]) {
            matches += 1;
            if is_pos_zero(g, z) && uses[c.index()] == 1 {
                drop[cn.index()] = true;
                relu_of[i] = Some(x);
            }
        }
    }
    let mut rw = Rewriter::new(g);
    let mut applied = 0;
    for (i, n) in g.nodes().iter().enumerate() {
        if drop[i] {
            continue;
        }
        if let Some(x) = relu_of[i] {
            let r = rw.b.node(ArithKind::Relu, &[rw.get(x)]);
            rw.map[n.result.index()] = Some(r);
            applied += 1;
        } else {
            rw.copy(n, n.reduction);
        }
    }
    (rw.finish(), TransformStats { name: "recompose_relu", matches, applied })
}

/// Replace `m = mulf(a, b); s = addf(c, m)` (either operand order) with
/// `s = fmac(a, b, c)` when `m` has no other use. If both addends qualify,
/// the earlier multiply in trace order is fused.
pub fn fuse_mac(g: &DataflowGraph) -> (DataflowGraph, TransformStats) {
    let uses = g.use_counts();
    let single_mul = |v: ValueId| -> Option<NodeId> {
        let p = g.producer(v)?;
        (g.node(p).kind == ArithKind::Mulf && uses[v.index()] == 1).then_some(p)
    };
    let mut drop = vec![false; g.len()];
    let mut fused: Vec<Option<(NodeId, ValueId)>> = vec![None; g.len()];
    let mut broken_chains = BTreeSet::new();
    for (i, n) in g.nodes().iter().enumerate() {
        if n.kind != ArithKind::Addf {
            continue;
        }
        let (p, q) = (n.operands()[0], n.operands()[1]);
        let pick = match (single_mul(p), single_mul(q)) {
            (Some(a), Some(b)) => Some(if a < b { (a, q) } else { (b, p) }),
            (Some(a), None) => Some((a, q)),
            (None, Some(b)) => Some((b, p)),
            (None, None) => None,
        };
        if let Some((m, other)) = pick {
            drop[m.index()] = true;
            fused[i] = Some((m, other));
            if let Some(Reduction::Chain(c)) = n.reduction {
                broken_chains.insert(c);
            }
        }
    }
    let mut rw = Rewriter::new(g);
    let mut applied = 0;
    for (i, n) in g.nodes().iter().enumerate() {
        if drop[i] {
            continue;
        }
        let tag = match n.reduction {
            Some(Reduction::Chain(c)) if broken_chains.contains(&c) => None,
            t => t,
        };
        if let Some((m, other)) = fused[i] {
            let mn = g.node(m);
            let ops = [rw.get(mn.operands()[0]), rw.get(mn.operands()[1]), rw.get(other)];
            let r = rw.b.tagged_node(ArithKind::Fmac, &ops, None);
            rw.map[n.result.index()] = Some(r);
            applied += 1;
        } else {
            rw.copy(n, tag);
        }
    }
    (rw.finish(), TransformStats { name: "fuse_mac", matches: applied, applied })
}

/// Leaves of balanced pairwise reduction, built level by level from adjacent pairs.
/// Returns (left, right) index pairs into a growing value list, in emission order.
pub fn tree_pairs(n: usize) -> Vec<(usize, usize)> {
    let mut level: Vec<usize> = (0..n).collect();
    let mut next_id = n;
    let mut pairs = Vec::new();
    while level.len() > 1 {
        let mut up = Vec::with_capacity(level.len().div_ceil(2));
        for ch in level.chunks(2) {
            if let [a, b] = ch {
                pairs.push((*a, *b));
                up.push(next_id);
                next_id += 1;
            } else {
                up.push(ch[0]);
            }
        }
        level = up;
    }
    pairs
}

/// Replace every sequential accumulation chain with a balanced binary tree
/// of the same operator over the same leaves, in the same left-to-right order.
pub fn reduce_fors(g: &DataflowGraph) -> Result<(DataflowGraph, TransformStats), TransformError> {
    let uses = g.use_counts();
    let mut chains: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, n) in g.nodes().iter().enumerate() {
        if let Some(Reduction::Chain(c)) = n.reduction {
            chains.entry(c).or_default().push(i);
        }
    }
    // chain id -> leaves, for chains rooted at their last member
    let mut root_of: BTreeMap<usize, (u32, ArithKind, Vec<ValueId>)> = BTreeMap::new();
    let mut drop = vec![false; g.len()];
    for (&c, members) in &chains {
        let kind = g.nodes()[members[0]].kind;
        let err = |reason: String| TransformError::NotAChain { chain: c, reason };
        if !matches!(kind, ArithKind::Addf | ArithKind::Max | ArithKind::Mulf) {
            return Err(err(format!("`{kind}` is not a reducible operator")));
        }
        let mut leaves = vec![g.nodes()[members[0]].operands()[0]];
        for (k, &m) in members.iter().enumerate() {
            let n = &g.nodes()[m];
            if n.kind != kind {
                return Err(err(format!("operator kinds differ along the chain (`{kind}` and `{}`)", n.kind)));
            }
            if k > 0 {
                let prev = g.nodes()[members[k - 1]].result;
                if n.operands()[0] != prev {
                    return Err(err(format!("node n{m} does not accumulate onto its predecessor")));
                }
                if uses[prev.index()] != 1 {
                    return Err(err(format!("partial result {prev} has other uses")));
                }
            }
            leaves.push(n.operands()[1]);
        }
        for &m in &members[..members.len() - 1] {
            drop[m] = true;
        }
        root_of.insert(*members.last().unwrap(), (c, kind, leaves));
    }

    let mut rw = Rewriter::new(g);
    for (i, n) in g.nodes().iter().enumerate() {
        if drop[i] {
            continue;
        }
        let Some((c, kind, leaves)) = root_of.get(&i) else {
            rw.copy(n, n.reduction);
            continue;
        };
        let mut vals: Vec<ValueId> = leaves.iter().map(|&l| rw.get(l)).collect();
        for (a, b) in tree_pairs(leaves.len()) {
            let v = rw.b.tagged_node(*kind, &[vals[a], vals[b]], Some(Reduction::Tree(*c)));
            vals.push(v);
        }
        rw.map[n.result.index()] = Some(*vals.last().unwrap());
    }
    let k = root_of.len();
    Ok((rw.finish(), TransformStats { name: "reduce_fors", matches: k, applied: k }))
}

/// Which graph rewrites run. Hoisting always runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct TransformPipeline {
    pub recompose_relu: bool,
    pub fuse_mac: bool,
    pub reduce_fors: bool,
}

impl Default for TransformPipeline {
    fn default() -> Self {
        TransformPipeline { recompose_relu: true, fuse_mac: true, reduce_fors: true }
    }
}

impl TransformPipeline {
    pub fn run_graph(&self, g: &DataflowGraph) -> Result<(DataflowGraph, Vec<TransformStats>), TransformError> {
        let mut g = g.clone();
        let mut stats = Vec::new();
        if self.recompose_relu {
            let (n, s) = recompose_relu(&g);
            g = n;
            stats.push(s);
        }
        if self.fuse_mac {
            let (n, s) = fuse_mac(&g);
            g = n;
            stats.push(s);
        }
        if self.reduce_fors {
            let (n, s) = reduce_fors(&g)?;
            g = n;
            stats.push(s);
        }
        Ok((g, stats))
    }
}

/// Depth of the operator tree feeding `v` (leaves and constants have depth 0).
pub fn depth(g: &DataflowGraph, v: ValueId) -> usize {
    let mut d = vec![0usize; g.values().len()];
    for n in g.nodes() {
        d[n.result.index()] = 1 + n.operands().iter().map(|o| d[o.index()]).max().unwrap_or(0);
    }
    d[v.index()]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interp::{evaluate_numeric, DfgBuilder, F64Rules};
    use crate::ir::{BufferDecl, LoopNestProgram};
    use crate::tensor::Tensor;

    fn inputs(name: &str, data: Vec<f64>) -> BTreeMap<String, Tensor> {
        let mut m = BTreeMap::new();
        m.insert(name.to_string(), Tensor::new(vec![data.len()], data));
        m
    }

    fn chain(kind: ArithKind, n: usize) -> DataflowGraph {
        let mut b = DfgBuilder::new();
        let x = b.add_buffer("x", vec![n], BufferKind::Input);
        let y = b.add_buffer("y", vec![1], BufferKind::Output);
        let mut acc = b.input(x, 0);
        for i in 1..n {
            let l = b.input(x, i as u32);
            acc = b.tagged_node(kind, &[acc, l], Some(Reduction::Chain(0)));
        }
        b.output(y, 0, acc);
        b.finish()
    }

    #[test]
    fn hoist_moves_weights_only() {
        let mut p = LoopNestProgram::new("f");
        p.params.push(BufferDecl::new("x", vec![1], BufferKind::Input));
        p.locals.push(BufferDecl::new("w", vec![1], BufferKind::Weight));
        p.locals.push(BufferDecl::new("t", vec![1], BufferKind::Intermediate));
        let (h, s) = hoist_globals(&p);
        assert_eq!(h.params.iter().map(|b| b.id.as_str()).collect::<Vec<_>>(), ["x", "w"]);
        assert_eq!(h.locals.len(), 1);
        assert_eq!(s.applied, 1);
        assert_eq!(hoist_globals(&h).0, h);
        let empty = LoopNestProgram::new("e");
        assert_eq!(hoist_globals(&empty).0, empty);
    }

    fn cmp_select(n: usize, threshold: f64) -> DataflowGraph {
        let mut b = DfgBuilder::new();
        let x = b.add_buffer("x", vec![n], BufferKind::Input);
        let y = b.add_buffer("y", vec![n], BufferKind::Output);
        let z = b.constant(0.0);
        let t = b.constant(threshold);
        for i in 0..n {
            let v = b.input(x, i as u32);
            let c = b.node(ArithKind::Cmpfugt, &[v, t]);
            let s = b.node(ArithKind::Select, &[c, v, z]);
            b.output(y, i as u32, s);
        }
        b.finish()
    }

    #[test]
    fn relu_recomposition() {
        let g = cmp_select(100, 0.0);
        let (r, s) = recompose_relu(&g);
        assert_eq!(r.len(), 100);
        assert_eq!(g.len() - r.len(), 100);
        assert!(r.nodes().iter().all(|n| n.kind == ArithKind::Relu));
        assert_eq!(s.applied, 100);
        let data: Vec<f64> = (0..100).map(|i| i as f64 - 50.5).collect();
        let inp = inputs("x", data);
        assert_eq!(evaluate_numeric(&g, &inp, &F64Rules), evaluate_numeric(&r, &inp, &F64Rules));
        assert_eq!(recompose_relu(&r).0, r);
    }

    #[test]
    fn relu_guard_on_nonzero_threshold() {
        let g = cmp_select(3, 1.0);
        let (r, s) = recompose_relu(&g);
        let kinds = |g: &DataflowGraph| g.nodes().iter().map(|n| n.kind).collect::<Vec<_>>();
        assert_eq!(kinds(&r), kinds(&g));
        assert_eq!(s.applied, 0);
    }

    #[test]
    fn mac_fusion_and_multi_use_guard() {
        let mut b = DfgBuilder::new();
        let x = b.add_buffer("x", vec![3], BufferKind::Input);
        let y = b.add_buffer("y", vec![2], BufferKind::Output);
        let (a, c, d) = (b.input(x, 0), b.input(x, 1), b.input(x, 2));
        let m = b.node(ArithKind::Mulf, &[a, c]);
        let s = b.node(ArithKind::Addf, &[d, m]);
        let m2 = b.node(ArithKind::Mulf, &[a, d]);
        let s2 = b.node(ArithKind::Addf, &[m2, m2]);
        b.output(y, 0, s);
        b.output(y, 1, s2);
        let g = b.finish();
        let (f, st) = fuse_mac(&g);
        assert_eq!(st.applied, 1);
        let kinds: Vec<ArithKind> = f.nodes().iter().map(|n| n.kind).collect();
        assert_eq!(kinds, [ArithKind::Fmac, ArithKind::Mulf, ArithKind::Addf]);
        assert_eq!(fuse_mac(&f).0, f);
    }

    #[test]
    fn mac_fusion_diamond_picks_earlier_multiply() {
        let mut b = DfgBuilder::new();
        let x = b.add_buffer("x", vec![4], BufferKind::Input);
        let y = b.add_buffer("y", vec![1], BufferKind::Output);
        let v: Vec<ValueId> = (0..4).map(|i| b.input(x, i)).collect();
        let first = b.node(ArithKind::Mulf, &[v[2], v[3]]);
        let second = b.node(ArithKind::Mulf, &[v[0], v[1]]);
        let s = b.node(ArithKind::Addf, &[second, first]);
        b.output(y, 0, s);
        let g = b.finish();
        let (f, _) = fuse_mac(&g);
        assert_eq!(f.len(), 2);
        // the first mulf in trace order (operands v2, v3) is absorbed
        let fm = &f.nodes()[1];
        assert_eq!(fm.kind, ArithKind::Fmac);
        assert_eq!(&fm.operands()[..2], &[v[2], v[3]]);
        assert_eq!(f.nodes()[0].operands(), &[v[0], v[1]]);
    }

    #[test]
    fn tree_shapes() {
        for (n, depth_expected) in [(2usize, 1usize), (8, 3), (768, 10), (5, 3)] {
            let g = chain(ArithKind::Addf, n);
            let (t, _) = reduce_fors(&g).unwrap();
            assert_eq!(t.len(), n - 1);
            assert_eq!(depth(&t, t.outputs()[0].value), depth_expected, "n={n}");
            assert_eq!(reduce_fors(&t).unwrap().0, t);
        }
        let g = chain(ArithKind::Max, 1);
        assert_eq!(reduce_fors(&g).unwrap().0, g);
    }

    #[test]
    fn tree_preserves_leaf_order_and_value_on_exact_data() {
        let g = chain(ArithKind::Addf, 8);
        let (t, _) = reduce_fors(&g).unwrap();
        let firsts: Vec<_> = t.nodes()[..4].iter().map(|n| n.operands().to_vec()).collect();
        let l = |i: u32| ValueId(i);
        assert_eq!(firsts, vec![vec![l(0), l(1)], vec![l(2), l(3)], vec![l(4), l(5)], vec![l(6), l(7)]]);
        let inp = inputs("x", (1..=8).map(f64::from).collect());
        assert_eq!(evaluate_numeric(&t, &inp, &F64Rules).unwrap()["y"], vec![36.0]);
    }

    #[test]
    fn mixed_kind_chain_is_an_error() {
        let mut b = DfgBuilder::new();
        let x = b.add_buffer("x", vec![3], BufferKind::Input);
        let y = b.add_buffer("y", vec![1], BufferKind::Output);
        let v: Vec<ValueId> = (0..3).map(|i| b.input(x, i)).collect();
        let a = b.tagged_node(ArithKind::Addf, &[v[0], v[1]], Some(Reduction::Chain(0)));
        let m = b.tagged_node(ArithKind::Max, &[a, v[2]], Some(Reduction::Chain(0)));
        b.output(y, 0, m);
        assert!(matches!(reduce_fors(&b.finish()), Err(TransformError::NotAChain { chain: 0, .. })));
    }
}
