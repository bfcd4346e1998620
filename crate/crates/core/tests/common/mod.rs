//! Independent f64 model of every layer type, written straight from the
//! layer definitions over tensors (no loop nests, no graph).
#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use unrollhls::frontend::zoo::ModelBuilder;
use unrollhls::frontend::{LayerSpec, ModelGraph, SoftmaxAxis};
use unrollhls::interp::{DataflowGraph, DfgBuilder, ValueId};
use unrollhls::ir::{ArithKind, BufferKind};
use unrollhls::tensor::Tensor;

/// `exp` as a degree-`k` Taylor polynomial, summed term by term.
pub fn taylor_exp(x: f64, k: usize) -> f64 {
    let mut term = 1.0;
    let mut sum = 1.0;
    for n in 1..=k {
        term *= x / n as f64;
        sum += term;
    }
    sum
}

fn each_index(shape: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for &d in shape {
        out = out.into_iter().flat_map(|p| (0..d).map(move |i| [p.clone(), vec![i]].concat())).collect();
    }
    out
}

fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, n, p) = (a.shape.dims()[0], a.shape.dims()[1], b.shape.dims()[1]);
    let mut y = Tensor::zeros(vec![m, p]);
    for i in 0..m {
        for j in 0..p {
            let s: f64 = (0..n).map(|k| a.get(&[i, k]) * b.get(&[k, j])).sum();
            y.set(&[i, j], s);
        }
    }
    y
}

fn conv2d(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, stride: usize, pad: usize) -> Tensor {
    let [b, c_in, h, wd] = x.shape.dims().try_into().unwrap();
    let [c_out, _, k, _] = w.shape.dims().try_into().unwrap();
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut y = Tensor::zeros(vec![b, c_out, oh, ow]);
    for n in 0..b {
        for co in 0..c_out {
            for i in 0..oh {
                for j in 0..ow {
                    let mut s = 0.0;
                    for ci in 0..c_in {
                        for di in 0..k {
                            for dj in 0..k {
                                let (r, c) = ((i * stride + di) as isize - pad as isize, (j * stride + dj) as isize - pad as isize);
                                if r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < wd {
                                    s += x.get(&[n, ci, r as usize, c as usize]) * w.get(&[co, ci, di, dj]);
                                }
                            }
                        }
                    }
                    y.set(&[n, co, i, j], s + bias.map_or(0.0, |b| b.data[co]));
                }
            }
        }
    }
    y
}

fn softmax_rows(x: &[f64], k: usize) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| taylor_exp(v - m, k)).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Output of one layer given its operand tensors and weights.
pub fn layer(spec: &LayerSpec, id: &str, ins: &[&Tensor], w: &BTreeMap<String, Tensor>, exp_order: usize) -> Tensor {
    let wt = |s: &str| w.get(&format!("{id}.{s}"));
    match spec {
        LayerSpec::AddMM { .. } => {
            let mut y = matmul(ins[0], ins[1]);
            if let Some(c) = ins.get(2) {
                y.data.iter_mut().zip(&c.data).for_each(|(a, b)| *a += b);
            }
            y
        }
        LayerSpec::Linear { in_features, out_features, .. } => {
            let x = ins[0];
            let rows = x.data.len() / in_features;
            let wm = wt("weight").unwrap();
            let mut y = Tensor::zeros(vec![rows, *out_features]);
            for r in 0..rows {
                for o in 0..*out_features {
                    let s: f64 = (0..*in_features).map(|i| x.data[r * in_features + i] * wm.get(&[o, i])).sum();
                    y.set(&[r, o], s + wt("bias").map_or(0.0, |b| b.data[o]));
                }
            }
            y
        }
        LayerSpec::Conv2d { stride, padding, .. } => conv2d(ins[0], wt("weight").unwrap(), wt("bias"), *stride, *padding),
        LayerSpec::BatchNorm2d { eps, .. } => {
            let x = ins[0];
            let (g, b, m, v) = (wt("weight").unwrap(), wt("bias").unwrap(), wt("running_mean").unwrap(), wt("running_var").unwrap());
            let mut y = x.clone();
            for idx in each_index(x.shape.dims()) {
                let c = idx[1];
                y.set(&idx, (x.get(&idx) - m.data[c]) / (v.data[c] + eps).sqrt() * g.data[c] + b.data[c]);
            }
            y
        }
        LayerSpec::MaxPool2d { k, stride } => {
            let x = ins[0];
            let [b, c, h, wd] = x.shape.dims().try_into().unwrap();
            let (oh, ow) = ((h - k) / stride + 1, (wd - k) / stride + 1);
            let mut y = Tensor::zeros(vec![b, c, oh, ow]);
            for idx in each_index(&[b, c, oh, ow]) {
                let mut m = f64::NEG_INFINITY;
                for di in 0..*k {
                    for dj in 0..*k {
                        m = m.max(x.get(&[idx[0], idx[1], idx[2] * stride + di, idx[3] * stride + dj]));
                    }
                }
                y.set(&idx, m);
            }
            y
        }
        LayerSpec::Softmax { axis } => {
            let x = ins[0];
            let row = match axis {
                SoftmaxAxis::All => x.data.len(),
                SoftmaxAxis::Last => *x.shape.dims().last().unwrap(),
            };
            let data = x.data.chunks(row).flat_map(|r| softmax_rows(r, exp_order)).collect();
            Tensor::new(x.shape.clone(), data)
        }
        LayerSpec::ReLU => Tensor::new(ins[0].shape.clone(), ins[0].data.iter().map(|&v| v.max(0.0)).collect()),
        LayerSpec::Reshape { shape } => Tensor::new(shape.clone(), ins[0].data.clone()),
        LayerSpec::Permute { dims } => {
            let x = ins[0];
            let out_shape: Vec<usize> = dims.iter().map(|&d| x.shape.dims()[d]).collect();
            let mut y = Tensor::zeros(out_shape.clone());
            for idx in each_index(&out_shape) {
                let mut src = vec![0; dims.len()];
                for (o, &d) in dims.iter().enumerate() {
                    src[d] = idx[o];
                }
                y.set(&idx, x.get(&src));
            }
            y
        }
        LayerSpec::Add => {
            Tensor::new(ins[0].shape.clone(), ins[0].data.iter().zip(&ins[1].data).map(|(a, b)| a + b).collect())
        }
    }
}

/// Every output port of `model` on `inputs`.
pub fn run_model(model: &ModelGraph, inputs: &BTreeMap<String, Tensor>, exp_order: usize) -> BTreeMap<String, Tensor> {
    let mut env: BTreeMap<String, Tensor> = inputs.clone();
    for l in &model.layers {
        let ins: Vec<&Tensor> = l.inputs.iter().map(|n| &env[n]).collect();
        let y = layer(&l.spec, &l.id, &ins, &model.weights, exp_order);
        assert_eq!(y.shape, l.output_shape, "oracle shape for {}", l.id);
        env.insert(l.id.clone(), y);
    }
    model.outputs.iter().map(|o| (o.name.clone(), env[&o.from].clone())).collect()
}

/// Largest elementwise `|a - b| / max(1, |b|)`.
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / y.abs().max(1.0)).fold(0.0, f64::max)
}

// ---- random instances ----

const DAG_KINDS: [ArithKind; 6] =
    [ArithKind::Addf, ArithKind::Mulf, ArithKind::Subf, ArithKind::Fmac, ArithKind::Relu, ArithKind::Max];

fn finish_with_sinks(mut b: DfgBuilder, results: &[ValueId], used: &[bool]) -> DataflowGraph {
    let sinks: Vec<ValueId> = results.iter().zip(used).filter(|(_, u)| !**u).map(|(v, _)| *v).collect();
    let y = b.add_buffer("y", vec![sinks.len().max(1)], BufferKind::Output);
    for (i, v) in sinks.iter().enumerate() {
        b.output(y, i as u32, *v);
    }
    b.finish()
}

/// Random DAG of `n` nodes over a handful of leaves; every sink is an output.
pub fn random_dag(rng: &mut ChaCha8Rng, n: usize) -> DataflowGraph {
    let mut b = DfgBuilder::new();
    let leaves = rng.gen_range(2..=5);
    let x = b.add_buffer("x", vec![leaves], BufferKind::Input);
    let mut pool: Vec<ValueId> = (0..leaves as u32).map(|i| b.input(x, i)).collect();
    let mut results = Vec::new();
    let mut used = Vec::new();
    for _ in 0..n {
        let kind = *DAG_KINDS.choose(rng).unwrap();
        let ops: Vec<ValueId> = (0..kind.arity()).map(|_| *pool.choose(rng).unwrap()).collect();
        for o in &ops {
            if let Some(p) = results.iter().position(|r| r == o) {
                used[p] = true;
            }
        }
        let v = b.node(kind, &ops);
        pool.push(v);
        results.push(v);
        used.push(false);
    }
    finish_with_sinks(b, &results, &used)
}

/// `v = op(v, x_i)` for `n` steps.
pub fn random_chain(rng: &mut ChaCha8Rng, n: usize) -> DataflowGraph {
    let mut b = DfgBuilder::new();
    let x = b.add_buffer("x", vec![n + 1], BufferKind::Input);
    let y = b.add_buffer("y", vec![1], BufferKind::Output);
    let mut v = b.input(x, 0);
    for i in 0..n {
        let kind = *[ArithKind::Addf, ArithKind::Mulf, ArithKind::Subf].choose(rng).unwrap();
        let l = b.input(x, i as u32 + 1);
        v = b.node(kind, &[v, l]);
    }
    b.output(y, 0, v);
    b.finish()
}

/// Random binary in-tree with `n` internal nodes: repeatedly combine two
/// random pending values until one root remains.
pub fn random_tree(rng: &mut ChaCha8Rng, n: usize) -> DataflowGraph {
    let mut b = DfgBuilder::new();
    let x = b.add_buffer("x", vec![n + 1], BufferKind::Input);
    let y = b.add_buffer("y", vec![1], BufferKind::Output);
    let mut pending: Vec<ValueId> = (0..=n as u32).map(|i| b.input(x, i)).collect();
    while pending.len() > 1 {
        let i = rng.gen_range(0..pending.len());
        let a = pending.swap_remove(i);
        let j = rng.gen_range(0..pending.len());
        let c = pending.swap_remove(j);
        let kind = *[ArithKind::Addf, ArithKind::Mulf].choose(rng).unwrap();
        let v = b.node(kind, &[a, c]);
        pending.push(v);
    }
    b.output(y, 0, pending[0]);
    b.finish()
}

/// A one-layer model of a random type with small random dimensions.
pub fn random_layer_model(rng: &mut ChaCha8Rng, kind: &str) -> ModelGraph {
    let seed = rng.gen();
    let mut r = |lo: usize, hi: usize| rng.gen_range(lo..=hi);
    let b = ModelBuilder::new(kind, seed);
    let b = match kind {
        "addmm" => {
            let (m, n, p) = (r(1, 4), r(1, 4), r(1, 4));
            let b = b.input("a", &[m, n]).input("b", &[n, p]);
            if r(0, 1) == 1 {
                b.input("c", &[m, p]).layer("l", "addmm", json!({}), &["a", "b", "c"])
            } else {
                b.layer("l", "addmm", json!({}), &["a", "b"])
            }
        }
        "linear" => {
            let (i, o, rows) = (r(1, 5), r(1, 4), r(1, 2));
            b.input("x", &[rows, i]).linear("l", "x", i, o)
        }
        "conv2d" => {
            let (ci, co, k) = (r(1, 2), r(1, 3), [1, 2, 3][r(0, 2)]);
            let (stride, pad) = (r(1, 2), r(0, k / 2));
            let size = r(k.max(2), 6);
            b.input("x", &[1, ci, size, size])
                .layer("l", "conv2d", json!({"c_in": ci, "c_out": co, "k": k, "stride": stride, "padding": pad}), &["x"])
                .random_weight("l.weight", &[co, ci, k, k], ci * k * k)
                .random_weight("l.bias", &[co], ci * k * k)
        }
        "batchnorm2d" => {
            let c = r(1, 3);
            b.input("x", &[r(1, 2), c, r(1, 3), r(1, 3)])
                .layer("l", "batchnorm2d", json!({"num_features": c}), &["x"])
                .uniform_weight("l.weight", &[c], 0.5, 1.5)
                .uniform_weight("l.bias", &[c], -0.5, 0.5)
                .uniform_weight("l.running_mean", &[c], -0.5, 0.5)
                .uniform_weight("l.running_var", &[c], 0.5, 2.0)
        }
        "maxpool2d" => {
            let (k, s) = (r(1, 3), r(1, 3));
            let size = r(k, 7);
            b.input("x", &[1, r(1, 2), size, size]).layer("l", "maxpool2d", json!({"k": k, "stride": s}), &["x"])
        }
        "softmax" => {
            let axis = if r(0, 1) == 1 { "all" } else { "last" };
            b.input("x", &[r(1, 3), r(1, 5)]).layer("l", "softmax", json!({"axis": axis}), &["x"])
        }
        "relu" => b.input("x", &[r(1, 3), r(1, 4)]).relu("l", "x"),
        "reshape" => {
            let (p, q) = (r(1, 3), r(1, 4));
            b.input("x", &[p, q]).layer("l", "reshape", json!({"shape": [q, p]}), &["x"])
        }
        "permute" => b.input("x", &[r(1, 3), r(1, 3), r(1, 3)]).layer("l", "permute", json!({"dims": [2, 0, 1]}), &["x"]),
        "add" => {
            let s = [r(1, 3), r(1, 4)];
            b.input("x", &s).input("z", &s).layer("l", "add", json!({}), &["x", "z"])
        }
        other => panic!("unknown layer kind {other}"),
    };
    b.output("y", "l").build()
}

pub const LAYER_KINDS: [&str; 10] =
    ["addmm", "linear", "conv2d", "batchnorm2d", "maxpool2d", "softmax", "relu", "reshape", "permute", "add"];
