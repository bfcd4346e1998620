use std::collections::BTreeMap;

use super::{bad, FrontendError, Layer, LayerSpec, ModelGraph, SoftmaxAxis};
use crate::fpformat::exp_coefficients;
use crate::ir::{
    idx, ArithKind, BufferDecl, BufferKind, IndexExpr, IndexOp, IndexOperand, LoopNestProgram, LoopRange, Statement,
};
use crate::tensor::{Tensor, TensorShape};

/// Order of the truncated Taylor series used for `exp`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExpApprox {
    pub order: usize,
}

impl ExpApprox {
    pub fn new(order: usize) -> Result<Self, FrontendError> {
        exp_coefficients(order).map_err(|e| bad("exp", e.to_string()))?;
        Ok(ExpApprox { order })
    }

    pub fn coefficients(&self) -> Vec<f64> {
        exp_coefficients(self.order).expect("order checked at construction")
    }
}

impl Default for ExpApprox {
    fn default() -> Self {
        ExpApprox { order: 6 }
    }
}

/// Statements and new buffers for one layer.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct LayerLowering {
    pub statements: Vec<Statement>,
    pub buffers: Vec<BufferDecl>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoweredModel {
    pub program: LoopNestProgram,
    /// Tensor for every weight buffer in the program, keyed by buffer id.
    pub weights: BTreeMap<String, Tensor>,
}

impl LoweredModel {
    /// Weights plus the given model inputs, ready for tracing or evaluation.
    pub fn bind_inputs(&self, inputs: &BTreeMap<String, Tensor>) -> BTreeMap<String, Tensor> {
        let mut all = self.weights.clone();
        all.extend(inputs.iter().map(|(k, v)| (k.clone(), v.clone())));
        all
    }
}

fn iv_names(prefix: &str, rank: usize) -> Vec<String> {
    (0..rank).map(|i| format!("{prefix}{i}")).collect()
}

fn refs(v: &[String]) -> Vec<&str> {
    v.iter().map(|s| s.as_str()).collect()
}

fn ranges(dims: &[usize]) -> Vec<LoopRange> {
    dims.iter().map(|&d| LoopRange::to(d as i64)).collect()
}

fn name(n: &str) -> IndexOperand {
    IndexOperand::Name(n.to_string())
}

/// Row-major flat index of `ivs` over `dims`, built from muli/addi.
fn flat_index(tag: &str, ivs: &[String], dims: &[usize], body: &mut Vec<Statement>) -> IndexExpr {
    match ivs.len() {
        0 => IndexExpr::constant(0),
        1 => IndexExpr::var(&ivs[0]),
        _ => {
            let mut acc = ivs[0].clone();
            for i in 1..ivs.len() {
                let t = format!("{tag}_m{i}");
                let s = format!("{tag}_a{i}");
                body.push(Statement::index_arith(&t, IndexOp::Muli, vec![name(&acc), IndexOperand::Const(dims[i] as i64)]));
                body.push(Statement::index_arith(&s, IndexOp::Addi, vec![name(&t), name(&ivs[i])]));
                acc = s;
            }
            IndexExpr::var(acc)
        }
    }
}

/// `iv * stride` as an index name, or `iv` itself for stride 1.
fn scaled(iv: &str, stride: usize, body: &mut Vec<Statement>) -> String {
    if stride == 1 {
        return iv.to_string();
    }
    let r = format!("{iv}_s");
    body.push(Statement::index_arith(&r, IndexOp::Muli, vec![name(iv), IndexOperand::Const(stride as i64)]));
    r
}

/// Accumulating loop nest body: init the output cell, then for every point
/// of `reduction` add `mulf(lhs, rhs)` into it.
struct MacNest<'a> {
    out: &'a str,
    out_idx: Vec<IndexExpr>,
    init: Statement,
    prelude: Vec<Statement>,
    reduction: Vec<(&'a str, usize)>,
    lhs: Statement,
    rhs: Statement,
}

impl MacNest<'_> {
    fn build(self) -> Vec<Statement> {
        let mut body = self.prelude;
        body.push(self.init);
        body.push(Statement::store("acc0", self.out, self.out_idx.clone()));
        let mut inner = vec![
            self.lhs,
            self.rhs,
            Statement::load("acc", self.out, self.out_idx.clone()),
            Statement::arith("prod", ArithKind::Mulf, &["lv", "rv"]),
            Statement::reduce("sum", ArithKind::Addf, &["acc", "prod"]),
            Statement::store("sum", self.out, self.out_idx),
        ];
        for &(iv, n) in self.reduction.iter().rev() {
            inner = vec![Statement::for_loop(iv, LoopRange::to(n as i64), inner)];
        }
        body.extend(inner);
        body
    }
}

fn init_from(bias: Option<(&str, Vec<IndexExpr>)>) -> Statement {
    match bias {
        Some((b, i)) => Statement::load("acc0", b, i),
        None => Statement::constf("acc0", 0.0),
    }
}

fn weight(id: &str, suffix: &str, shape: Vec<usize>) -> BufferDecl {
    BufferDecl::new(format!("{id}.{suffix}"), shape, BufferKind::Weight)
}

fn intermediate(id: String, shape: Vec<usize>) -> BufferDecl {
    BufferDecl::new(id, shape, BufferKind::Intermediate)
}

/// Elementwise nest over `dims`: `body(ivs)` gets the index list.
fn elementwise(dims: &[usize], body: impl FnOnce(&[IndexExpr]) -> Vec<Statement>) -> Statement {
    let ivs = iv_names("i", dims.len());
    let index = idx(&refs(&ivs));
    Statement::parallel(&refs(&ivs), ranges(dims), body(&index))
}

/// Copy `src` (any shape) into `dst` viewed as `(rows, cols)`, splitting the
/// source dimensions at `split`.
fn copy_to_matrix(src: &str, shape: &[usize], split: usize, dst: &str) -> Statement {
    let ivs = iv_names("i", shape.len());
    let mut body = Vec::new();
    let r = flat_index("r", &ivs[..split], &shape[..split], &mut body);
    let c = flat_index("c", &ivs[split..], &shape[split..], &mut body);
    body.push(Statement::load("v", src, idx(&refs(&ivs))));
    body.push(Statement::store("v", dst, vec![r, c]));
    Statement::parallel(&refs(&ivs), ranges(shape), body)
}

fn copy_from_matrix(src: &str, shape: &[usize], split: usize, dst: &str) -> Statement {
    let ivs = iv_names("i", shape.len());
    let mut body = Vec::new();
    let r = flat_index("r", &ivs[..split], &shape[..split], &mut body);
    let c = flat_index("c", &ivs[split..], &shape[split..], &mut body);
    body.push(Statement::load("v", src, vec![r, c]));
    body.push(Statement::store("v", dst, idx(&refs(&ivs))));
    Statement::parallel(&refs(&ivs), ranges(shape), body)
}

/// Row-wise reduction nest: `acc[r] = x[r,0] op x[r,1] op ...`.
fn row_reduce(src: &str, dst: &str, rows: usize, cols: usize, kind: ArithKind) -> Statement {
    let inner = vec![
        Statement::load("acc", dst, idx(&["r"])),
        Statement::load("v", src, idx(&["r", "j"])),
        Statement::reduce("nxt", kind, &["acc", "v"]),
        Statement::store("nxt", dst, idx(&["r"])),
    ];
    let mut body = vec![
        Statement::load("first", src, vec![IndexExpr::var("r"), IndexExpr::constant(0)]),
        Statement::store("first", dst, idx(&["r"])),
    ];
    if cols > 1 {
        body.push(Statement::for_loop("j", LoopRange::new(1, cols as i64, 1), inner));
    }
    Statement::parallel(&["r"], vec![LoopRange::to(rows as i64)], body)
}

/// Lower one layer. Operand buffers are named by `layer.inputs`, the result
/// goes to an intermediate buffer named by the layer id.
pub fn lower_layer(layer: &Layer, input_shapes: &[&TensorShape], exp: ExpApprox) -> Result<LayerLowering, FrontendError> {
    let id = layer.id.as_str();
    let x = layer.inputs[0].as_str();
    let xs = input_shapes[0].dims();
    let os = layer.output_shape.dims();
    let mut out = LayerLowering::default();
    out.buffers.push(intermediate(id.to_string(), os.to_vec()));
    let st = &mut out.statements;

    match &layer.spec {
        &LayerSpec::AddMM { m, n, p, bias } => {
            let b = layer.inputs[1].as_str();
            let init = if bias { Some((layer.inputs[2].as_str(), idx(&["i", "j"]))) } else { None };
            let body = MacNest {
                out: id,
                out_idx: idx(&["i", "j"]),
                init: init_from(init),
                prelude: Vec::new(),
                reduction: vec![("k", n)],
                lhs: Statement::load("lv", x, idx(&["i", "k"])),
                rhs: Statement::load("rv", b, idx(&["k", "j"])),
            };
            st.push(Statement::parallel(&["i", "j"], ranges(&[m, p]), body.build()));
        }
        &LayerSpec::Linear { in_features, out_features, bias } => {
            let w = weight(id, "weight", vec![out_features, in_features]);
            let bname = format!("{id}.bias");
            let body = MacNest {
                out: id,
                out_idx: idx(&["b", "o"]),
                init: init_from(bias.then(|| (bname.as_str(), idx(&["o"])))),
                prelude: Vec::new(),
                reduction: vec![("k", in_features)],
                lhs: Statement::load("lv", x, idx(&["b", "k"])),
                rhs: Statement::load("rv", &w.id, idx(&["o", "k"])),
            }
            .build();
            st.push(Statement::parallel(&["b", "o"], ranges(&[xs[0], out_features]), body));
            out.buffers.push(w);
            if bias {
                out.buffers.push(weight(id, "bias", vec![out_features]));
            }
        }
        &LayerSpec::Conv2d { c_in, c_out, k, stride, padding, bias } => {
            let (hp, wp) = (xs[2] + 2 * padding, xs[3] + 2 * padding);
            if k > hp || k > wp {
                return Err(bad(id, format!("kernel {k} larger than padded input {hp}x{wp}")));
            }
            let mut src = x.to_string();
            if padding > 0 {
                src = format!("{id}.pad");
                let pshape = vec![xs[0], c_in, hp, wp];
                st.push(elementwise(&pshape, |i| vec![Statement::constf("z", 0.0), Statement::store("z", &src, i.to_vec())]));
                st.push(elementwise(xs, |i| {
                    let mut dst = i.to_vec();
                    dst[2] = dst[2].clone().offset(padding as i64);
                    dst[3] = dst[3].clone().offset(padding as i64);
                    vec![Statement::load("v", x, i.to_vec()), Statement::store("v", &src, dst)]
                }));
                out.buffers.push(intermediate(src.clone(), pshape));
            }
            let w = weight(id, "weight", vec![c_out, c_in, k, k]);
            let bname = format!("{id}.bias");
            let mut prelude = Vec::new();
            let ih = scaled("oh", stride, &mut prelude);
            let iw = scaled("ow", stride, &mut prelude);
            let body = MacNest {
                out: id,
                out_idx: idx(&["b", "co", "oh", "ow"]),
                init: init_from(bias.then(|| (bname.as_str(), idx(&["co"])))),
                prelude,
                reduction: vec![("ci", c_in), ("kh", k), ("kw", k)],
                lhs: Statement::load(
                    "lv",
                    &src,
                    vec![
                        IndexExpr::var("b"),
                        IndexExpr::var("ci"),
                        IndexExpr::var(&ih).plus("kh"),
                        IndexExpr::var(&iw).plus("kw"),
                    ],
                ),
                rhs: Statement::load("rv", &w.id, idx(&["co", "ci", "kh", "kw"])),
            }
            .build();
            st.push(Statement::parallel(&["b", "co", "oh", "ow"], ranges(os), body));
            out.buffers.push(w);
            if bias {
                out.buffers.push(weight(id, "bias", vec![c_out]));
            }
        }
        &LayerSpec::BatchNorm2d { num_features: c, .. } => {
            let names = ["running_mean", "inv_std", "weight", "bias"].map(|s| format!("{id}.{s}"));
            st.push(elementwise(xs, |i| {
                let ch = vec![i[1].clone()];
                vec![
                    Statement::load("v", x, i.to_vec()),
                    Statement::load("mean", &names[0], ch.clone()),
                    Statement::load("inv", &names[1], ch.clone()),
                    Statement::load("gamma", &names[2], ch.clone()),
                    Statement::load("beta", &names[3], ch),
                    Statement::arith("d", ArithKind::Subf, &["v", "mean"]),
                    Statement::arith("n", ArithKind::Mulf, &["d", "inv"]),
                    Statement::arith("s", ArithKind::Mulf, &["n", "gamma"]),
                    Statement::arith("y", ArithKind::Addf, &["s", "beta"]),
                    Statement::store("y", id, i.to_vec()),
                ]
            }));
            for n in names {
                out.buffers.push(BufferDecl::new(n, vec![c], BufferKind::Weight));
            }
        }
        &LayerSpec::MaxPool2d { k, stride } => {
            if k > xs[2] || k > xs[3] {
                return Err(bad(id, format!("kernel {k} larger than input {}x{}", xs[2], xs[3])));
            }
            let o = idx(&["b", "c", "oh", "ow"]);
            let mut body = Vec::new();
            let ih = scaled("oh", stride, &mut body);
            let iw = scaled("ow", stride, &mut body);
            let at = |dh: Option<&str>, dw: Option<&str>| {
                let mut h = IndexExpr::var(&ih);
                let mut w = IndexExpr::var(&iw);
                if let Some(d) = dh {
                    h = h.plus(d);
                }
                if let Some(d) = dw {
                    w = w.plus(d);
                }
                vec![IndexExpr::var("b"), IndexExpr::var("c"), h, w]
            };
            let step = |dh: Option<&str>| {
                vec![
                    Statement::load("acc", id, o.clone()),
                    Statement::load("v", x, at(dh, Some("kw"))),
                    Statement::reduce("nxt", ArithKind::Max, &["acc", "v"]),
                    Statement::store("nxt", id, o.clone()),
                ]
            };
            body.push(Statement::load("first", x, at(None, None)));
            body.push(Statement::store("first", id, o.clone()));
            if k > 1 {
                body.push(Statement::for_loop("kw", LoopRange::new(1, k as i64, 1), step(None)));
                body.push(Statement::for_loop(
                    "kh",
                    LoopRange::new(1, k as i64, 1),
                    vec![Statement::for_loop("kw", LoopRange::to(k as i64), step(Some("kh")))],
                ));
            }
            st.push(Statement::parallel(&["b", "c", "oh", "ow"], ranges(os), body));
        }
        &LayerSpec::Softmax { axis } => {
            let split = match axis {
                SoftmaxAxis::All => 0,
                SoftmaxAxis::Last => xs.len() - 1,
            };
            let rows: usize = xs[..split].iter().product();
            let cols: usize = xs[split..].iter().product();
            let [flat, mx, ex, sm, q] = ["flat", "max", "exp", "sum", "quot"].map(|s| format!("{id}.{s}"));
            st.push(copy_to_matrix(x, xs, split, &flat));
            st.push(row_reduce(&flat, &mx, rows, cols, ArithKind::Max));

            let coeffs = exp.coefficients();
            let kk = exp.order;
            let mut body = vec![
                Statement::load("v", &flat, idx(&["r", "j"])),
                Statement::load("m", &mx, idx(&["r"])),
                Statement::arith("d", ArithKind::Subf, &["v", "m"]),
                Statement::constf(&format!("c{kk}"), coeffs[kk]),
            ];
            let mut p = format!("c{kk}");
            for i in (0..kk).rev() {
                let (c, t, np) = (format!("c{i}"), format!("t{i}"), format!("p{i}"));
                body.push(Statement::arith(&t, ArithKind::Mulf, &[&p, "d"]));
                body.push(Statement::constf(&c, coeffs[i]));
                body.push(Statement::arith(&np, ArithKind::Addf, &[&c, &t]));
                p = np;
            }
            body.push(Statement::store(&p, &ex, idx(&["r", "j"])));
            st.push(Statement::parallel(&["r", "j"], ranges(&[rows, cols]), body));

            st.push(row_reduce(&ex, &sm, rows, cols, ArithKind::Addf));
            st.push(Statement::parallel(
                &["r", "j"],
                ranges(&[rows, cols]),
                vec![
                    Statement::load("e", &ex, idx(&["r", "j"])),
                    Statement::load("s", &sm, idx(&["r"])),
                    Statement::arith("y", ArithKind::Divf, &["e", "s"]),
                    Statement::store("y", &q, idx(&["r", "j"])),
                ],
            ));
            st.push(copy_from_matrix(&q, xs, split, id));
            for (n, shape) in [(flat, vec![rows, cols]), (mx, vec![rows]), (ex, vec![rows, cols]), (sm, vec![rows]), (q, vec![rows, cols])] {
                out.buffers.push(intermediate(n, shape));
            }
        }
        LayerSpec::ReLU => {
            st.push(elementwise(xs, |i| {
                vec![
                    Statement::load("v", x, i.to_vec()),
                    Statement::arith("y", ArithKind::Relu, &["v"]),
                    Statement::store("y", id, i.to_vec()),
                ]
            }));
        }
        LayerSpec::Reshape { .. } => {
            let flat = format!("{id}.flat");
            st.push(copy_to_matrix(x, xs, 0, &flat));
            st.push(copy_from_matrix(&flat, os, 0, id));
            out.buffers.push(intermediate(flat, vec![1, layer.output_shape.num_elements()]));
        }
        LayerSpec::Permute { dims } => {
            st.push(elementwise(xs, |i| {
                let dst = dims.iter().map(|&d| i[d].clone()).collect();
                vec![Statement::load("v", x, i.to_vec()), Statement::store("v", id, dst)]
            }));
        }
        LayerSpec::Add => {
            let y = layer.inputs[1].as_str();
            st.push(elementwise(xs, |i| {
                vec![
                    Statement::load("a", x, i.to_vec()),
                    Statement::load("b", y, i.to_vec()),
                    Statement::arith("s", ArithKind::Addf, &["a", "b"]),
                    Statement::store("s", id, i.to_vec()),
                ]
            }));
        }
    }
    Ok(out)
}

/// Lower a whole model: one nest group per layer in topological order, then
/// one copy nest per output port. Weights stay function-body locals until
/// `hoist_globals` moves them.
pub fn lower_model(graph: &ModelGraph, exp: ExpApprox) -> Result<LoweredModel, FrontendError> {
    let mut program = LoopNestProgram::new(graph.name.clone());
    let mut shapes: BTreeMap<&str, &TensorShape> = graph.inputs.iter().map(|p| (p.name.as_str(), &p.shape)).collect();
    let mut used = std::collections::BTreeSet::new();
    for l in &graph.layers {
        used.extend(l.inputs.iter().map(|s| s.as_str()));
    }
    used.extend(graph.outputs.iter().map(|o| o.from.as_str()));
    // Ports nothing reads would be dead declarations.
    for p in graph.inputs.iter().filter(|p| used.contains(p.name.as_str())) {
        program.params.push(BufferDecl::new(p.name.clone(), p.shape.clone(), BufferKind::Input));
    }
    for o in &graph.outputs {
        program.params.push(BufferDecl::new(o.name.clone(), o.shape.clone(), BufferKind::Output));
    }

    let mut weights = BTreeMap::new();
    for layer in &graph.layers {
        let ins: Vec<&TensorShape> = layer.inputs.iter().map(|n| shapes[n.as_str()]).collect();
        let lowered = lower_layer(layer, &ins, exp)?;
        for b in lowered.buffers {
            if b.kind == BufferKind::Weight {
                weights.insert(b.id.clone(), layer_weight(graph, layer, &b.id)?);
            }
            program.locals.push(b);
        }
        program.body.extend(lowered.statements);
        shapes.insert(layer.id.as_str(), &layer.output_shape);
    }
    for o in &graph.outputs {
        program.body.push(elementwise(o.shape.dims(), |i| {
            vec![Statement::load("v", &o.from, i.to_vec()), Statement::store("v", &o.name, i.to_vec())]
        }));
    }
    Ok(LoweredModel { program, weights })
}

fn layer_weight(graph: &ModelGraph, layer: &Layer, buffer: &str) -> Result<Tensor, FrontendError> {
    let get = |n: &str| graph.weights.get(n).ok_or_else(|| FrontendError::MissingWeight(n.to_string()));
    if let (LayerSpec::BatchNorm2d { eps, .. }, Some(prefix)) = (&layer.spec, buffer.strip_suffix(".inv_std")) {
        let var = get(&format!("{prefix}.running_var"))?;
        let data = var.data.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        return Ok(Tensor::new(var.shape.clone(), data));
    }
    get(buffer).cloned()
}
