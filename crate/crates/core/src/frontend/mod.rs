//! Declarative model descriptions and their lowering to loop nests.
//!
//! A model is a JSON document plus a weight blob. The document lists input
//! ports, layers (each naming the tensors it consumes) and output ports; the
//! blob holds every weight tensor as little-endian f64 at the byte offset
//! given in `weights_manifest`.
//!
//! ```json
//! {
//!   "name": "tiny",
//!   "inputs":  [{"name": "x", "shape": [1, 4]}],
//!   "layers":  [{"id": "fc", "type": "linear",
//!                "params": {"in_features": 4, "out_features": 2},
//!                "inputs": ["x"]}],
//!   "outputs": [{"name": "y", "from": "fc"}],
//!   "weights_manifest": {"fc.weight": {"offset": 0,  "shape": [2, 4]},
//!                        "fc.bias":   {"offset": 64, "shape": [2]}}
//! }
//! ```

mod lower;
pub mod zoo;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Tensor, TensorShape};

pub use lower::{lower_layer, lower_model, ExpApprox, LayerLowering, LoweredModel};

#[derive(Debug, Error, PartialEq)]
pub enum FrontendError {
    #[error("model json: {0}")]
    Json(String),
    #[error("missing weight tensor `{0}`")]
    MissingWeight(String),
    #[error("weight `{tensor}` has shape {actual}, expected {expected}")]
    WeightShape { tensor: String, expected: TensorShape, actual: TensorShape },
    #[error("weight `{tensor}` lies outside the {len}-byte blob")]
    WeightRange { tensor: String, len: usize },
    #[error("layer `{layer}`: shape mismatch, expected {expected}, got {actual}")]
    ShapeMismatch { layer: String, expected: String, actual: String },
    #[error("layer `{layer}`: {message}")]
    BadLayer { layer: String, message: String },
    #[error("`{name}` used by `{user}` is not a model input or layer")]
    UnknownTensor { name: String, user: String },
    #[error("name `{0}` is defined more than once")]
    DuplicateName(String),
    #[error("layer graph contains a cycle through {0:?}")]
    Cycle(Vec<String>),
}

fn bad(layer: &str, message: impl Into<String>) -> FrontendError {
    FrontendError::BadLayer { layer: layer.to_string(), message: message.into() }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SoftmaxAxis {
    /// Normalize over every element of the tensor.
    All,
    /// Normalize each row along the innermost dimension.
    Last,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    /// `a x b (+ c)` with `a: (m, n)`, `b: (n, p)`, `c: (m, p)`.
    AddMM { m: usize, n: usize, p: usize, bias: bool },
    Linear { in_features: usize, out_features: usize, bias: bool },
    Conv2d { c_in: usize, c_out: usize, k: usize, stride: usize, padding: usize, bias: bool },
    BatchNorm2d { num_features: usize, eps: f64 },
    MaxPool2d { k: usize, stride: usize },
    Softmax { axis: SoftmaxAxis },
    ReLU,
    /// Row-major reinterpretation with the same element count.
    Reshape { shape: Vec<usize> },
    /// Output dimension `i` is input dimension `dims[i]`.
    Permute { dims: Vec<usize> },
    /// Elementwise sum of two tensors of equal shape.
    Add,
}

impl LayerSpec {
    pub fn type_name(&self) -> &'static str {
        match self {
            LayerSpec::AddMM { .. } => "addmm",
            LayerSpec::Linear { .. } => "linear",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::BatchNorm2d { .. } => "batchnorm2d",
            LayerSpec::MaxPool2d { .. } => "maxpool2d",
            LayerSpec::Softmax { .. } => "softmax",
            LayerSpec::ReLU => "relu",
            LayerSpec::Reshape { .. } => "reshape",
            LayerSpec::Permute { .. } => "permute",
            LayerSpec::Add => "add",
        }
    }

    /// Names (relative to the layer id) and shapes of the weight tensors.
    pub fn weight_shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        match *self {
            LayerSpec::Linear { in_features, out_features, bias } => {
                let mut w = vec![("weight", vec![out_features, in_features])];
                if bias {
                    w.push(("bias", vec![out_features]));
                }
                w
            }
            LayerSpec::Conv2d { c_in, c_out, k, bias, .. } => {
                let mut w = vec![("weight", vec![c_out, c_in, k, k])];
                if bias {
                    w.push(("bias", vec![c_out]));
                }
                w
            }
            LayerSpec::BatchNorm2d { num_features: c, .. } => {
                vec![("weight", vec![c]), ("bias", vec![c]), ("running_mean", vec![c]), ("running_var", vec![c])]
            }
            _ => Vec::new(),
        }
    }

    /// Number of tensor operands the layer consumes.
    pub fn arity(&self) -> std::ops::RangeInclusive<usize> {
        match self {
            LayerSpec::AddMM { .. } => 2..=3,
            LayerSpec::Add => 2..=2,
            _ => 1..=1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub id: String,
    pub spec: LayerSpec,
    pub inputs: Vec<String>,
    pub output_shape: TensorShape,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Port {
    pub name: String,
    pub shape: TensorShape,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputPort {
    pub name: String,
    pub from: String,
    pub shape: TensorShape,
}

/// Shape-checked model. Layers are in deterministic topological order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGraph {
    pub name: String,
    pub inputs: Vec<Port>,
    pub layers: Vec<Layer>,
    pub outputs: Vec<OutputPort>,
    pub weights: BTreeMap<String, Tensor>,
}

impl ModelGraph {
    pub fn shape_of(&self, tensor: &str) -> Option<&TensorShape> {
        self.inputs
            .iter()
            .find(|p| p.name == tensor)
            .map(|p| &p.shape)
            .or_else(|| self.layers.iter().find(|l| l.id == tensor).map(|l| &l.output_shape))
    }
}

// ---- on-disk format ----

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub id: String,
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(default)]
    pub params: serde_json::Map<String, serde_json::Value>,
    pub inputs: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputEntry {
    pub name: String,
    pub from: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Byte offset into the weight blob.
    pub offset: usize,
    pub shape: TensorShape,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    #[serde(default = "default_name")]
    pub name: String,
    pub inputs: Vec<Port>,
    pub outputs: Vec<OutputEntry>,
    #[serde(default)]
    pub layers: Vec<LayerEntry>,
    #[serde(default)]
    pub weights_manifest: BTreeMap<String, ManifestEntry>,
}

fn default_name() -> String {
    "model".to_string()
}

struct Params<'a> {
    layer: &'a str,
    map: &'a serde_json::Map<String, serde_json::Value>,
}

impl Params<'_> {
    fn usize_opt(&self, key: &str) -> Result<Option<usize>, FrontendError> {
        match self.map.get(key) {
            None => Ok(None),
            Some(v) => v
                .as_u64()
                .map(|x| Some(x as usize))
                .ok_or_else(|| bad(self.layer, format!("parameter `{key}` must be a non-negative integer"))),
        }
    }

    fn usize(&self, key: &str) -> Result<usize, FrontendError> {
        self.usize_opt(key)?.ok_or_else(|| bad(self.layer, format!("missing parameter `{key}`")))
    }

    fn positive(&self, key: &str, default: Option<usize>) -> Result<usize, FrontendError> {
        let v = match default {
            Some(d) => self.usize_opt(key)?.unwrap_or(d),
            None => self.usize(key)?,
        };
        if v == 0 {
            return Err(bad(self.layer, format!("parameter `{key}` must be at least 1")));
        }
        Ok(v)
    }

    fn flag(&self, key: &str, default: bool) -> Result<bool, FrontendError> {
        match self.map.get(key) {
            None => Ok(default),
            Some(v) => v.as_bool().ok_or_else(|| bad(self.layer, format!("parameter `{key}` must be a boolean"))),
        }
    }

    fn list(&self, key: &str) -> Result<Vec<usize>, FrontendError> {
        let v = self.map.get(key).ok_or_else(|| bad(self.layer, format!("missing parameter `{key}`")))?;
        serde_json::from_value(v.clone())
            .map_err(|_| bad(self.layer, format!("parameter `{key}` must be a list of non-negative integers")))
    }
}

fn shape_err(layer: &str, expected: impl Into<String>, actual: &TensorShape) -> FrontendError {
    FrontendError::ShapeMismatch { layer: layer.to_string(), expected: expected.into(), actual: actual.to_string() }
}

/// Build the layer spec from its parameters and input shapes and return it
/// with its output shape.
fn infer(entry: &LayerEntry, ins: &[&TensorShape]) -> Result<(LayerSpec, TensorShape), FrontendError> {
    let id = entry.id.as_str();
    let p = Params { layer: id, map: &entry.params };
    let x = ins[0];
    let d = x.dims();
    let rank4 = |what: &str| -> Result<(), FrontendError> {
        if d.len() == 4 {
            Ok(())
        } else {
            Err(shape_err(id, format!("rank-4 {what} input"), x))
        }
    };
    let out = match entry.kind.as_str() {
        "addmm" => {
            let b = ins[1];
            if d.len() != 2 || b.rank() != 2 || b.dims()[0] != d[1] {
                return Err(shape_err(id, format!("(m,n) x (n,p) operands, a is {x}"), b));
            }
            let (m, n, pp) = (d[0], d[1], b.dims()[1]);
            for (key, v) in [("m", m), ("n", n), ("p", pp)] {
                if let Some(want) = p.usize_opt(key)? {
                    if want != v {
                        return Err(bad(id, format!("parameter `{key}` is {want} but operands give {v}")));
                    }
                }
            }
            let o = TensorShape::new(vec![m, pp]);
            if let Some(c) = ins.get(2) {
                if **c != o {
                    return Err(shape_err(id, o.to_string(), c));
                }
            }
            (LayerSpec::AddMM { m, n, p: pp, bias: ins.len() == 3 }, o)
        }
        "linear" => {
            let in_features = p.positive("in_features", None)?;
            let out_features = p.positive("out_features", None)?;
            if d.len() != 2 || d[1] != in_features {
                return Err(shape_err(id, format!("(batch,{in_features})"), x));
            }
            (
                LayerSpec::Linear { in_features, out_features, bias: p.flag("bias", true)? },
                TensorShape::new(vec![d[0], out_features]),
            )
        }
        "conv2d" => {
            rank4("conv2d")?;
            let c_in = p.positive("c_in", Some(d[1]))?;
            let c_out = p.positive("c_out", None)?;
            let k = p.positive("k", None)?;
            let stride = p.positive("stride", Some(1))?;
            let padding = p.usize_opt("padding")?.unwrap_or(k / 2);
            if d[1] != c_in {
                return Err(shape_err(id, format!("{c_in} input channels"), x));
            }
            let (hp, wp) = (d[2] + 2 * padding, d[3] + 2 * padding);
            if k > hp || k > wp {
                return Err(bad(id, format!("kernel {k} larger than padded input {hp}x{wp}")));
            }
            (
                LayerSpec::Conv2d { c_in, c_out, k, stride, padding, bias: p.flag("bias", true)? },
                TensorShape::new(vec![d[0], c_out, (hp - k) / stride + 1, (wp - k) / stride + 1]),
            )
        }
        "batchnorm2d" => {
            rank4("batchnorm2d")?;
            let num_features = p.positive("num_features", Some(d[1]))?;
            if d[1] != num_features {
                return Err(shape_err(id, format!("{num_features} channels"), x));
            }
            let eps = match entry.params.get("eps") {
                None => 1e-5,
                Some(v) => v.as_f64().ok_or_else(|| bad(id, "parameter `eps` must be a number"))?,
            };
            if !(eps > 0.0) {
                return Err(bad(id, "eps must be positive"));
            }
            (LayerSpec::BatchNorm2d { num_features, eps }, x.clone())
        }
        "maxpool2d" => {
            rank4("maxpool2d")?;
            let k = p.positive("k", None)?;
            let stride = p.positive("stride", Some(k))?;
            if k > d[2] || k > d[3] {
                return Err(bad(id, format!("kernel {k} larger than input {}x{}", d[2], d[3])));
            }
            (
                LayerSpec::MaxPool2d { k, stride },
                TensorShape::new(vec![d[0], d[1], (d[2] - k) / stride + 1, (d[3] - k) / stride + 1]),
            )
        }
        "softmax" => {
            let axis = match entry.params.get("axis") {
                None => SoftmaxAxis::All,
                Some(serde_json::Value::String(s)) if s == "all" => SoftmaxAxis::All,
                Some(serde_json::Value::String(s)) if s == "last" => SoftmaxAxis::Last,
                Some(v) if v.as_i64() == Some(-1) || v.as_u64() == Some(d.len() as u64 - 1) => SoftmaxAxis::Last,
                Some(v) => return Err(bad(id, format!("unsupported softmax axis {v}; use \"all\" or the last axis"))),
            };
            (LayerSpec::Softmax { axis }, x.clone())
        }
        "relu" => (LayerSpec::ReLU, x.clone()),
        "reshape" => {
            let shape = p.list("shape")?;
            let o = TensorShape::new(shape.clone());
            if !o.is_valid() || o.num_elements() != x.num_elements() {
                return Err(shape_err(id, format!("a shape with {} elements", x.num_elements()), &o));
            }
            (LayerSpec::Reshape { shape }, o)
        }
        "permute" => {
            let dims = p.list("dims")?;
            let mut sorted = dims.clone();
            sorted.sort_unstable();
            if sorted != (0..d.len()).collect::<Vec<_>>() {
                return Err(bad(id, format!("{dims:?} is not a permutation of 0..{}", d.len())));
            }
            (LayerSpec::Permute { dims: dims.clone() }, TensorShape::new(dims.iter().map(|&i| d[i]).collect::<Vec<_>>()))
        }
        "add" => {
            if ins[1] != x {
                return Err(shape_err(id, x.to_string(), ins[1]));
            }
            (LayerSpec::Add, x.clone())
        }
        other => return Err(bad(id, format!("unknown layer type `{other}`"))),
    };
    if !out.1.is_valid() {
        return Err(shape_err(id, "a non-empty output", &out.1));
    }
    Ok(out)
}

fn read_weights(file: &ModelFile, blob: &[u8]) -> Result<BTreeMap<String, Tensor>, FrontendError> {
    let mut weights = BTreeMap::new();
    for (name, e) in &file.weights_manifest {
        let n = e.shape.num_elements();
        let end = e.offset.checked_add(n * 8).filter(|&end| end <= blob.len());
        let Some(end) = end else {
            return Err(FrontendError::WeightRange { tensor: name.clone(), len: blob.len() });
        };
        let data = blob[e.offset..end].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        weights.insert(name.clone(), Tensor::new(e.shape.clone(), data));
    }
    Ok(weights)
}

/// Parse, topologically order and shape-check a model and read its weights.
pub fn load_model(model_text: &str, weight_blob: &[u8]) -> Result<ModelGraph, FrontendError> {
    let file: ModelFile = serde_json::from_str(model_text).map_err(|e| FrontendError::Json(e.to_string()))?;
    let weights = read_weights(&file, weight_blob)?;

    let mut names = BTreeSet::new();
    for n in file.inputs.iter().map(|p| &p.name).chain(file.layers.iter().map(|l| &l.id)).chain(file.outputs.iter().map(|o| &o.name)) {
        if !is_identifier(n) {
            return Err(FrontendError::Json(format!("`{n}` is not a valid name (letters, digits, `_`)")));
        }
        if !names.insert(n.as_str()) {
            return Err(FrontendError::DuplicateName(n.clone()));
        }
    }
    for p in &file.inputs {
        if !p.shape.is_valid() {
            return Err(shape_err(&p.name, "positive extents", &p.shape));
        }
    }

    // Kahn's algorithm, always taking the earliest ready layer in file order.
    let index: HashMap<&str, usize> = file.layers.iter().enumerate().map(|(i, l)| (l.id.as_str(), i)).collect();
    let is_input = |n: &str| file.inputs.iter().any(|p| p.name == n);
    let mut indegree = vec![0usize; file.layers.len()];
    let mut users = vec![Vec::new(); file.layers.len()];
    for (i, l) in file.layers.iter().enumerate() {
        for src in &l.inputs {
            if let Some(&j) = index.get(src.as_str()) {
                indegree[i] += 1;
                users[j].push(i);
            } else if !is_input(src) {
                return Err(FrontendError::UnknownTensor { name: src.clone(), user: l.id.clone() });
            }
        }
    }
    let mut ready: BTreeSet<usize> = (0..file.layers.len()).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::new();
    while let Some(i) = ready.pop_first() {
        order.push(i);
        for &u in &users[i] {
            indegree[u] -= 1;
            if indegree[u] == 0 {
                ready.insert(u);
            }
        }
    }
    if order.len() != file.layers.len() {
        let stuck = (0..file.layers.len()).filter(|i| indegree[*i] > 0).map(|i| file.layers[i].id.clone()).collect();
        return Err(FrontendError::Cycle(stuck));
    }

    let mut shapes: HashMap<String, TensorShape> = file.inputs.iter().map(|p| (p.name.clone(), p.shape.clone())).collect();
    let mut layers = Vec::new();
    for i in order {
        let e = &file.layers[i];
        let ins: Vec<&TensorShape> = e.inputs.iter().map(|n| &shapes[n]).collect();
        let arity = match e.kind.as_str() {
            "addmm" => 2..=3,
            "add" => 2..=2,
            _ => 1..=1,
        };
        if !arity.contains(&ins.len()) {
            return Err(bad(&e.id, format!("takes {arity:?} inputs, got {}", ins.len())));
        }
        let (spec, output_shape) = infer(e, &ins)?;
        for (suffix, shape) in spec.weight_shapes() {
            let name = format!("{}.{suffix}", e.id);
            let t = weights.get(&name).ok_or_else(|| FrontendError::MissingWeight(name.clone()))?;
            let expected = TensorShape::new(shape);
            if t.shape != expected {
                return Err(FrontendError::WeightShape { tensor: name, expected, actual: t.shape.clone() });
            }
        }
        shapes.insert(e.id.clone(), output_shape.clone());
        layers.push(Layer { id: e.id.clone(), spec, inputs: e.inputs.clone(), output_shape });
    }

    let mut outputs = Vec::new();
    for o in &file.outputs {
        let shape = shapes
            .get(&o.from)
            .cloned()
            .ok_or_else(|| FrontendError::UnknownTensor { name: o.from.clone(), user: o.name.clone() })?;
        outputs.push(OutputPort { name: o.name.clone(), from: o.from.clone(), shape });
    }
    Ok(ModelGraph { name: file.name, inputs: file.inputs, layers, outputs, weights })
}

fn is_identifier(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Serialize tensors into a blob and a matching manifest, in name order.
pub fn pack_weights(weights: &BTreeMap<String, Tensor>) -> (Vec<u8>, BTreeMap<String, ManifestEntry>) {
    let mut blob = Vec::new();
    let mut manifest = BTreeMap::new();
    for (name, t) in weights {
        manifest.insert(name.clone(), ManifestEntry { offset: blob.len(), shape: t.shape.clone() });
        for x in &t.data {
            blob.extend_from_slice(&x.to_le_bytes());
        }
    }
    (blob, manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(layers: &str, inputs: &str, outputs: &str, manifest: &str) -> String {
        format!(r#"{{"name":"m","inputs":{inputs},"layers":{layers},"outputs":{outputs},"weights_manifest":{manifest}}}"#)
    }

    fn conv_weights(c_out: usize, c_in: usize, k: usize) -> (Vec<u8>, String) {
        let mut w = BTreeMap::new();
        w.insert("c.weight".to_string(), Tensor::zeros(vec![c_out, c_in, k, k]));
        w.insert("c.bias".to_string(), Tensor::zeros(vec![c_out]));
        let (blob, man) = pack_weights(&w);
        (blob, serde_json::to_string(&man).unwrap())
    }

    #[test]
    fn conv_shape_with_default_padding() {
        let (blob, man) = conv_weights(3, 1, 3);
        let text = model(
            r#"[{"id":"c","type":"conv2d","params":{"c_in":1,"c_out":3,"k":3},"inputs":["x"]}]"#,
            r#"[{"name":"x","shape":[1,1,16,16]}]"#,
            r#"[{"name":"y","from":"c"}]"#,
            &man,
        );
        let g = load_model(&text, &blob).unwrap();
        assert_eq!(g.outputs[0].shape, TensorShape::new(vec![1, 3, 16, 16]));
        assert_eq!(g.layers[0].spec, LayerSpec::Conv2d { c_in: 1, c_out: 3, k: 3, stride: 1, padding: 1, bias: true });
    }

    #[test]
    fn identity_model() {
        let text = model("[]", r#"[{"name":"x","shape":[1,4]}]"#, r#"[{"name":"y","from":"x"}]"#, "{}");
        let g = load_model(&text, &[]).unwrap();
        assert_eq!(g.outputs[0].shape, TensorShape::new(vec![1, 4]));
    }

    #[test]
    fn linear_shape() {
        let mut w = BTreeMap::new();
        w.insert("fc.weight".to_string(), Tensor::zeros(vec![16, 50]));
        w.insert("fc.bias".to_string(), Tensor::zeros(vec![16]));
        let (blob, man) = pack_weights(&w);
        let text = model(
            r#"[{"id":"fc","type":"linear","params":{"in_features":50,"out_features":16},"inputs":["x"]}]"#,
            r#"[{"name":"x","shape":[1,50]}]"#,
            r#"[{"name":"y","from":"fc"}]"#,
            &serde_json::to_string(&man).unwrap(),
        );
        assert_eq!(load_model(&text, &blob).unwrap().outputs[0].shape, TensorShape::new(vec![1, 16]));
    }

    #[test]
    fn missing_weight_and_bad_shapes() {
        let (blob, _) = conv_weights(3, 1, 3);
        let text = model(
            r#"[{"id":"c","type":"conv2d","params":{"c_out":3,"k":3},"inputs":["x"]}]"#,
            r#"[{"name":"x","shape":[1,1,16,16]}]"#,
            r#"[{"name":"y","from":"c"}]"#,
            "{}",
        );
        assert_eq!(load_model(&text, &blob), Err(FrontendError::MissingWeight("c.weight".into())));

        let (blob, man) = conv_weights(3, 2, 3);
        let text = model(
            r#"[{"id":"c","type":"conv2d","params":{"c_out":3,"k":3},"inputs":["x"]}]"#,
            r#"[{"name":"x","shape":[1,1,16,16]}]"#,
            r#"[{"name":"y","from":"c"}]"#,
            &man,
        );
        assert!(matches!(load_model(&text, &blob), Err(FrontendError::WeightShape { .. })));

        let text = model(
            r#"[{"id":"r","type":"relu","inputs":["x"]},{"id":"s","type":"add","inputs":["r","z"]}]"#,
            r#"[{"name":"x","shape":[2]},{"name":"z","shape":[3]}]"#,
            r#"[{"name":"y","from":"s"}]"#,
            "{}",
        );
        match load_model(&text, &[]) {
            Err(FrontendError::ShapeMismatch { layer, expected, actual }) => {
                assert_eq!((layer.as_str(), expected.as_str(), actual.as_str()), ("s", "(2)", "(3)"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn cycles_and_unknown_names() {
        let text = model(
            r#"[{"id":"a","type":"relu","inputs":["b"]},{"id":"b","type":"relu","inputs":["a"]}]"#,
            r#"[{"name":"x","shape":[2]}]"#,
            r#"[{"name":"y","from":"a"}]"#,
            "{}",
        );
        assert_eq!(load_model(&text, &[]), Err(FrontendError::Cycle(vec!["a".into(), "b".into()])));
        let text = model(
            r#"[{"id":"a","type":"relu","inputs":["q"]}]"#,
            r#"[{"name":"x","shape":[2]}]"#,
            r#"[{"name":"y","from":"a"}]"#,
            "{}",
        );
        assert!(matches!(load_model(&text, &[]), Err(FrontendError::UnknownTensor { .. })));
    }

    #[test]
    fn topological_order_is_deterministic() {
        let text = model(
            r#"[{"id":"s","type":"add","inputs":["a","b"]},{"id":"b","type":"relu","inputs":["x"]},{"id":"a","type":"relu","inputs":["x"]}]"#,
            r#"[{"name":"x","shape":[2]}]"#,
            r#"[{"name":"y","from":"s"}]"#,
            "{}",
        );
        let g = load_model(&text, &[]).unwrap();
        let ids: Vec<_> = g.layers.iter().map(|l| l.id.as_str()).collect();
        assert_eq!(ids, ["b", "a", "s"]);
    }

    #[test]
    fn maxpool_and_softmax_axis() {
        let text = model(
            r#"[{"id":"p","type":"maxpool2d","params":{"k":3,"stride":2},"inputs":["x"]},
                {"id":"s","type":"softmax","params":{"axis":1},"inputs":["p"]}]"#,
            r#"[{"name":"x","shape":[1,3,16,16]}]"#,
            r#"[{"name":"y","from":"s"}]"#,
            "{}",
        );
        assert!(matches!(load_model(&text, &[]), Err(FrontendError::BadLayer { .. })));
        let text = text.replace(r#""axis":1"#, r#""axis":-1"#);
        let g = load_model(&text, &[]).unwrap();
        assert_eq!(g.layers[0].output_shape, TensorShape::new(vec![1, 3, 7, 7]));
        assert_eq!(g.layers[1].spec, LayerSpec::Softmax { axis: SoftmaxAxis::Last });
    }

    #[test]
    fn weight_blob_round_trip() {
        let mut w = BTreeMap::new();
        w.insert("a".to_string(), Tensor::new(vec![2], vec![1.5, -2.0]));
        w.insert("b".to_string(), Tensor::new(vec![1], vec![3.0]));
        let (blob, man) = pack_weights(&w);
        assert_eq!(blob.len(), 24);
        assert_eq!(man["b"].offset, 16);
        let file = ModelFile {
            name: "m".into(),
            inputs: vec![],
            outputs: vec![],
            layers: vec![],
            weights_manifest: man,
        };
        assert_eq!(read_weights(&file, &blob).unwrap(), w);
        assert!(matches!(read_weights(&file, &blob[..20]), Err(FrontendError::WeightRange { .. })));
    }
}
