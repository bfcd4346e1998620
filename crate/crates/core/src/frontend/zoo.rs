//! Ready-made models: the single-layer evaluation set and BraggNN.
//!
//! Weights are drawn from a seeded ChaCha stream, normal with standard
//! deviation `1/sqrt(fan_in)`, so every model is reproducible from its seed.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::{json, Value};

use super::{load_model, pack_weights, LayerEntry, ModelFile, ModelGraph, OutputEntry, Port};
use crate::tensor::{Tensor, TensorShape};

/// Incremental model description; [`ModelBuilder::to_files`] produces the
/// JSON text and weight blob that [`load_model`] reads.
pub struct ModelBuilder {
    file: ModelFile,
    weights: BTreeMap<String, Tensor>,
    rng: ChaCha8Rng,
}

impl ModelBuilder {
    pub fn new(name: &str, seed: u64) -> Self {
        ModelBuilder {
            file: ModelFile {
                name: name.to_string(),
                inputs: Vec::new(),
                outputs: Vec::new(),
                layers: Vec::new(),
                weights_manifest: BTreeMap::new(),
            },
            weights: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn input(mut self, name: &str, shape: &[usize]) -> Self {
        self.file.inputs.push(Port { name: name.to_string(), shape: TensorShape::new(shape.to_vec()) });
        self
    }

    pub fn output(mut self, name: &str, from: &str) -> Self {
        self.file.outputs.push(OutputEntry { name: name.to_string(), from: from.to_string() });
        self
    }

    pub fn layer(mut self, id: &str, kind: &str, params: Value, inputs: &[&str]) -> Self {
        let params = match params {
            Value::Object(m) => m,
            _ => serde_json::Map::new(),
        };
        self.file.layers.push(LayerEntry {
            id: id.to_string(),
            kind: kind.to_string(),
            params,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
        });
        self
    }

    pub fn weight(mut self, name: &str, tensor: Tensor) -> Self {
        self.weights.insert(name.to_string(), tensor);
        self
    }

    /// Normal weights with standard deviation `1/sqrt(fan_in)`.
    pub fn random_weight(mut self, name: &str, shape: &[usize], fan_in: usize) -> Self {
        let normal = Normal::new(0.0, 1.0 / (fan_in.max(1) as f64).sqrt()).unwrap();
        let n = shape.iter().product();
        let data = (0..n).map(|_| normal.sample(&mut self.rng)).collect();
        self.weights.insert(name.to_string(), Tensor::new(shape.to_vec(), data));
        self
    }

    /// Uniform weights in `[lo, hi)`.
    pub fn uniform_weight(mut self, name: &str, shape: &[usize], lo: f64, hi: f64) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.gen_range(lo..hi)).collect();
        self.weights.insert(name.to_string(), Tensor::new(shape.to_vec(), data));
        self
    }

    pub fn conv2d(self, id: &str, input: &str, c_in: usize, c_out: usize, k: usize, padding: usize) -> Self {
        let fan_in = c_in * k * k;
        self.layer(id, "conv2d", json!({"c_in": c_in, "c_out": c_out, "k": k, "stride": 1, "padding": padding}), &[input])
            .random_weight(&format!("{id}.weight"), &[c_out, c_in, k, k], fan_in)
            .random_weight(&format!("{id}.bias"), &[c_out], fan_in)
    }

    pub fn linear(self, id: &str, input: &str, in_features: usize, out_features: usize) -> Self {
        self.layer(id, "linear", json!({"in_features": in_features, "out_features": out_features}), &[input])
            .random_weight(&format!("{id}.weight"), &[out_features, in_features], in_features)
            .random_weight(&format!("{id}.bias"), &[out_features], in_features)
    }

    pub fn relu(self, id: &str, input: &str) -> Self {
        self.layer(id, "relu", json!({}), &[input])
    }

    /// Model JSON text and weight blob.
    pub fn to_files(&self) -> (String, Vec<u8>) {
        let (blob, manifest) = pack_weights(&self.weights);
        let mut file = self.file.clone();
        file.weights_manifest = manifest;
        (serde_json::to_string_pretty(&file).expect("model serializes"), blob)
    }

    pub fn build(&self) -> ModelGraph {
        let (text, blob) = self.to_files();
        load_model(&text, &blob).expect("zoo model is well formed")
    }
}

/// Elementwise ReLU on one input of the given shape.
pub fn relu_model(shape: &[usize]) -> ModelGraph {
    relu_builder(shape).build()
}

pub fn relu_builder(shape: &[usize]) -> ModelBuilder {
    ModelBuilder::new("relu", 0).input("x", shape).relu("relu", "x").output("y", "relu")
}

/// `a x b + c` with all operands (16,16) model inputs.
pub fn addmm_model() -> ModelGraph {
    addmm_builder().build()
}

pub fn addmm_builder() -> ModelBuilder {
    ModelBuilder::new("addmm", 0)
        .input("a", &[16, 16])
        .input("b", &[16, 16])
        .input("c", &[16, 16])
        .layer("mm", "addmm", json!({}), &["a", "b", "c"])
        .output("y", "mm")
}

/// Inference batch norm over (10,2,3,3).
pub fn batchnorm_model(seed: u64) -> ModelGraph {
    batchnorm_builder(seed).build()
}

pub fn batchnorm_builder(seed: u64) -> ModelBuilder {
    ModelBuilder::new("batchnorm", seed)
        .input("x", &[10, 2, 3, 3])
        .layer("bn", "batchnorm2d", json!({"num_features": 2, "eps": 1e-5}), &["x"])
        .uniform_weight("bn.weight", &[2], 0.5, 1.5)
        .uniform_weight("bn.bias", &[2], -0.5, 0.5)
        .uniform_weight("bn.running_mean", &[2], -0.5, 0.5)
        .uniform_weight("bn.running_var", &[2], 0.5, 2.0)
        .output("y", "bn")
}

/// 3x3 convolution, one input channel to three, on (1,1,16,16), padding 1.
pub fn conv_model(seed: u64) -> ModelGraph {
    conv_model_sized(seed, 16)
}

/// Same as [`conv_model`] on a `size x size` image.
pub fn conv_model_sized(seed: u64, size: usize) -> ModelGraph {
    conv_builder(seed, size).build()
}

pub fn conv_builder(seed: u64, size: usize) -> ModelBuilder {
    ModelBuilder::new("conv", seed).input("x", &[1, 1, size, size]).conv2d("conv", "x", 1, 3, 3, 1).output("y", "conv")
}

/// 3x3 max pooling with stride 2 on (1,3,16,16).
pub fn maxpool_model() -> ModelGraph {
    maxpool_builder().build()
}

pub fn maxpool_builder() -> ModelBuilder {
    ModelBuilder::new("maxpool", 0)
        .input("x", &[1, 3, 16, 16])
        .layer("pool", "maxpool2d", json!({"k": 3, "stride": 2}), &["x"])
        .output("y", "pool")
}

/// Softmax over all 768 elements of (1,3,16,16).
pub fn softmax_model() -> ModelGraph {
    softmax_builder().build()
}

pub fn softmax_builder() -> ModelBuilder {
    ModelBuilder::new("softmax", 0)
        .input("x", &[1, 3, 16, 16])
        .layer("soft", "softmax", json!({"axis": "all"}), &["x"])
        .output("y", "soft")
}

/// The five single-layer evaluation models with their display names.
pub fn layer_suite(seed: u64) -> Vec<(&'static str, ModelGraph)> {
    layer_suite_builders(seed).into_iter().map(|(n, b)| (n, b.build())).collect()
}

pub fn layer_suite_builders(seed: u64) -> Vec<(&'static str, ModelBuilder)> {
    vec![
        ("addmm", addmm_builder()),
        ("batch_norm_2d", batchnorm_builder(seed)),
        ("conv_2d", conv_builder(seed, 16)),
        ("max_pool_2d", maxpool_builder()),
        ("soft_max", softmax_builder()),
    ]
}

/// BraggNN at scale 1 on an 11x11 patch.
pub fn braggnn_builder(seed: u64) -> ModelBuilder {
    let b = ModelBuilder::new("braggnn", seed)
        .input("x", &[1, 1, 11, 11])
        .conv2d("cnn1", "x", 1, 16, 3, 0)
        // non-local block
        .conv2d("theta", "cnn1", 16, 8, 1, 0)
        .conv2d("phi", "cnn1", 16, 8, 1, 0)
        .conv2d("g", "cnn1", 16, 8, 1, 0)
        .layer("theta_r", "reshape", json!({"shape": [8, 81]}), &["theta"])
        .layer("theta_p", "permute", json!({"dims": [1, 0]}), &["theta_r"])
        .layer("phi_r", "reshape", json!({"shape": [8, 81]}), &["phi"])
        .layer("f", "addmm", json!({}), &["theta_p", "phi_r"])
        .layer("soft", "softmax", json!({"axis": "last"}), &["f"])
        .layer("g_r", "reshape", json!({"shape": [8, 81]}), &["g"])
        .layer("g_p", "permute", json!({"dims": [1, 0]}), &["g_r"])
        .layer("nl_y", "addmm", json!({}), &["soft", "g_p"])
        .layer("y_p", "permute", json!({"dims": [1, 0]}), &["nl_y"])
        .layer("y_r", "reshape", json!({"shape": [1, 8, 9, 9]}), &["y_p"])
        .conv2d("out_cnn", "y_r", 8, 16, 1, 0)
        .layer("nlb", "add", json!({}), &["out_cnn", "cnn1"]);
    b.relu("relu1", "nlb")
        .conv2d("cnn2", "relu1", 16, 8, 3, 0)
        .relu("relu2", "cnn2")
        .conv2d("cnn3", "relu2", 8, 2, 3, 0)
        .relu("relu3", "cnn3")
        .layer("flat", "reshape", json!({"shape": [1, 50]}), &["relu3"])
        .linear("fc1", "flat", 50, 16)
        .relu("relu4", "fc1")
        .linear("fc2", "relu4", 16, 8)
        .relu("relu5", "fc2")
        .linear("fc3", "relu5", 8, 4)
        .relu("relu6", "fc3")
        .linear("fc4", "relu6", 4, 2)
        .relu("relu7", "fc4")
        .output("y", "relu7")
}

pub fn braggnn(seed: u64) -> ModelGraph {
    braggnn_builder(seed).build()
}

/// Seeded standard-normal tensors for every model input.
pub fn random_inputs(model: &ModelGraph, seed: u64) -> BTreeMap<String, Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    model
        .inputs
        .iter()
        .map(|p| {
            let data = (0..p.shape.num_elements()).map(|_| normal.sample(&mut rng)).collect();
            (p.name.clone(), Tensor::new(p.shape.clone(), data))
        })
        .collect()
}
