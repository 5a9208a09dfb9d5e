//! Model structure: configuration, per-layer weights, and the named-tensor
//! record the weight container serializes. Includes a deterministic toy
//! checkpoint generator used as the end-to-end test vehicle.

use crate::error::{Error, Result};
use crate::fused::{NormParams, RMS_EPSILON};
use crate::ternary::{pack_matrix, PackedTernaryMatrix, TernaryMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Hyperparameters plus kernel and schedule knobs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    /// Hidden size N (= heads * head_dim).
    pub hidden_size: usize,
    /// Transformer block count L.
    pub layers: usize,
    /// Attention head count h.
    pub heads: usize,
    /// Per-head dimension d.
    pub head_dim: usize,
    /// FFN inner dimension F.
    pub ffn_dim: usize,
    /// Vocabulary size V.
    pub vocab_size: usize,
    /// Context limit (KV cache slots per layer).
    pub capacity: usize,
    /// Lookup group size G.
    pub group_size: usize,
    /// Lookup tables per activation block T.
    pub tables: usize,
    /// Index vectors consumed per inner-loop step Q.
    pub lookup_width: usize,
    /// Prefill schedule parallelism p.
    pub parallelism: usize,
    /// Whether the LM head reuses the embedding tensor.
    pub tied_embeddings: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_size: 1536,
            layers: 1,
            heads: 24,
            head_dim: 64,
            ffn_dim: 4096,
            vocab_size: 32000,
            capacity: 1024,
            group_size: 3,
            tables: 32,
            lookup_width: 16,
            parallelism: 4,
            tied_embeddings: false,
        }
    }
}

impl ModelConfig {
    /// The small deterministic configuration the toy checkpoint uses.
    pub fn toy() -> Self {
        Self {
            hidden_size: 64,
            layers: 2,
            heads: 4,
            head_dim: 16,
            ffn_dim: 128,
            vocab_size: 256,
            capacity: 1024,
            group_size: 3,
            tables: 32,
            lookup_width: 16,
            parallelism: 4,
            tied_embeddings: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            ("hidden_size", self.hidden_size),
            ("layers", self.layers),
            ("heads", self.heads),
            ("head_dim", self.head_dim),
            ("ffn_dim", self.ffn_dim),
            ("vocab_size", self.vocab_size),
            ("capacity", self.capacity),
            ("group_size", self.group_size),
            ("tables", self.tables),
            ("lookup_width", self.lookup_width),
            ("parallelism", self.parallelism),
        ];
        for (name, v) in all {
            if v == 0 {
                return Err(Error::config(format!("{name} must be >= 1")));
            }
        }
        if self.hidden_size != self.heads * self.head_dim {
            return Err(Error::config(format!(
                "hidden_size {} != heads {} * head_dim {}",
                self.hidden_size, self.heads, self.head_dim
            )));
        }
        if self.head_dim % 2 != 0 {
            return Err(Error::config(format!(
                "head_dim {} must be even for rotary embedding",
                self.head_dim
            )));
        }
        if self.group_size > crate::ternary::MAX_GROUP_SIZE {
            return Err(Error::config(format!(
                "group_size {} exceeds supported maximum {}",
                self.group_size,
                crate::ternary::MAX_GROUP_SIZE
            )));
        }
        Ok(())
    }

    pub fn softmax_scale(&self) -> f32 {
        1.0 / (self.head_dim as f32).sqrt()
    }
}

/// Weights of one transformer block.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub wq: PackedTernaryMatrix,
    pub wk: PackedTernaryMatrix,
    pub wv: PackedTernaryMatrix,
    pub wo: PackedTernaryMatrix,
    pub w_gate: PackedTernaryMatrix,
    pub w_up: PackedTernaryMatrix,
    pub w_down: PackedTernaryMatrix,
    pub attn_norm: NormParams,
    pub ffn_norm: NormParams,
}

/// A loaded model: embedding (fp32), transformer blocks, final norm, and
/// the LM-head projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    /// `[vocab_size x hidden_size]` row-major.
    pub embedding: Vec<f32>,
    pub layers: Vec<LayerWeights>,
    pub final_norm: NormParams,
    pub lm_head: PackedTernaryMatrix,
}

/// Payload of one named tensor in a weight record.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    Ternary(PackedTernaryMatrix),
    Int8 { data: Vec<i8>, scale: f32 },
    F32(Vec<f32>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    /// Logical (unpadded) shape.
    pub shape: Vec<u64>,
    pub data: TensorData,
}

/// What a weight file holds: the config plus a tensor directory.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelRecord {
    pub config: ModelConfig,
    pub tensors: Vec<NamedTensor>,
}

#[cfg(test)]
fn tensor_names(layers: usize) -> Vec<String> {
    let mut names = vec!["embedding.weight".to_string()];
    for l in 0..layers {
        for suffix in [
            "attn.wq", "attn.wk", "attn.wv", "attn.wo", "ffn.gate", "ffn.up", "ffn.down",
            "attn_norm.gamma", "ffn_norm.gamma",
        ] {
            names.push(format!("layers.{l}.{suffix}"));
        }
    }
    names.push("final_norm.gamma".to_string());
    names.push("lm_head".to_string());
    names
}

impl Model {
    /// Assemble a model from a record, validating names and shapes.
    pub fn from_record(record: ModelRecord) -> Result<Self> {
        let config = record.config.clone();
        config.validate()?;
        let n = config.hidden_size;
        let mut map: std::collections::HashMap<String, NamedTensor> = record
            .tensors
            .into_iter()
            .map(|t| (t.name.clone(), t))
            .collect();

        fn take_ternary(
            map: &mut std::collections::HashMap<String, NamedTensor>,
            name: &str,
            rows: usize,
            cols: usize,
        ) -> Result<PackedTernaryMatrix> {
            let t = map
                .remove(name)
                .ok_or_else(|| Error::config(format!("missing tensor {name}")))?;
            match t.data {
                TensorData::Ternary(p) => {
                    if p.source_rows() != rows || p.cols() != cols {
                        return Err(Error::shape(format!(
                            "{name}: expected [{rows}, {cols}], got [{}, {}]",
                            p.source_rows(),
                            p.cols()
                        )));
                    }
                    Ok(p)
                }
                _ => Err(Error::config(format!("{name} must be ternary-packed"))),
            }
        }

        fn take_f32(
            map: &mut std::collections::HashMap<String, NamedTensor>,
            name: &str,
            len: usize,
        ) -> Result<Vec<f32>> {
            let t = map
                .remove(name)
                .ok_or_else(|| Error::config(format!("missing tensor {name}")))?;
            match t.data {
                TensorData::F32(v) => {
                    if v.len() != len {
                        return Err(Error::shape(format!(
                            "{name}: expected {len} values, got {}",
                            v.len()
                        )));
                    }
                    Ok(v)
                }
                _ => Err(Error::config(format!("{name} must be fp32"))),
            }
        }

        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let wq = take_ternary(&mut map, &format!("layers.{l}.attn.wq"), n, n)?;
            let wk = take_ternary(&mut map, &format!("layers.{l}.attn.wk"), n, n)?;
            let wv = take_ternary(&mut map, &format!("layers.{l}.attn.wv"), n, n)?;
            let wo = take_ternary(&mut map, &format!("layers.{l}.attn.wo"), n, n)?;
            let w_gate = take_ternary(&mut map, &format!("layers.{l}.ffn.gate"), n, config.ffn_dim)?;
            let w_up = take_ternary(&mut map, &format!("layers.{l}.ffn.up"), n, config.ffn_dim)?;
            let w_down = take_ternary(&mut map, &format!("layers.{l}.ffn.down"), config.ffn_dim, n)?;
            layers.push((wq, wk, wv, wo, w_gate, w_up, w_down));
        }

        let embedding = take_f32(&mut map, "embedding.weight", config.vocab_size * n)?;
        let mut norm_layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let attn_gamma = take_f32(&mut map, &format!("layers.{l}.attn_norm.gamma"), n)?;
            let ffn_gamma = take_f32(&mut map, &format!("layers.{l}.ffn_norm.gamma"), n)?;
            norm_layers.push((
                NormParams::new(attn_gamma, RMS_EPSILON)?,
                NormParams::new(ffn_gamma, RMS_EPSILON)?,
            ));
        }
        let final_norm = NormParams::new(take_f32(&mut map, "final_norm.gamma", n)?, RMS_EPSILON)?;
        let lm_head = take_ternary(&mut map, "lm_head", n, config.vocab_size)?;

        if let Some(extra) = map.keys().next() {
            return Err(Error::config(format!("unexpected tensor {extra}")));
        }

        let layers = layers
            .into_iter()
            .zip(norm_layers)
            .map(
                |((wq, wk, wv, wo, w_gate, w_up, w_down), (attn_norm, ffn_norm))| LayerWeights {
                    wq,
                    wk,
                    wv,
                    wo,
                    w_gate,
                    w_up,
                    w_down,
                    attn_norm,
                    ffn_norm,
                },
            )
            .collect();

        Ok(Model {
            config,
            embedding,
            layers,
            final_norm,
            lm_head,
        })
    }

    /// Flatten back into the canonical tensor record.
    pub fn to_record(&self) -> ModelRecord {
        let n = self.config.hidden_size as u64;
        let mut tensors = Vec::new();
        tensors.push(NamedTensor {
            name: "embedding.weight".into(),
            shape: vec![self.config.vocab_size as u64, n],
            data: TensorData::F32(self.embedding.clone()),
        });
        for (l, layer) in self.layers.iter().enumerate() {
            let tern = |suffix: &str, p: &PackedTernaryMatrix| NamedTensor {
                name: format!("layers.{l}.{suffix}"),
                shape: vec![p.source_rows() as u64, p.cols() as u64],
                data: TensorData::Ternary(p.clone()),
            };
            tensors.push(tern("attn.wq", &layer.wq));
            tensors.push(tern("attn.wk", &layer.wk));
            tensors.push(tern("attn.wv", &layer.wv));
            tensors.push(tern("attn.wo", &layer.wo));
            tensors.push(tern("ffn.gate", &layer.w_gate));
            tensors.push(tern("ffn.up", &layer.w_up));
            tensors.push(tern("ffn.down", &layer.w_down));
            tensors.push(NamedTensor {
                name: format!("layers.{l}.attn_norm.gamma"),
                shape: vec![n],
                data: TensorData::F32(layer.attn_norm.gamma.clone()),
            });
            tensors.push(NamedTensor {
                name: format!("layers.{l}.ffn_norm.gamma"),
                shape: vec![n],
                data: TensorData::F32(layer.ffn_norm.gamma.clone()),
            });
        }
        tensors.push(NamedTensor {
            name: "final_norm.gamma".into(),
            shape: vec![n],
            data: TensorData::F32(self.final_norm.gamma.clone()),
        });
        tensors.push(NamedTensor {
            name: "lm_head".into(),
            shape: vec![n, self.config.vocab_size as u64],
            data: TensorData::Ternary(self.lm_head.clone()),
        });
        ModelRecord {
            config: self.config.clone(),
            tensors,
        }
    }
}

fn random_ternary(
    rng: &mut ChaCha8Rng,
    rows: usize,
    cols: usize,
    g: usize,
    t: usize,
) -> PackedTernaryMatrix {
    let trits: Vec<i8> = (0..rows * cols).map(|_| rng.random_range(-1i8..=1)).collect();
    let w = TernaryMatrix::new(rows, cols, trits).expect("trits in range");
    // 1/sqrt(rows) keeps projection outputs near unit variance.
    let scale = 1.0 / (rows as f32).sqrt();
    pack_matrix(&w, g, t, scale).expect("valid packing params")
}

fn random_gamma(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(0.9f32..1.1)).collect()
}

/// Deterministic random toy checkpoint: same seed, same bytes.
pub fn make_toy_record(seed: u64) -> ModelRecord {
    make_toy_record_with(seed, ModelConfig::toy())
}

/// Toy checkpoint with a caller-supplied configuration (used by tests that
/// vary layer count or dimensions).
pub fn make_toy_record_with(seed: u64, config: ModelConfig) -> ModelRecord {
    config.validate().expect("toy config must be valid");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = config.hidden_size;
    let (g, t) = (config.group_size, config.tables);

    let embedding: Vec<f32> = (0..config.vocab_size * n)
        .map(|_| rng.random_range(-1.0f32..1.0))
        .collect();

    let mut layers = Vec::with_capacity(config.layers);
    for _ in 0..config.layers {
        layers.push(LayerWeights {
            wq: random_ternary(&mut rng, n, n, g, t),
            wk: random_ternary(&mut rng, n, n, g, t),
            wv: random_ternary(&mut rng, n, n, g, t),
            wo: random_ternary(&mut rng, n, n, g, t),
            w_gate: random_ternary(&mut rng, n, config.ffn_dim, g, t),
            w_up: random_ternary(&mut rng, n, config.ffn_dim, g, t),
            w_down: random_ternary(&mut rng, config.ffn_dim, n, g, t),
            attn_norm: NormParams::new(random_gamma(&mut rng, n), RMS_EPSILON).unwrap(),
            ffn_norm: NormParams::new(random_gamma(&mut rng, n), RMS_EPSILON).unwrap(),
        });
    }
    let final_norm = NormParams::new(random_gamma(&mut rng, n), RMS_EPSILON).unwrap();
    let lm_head = random_ternary(&mut rng, n, config.vocab_size, g, t);

    Model {
        config,
        embedding,
        layers,
        final_norm,
        lm_head,
    }
    .to_record()
}
