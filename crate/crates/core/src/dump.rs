//! JSON checkpoint dumps: the interchange format the `pack` tool reads.
//!
//! A dump carries the model config and named tensors as plain JSON numbers.
//! Tensors tagged `"ternary"` hold trit values (-1/0/+1, integer or float
//! spelling) plus a required weight `scale`, and are packed into grouped
//! indices with the group size / table count given at pack time. `"fp32"`
//! and `"int8"` tensors pass through.

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelRecord, NamedTensor, TensorData};
use crate::ternary::{pack_matrix, TernaryMatrix};
use serde::Deserialize;

#[derive(Debug, Deserialize)]
struct DumpFile {
    config: DumpConfig,
    tensors: Vec<DumpTensor>,
}

#[derive(Debug, Deserialize)]
struct DumpConfig {
    hidden_size: usize,
    layers: usize,
    heads: usize,
    head_dim: usize,
    ffn_dim: usize,
    vocab_size: usize,
    #[serde(default = "default_capacity")]
    capacity: usize,
    #[serde(default = "default_lookup_width")]
    lookup_width: usize,
    #[serde(default = "default_parallelism")]
    parallelism: usize,
    #[serde(default)]
    tied_embeddings: bool,
}

fn default_capacity() -> usize {
    1024
}

fn default_lookup_width() -> usize {
    16
}

fn default_parallelism() -> usize {
    4
}

#[derive(Debug, Deserialize)]
struct DumpTensor {
    name: String,
    kind: String,
    shape: Vec<u64>,
    values: Vec<f64>,
    #[serde(default)]
    scale: Option<f64>,
}

fn value_to_trit(name: &str, v: f64) -> Result<i8> {
    if v == -1.0 || v == 0.0 || v == 1.0 {
        Ok(v as i8)
    } else {
        Err(Error::config(format!(
            "{name}: ternary tensor holds non-trit value {v}"
        )))
    }
}

/// Parse a JSON dump and pack its ternary tensors with the given group size
/// and table count, producing a record ready for the binary container.
pub fn parse_dump(json: &str, group_size: usize, tables: usize) -> Result<ModelRecord> {
    let dump: DumpFile =
        serde_json::from_str(json).map_err(|e| Error::config(format!("bad dump json: {e}")))?;
    let config = ModelConfig {
        hidden_size: dump.config.hidden_size,
        layers: dump.config.layers,
        heads: dump.config.heads,
        head_dim: dump.config.head_dim,
        ffn_dim: dump.config.ffn_dim,
        vocab_size: dump.config.vocab_size,
        capacity: dump.config.capacity,
        group_size,
        tables,
        lookup_width: dump.config.lookup_width,
        parallelism: dump.config.parallelism,
        tied_embeddings: dump.config.tied_embeddings,
    };
    config.validate()?;

    let mut tensors = Vec::with_capacity(dump.tensors.len());
    for t in dump.tensors {
        let want: u64 = t.shape.iter().product();
        if t.values.len() as u64 != want {
            return Err(Error::shape(format!(
                "{}: {} values but shape {:?} wants {want}",
                t.name,
                t.values.len(),
                t.shape
            )));
        }
        let data = match t.kind.as_str() {
            "ternary" => {
                if t.shape.len() != 2 {
                    return Err(Error::shape(format!("{}: ternary tensors are 2-d", t.name)));
                }
                let trits = t
                    .values
                    .iter()
                    .map(|&v| value_to_trit(&t.name, v))
                    .collect::<Result<Vec<i8>>>()?;
                let w = TernaryMatrix::new(t.shape[0] as usize, t.shape[1] as usize, trits)?;
                let scale = t.scale.unwrap_or(1.0) as f32;
                TensorData::Ternary(pack_matrix(&w, group_size, tables, scale)?)
            }
            "int8" => {
                let data = t
                    .values
                    .iter()
                    .map(|&v| {
                        if v.fract() == 0.0 && (-127.0..=127.0).contains(&v) {
                            Ok(v as i8)
                        } else {
                            Err(Error::config(format!(
                                "{}: int8 tensor holds out-of-range value {v}",
                                t.name
                            )))
                        }
                    })
                    .collect::<Result<Vec<i8>>>()?;
                TensorData::Int8 {
                    data,
                    scale: t.scale.unwrap_or(1.0) as f32,
                }
            }
            "fp32" => TensorData::F32(t.values.iter().map(|&v| v as f32).collect()),
            other => {
                return Err(Error::config(format!(
                    "{}: unknown tensor kind {other:?}",
                    t.name
                )))
            }
        };
        tensors.push(NamedTensor {
            name: t.name,
            shape: t.shape,
            data,
        });
    }
    Ok(ModelRecord { config, tensors })
}
