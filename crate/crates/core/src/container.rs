//! The TELLME01 weight container.
//!
//! ```text
//! magic       8 bytes  "TELLME01"
//! version     u32 LE   (currently 1)
//! header_len  u64 LE
//! header_crc  u32 LE   crc32 of the header bytes
//! header:
//!   config     12 x u32 LE (hidden, layers, heads, head_dim, ffn, vocab,
//!                           capacity, group, tables, lookup_width,
//!                           parallelism, flags; flags bit 0 = tied embed)
//!   count      u32 LE
//!   per tensor: name_len u16 + utf8, dtype u8 (0 ternary, 1 int8, 2 fp32),
//!               ndim u8, dims u64 x ndim, payload_len u64,
//!               payload_offset u64 (from payload base), payload_crc u32
//! payloads, back to back
//! ```
//!
//! Every region is covered by a CRC32, so single-byte corruption anywhere is
//! detected before a tensor can be returned; magic and version are checked
//! before anything else is parsed. All integers little-endian. Group indices
//! are stored one byte each; in-memory repacking to the 5-bit addressing
//! width is the kernel's concern, not the container's.

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelRecord, NamedTensor, TensorData};
use crate::ternary::PackedTernaryMatrix;
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"TELLME01";
pub const VERSION: u32 = 1;

const DTYPE_TERNARY: u8 = 0;
const DTYPE_INT8: u8 = 1;
const DTYPE_F32: u8 = 2;

/// CRC-32 (IEEE 802.3, reflected polynomial 0xEDB88320).
pub fn crc32(data: &[u8]) -> u32 {
    let mut crc = 0xFFFF_FFFFu32;
    for &b in data {
        crc ^= b as u32;
        for _ in 0..8 {
            let mask = (crc & 1).wrapping_neg();
            crc = (crc >> 1) ^ (0xEDB8_8320 & mask);
        }
    }
    !crc
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Truncated(format!(
                "{what}: need {n} bytes at offset {}, file has {}",
                self.pos,
                self.data.len()
            )));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

fn push_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn config_fields(c: &ModelConfig) -> Result<[u32; 12]> {
    let to_u32 = |name: &str, v: usize| -> Result<u32> {
        u32::try_from(v).map_err(|_| Error::config(format!("{name} {v} exceeds u32")))
    };
    Ok([
        to_u32("hidden_size", c.hidden_size)?,
        to_u32("layers", c.layers)?,
        to_u32("heads", c.heads)?,
        to_u32("head_dim", c.head_dim)?,
        to_u32("ffn_dim", c.ffn_dim)?,
        to_u32("vocab_size", c.vocab_size)?,
        to_u32("capacity", c.capacity)?,
        to_u32("group_size", c.group_size)?,
        to_u32("tables", c.tables)?,
        to_u32("lookup_width", c.lookup_width)?,
        to_u32("parallelism", c.parallelism)?,
        if c.tied_embeddings { 1 } else { 0 },
    ])
}

fn encode_payload(t: &NamedTensor) -> (u8, Vec<u8>) {
    match &t.data {
        TensorData::Ternary(p) => {
            let mut buf = Vec::with_capacity(24 + p.indices().len());
            push_u32(&mut buf, p.group_size() as u32);
            push_u32(&mut buf, p.tables() as u32);
            push_u32(&mut buf, p.super_rows() as u32);
            push_u32(&mut buf, p.cols() as u32);
            push_u32(&mut buf, p.source_rows() as u32);
            buf.extend_from_slice(&p.scale().to_le_bytes());
            buf.extend_from_slice(p.indices());
            (DTYPE_TERNARY, buf)
        }
        TensorData::Int8 { data, scale } => {
            let mut buf = Vec::with_capacity(4 + data.len());
            buf.extend_from_slice(&scale.to_le_bytes());
            buf.extend(data.iter().map(|&v| v as u8));
            (DTYPE_INT8, buf)
        }
        TensorData::F32(values) => {
            let mut buf = Vec::with_capacity(4 * values.len());
            for v in values {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            (DTYPE_F32, buf)
        }
    }
}

/// Serialize a record to container bytes.
pub fn encode_weights(record: &ModelRecord) -> Result<Vec<u8>> {
    let mut header = Vec::new();
    for f in config_fields(&record.config)? {
        push_u32(&mut header, f);
    }
    push_u32(&mut header, record.tensors.len() as u32);

    let mut payloads = Vec::new();
    for t in &record.tensors {
        let name = t.name.as_bytes();
        if name.len() > u16::MAX as usize {
            return Err(Error::config(format!("tensor name too long: {}", t.name)));
        }
        header.extend_from_slice(&(name.len() as u16).to_le_bytes());
        header.extend_from_slice(name);
        let (dtype, payload) = encode_payload(t);
        header.push(dtype);
        header.push(t.shape.len() as u8);
        for &d in &t.shape {
            push_u64(&mut header, d);
        }
        push_u64(&mut header, payload.len() as u64);
        push_u64(&mut header, payloads.len() as u64);
        push_u32(&mut header, crc32(&payload));
        payloads.extend_from_slice(&payload);
    }

    let mut out = Vec::with_capacity(24 + header.len() + payloads.len());
    out.extend_from_slice(MAGIC);
    push_u32(&mut out, VERSION);
    push_u64(&mut out, header.len() as u64);
    push_u32(&mut out, crc32(&header));
    out.extend_from_slice(&header);
    out.extend_from_slice(&payloads);
    Ok(out)
}

/// Parse container bytes back into a record, verifying every checksum and
/// declared length before any tensor is surfaced.
pub fn decode_weights(data: &[u8]) -> Result<ModelRecord> {
    if data.len() < 8 || &data[..8] != MAGIC {
        return Err(Error::BadMagic);
    }
    let mut r = Reader::new(data);
    r.pos = 8;
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let header_len = r.u64("header length")? as usize;
    let header_crc = r.u32("header checksum")?;
    let header = r.take(header_len, "header")?;
    if crc32(header) != header_crc {
        return Err(Error::ChecksumMismatch("header".into()));
    }
    let payload_base = r.pos;

    let mut h = Reader::new(header);
    let mut fields = [0u32; 12];
    for f in &mut fields {
        *f = h.u32("config field")?;
    }
    let config = ModelConfig {
        hidden_size: fields[0] as usize,
        layers: fields[1] as usize,
        heads: fields[2] as usize,
        head_dim: fields[3] as usize,
        ffn_dim: fields[4] as usize,
        vocab_size: fields[5] as usize,
        capacity: fields[6] as usize,
        group_size: fields[7] as usize,
        tables: fields[8] as usize,
        lookup_width: fields[9] as usize,
        parallelism: fields[10] as usize,
        tied_embeddings: fields[11] & 1 == 1,
    };

    let count = h.u32("tensor count")? as usize;
    let mut tensors = Vec::with_capacity(count);
    let mut expected_end = 0u64;
    for i in 0..count {
        let name_len = h.u16("name length")? as usize;
        let name = String::from_utf8(h.take(name_len, "tensor name")?.to_vec())
            .map_err(|_| Error::Corrupt(format!("tensor {i}: name is not utf-8")))?;
        let dtype = h.u8("dtype")?;
        let ndim = h.u8("ndim")? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(h.u64("dim")?);
        }
        let payload_len = h.u64("payload length")? as usize;
        let payload_offset = h.u64("payload offset")? as usize;
        let payload_crc = h.u32("payload checksum")?;

        let start = payload_base
            .checked_add(payload_offset)
            .ok_or_else(|| Error::Corrupt(format!("{name}: payload offset overflow")))?;
        let end = start
            .checked_add(payload_len)
            .ok_or_else(|| Error::Corrupt(format!("{name}: payload length overflow")))?;
        if end > data.len() {
            return Err(Error::Truncated(format!(
                "{name}: payload runs past end of file"
            )));
        }
        let payload = &data[start..end];
        if crc32(payload) != payload_crc {
            return Err(Error::ChecksumMismatch(name));
        }
        expected_end = expected_end.max((payload_offset + payload_len) as u64);

        let data = decode_payload(&name, dtype, &shape, payload)?;
        tensors.push(NamedTensor { name, shape, data });
    }

    if payload_base as u64 + expected_end != data.len() as u64 {
        return Err(Error::Corrupt(format!(
            "file length {} != declared payload end {}",
            data.len(),
            payload_base as u64 + expected_end
        )));
    }
    Ok(ModelRecord { config, tensors })
}

fn decode_payload(name: &str, dtype: u8, shape: &[u64], payload: &[u8]) -> Result<TensorData> {
    let mut r = Reader::new(payload);
    match dtype {
        DTYPE_TERNARY => {
            let g = r.u32("group size")? as usize;
            let t = r.u32("tables")? as usize;
            let super_rows = r.u32("super rows")? as usize;
            let cols = r.u32("cols")? as usize;
            let source_rows = r.u32("source rows")? as usize;
            let scale = r.f32("scale")?;
            let want = super_rows
                .checked_mul(cols)
                .and_then(|v| v.checked_mul(t))
                .ok_or_else(|| Error::Corrupt(format!("{name}: index count overflow")))?;
            let indices = r.take(want, "indices")?.to_vec();
            if r.pos != payload.len() {
                return Err(Error::Corrupt(format!("{name}: trailing payload bytes")));
            }
            if shape != [source_rows as u64, cols as u64] {
                return Err(Error::Corrupt(format!(
                    "{name}: directory shape {shape:?} disagrees with payload [{source_rows}, {cols}]"
                )));
            }
            let p = PackedTernaryMatrix::from_parts(g, t, super_rows, cols, source_rows, scale, indices)
                .map_err(|e| Error::Corrupt(format!("{name}: {e}")))?;
            Ok(TensorData::Ternary(p))
        }
        DTYPE_INT8 => {
            let scale = r.f32("scale")?;
            let data: Vec<i8> = r
                .take(payload.len() - 4, "int8 data")?
                .iter()
                .map(|&b| b as i8)
                .collect();
            let want: u64 = shape.iter().product();
            if data.len() as u64 != want {
                return Err(Error::Corrupt(format!(
                    "{name}: {} int8 values but shape {shape:?} wants {want}",
                    data.len()
                )));
            }
            Ok(TensorData::Int8 { data, scale })
        }
        DTYPE_F32 => {
            if payload.len() % 4 != 0 {
                return Err(Error::Corrupt(format!("{name}: fp32 payload not 4-aligned")));
            }
            let values: Vec<f32> = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let want: u64 = shape.iter().product();
            if values.len() as u64 != want {
                return Err(Error::Corrupt(format!(
                    "{name}: {} fp32 values but shape {shape:?} wants {want}",
                    values.len()
                )));
            }
            Ok(TensorData::F32(values))
        }
        other => Err(Error::Corrupt(format!("{name}: unknown dtype tag {other}"))),
    }
}

/// Write a record to disk (single writer).
pub fn write_weights(path: impl AsRef<Path>, record: &ModelRecord) -> Result<()> {
    let bytes = encode_weights(record)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Read and fully validate a record from disk.
pub fn read_weights(path: impl AsRef<Path>) -> Result<ModelRecord> {
    let bytes = std::fs::read(path)?;
    decode_weights(&bytes)
}
