//! Ternary weight matrices and their grouped base-3 index encoding.
//!
//! Weights live in {-1, 0, +1}. For the table-lookup kernel, every group of
//! `G` consecutive trits along the inner dimension is encoded into a single
//! base-3 index:
//!
//! ```text
//! index = (t0 + 1) + 3*(t1 + 1) + 9*(t2 + 1) + ...   (little-endian digits)
//! ```
//!
//! so for G = 3 there are 3^3 = 27 indices, addressable with 5 bits. Groups
//! are bundled `T` at a time into index vectors: the unit one lookup step of
//! the online kernel consumes. Indices are stored one byte each, which caps
//! the group size at 5 (3^5 = 243 fits a byte).

use crate::error::{Error, Result};

/// Largest supported group size: 3^5 = 243 still fits the one-byte index.
pub const MAX_GROUP_SIZE: usize = 5;

/// 3^g for small g.
#[inline]
pub fn pow3(g: usize) -> u32 {
    3u32.pow(g as u32)
}

/// Encode a group of trits into its base-3 index (trit 0 is the lowest digit).
///
/// The group size is the slice length; it must be in `1..=MAX_GROUP_SIZE`.
pub fn encode_group(trits: &[i8]) -> Result<u8> {
    let g = trits.len();
    if g == 0 || g > MAX_GROUP_SIZE {
        return Err(Error::config(format!(
            "group size {g} outside supported range 1..={MAX_GROUP_SIZE}"
        )));
    }
    let mut index = 0u32;
    let mut weight = 1u32;
    for &t in trits {
        if !(-1..=1).contains(&t) {
            return Err(Error::InvalidTrit(t));
        }
        index += (t + 1) as u32 * weight;
        weight *= 3;
    }
    Ok(index as u8)
}

/// Decode a base-3 group index back into its `g` trits.
pub fn decode_group(index: u8, g: usize) -> Result<Vec<i8>> {
    if g == 0 || g > MAX_GROUP_SIZE {
        return Err(Error::config(format!(
            "group size {g} outside supported range 1..={MAX_GROUP_SIZE}"
        )));
    }
    let limit = pow3(g);
    if (index as u32) >= limit {
        return Err(Error::IndexOutOfRange {
            index: index as u32,
            group_size: g,
            limit,
        });
    }
    let mut trits = Vec::with_capacity(g);
    let mut v = index as u32;
    for _ in 0..g {
        trits.push((v % 3) as i8 - 1);
        v /= 3;
    }
    Ok(trits)
}

/// A dense ternary weight matrix, row-major, `rows` = inner dimension N,
/// `cols` = output dimension K.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TernaryMatrix {
    rows: usize,
    cols: usize,
    values: Vec<i8>,
}

impl TernaryMatrix {
    /// Build from a flat row-major trit slice, validating every element.
    pub fn new(rows: usize, cols: usize, values: Vec<i8>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::shape(format!(
                "ternary matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        for &t in &values {
            if !(-1..=1).contains(&t) {
                return Err(Error::InvalidTrit(t));
            }
        }
        Ok(Self { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[i8] {
        &self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> i8 {
        self.values[row * self.cols + col]
    }
}

/// Offline-packed ternary weights: per (super-row, column), `T` consecutive
/// group indices covering `T*G` input rows are stored contiguously. That
/// T-byte run is the index vector one lookup step fetches.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedTernaryMatrix {
    group_size: usize,
    tables: usize,
    super_rows: usize,
    cols: usize,
    /// Rows of the matrix that was packed, before zero-padding.
    source_rows: usize,
    /// Per-tensor weight scale applied at dequantization.
    scale: f32,
    indices: Vec<u8>,
}

impl PackedTernaryMatrix {
    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn tables(&self) -> usize {
        self.tables
    }

    pub fn super_rows(&self) -> usize {
        self.super_rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn source_rows(&self) -> usize {
        self.source_rows
    }

    pub fn scale(&self) -> f32 {
        self.scale
    }

    pub fn indices(&self) -> &[u8] {
        &self.indices
    }

    /// Padded row count, always a multiple of `tables * group_size`.
    pub fn padded_rows(&self) -> usize {
        self.super_rows * self.tables * self.group_size
    }

    /// The index vector (T bytes) for a given super-row and output column.
    #[inline]
    pub fn idx_vec(&self, super_row: usize, col: usize) -> &[u8] {
        let start = (super_row * self.cols + col) * self.tables;
        &self.indices[start..start + self.tables]
    }

    /// Reassemble from raw parts (container reads). Validates the counts and
    /// that every index is in range for the group size.
    pub fn from_parts(
        group_size: usize,
        tables: usize,
        super_rows: usize,
        cols: usize,
        source_rows: usize,
        scale: f32,
        indices: Vec<u8>,
    ) -> Result<Self> {
        if group_size == 0 || group_size > MAX_GROUP_SIZE || tables == 0 {
            return Err(Error::config(format!(
                "invalid packing params G={group_size} T={tables}"
            )));
        }
        if indices.len() != super_rows * cols * tables {
            return Err(Error::shape(format!(
                "packed matrix needs {} indices, got {}",
                super_rows * cols * tables,
                indices.len()
            )));
        }
        if source_rows > super_rows * tables * group_size {
            return Err(Error::shape(format!(
                "source rows {source_rows} exceed padded capacity {}",
                super_rows * tables * group_size
            )));
        }
        if !scale.is_finite() {
            return Err(Error::Numeric(format!("weight scale {scale} not finite")));
        }
        let limit = pow3(group_size) as u8;
        for &idx in &indices {
            if idx >= limit {
                return Err(Error::IndexOutOfRange {
                    index: idx as u32,
                    group_size,
                    limit: limit as u32,
                });
            }
        }
        Ok(Self {
            group_size,
            tables,
            super_rows,
            cols,
            source_rows,
            scale,
            indices,
        })
    }
}

/// Pack a ternary matrix into grouped base-3 indices with a per-tensor scale.
///
/// Rows are zero-padded up to a multiple of `tables * group_size`; zero trits
/// decode to the middle index and contribute nothing downstream.
pub fn pack_matrix(
    w: &TernaryMatrix,
    group_size: usize,
    tables: usize,
    scale: f32,
) -> Result<PackedTernaryMatrix> {
    if group_size == 0 || group_size > MAX_GROUP_SIZE || tables == 0 {
        return Err(Error::config(format!(
            "invalid packing params G={group_size} T={tables}"
        )));
    }
    if !scale.is_finite() {
        return Err(Error::Numeric(format!("weight scale {scale} not finite")));
    }
    let block = tables * group_size;
    let super_rows = w.rows().div_ceil(block).max(1);
    let cols = w.cols();
    let mut indices = Vec::with_capacity(super_rows * cols * tables);
    let mut group = vec![0i8; group_size];
    for s in 0..super_rows {
        for k in 0..cols {
            for t in 0..tables {
                let base = s * block + t * group_size;
                for (i, slot) in group.iter_mut().enumerate() {
                    let r = base + i;
                    *slot = if r < w.rows() { w.get(r, k) } else { 0 };
                }
                indices.push(encode_group(&group)?);
            }
        }
    }
    Ok(PackedTernaryMatrix {
        group_size,
        tables,
        super_rows,
        cols,
        source_rows: w.rows(),
        scale,
        indices,
    })
}

/// Invert [`pack_matrix`], keeping only the first `original_rows` rows.
pub fn unpack_matrix(p: &PackedTernaryMatrix, original_rows: usize) -> Result<TernaryMatrix> {
    if original_rows > p.padded_rows() {
        return Err(Error::shape(format!(
            "requested {original_rows} rows but packed capacity is {}",
            p.padded_rows()
        )));
    }
    let g = p.group_size;
    let block = p.tables * g;
    let mut values = vec![0i8; original_rows * p.cols];
    for s in 0..p.super_rows {
        for k in 0..p.cols {
            let vec = p.idx_vec(s, k);
            for (t, &idx) in vec.iter().enumerate() {
                let trits = decode_group(idx, g)?;
                for (i, &trit) in trits.iter().enumerate() {
                    let r = s * block + t * g + i;
                    if r < original_rows {
                        values[r * p.cols + k] = trit;
                    }
                }
            }
        }
    }
    TernaryMatrix::new(original_rows, p.cols, values)
}
