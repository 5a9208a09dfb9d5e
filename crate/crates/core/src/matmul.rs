//! Table-lookup ternary matrix multiplication.
//!
//! The online kernel walks the activation row in blocks of `T*G` values. For
//! each block it builds `T` lookup tables of 3^G entries — every signed
//! combination of each table's G activations — then sweeps the output
//! columns: one index vector fetch per column returns `T` group indices that
//! address the tables, and the T selected entries accumulate into the output
//! slot. No multiplications anywhere in the hot loop.
//!
//! Three variants compute identical integer results:
//! - [`tl_matmul`]: the full 3^G-entry table kernel,
//! - [`naive_ternary_matmul`]: select-add over dense trits (the oracle),
//! - [`partial_table_matmul`]: half-size tables plus a sign derived from the
//!   index (mirror entries are negations of each other).

use crate::error::{Error, Result};
use crate::ternary::{pow3, PackedTernaryMatrix, TernaryMatrix};

/// Largest supported inner dimension. |acc| <= 127 * N keeps 32-bit
/// accumulators far from overflow up to this bound.
pub const MAX_INNER_DIM: usize = 1 << 16;

/// An int8 activation tensor with a per-tensor dequantization scale.
///
/// Values stay in the symmetric range [-127, 127]; -128 is excluded so
/// negation is closed under int8.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantTensor {
    rows: usize,
    cols: usize,
    data: Vec<i8>,
    scale: f32,
}

impl QuantTensor {
    pub fn new(rows: usize, cols: usize, data: Vec<i8>, scale: f32) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "quant tensor {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::Numeric(format!(
                "activation scale must be finite and positive, got {scale}"
            )));
        }
        for &v in &data {
            if v == i8::MIN {
                return Err(Error::ValueOutOfRange(v as i32));
            }
        }
        Ok(Self {
            rows,
            cols,
            data,
            scale,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn scale(&self) -> f32 {
        self.scale
    }

    pub fn data(&self) -> &[i8] {
        &self.data
    }

    pub fn row(&self, m: usize) -> &[i8] {
        &self.data[m * self.cols..(m + 1) * self.cols]
    }
}

/// The T lookup tables for one activation block, 3^G entries each.
///
/// Entry `[t][idx]` is the signed sum of table t's G activations selected by
/// the trits of `idx`. Entries fit i16 (|entry| <= 127 * G).
#[derive(Debug, Clone)]
pub struct TlTable {
    tables: usize,
    entries_per_table: usize,
    entries: Vec<i16>,
}

impl TlTable {
    pub fn tables(&self) -> usize {
        self.tables
    }

    pub fn entries_per_table(&self) -> usize {
        self.entries_per_table
    }

    #[inline]
    pub fn get(&self, table: usize, idx: u8) -> i16 {
        self.entries[table * self.entries_per_table + idx as usize]
    }
}

/// Build the T tables for one `T*G` activation block.
///
/// Each table is grown one digit at a time: appending activation `a` as the
/// next base-3 digit turns every existing entry `v` into the triple
/// `v - a, v, v + a` — exactly the adder/subtractor tree of the precompute
/// unit.
pub fn table_setup(block: &[i8], group_size: usize, tables: usize) -> Result<TlTable> {
    if block.len() != tables * group_size {
        return Err(Error::shape(format!(
            "activation block of {} values does not match T*G = {}",
            block.len(),
            tables * group_size
        )));
    }
    let entries_per_table = pow3(group_size) as usize;
    let mut entries = vec![0i16; tables * entries_per_table];
    for t in 0..tables {
        let out = &mut entries[t * entries_per_table..(t + 1) * entries_per_table];
        let mut len = 1usize; // out[0] = 0: the empty signed sum
        for i in 0..group_size {
            let a = block[t * group_size + i] as i16;
            for idx in 0..len {
                let v = out[idx];
                out[idx] = v - a;
                out[idx + len] = v;
                out[idx + 2 * len] = v + a;
            }
            len *= 3;
        }
    }
    Ok(TlTable {
        tables,
        entries_per_table,
        entries,
    })
}

fn check_dims(a: &QuantTensor, source_rows: usize, what: &str) -> Result<()> {
    if a.cols() != source_rows {
        return Err(Error::shape(format!(
            "{what}: activation cols {} != weight rows {source_rows}",
            a.cols()
        )));
    }
    if a.cols() > MAX_INNER_DIM {
        return Err(Error::shape(format!(
            "inner dimension {} exceeds accumulator-safe bound {MAX_INNER_DIM}",
            a.cols()
        )));
    }
    Ok(())
}

/// Table-lookup matmul, streaming output rows through `sink`.
///
/// `lookup_width` (the paper's Q) sets how many index vectors are consumed
/// per inner-loop step; it chunks the sweep over the K output columns and
/// never changes results. Only one K-length accumulator and one table set
/// are live at a time, so peak intermediate memory is O(T*3^G + K)
/// regardless of the token count.
pub fn tl_matmul_streamed(
    a: &QuantTensor,
    w: &PackedTernaryMatrix,
    lookup_width: usize,
    mut sink: impl FnMut(usize, &[i32]) -> Result<()>,
) -> Result<()> {
    check_dims(a, w.source_rows(), "tl_matmul")?;
    if lookup_width == 0 {
        return Err(Error::config("lookup width Q must be >= 1"));
    }
    let g = w.group_size();
    let t_tables = w.tables();
    let block = t_tables * g;
    let k_cols = w.cols();

    let mut acc = vec![0i32; k_cols];
    let mut a_block = vec![0i8; block];
    for m in 0..a.rows() {
        acc.fill(0);
        let row = a.row(m);
        for (s, chunk) in row.chunks(block).enumerate() {
            // Trailing partial block: pad with zeros, matching the packed
            // zero trits that cover the same rows.
            a_block[..chunk.len()].copy_from_slice(chunk);
            a_block[chunk.len()..].fill(0);
            let table = table_setup(&a_block, g, t_tables)?;
            for k0 in (0..k_cols).step_by(lookup_width) {
                let hi = (k0 + lookup_width).min(k_cols);
                for k in k0..hi {
                    let idx_vec = w.idx_vec(s, k);
                    let mut sum = 0i32;
                    for (t, &idx) in idx_vec.iter().enumerate() {
                        sum += table.get(t, idx) as i32;
                    }
                    acc[k] += sum;
                }
            }
        }
        sink(m, &acc)?;
    }
    Ok(())
}

/// [`tl_matmul_streamed`] collected into a row-major accumulator matrix.
pub fn tl_matmul(
    a: &QuantTensor,
    w: &PackedTernaryMatrix,
    lookup_width: usize,
) -> Result<Vec<Vec<i32>>> {
    let mut out = Vec::with_capacity(a.rows());
    tl_matmul_streamed(a, w, lookup_width, |_, row| {
        out.push(row.to_vec());
        Ok(())
    })?;
    Ok(out)
}

/// Select-add baseline over dense trits: the exactness oracle for the
/// table kernels.
pub fn naive_ternary_matmul(a: &QuantTensor, w: &TernaryMatrix) -> Result<Vec<Vec<i32>>> {
    check_dims(a, w.rows(), "naive_ternary_matmul")?;
    let mut out = Vec::with_capacity(a.rows());
    for m in 0..a.rows() {
        let row = a.row(m);
        let mut acc = vec![0i32; w.cols()];
        for (n, &av) in row.iter().enumerate() {
            let a32 = av as i32;
            for k in 0..w.cols() {
                match w.get(n, k) {
                    1 => acc[k] += a32,
                    -1 => acc[k] -= a32,
                    _ => {}
                }
            }
        }
        out.push(acc);
    }
    Ok(out)
}

/// Half-size-table variant: only indices up to the all-zero midpoint are
/// stored; a mirror index `3^G - 1 - idx` selects the same entry negated,
/// since complementing every base-3 digit negates every trit.
pub fn partial_table_matmul(
    a: &QuantTensor,
    w: &PackedTernaryMatrix,
) -> Result<Vec<Vec<i32>>> {
    check_dims(a, w.source_rows(), "partial_table_matmul")?;
    let g = w.group_size();
    let t_tables = w.tables();
    let block = t_tables * g;
    let k_cols = w.cols();
    let full = pow3(g) as usize;
    let mid = (full - 1) / 2; // the all-zero index; its stored entry is 0

    let mut out = Vec::with_capacity(a.rows());
    let mut a_block = vec![0i8; block];
    let mut half = vec![0i16; t_tables * (mid + 1)];
    for m in 0..a.rows() {
        let mut acc = vec![0i32; k_cols];
        let row = a.row(m);
        for (s, chunk) in row.chunks(block).enumerate() {
            a_block[..chunk.len()].copy_from_slice(chunk);
            a_block[chunk.len()..].fill(0);
            let table = table_setup(&a_block, g, t_tables)?;
            for t in 0..t_tables {
                for idx in 0..=mid {
                    half[t * (mid + 1) + idx] = table.get(t, idx as u8);
                }
            }
            for k in 0..k_cols {
                let idx_vec = w.idx_vec(s, k);
                let mut sum = 0i32;
                for (t, &idx) in idx_vec.iter().enumerate() {
                    let idx = idx as usize;
                    let v = if idx <= mid {
                        half[t * (mid + 1) + idx] as i32
                    } else {
                        -(half[t * (mid + 1) + (full - 1 - idx)] as i32)
                    };
                    sum += v;
                }
                acc[k] += sum;
            }
        }
        out.push(acc);
    }
    Ok(out)
}

/// Fused dequantization of an accumulator row: `out[k] = acc[k] * a_scale * w_scale`.
pub fn dequantize_output(acc: &[i32], a_scale: f32, w_scale: f32) -> Result<Vec<f32>> {
    let mut out = vec![0.0f32; acc.len()];
    dequantize_output_into(acc, a_scale, w_scale, Activation::None, &mut out)?;
    Ok(out)
}

/// Elementwise hook applied inside the dequantization loop, so activations
/// like SiLU cost no extra pass and no intermediate tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    None,
    Silu,
}

/// Dequantize into a caller-provided buffer, optionally applying the fused
/// activation in the same loop.
pub fn dequantize_output_into(
    acc: &[i32],
    a_scale: f32,
    w_scale: f32,
    act: Activation,
    out: &mut [f32],
) -> Result<()> {
    if !a_scale.is_finite() || !w_scale.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite dequantization scale: a_scale={a_scale} w_scale={w_scale}"
        )));
    }
    if out.len() != acc.len() {
        return Err(Error::shape(format!(
            "dequant output length {} != accumulator length {}",
            out.len(),
            acc.len()
        )));
    }
    let s = a_scale * w_scale;
    match act {
        Activation::None => {
            for (o, &v) in out.iter_mut().zip(acc) {
                *o = v as f32 * s;
            }
        }
        Activation::Silu => {
            for (o, &v) in out.iter_mut().zip(acc) {
                let x = v as f32 * s;
                *o = crate::fused::silu(x);
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ternary::pack_matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_instance(
        rng: &mut ChaCha8Rng,
        m: usize,
        n: usize,
        k: usize,
        lo: i8,
        hi: i8,
    ) -> (QuantTensor, TernaryMatrix) {
        let data: Vec<i8> = (0..m * n).map(|_| rng.random_range(lo..=hi)).collect();
        let a = QuantTensor::new(m, n, data, 1.0).unwrap();
        let trits: Vec<i8> = (0..n * k).map(|_| rng.random_range(-1i8..=1)).collect();
        let w = TernaryMatrix::new(n, k, trits).unwrap();
        (a, w)
    }

    #[test]
    fn table_entries_match_enumerated_signed_sums() {
        // G=2, T=1, block [3, 5]: all nine signed combinations.
        let table = table_setup(&[3, 5], 2, 1).unwrap();
        assert_eq!(table.get(0, 0), -8); // [-1,-1]
        assert_eq!(table.get(0, 4), 0); // [0,0]
        assert_eq!(table.get(0, 8), 8); // [+1,+1]
        assert_eq!(table.get(0, 2), -2); // [+1,-1] -> 3 - 5
        for idx in 0..9u8 {
            let trits = crate::ternary::decode_group(idx, 2).unwrap();
            let expect = trits[0] as i16 * 3 + trits[1] as i16 * 5;
            assert_eq!(table.get(0, idx), expect);
        }
    }

    #[test]
    fn table_zero_index_is_zero() {
        let table = table_setup(&[17, -4, 99], 3, 1).unwrap();
        assert_eq!(table.get(0, 13), 0);
    }

    #[test]
    fn table_single_trit_selection() {
        let table = table_setup(&[1, 0, 0], 3, 1).unwrap();
        assert_eq!(table.get(0, 14), 1); // encode([1,0,0]) = 14
    }

    #[test]
    fn table_oracle_random_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let g = rng.random_range(1usize..=4);
            let t = rng.random_range(1usize..=8);
            let block: Vec<i8> = (0..t * g).map(|_| rng.random_range(-127i8..=127)).collect();
            let table = table_setup(&block, g, t).unwrap();
            for ti in 0..t {
                for idx in 0..pow3(g) as u8 {
                    let trits = crate::ternary::decode_group(idx, g).unwrap();
                    let expect: i16 = trits
                        .iter()
                        .enumerate()
                        .map(|(i, &tr)| tr as i16 * block[ti * g + i] as i16)
                        .sum();
                    assert_eq!(table.get(ti, idx), expect);
                }
            }
        }
    }

    #[test]
    fn hand_summed_column() {
        let a = QuantTensor::new(1, 3, vec![1, 2, 3], 1.0).unwrap();
        let w = TernaryMatrix::new(3, 1, vec![1, 1, 1]).unwrap();
        let p = pack_matrix(&w, 3, 1, 1.0).unwrap();
        assert_eq!(tl_matmul(&a, &p, 1).unwrap(), vec![vec![6]]);
        assert_eq!(naive_ternary_matmul(&a, &w).unwrap(), vec![vec![6]]);
    }

    #[test]
    fn zero_weights_zero_output() {
        let a = QuantTensor::new(2, 7, vec![9; 14], 1.0).unwrap();
        let w = TernaryMatrix::zeros(7, 5);
        let p = pack_matrix(&w, 3, 2, 1.0).unwrap();
        for row in tl_matmul(&a, &p, 4).unwrap() {
            assert!(row.iter().all(|&v| v == 0));
        }
    }

    #[test]
    fn naive_identity_column_copies_activation() {
        let a = QuantTensor::new(1, 4, vec![10, -3, 7, 2], 1.0).unwrap();
        let w = TernaryMatrix::new(4, 1, vec![0, 0, 1, 0]).unwrap();
        assert_eq!(naive_ternary_matmul(&a, &w).unwrap(), vec![vec![7]]);
    }

    #[test]
    fn naive_single_negative_weight() {
        // -1 at (n=1, k=1): output[1] = -a[0][1] = 3.
        let a = QuantTensor::new(1, 4, vec![10, -3, 7, 2], 1.0).unwrap();
        let w = TernaryMatrix::new(4, 2, vec![0, 0, 0, -1, 0, 0, 0, 0]).unwrap();
        assert_eq!(naive_ternary_matmul(&a, &w).unwrap(), vec![vec![0, 3]]);
        // -1 at (n=0, k=0): output[0] = -a[0][0] = -10.
        let w2 = TernaryMatrix::new(4, 2, vec![-1, 0, 0, 0, 0, 0, 0, 0]).unwrap();
        assert_eq!(naive_ternary_matmul(&a, &w2).unwrap(), vec![vec![-10, 0]]);
    }

    #[test]
    fn variants_agree_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for i in 0..200 {
            let m = rng.random_range(1usize..=8);
            let n = rng.random_range(1usize..=96);
            let k = rng.random_range(1usize..=64);
            let (a, w) = random_instance(&mut rng, m, n, k, -127, 127);
            let (g, t) = [(2usize, 4usize), (3, 32), (4, 8), (1, 3)][i % 4];
            let q = [1usize, 3, 16][i % 3];
            let p = pack_matrix(&w, g, t, 1.0).unwrap();
            let expect = naive_ternary_matmul(&a, &w).unwrap();
            assert_eq!(tl_matmul(&a, &p, q).unwrap(), expect, "tl i={i}");
            assert_eq!(partial_table_matmul(&a, &p).unwrap(), expect, "partial i={i}");
        }
    }

    #[test]
    fn mirror_indices_negate_table_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let block: Vec<i8> = (0..3).map(|_| rng.random_range(-50i8..=50)).collect();
        let table = table_setup(&block, 3, 1).unwrap();
        for idx in 0..27u8 {
            assert_eq!(table.get(0, idx), -table.get(0, 26 - idx));
        }
    }

    #[test]
    fn padding_contributes_nothing() {
        // N = 7 with T*G = 6 forces a padded second super-row.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (a, w) = random_instance(&mut rng, 3, 7, 4, -127, 127);
        let p = pack_matrix(&w, 3, 2, 1.0).unwrap();
        assert_eq!(p.padded_rows(), 12);
        assert_eq!(
            tl_matmul(&a, &p, 2).unwrap(),
            naive_ternary_matmul(&a, &w).unwrap()
        );
    }

    #[test]
    fn linearity_without_saturation() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 40;
        let k = 9;
        let trits: Vec<i8> = (0..n * k).map(|_| rng.random_range(-1i8..=1)).collect();
        let w = TernaryMatrix::new(n, k, trits).unwrap();
        let p = pack_matrix(&w, 3, 4, 1.0).unwrap();
        let d1: Vec<i8> = (0..n).map(|_| rng.random_range(-40i8..=40)).collect();
        let d2: Vec<i8> = (0..n).map(|_| rng.random_range(-40i8..=40)).collect();
        let sum: Vec<i8> = d1.iter().zip(&d2).map(|(&x, &y)| x + y).collect();
        let r1 = tl_matmul(&QuantTensor::new(1, n, d1, 1.0).unwrap(), &p, 4).unwrap();
        let r2 = tl_matmul(&QuantTensor::new(1, n, d2, 1.0).unwrap(), &p, 4).unwrap();
        let rs = tl_matmul(&QuantTensor::new(1, n, sum, 1.0).unwrap(), &p, 4).unwrap();
        for kk in 0..k {
            assert_eq!(rs[0][kk], r1[0][kk] + r2[0][kk]);
        }
    }

    #[test]
    fn accumulator_extremes_do_not_overflow() {
        // All +/-1 weights against +/-127 activations at a large-ish N.
        let n = 2048;
        let a = QuantTensor::new(1, n, vec![127; n], 1.0).unwrap();
        let w = TernaryMatrix::new(n, 2, [1i8, -1].repeat(n)).unwrap();
        let p = pack_matrix(&w, 3, 32, 1.0).unwrap();
        let out = tl_matmul(&a, &p, 16).unwrap();
        assert_eq!(out[0][0], 127 * n as i32);
        assert_eq!(out[0][1], -127 * n as i32);
    }

    #[test]
    fn streamed_sink_reuses_one_buffer() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (a, w) = random_instance(&mut rng, 4, 12, 6, -10, 10);
        let p = pack_matrix(&w, 3, 2, 1.0).unwrap();
        let mut ptrs = Vec::new();
        tl_matmul_streamed(&a, &p, 2, |_, row| {
            ptrs.push(row.as_ptr() as usize);
            Ok(())
        })
        .unwrap();
        assert_eq!(ptrs.len(), 4);
        assert!(ptrs.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = QuantTensor::new(1, 5, vec![1; 5], 1.0).unwrap();
        let w = TernaryMatrix::zeros(6, 2);
        let p = pack_matrix(&w, 3, 1, 1.0).unwrap();
        assert!(tl_matmul(&a, &p, 1).is_err());
        assert!(naive_ternary_matmul(&a, &w).is_err());
        assert!(partial_table_matmul(&a, &p).is_err());
    }

    #[test]
    fn quant_tensor_rejects_min_int8() {
        assert!(QuantTensor::new(1, 1, vec![-128], 1.0).is_err());
        assert!(QuantTensor::new(1, 1, vec![-127], 1.0).is_ok());
    }

    #[test]
    fn dequantize_scales_cancel() {
        let out = dequantize_output(&[6], 0.5, 2.0).unwrap();
        assert_eq!(out, vec![6.0]);
        let zeros = dequantize_output(&[0, 0, 0], 0.123, 9.0).unwrap();
        assert!(zeros.iter().all(|&v| v == 0.0));
        assert!(dequantize_output(&[1], f32::NAN, 1.0).is_err());
        assert!(dequantize_output(&[1], 1.0, f32::INFINITY).is_err());
    }
}
