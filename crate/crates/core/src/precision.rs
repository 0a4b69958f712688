//! Precision schemes for the H-matrix payloads.
//!
//! * Method 1 keeps the `V W` factors and casts whole blocks.
//! * Method 2 rewrites each low-rank block as `V' D W'` where every column of
//!   `V'` and row of `W'` has max-abs 1 and the diagonal `D` stays FP64.
//! * Method 3 additionally splits the `V'`/`W'` columns/rows by how far
//!   `d_i` sits below the block's largest `d`: those more than `10^c` below
//!   are stored in FP32, the rest in FP64.
//!
//! Dense blocks, vectors and the accumulated result follow the per-scheme
//! storage table returned by [`PrecisionScheme::storage_table`].

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compress::{BlockPayload, HMatrix, LowRankBlock};
use crate::error::{HmxError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// FP64 matrix, FP64 source.
    Double,
    /// FP32 matrix, FP32 source.
    Single,
    /// FP32 matrix, FP64 source.
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PrecisionScheme {
    Method1(Variant),
    Method2(Variant),
    /// Exponent-distance split with parameter `c`.
    Method3 { c: i32 },
}

impl PrecisionScheme {
    pub const BASELINE: PrecisionScheme = PrecisionScheme::Method1(Variant::Double);

    /// Every Method 1/2 scheme in canonical order.
    pub fn fixed() -> [PrecisionScheme; 6] {
        use Variant::*;
        [
            PrecisionScheme::Method1(Double),
            PrecisionScheme::Method1(Single),
            PrecisionScheme::Method1(Mixed),
            PrecisionScheme::Method2(Double),
            PrecisionScheme::Method2(Single),
            PrecisionScheme::Method2(Mixed),
        ]
    }

    pub fn method(&self) -> u8 {
        match self {
            PrecisionScheme::Method1(_) => 1,
            PrecisionScheme::Method2(_) => 2,
            PrecisionScheme::Method3 { .. } => 3,
        }
    }

    /// Whether the source vector is read as an FP32 shadow copy.
    pub fn fp32_source(&self) -> bool {
        matches!(
            self,
            PrecisionScheme::Method1(Variant::Single) | PrecisionScheme::Method2(Variant::Single)
        )
    }

    /// Whether any matrix payload is stored in FP32 under this scheme.
    pub fn uses_fp32(&self) -> bool {
        !matches!(
            self,
            PrecisionScheme::Method1(Variant::Double) | PrecisionScheme::Method2(Variant::Double)
        )
    }

    /// Storage precision of every quantity touched by the multiply.
    pub fn storage_table(&self) -> StorageTable {
        use Storage::*;
        match *self {
            PrecisionScheme::Method1(v) => {
                let (a, x, lr) = match v {
                    Variant::Double => (Fp64, Fp64, Fp64),
                    Variant::Single => (Fp32, Fp32, Fp32),
                    Variant::Mixed => (Fp32, Fp64, Fp32),
                };
                StorageTable {
                    dense_yhat: Fp64,
                    dense_matrix: a,
                    dense_source: x,
                    lowrank_z: lr,
                    lowrank_w: a,
                    lowrank_source: x,
                    lowrank_d: Absent,
                    lowrank_yhat: Fp64,
                    lowrank_v: a,
                    result: Fp64,
                }
            }
            PrecisionScheme::Method2(v) => {
                let (a, x) = match v {
                    Variant::Double => (Fp64, Fp64),
                    Variant::Single => (Fp32, Fp32),
                    Variant::Mixed => (Fp32, Fp64),
                };
                StorageTable {
                    dense_yhat: Fp64,
                    dense_matrix: a,
                    dense_source: x,
                    lowrank_z: Fp64,
                    lowrank_w: a,
                    lowrank_source: x,
                    lowrank_d: Fp64,
                    lowrank_yhat: Fp64,
                    lowrank_v: a,
                    result: Fp64,
                }
            }
            PrecisionScheme::Method3 { .. } => StorageTable {
                dense_yhat: Fp64,
                dense_matrix: Fp64,
                dense_source: Fp64,
                lowrank_z: Fp64,
                lowrank_w: Split,
                lowrank_source: Fp64,
                lowrank_d: Fp64,
                lowrank_yhat: Fp64,
                lowrank_v: Split,
                result: Fp64,
            },
        }
    }
}

impl fmt::Display for PrecisionScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let variant = |v: &Variant| match v {
            Variant::Double => "double",
            Variant::Single => "single",
            Variant::Mixed => "mixed",
        };
        match self {
            PrecisionScheme::Method1(v) => write!(f, "m1-{}", variant(v)),
            PrecisionScheme::Method2(v) => write!(f, "m2-{}", variant(v)),
            PrecisionScheme::Method3 { c } => write!(f, "m3:c={c}"),
        }
    }
}

impl FromStr for PrecisionScheme {
    type Err = HmxError;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        if let Some(c) = lower.strip_prefix("m3:c=") {
            return c
                .parse()
                .map(|c| PrecisionScheme::Method3 { c })
                .map_err(|_| HmxError::UnknownScheme(s.to_string()));
        }
        let (method, variant) = lower
            .split_once('-')
            .ok_or_else(|| HmxError::UnknownScheme(s.to_string()))?;
        let variant = match variant {
            "double" => Variant::Double,
            "single" => Variant::Single,
            "mixed" => Variant::Mixed,
            _ => return Err(HmxError::UnknownScheme(s.to_string())),
        };
        match method {
            "m1" => Ok(PrecisionScheme::Method1(variant)),
            "m2" => Ok(PrecisionScheme::Method2(variant)),
            _ => Err(HmxError::UnknownScheme(s.to_string())),
        }
    }
}

impl Serialize for PrecisionScheme {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PrecisionScheme {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Storage {
    Fp64,
    Fp32,
    /// Partly FP64, partly FP32 (Method 3 factors).
    Split,
    /// Not part of the scheme.
    Absent,
}

/// Storage precision per quantity of the blockwise multiply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StorageTable {
    pub dense_yhat: Storage,
    pub dense_matrix: Storage,
    pub dense_source: Storage,
    pub lowrank_z: Storage,
    pub lowrank_w: Storage,
    pub lowrank_source: Storage,
    pub lowrank_d: Storage,
    pub lowrank_yhat: Storage,
    pub lowrank_v: Storage,
    pub result: Storage,
}

/// `V' D W'` form of a low-rank block. `vp` is column-major like
/// [`LowRankBlock::v`], `wp` row-major like [`LowRankBlock::w`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledLowRank {
    pub rows: usize,
    pub cols: usize,
    pub rank: usize,
    pub vp: Vec<f64>,
    pub wp: Vec<f64>,
    pub d: Vec<f64>,
}

impl ScaledLowRank {
    pub fn vp_col(&self, k: usize) -> &[f64] {
        &self.vp[k * self.rows..(k + 1) * self.rows]
    }

    pub fn wp_row(&self, k: usize) -> &[f64] {
        &self.wp[k * self.cols..(k + 1) * self.cols]
    }

    /// Row-major expansion of `V' D W'`.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.rows * self.cols];
        for k in 0..self.rank {
            let (vk, wk, dk) = (self.vp_col(k), self.wp_row(k), self.d[k]);
            for (i, &vi) in vk.iter().enumerate() {
                let s = vi * dk;
                for (o, &wj) in out[i * self.cols..(i + 1) * self.cols].iter_mut().zip(wk) {
                    *o += s * wj;
                }
            }
        }
        out
    }
}

fn max_abs(values: &[f64]) -> f64 {
    values.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Normalizes every column of `V` and row of `W` to max-abs 1, collecting the
/// scales in `D = D_V D_W`. A zero column or row gets `d = 0` and zero factors.
pub fn scale_decompose(block: &LowRankBlock) -> ScaledLowRank {
    let (rows, cols, rank) = (block.rows, block.cols, block.rank);
    let mut vp = Vec::with_capacity(rows * rank);
    let mut wp = Vec::with_capacity(cols * rank);
    let mut d = Vec::with_capacity(rank);
    for k in 0..rank {
        let (v, w) = (block.v_col(k), block.w_row(k));
        let (sv, sw) = (max_abs(v), max_abs(w));
        if sv == 0.0 || sw == 0.0 {
            vp.extend(std::iter::repeat_n(0.0, rows));
            wp.extend(std::iter::repeat_n(0.0, cols));
            d.push(0.0);
        } else {
            vp.extend(v.iter().map(|x| x / sv));
            wp.extend(w.iter().map(|x| x / sw));
            d.push(sv * sw);
        }
    }
    ScaledLowRank { rows, cols, rank, vp, wp, d }
}

/// Classifies rank indices: `d_i < max(d) · 10^(-c)` goes to FP32, the rest
/// to FP64. Returns `(fp64, fp32)` index lists in ascending order.
pub fn split_indices(d: &[f64], c: i32) -> (Vec<usize>, Vec<usize>) {
    let d_max = d.iter().fold(0.0f64, |m, &x| m.max(x));
    let threshold = d_max * 10f64.powi(-c);
    let (fp32, fp64): (Vec<usize>, Vec<usize>) = (0..d.len()).partition(|&i| d[i] < threshold);
    (fp64, fp32)
}

/// Method 3 block: the FP64 class and the FP32 class stored as two
/// contiguous low-rank groups, each with its own slice of `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitLowRank {
    pub rows: usize,
    pub cols: usize,
    pub fp64_indices: Vec<usize>,
    pub fp32_indices: Vec<usize>,
    pub d64: Vec<f64>,
    pub vp64: Vec<f64>,
    pub wp64: Vec<f64>,
    pub d32: Vec<f64>,
    pub vp32: Vec<f32>,
    pub wp32: Vec<f32>,
}

impl SplitLowRank {
    pub fn rank(&self) -> usize {
        self.d64.len() + self.d32.len()
    }
}

/// Per-block payload actually read by the multiply under a scheme.
#[derive(Debug, Clone, PartialEq)]
pub enum SchemeBlock {
    /// FP64 dense master.
    Dense64,
    Dense32(Vec<f32>),
    /// FP64 `V W` master.
    LowRank64,
    LowRank32 { v: Vec<f32>, w: Vec<f32> },
    Scaled64(ScaledLowRank),
    Scaled32 {
        scaled: ScaledLowRank,
        vp: Vec<f32>,
        wp: Vec<f32>,
    },
    Split(SplitLowRank),
}

/// Counters collected while preparing a scheme.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PrepareReport {
    pub cast_values: u64,
    /// Nonzero FP64 values that became subnormal or zero in FP32.
    pub fp32_underflows: u64,
    pub fp32_rank: u64,
    pub fp64_rank: u64,
}

/// An FP64 H-matrix together with the payloads one scheme multiplies with.
#[derive(Debug, Clone)]
pub struct SchemeHMatrix<'h> {
    master: &'h HMatrix,
    scheme: PrecisionScheme,
    blocks: Vec<SchemeBlock>,
    report: PrepareReport,
    schedule: Vec<usize>,
}

impl<'h> SchemeHMatrix<'h> {
    pub fn master(&self) -> &'h HMatrix {
        self.master
    }

    pub fn scheme(&self) -> PrecisionScheme {
        self.scheme
    }

    pub fn n(&self) -> usize {
        self.master.n()
    }

    pub fn blocks(&self) -> &[SchemeBlock] {
        &self.blocks
    }

    pub fn report(&self) -> &PrepareReport {
        &self.report
    }

    /// Block indices sorted by descending work estimate, ties by index.
    pub fn schedule(&self) -> &[usize] {
        &self.schedule
    }

    /// Matrix bytes read during one multiply.
    pub fn payload_bytes(&self) -> u64 {
        self.master
            .payloads()
            .iter()
            .zip(&self.blocks)
            .map(|(master, block)| {
                let (rows, cols, rank) = match master {
                    BlockPayload::Dense(d) => (d.rows, d.cols, 0),
                    BlockPayload::LowRank(l) => (l.rows, l.cols, l.rank),
                };
                let factors = (rank * (rows + cols)) as u64;
                match block {
                    SchemeBlock::Dense64 => 8 * (rows * cols) as u64,
                    SchemeBlock::Dense32(_) => 4 * (rows * cols) as u64,
                    SchemeBlock::LowRank64 => 8 * factors,
                    SchemeBlock::LowRank32 { .. } => 4 * factors,
                    SchemeBlock::Scaled64(_) => 8 * factors + 8 * rank as u64,
                    SchemeBlock::Scaled32 { .. } => 4 * factors + 8 * rank as u64,
                    SchemeBlock::Split(s) => {
                        let span = (rows + cols) as u64;
                        8 * s.d64.len() as u64 * span
                            + 4 * s.d32.len() as u64 * span
                            + 8 * s.rank() as u64
                    }
                }
            })
            .sum()
    }
}

pub fn payload_bytes(sh: &SchemeHMatrix<'_>) -> u64 {
    sh.payload_bytes()
}

struct Cast {
    values: Vec<f32>,
    underflows: u64,
}

fn cast_f32(values: &[f64], block: usize) -> Result<Cast> {
    let limit = f32::MAX as f64;
    let mut underflows = 0;
    let mut out = Vec::with_capacity(values.len());
    for &x in values {
        if x.abs() > limit {
            return Err(HmxError::Fp32Overflow { block, value: x });
        }
        let y = x as f32;
        if x != 0.0 && !y.is_normal() {
            underflows += 1;
        }
        out.push(y);
    }
    Ok(Cast { values: out, underflows })
}

fn split_block(scaled: &ScaledLowRank, c: i32, block: usize) -> Result<(SplitLowRank, u64)> {
    let (fp64_indices, fp32_indices) = split_indices(&scaled.d, c);
    let gather = |idx: &[usize]| {
        let d: Vec<f64> = idx.iter().map(|&k| scaled.d[k]).collect();
        let vp: Vec<f64> = idx.iter().flat_map(|&k| scaled.vp_col(k).iter().copied()).collect();
        let wp: Vec<f64> = idx.iter().flat_map(|&k| scaled.wp_row(k).iter().copied()).collect();
        (d, vp, wp)
    };
    let (d64, vp64, wp64) = gather(&fp64_indices);
    let (d32, vp_low, wp_low) = gather(&fp32_indices);
    let vp32 = cast_f32(&vp_low, block)?;
    let wp32 = cast_f32(&wp_low, block)?;
    Ok((
        SplitLowRank {
            rows: scaled.rows,
            cols: scaled.cols,
            fp64_indices,
            fp32_indices,
            d64,
            vp64,
            wp64,
            d32,
            vp32: vp32.values,
            wp32: wp32.values,
        },
        vp32.underflows + wp32.underflows,
    ))
}

/// Derives the payloads a scheme multiplies with from the FP64 masters.
/// Blocks are converted in parallel; FP32 overflow aborts with the block id.
pub fn prepare_scheme(h: &HMatrix, scheme: PrecisionScheme) -> Result<SchemeHMatrix<'_>> {
    use PrecisionScheme::*;
    let prepared: Vec<(SchemeBlock, PrepareReport)> = h
        .payloads()
        .par_iter()
        .enumerate()
        .map(|(m, payload)| -> Result<(SchemeBlock, PrepareReport)> {
            let mut rep = PrepareReport::default();
            let block = match (payload, scheme) {
                (BlockPayload::Dense(_), Method1(Variant::Double) | Method2(Variant::Double) | Method3 { .. }) => {
                    SchemeBlock::Dense64
                }
                (BlockPayload::Dense(d), _) => {
                    let cast = cast_f32(&d.data, m)?;
                    rep.cast_values += d.data.len() as u64;
                    rep.fp32_underflows += cast.underflows;
                    SchemeBlock::Dense32(cast.values)
                }
                (BlockPayload::LowRank(l), Method1(Variant::Double)) => {
                    rep.fp64_rank += l.rank as u64;
                    SchemeBlock::LowRank64
                }
                (BlockPayload::LowRank(l), Method1(_)) => {
                    let (v, w) = (cast_f32(&l.v, m)?, cast_f32(&l.w, m)?);
                    rep.cast_values += (l.v.len() + l.w.len()) as u64;
                    rep.fp32_underflows += v.underflows + w.underflows;
                    rep.fp32_rank += l.rank as u64;
                    SchemeBlock::LowRank32 { v: v.values, w: w.values }
                }
                (BlockPayload::LowRank(l), Method2(Variant::Double)) => {
                    rep.fp64_rank += l.rank as u64;
                    SchemeBlock::Scaled64(scale_decompose(l))
                }
                (BlockPayload::LowRank(l), Method2(_)) => {
                    let scaled = scale_decompose(l);
                    let (vp, wp) = (cast_f32(&scaled.vp, m)?, cast_f32(&scaled.wp, m)?);
                    rep.cast_values += (scaled.vp.len() + scaled.wp.len()) as u64;
                    rep.fp32_underflows += vp.underflows + wp.underflows;
                    rep.fp32_rank += l.rank as u64;
                    SchemeBlock::Scaled32 { scaled, vp: vp.values, wp: wp.values }
                }
                (BlockPayload::LowRank(l), Method3 { c }) => {
                    let scaled = scale_decompose(l);
                    let (split, underflows) = split_block(&scaled, c, m)?;
                    rep.cast_values += (split.vp32.len() + split.wp32.len()) as u64;
                    rep.fp32_underflows += underflows;
                    rep.fp32_rank += split.d32.len() as u64;
                    rep.fp64_rank += split.d64.len() as u64;
                    SchemeBlock::Split(split)
                }
            };
            Ok((block, rep))
        })
        .collect::<Result<_>>()?;

    let mut report = PrepareReport::default();
    let mut blocks = Vec::with_capacity(prepared.len());
    for (b, r) in prepared {
        report.cast_values += r.cast_values;
        report.fp32_underflows += r.fp32_underflows;
        report.fp32_rank += r.fp32_rank;
        report.fp64_rank += r.fp64_rank;
        blocks.push(b);
    }
    let work: Vec<usize> = h
        .payloads()
        .iter()
        .map(|p| match p {
            BlockPayload::Dense(d) => d.rows * d.cols,
            BlockPayload::LowRank(l) => l.rank * (l.rows + l.cols),
        })
        .collect();
    let mut schedule: Vec<usize> = (0..blocks.len()).collect();
    schedule.sort_by(|&a, &b| work[b].cmp(&work[a]).then(a.cmp(&b)));
    Ok(SchemeHMatrix {
        master: h,
        scheme,
        blocks,
        report,
        schedule,
    })
}
