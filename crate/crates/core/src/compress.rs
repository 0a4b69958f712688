//! Dense and low-rank block storage, adaptive cross approximation, and
//! construction of the FP64 H-matrix.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HmxError, Result};
use crate::oracle::DenseMatrix;
use crate::partition::{Block, BlockPartition, ClusterTree};
use crate::problem::PanelMesh;
use crate::ORACLE_CAP;

pub const DEFAULT_ACA_TOL: f64 = 1e-8;

/// Residual rows whose largest free entry is below this fraction of the
/// largest entry seen so far are treated as zero.
const NEGLIGIBLE_PIVOT: f64 = 1e-13;

/// Row-major FP64 block.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseBlock {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DenseBlock {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(HmxError::Dimension {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(DenseBlock { rows, cols, data })
    }
}

/// `V W` with `V` of shape `rows × rank` stored column by column and `W` of
/// shape `rank × cols` stored row by row.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankBlock {
    pub rows: usize,
    pub cols: usize,
    pub rank: usize,
    pub v: Vec<f64>,
    pub w: Vec<f64>,
}

impl LowRankBlock {
    pub fn new(rows: usize, cols: usize, rank: usize, v: Vec<f64>, w: Vec<f64>) -> Result<Self> {
        if rank > rows.min(cols) {
            return Err(HmxError::InvalidArgument(format!(
                "rank {rank} exceeds min({rows}, {cols})"
            )));
        }
        if v.len() != rows * rank || w.len() != rank * cols {
            return Err(HmxError::Dimension {
                expected: rank * (rows + cols),
                actual: v.len() + w.len(),
            });
        }
        Ok(LowRankBlock { rows, cols, rank, v, w })
    }

    pub fn zero(rows: usize, cols: usize) -> Self {
        LowRankBlock {
            rows,
            cols,
            rank: 0,
            v: Vec::new(),
            w: Vec::new(),
        }
    }

    pub fn v_col(&self, k: usize) -> &[f64] {
        &self.v[k * self.rows..(k + 1) * self.rows]
    }

    pub fn w_row(&self, k: usize) -> &[f64] {
        &self.w[k * self.cols..(k + 1) * self.cols]
    }

    /// Expands `V W` into a row-major dense array.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.rows * self.cols];
        for k in 0..self.rank {
            let (vk, wk) = (self.v_col(k), self.w_row(k));
            for (i, &vi) in vk.iter().enumerate() {
                for (o, &wj) in out[i * self.cols..(i + 1) * self.cols].iter_mut().zip(wk) {
                    *o += vi * wj;
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BlockPayload {
    Dense(DenseBlock),
    LowRank(LowRankBlock),
}

/// Result of compressing one block.
#[derive(Debug, Clone)]
pub struct AcaOutcome {
    pub block: LowRankBlock,
    /// Set when partial pivoting stalled and the block was factorized from
    /// its fully assembled entries instead.
    pub fell_back: bool,
}

fn argmax_free(values: &[f64], used: &[bool]) -> Option<(usize, f64)> {
    values
        .iter()
        .zip(used)
        .enumerate()
        .filter(|(_, (_, &u))| !u)
        .map(|(k, (v, _))| (k, v.abs()))
        .fold(None, |best, c| match best {
            Some((_, b)) if b >= c.1 => best,
            _ => Some(c),
        })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Adaptive cross approximation with partial pivoting.
///
/// Starts from row 0 and stops once the newest cross satisfies
/// `‖u‖‖v‖ ≤ tol · ‖A_k‖_F`, where `‖A_k‖_F` is the running Frobenius norm
/// of the approximant, or when the rank reaches `max_rank`.
pub fn aca_approximate<F>(entry: F, rows: usize, cols: usize, tol: f64, max_rank: usize) -> AcaOutcome
where
    F: Fn(usize, usize) -> f64,
{
    assert!(rows >= 1 && cols >= 1, "ACA needs a nonempty block");
    assert!(tol > 0.0, "ACA tolerance must be positive");
    let max_rank = max_rank.min(rows).min(cols);
    let mut us: Vec<Vec<f64>> = Vec::new();
    let mut vs: Vec<Vec<f64>> = Vec::new();
    let mut row_used = vec![false; rows];
    let mut col_used = vec![false; cols];
    let mut frob2 = 0.0f64;
    let mut scale = 0.0f64;
    let mut stalled = false;
    let mut converged = false;
    let mut next = Some(0usize);

    while us.len() < max_rank {
        let Some(i) = next else { break };
        row_used[i] = true;
        let mut row: Vec<f64> = (0..cols).map(|j| entry(i, j)).collect();
        scale = row.iter().fold(scale, |m, v| m.max(v.abs()));
        for (u, v) in us.iter().zip(&vs) {
            let ui = u[i];
            if ui != 0.0 {
                row.iter_mut().zip(v).for_each(|(r, vj)| *r -= ui * vj);
            }
        }
        let pivot = argmax_free(&row, &col_used).filter(|&(_, p)| p > NEGLIGIBLE_PIVOT * scale);
        let Some((j, _)) = pivot else {
            let leftover = row
                .iter()
                .zip(&col_used)
                .filter(|(_, &u)| u)
                .fold(0.0f64, |m, (r, _)| m.max(r.abs()));
            if leftover > tol * scale {
                stalled = true;
            }
            next = row_used.iter().position(|&u| !u);
            continue;
        };
        let p = row[j];
        let v: Vec<f64> = row.iter().map(|r| r / p).collect();
        col_used[j] = true;
        let mut u: Vec<f64> = (0..rows).map(|k| entry(k, j)).collect();
        scale = u.iter().fold(scale, |m, x| m.max(x.abs()));
        for (ul, vl) in us.iter().zip(&vs) {
            let vj = vl[j];
            if vj != 0.0 {
                u.iter_mut().zip(ul).for_each(|(x, uk)| *x -= uk * vj);
            }
        }
        let (uu, vv) = (dot(&u, &u), dot(&v, &v));
        let mixed: f64 = us
            .iter()
            .zip(&vs)
            .map(|(ul, vl)| dot(&u, ul) * dot(&v, vl))
            .sum();
        frob2 = (frob2 + uu * vv + 2.0 * mixed).max(0.0);
        us.push(u);
        vs.push(v);
        if (uu * vv).sqrt() <= tol * frob2.sqrt() {
            converged = true;
            break;
        }
        let last = us.last().expect("just pushed");
        next = match argmax_free(last, &row_used) {
            Some((k, m)) if m > 0.0 => Some(k),
            _ => row_used.iter().position(|&u| !u),
        };
    }

    let exhausted = next.is_none() && !converged;
    if stalled && exhausted {
        return AcaOutcome {
            block: full_pivot_factorization(&entry, rows, cols, tol),
            fell_back: true,
        };
    }
    let rank = us.len();
    AcaOutcome {
        block: LowRankBlock {
            rows,
            cols,
            rank,
            v: us.concat(),
            w: vs.concat(),
        },
        fell_back: false,
    }
}

/// Cross approximation with complete pivoting on the assembled block; the
/// residual is exact, so it stops once `‖R‖_F ≤ tol·‖A‖_F`.
fn full_pivot_factorization<F>(entry: &F, rows: usize, cols: usize, tol: f64) -> LowRankBlock
where
    F: Fn(usize, usize) -> f64,
{
    let mut r: Vec<f64> = (0..rows)
        .flat_map(|i| (0..cols).map(move |j| (i, j)))
        .map(|(i, j)| entry(i, j))
        .collect();
    let target = tol * dot(&r, &r).sqrt();
    let mut v = Vec::new();
    let mut w = Vec::new();
    let mut rank = 0;
    while rank < rows.min(cols) && dot(&r, &r).sqrt() > target {
        let (idx, _) = r
            .iter()
            .enumerate()
            .fold((0, -1.0), |b, (k, x)| if x.abs() > b.1 { (k, x.abs()) } else { b });
        let (pi, pj) = (idx / cols, idx % cols);
        let p = r[idx];
        let col: Vec<f64> = (0..rows).map(|i| r[i * cols + pj]).collect();
        let row: Vec<f64> = r[pi * cols..(pi + 1) * cols].iter().map(|x| x / p).collect();
        for i in 0..rows {
            for j in 0..cols {
                r[i * cols + j] -= col[i] * row[j];
            }
        }
        v.extend(col);
        w.extend(row);
        rank += 1;
    }
    LowRankBlock { rows, cols, rank, v, w }
}

/// ACA settings. `max_rank = None` means `min(#rows, #cols)` per block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcaConfig {
    pub tol: f64,
    pub max_rank: Option<usize>,
}

impl Default for AcaConfig {
    fn default() -> Self {
        AcaConfig {
            tol: DEFAULT_ACA_TOL,
            max_rank: None,
        }
    }
}

/// FP64 hierarchical matrix. Blocks index the permuted ordering;
/// `permutation[new] = original`.
#[derive(Debug, Clone)]
pub struct HMatrix {
    n: usize,
    permutation: Vec<usize>,
    partition: BlockPartition,
    payloads: Vec<BlockPayload>,
    aca_fallbacks: usize,
}

/// Storage summary of a built H-matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub n: usize,
    pub dense_blocks: usize,
    pub lowrank_blocks: usize,
    pub rank_histogram: BTreeMap<usize, usize>,
    pub max_rank: usize,
    pub stored_scalars: u64,
    pub compression_ratio: f64,
    pub aca_fallbacks: usize,
}

impl HMatrix {
    /// Assembles an H-matrix from explicit parts, checking that every payload
    /// has its block's shape and the kind its admissibility calls for.
    pub fn from_parts(
        permutation: Vec<usize>,
        partition: BlockPartition,
        payloads: Vec<BlockPayload>,
    ) -> Result<Self> {
        let n = partition.n();
        if permutation.len() != n {
            return Err(HmxError::Dimension {
                expected: n,
                actual: permutation.len(),
            });
        }
        let mut seen = vec![false; n];
        for &p in &permutation {
            if p >= n || std::mem::replace(&mut seen[p], true) {
                return Err(HmxError::InvalidArgument("permutation is not a bijection".into()));
            }
        }
        if payloads.len() != partition.len() {
            return Err(HmxError::Dimension {
                expected: partition.len(),
                actual: payloads.len(),
            });
        }
        for (m, (block, payload)) in partition.blocks().iter().zip(&payloads).enumerate() {
            let (rows, cols, lowrank) = match payload {
                BlockPayload::Dense(d) => (d.rows, d.cols, false),
                BlockPayload::LowRank(l) => (l.rows, l.cols, true),
            };
            if rows != block.nrows() || cols != block.ncols() || lowrank != block.admissible {
                return Err(HmxError::InvalidArgument(format!(
                    "payload of block {m} does not match its {}x{} {} block",
                    block.nrows(),
                    block.ncols(),
                    if block.admissible { "admissible" } else { "inadmissible" }
                )));
            }
        }
        Ok(HMatrix {
            n,
            permutation,
            partition,
            payloads,
            aca_fallbacks: 0,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    pub fn partition(&self) -> &BlockPartition {
        &self.partition
    }

    pub fn blocks(&self) -> impl Iterator<Item = (&Block, &BlockPayload)> {
        self.partition.blocks().iter().zip(&self.payloads)
    }

    pub fn payloads(&self) -> &[BlockPayload] {
        &self.payloads
    }

    /// Sum of ranks over all low-rank blocks.
    pub fn total_rank(&self) -> usize {
        self.payloads
            .iter()
            .map(|p| match p {
                BlockPayload::LowRank(l) => l.rank,
                BlockPayload::Dense(_) => 0,
            })
            .sum()
    }

    pub fn stored_scalars(&self) -> u64 {
        self.payloads
            .iter()
            .map(|p| match p {
                BlockPayload::Dense(d) => d.data.len() as u64,
                BlockPayload::LowRank(l) => (l.v.len() + l.w.len()) as u64,
            })
            .sum()
    }

    pub fn report(&self) -> BuildReport {
        let mut rank_histogram = BTreeMap::new();
        let mut dense_blocks = 0;
        for p in &self.payloads {
            match p {
                BlockPayload::Dense(_) => dense_blocks += 1,
                BlockPayload::LowRank(l) => *rank_histogram.entry(l.rank).or_insert(0) += 1,
            }
        }
        let stored_scalars = self.stored_scalars();
        BuildReport {
            n: self.n,
            dense_blocks,
            lowrank_blocks: self.payloads.len() - dense_blocks,
            max_rank: rank_histogram.keys().next_back().copied().unwrap_or(0),
            rank_histogram,
            stored_scalars,
            compression_ratio: stored_scalars as f64 / (self.n as f64 * self.n as f64),
            aca_fallbacks: self.aca_fallbacks,
        }
    }

    /// Expands to a dense matrix in the original (unpermuted) ordering.
    pub fn densify(&self) -> Result<DenseMatrix> {
        self.densify_capped(ORACLE_CAP)
    }

    pub fn densify_capped(&self, cap: usize) -> Result<DenseMatrix> {
        if self.n > cap {
            return Err(HmxError::Size {
                requested: self.n,
                cap,
            });
        }
        let mut a = DenseMatrix::zeros(self.n, self.n);
        for (block, payload) in self.blocks() {
            let values = match payload {
                BlockPayload::Dense(d) => d.data.clone(),
                BlockPayload::LowRank(l) => l.to_dense(),
            };
            let cols = block.ncols();
            for (li, i) in block.rows.clone().enumerate() {
                for (lj, j) in block.cols.clone().enumerate() {
                    a[(self.permutation[i], self.permutation[j])] = values[li * cols + lj];
                }
            }
        }
        Ok(a)
    }
}

/// Fills inadmissible blocks densely and compresses admissible ones with ACA.
/// Blocks are processed in parallel.
pub fn build_hmatrix(
    mesh: &PanelMesh,
    tree: &ClusterTree,
    partition: &BlockPartition,
    cfg: &AcaConfig,
) -> Result<HMatrix> {
    if tree.len() != mesh.len() || partition.n() != mesh.len() {
        return Err(HmxError::Dimension {
            expected: mesh.len(),
            actual: partition.n(),
        });
    }
    let perm = tree.permutation();
    let built: Vec<(BlockPayload, bool)> = partition
        .blocks()
        .par_iter()
        .map(|block| -> Result<(BlockPayload, bool)> {
            let (r0, c0) = (block.rows.start, block.cols.start);
            if block.admissible {
                let max_rank = cfg.max_rank.unwrap_or(usize::MAX);
                let out = aca_approximate(
                    |i, j| mesh.kernel_far(perm[r0 + i], perm[c0 + j]),
                    block.nrows(),
                    block.ncols(),
                    cfg.tol,
                    max_rank,
                );
                Ok((BlockPayload::LowRank(out.block), out.fell_back))
            } else {
                let mut data = Vec::with_capacity(block.area());
                for i in block.rows.clone() {
                    for j in block.cols.clone() {
                        data.push(mesh.kernel_entry(perm[i], perm[j])?);
                    }
                }
                Ok((
                    BlockPayload::Dense(DenseBlock {
                        rows: block.nrows(),
                        cols: block.ncols(),
                        data,
                    }),
                    false,
                ))
            }
        })
        .collect::<Result<_>>()?;
    let aca_fallbacks = built.iter().filter(|(_, f)| *f).count();
    let payloads = built.into_iter().map(|(p, _)| p).collect();
    let mut h = HMatrix::from_parts(perm.to_vec(), partition.clone(), payloads)?;
    h.aca_fallbacks = aca_fallbacks;
    Ok(h)
}
