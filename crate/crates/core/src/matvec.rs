//! Blockwise H-matrix–vector multiplication under a precision scheme.
//!
//! Each block computes a local product `ŷ_m` from its slice `x_m` of the
//! permuted source vector and adds it into the FP64 result. Dense blocks do
//! one pass; low-rank blocks go through `z_m = W x_m`, an optional diagonal
//! scaling `z_m *= D`, and `ŷ_m = V z_m`. When operand precisions differ the
//! FP32 operand is widened before the multiply.

use std::thread;

use crate::compress::BlockPayload;
use crate::error::{HmxError, Result};
use crate::precision::{SchemeBlock, SchemeHMatrix};

/// Source vector in permuted order with an optional FP32 shadow.
#[derive(Debug, Clone)]
pub struct SourceVector {
    master: Vec<f64>,
    shadow: Option<Vec<f32>>,
}

impl SourceVector {
    /// Gathers `x` into the cluster ordering given by `permutation`.
    pub fn gather(x: &[f64], permutation: &[usize], with_shadow: bool) -> Self {
        let master: Vec<f64> = permutation.iter().map(|&p| x[p]).collect();
        let shadow = with_shadow.then(|| master.iter().map(|&v| v as f32).collect());
        SourceVector { master, shadow }
    }

    pub fn master(&self) -> &[f64] {
        &self.master
    }

    pub fn shadow(&self) -> Option<&[f32]> {
        self.shadow.as_deref()
    }
}

fn dense_f64(a: &[f64], x: &[f64], yhat: &mut [f64]) {
    let cols = x.len();
    for (i, y) in yhat.iter_mut().enumerate() {
        let row = &a[i * cols..(i + 1) * cols];
        let mut acc = 0.0;
        for (aij, xj) in row.iter().zip(x) {
            acc += aij * xj;
        }
        *y = acc;
    }
}

fn dense_f32_x32(a: &[f32], x: &[f32], yhat: &mut [f64]) {
    let cols = x.len();
    for (i, y) in yhat.iter_mut().enumerate() {
        let row = &a[i * cols..(i + 1) * cols];
        let mut acc = 0.0f64;
        for (aij, xj) in row.iter().zip(x) {
            acc += (aij * xj) as f64;
        }
        *y = acc;
    }
}

fn dense_f32_x64(a: &[f32], x: &[f64], yhat: &mut [f64]) {
    let cols = x.len();
    for (i, y) in yhat.iter_mut().enumerate() {
        let row = &a[i * cols..(i + 1) * cols];
        let mut acc = 0.0f64;
        for (aij, xj) in row.iter().zip(x) {
            acc += *aij as f64 * xj;
        }
        *y = acc;
    }
}

/// `ŷ += V z` for a column-major `V`.
fn v_stage_f64(v: &[f64], z: &[f64], yhat: &mut [f64]) {
    let rows = yhat.len();
    for (k, &zk) in z.iter().enumerate() {
        for (y, vik) in yhat.iter_mut().zip(&v[k * rows..(k + 1) * rows]) {
            *y += vik * zk;
        }
    }
}

fn v_stage_f32_z64(v: &[f32], z: &[f64], yhat: &mut [f64]) {
    let rows = yhat.len();
    for (k, &zk) in z.iter().enumerate() {
        for (y, vik) in yhat.iter_mut().zip(&v[k * rows..(k + 1) * rows]) {
            *y += *vik as f64 * zk;
        }
    }
}

fn v_stage_f32_z32(v: &[f32], z: &[f32], yhat: &mut [f64]) {
    let rows = yhat.len();
    for (k, &zk) in z.iter().enumerate() {
        for (y, vik) in yhat.iter_mut().zip(&v[k * rows..(k + 1) * rows]) {
            *y += (vik * zk) as f64;
        }
    }
}

/// `z = W x` with FP64 everything.
fn w_stage_f64(w: &[f64], x: &[f64], z: &mut [f64]) {
    let cols = x.len();
    for (k, zk) in z.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (wkj, xj) in w[k * cols..(k + 1) * cols].iter().zip(x) {
            acc += wkj * xj;
        }
        *zk = acc;
    }
}

/// FP32 `W`, FP64 `x`, FP64 `z`.
fn w_stage_f32_x64(w: &[f32], x: &[f64], z: &mut [f64]) {
    let cols = x.len();
    for (k, zk) in z.iter_mut().enumerate() {
        let mut acc = 0.0f64;
        for (wkj, xj) in w[k * cols..(k + 1) * cols].iter().zip(x) {
            acc += *wkj as f64 * xj;
        }
        *zk = acc;
    }
}

/// FP32 `W`, FP32 `x`, FP64 `z`: products in FP32, accumulation in FP64.
fn w_stage_f32_x32_z64(w: &[f32], x: &[f32], z: &mut [f64]) {
    let cols = x.len();
    for (k, zk) in z.iter_mut().enumerate() {
        let mut acc = 0.0f64;
        for (wkj, xj) in w[k * cols..(k + 1) * cols].iter().zip(x) {
            acc += (wkj * xj) as f64;
        }
        *zk = acc;
    }
}

/// FP32 `W`, FP32 `x`, FP32 `z`.
fn w_stage_f32_x32_z32(w: &[f32], x: &[f32], z: &mut [f32]) {
    let cols = x.len();
    for (k, zk) in z.iter_mut().enumerate() {
        let mut acc = 0.0f32;
        for (wkj, xj) in w[k * cols..(k + 1) * cols].iter().zip(x) {
            acc += wkj * xj;
        }
        *zk = acc;
    }
}

/// FP32 `W`, FP64 `x`, FP32 `z`: each product is formed in FP64 and the
/// running sum is stored back into the FP32 element.
fn w_stage_f32_x64_z32(w: &[f32], x: &[f64], z: &mut [f32]) {
    let cols = x.len();
    for (k, zk) in z.iter_mut().enumerate() {
        let mut acc = 0.0f32;
        for (wkj, xj) in w[k * cols..(k + 1) * cols].iter().zip(x) {
            acc = (acc as f64 + *wkj as f64 * xj) as f32;
        }
        *zk = acc;
    }
}

fn scale(z: &mut [f64], d: &[f64]) {
    for (zk, dk) in z.iter_mut().zip(d) {
        *zk *= dk;
    }
}

/// Per-worker scratch space.
struct Scratch {
    yhat: Vec<f64>,
    yhat_low: Vec<f64>,
    z64: Vec<f64>,
    z32: Vec<f32>,
}

impl Scratch {
    fn new() -> Self {
        Scratch {
            yhat: Vec::new(),
            yhat_low: Vec::new(),
            z64: Vec::new(),
            z32: Vec::new(),
        }
    }
}

fn resized<T: Copy + Default>(buf: &mut Vec<T>, len: usize) -> &mut [T] {
    buf.clear();
    buf.resize(len, T::default());
    &mut buf[..]
}

/// Computes block `m`'s local product into `scratch.yhat`.
fn apply_block(sh: &SchemeHMatrix<'_>, m: usize, src: &SourceVector, scratch: &mut Scratch) {
    let block = &sh.master().partition().blocks()[m];
    let payload = &sh.master().payloads()[m];
    let x64 = &src.master[block.cols.clone()];
    let x32 = || &src.shadow.as_ref().expect("scheme requires an FP32 source")[block.cols.clone()];
    let rows = block.nrows();
    let Scratch { yhat, yhat_low, z64, z32 } = scratch;
    let yhat = resized(yhat, rows);
    let fp32_source = sh.scheme().fp32_source();

    match (&sh.blocks()[m], payload) {
        (SchemeBlock::Dense64, BlockPayload::Dense(d)) => dense_f64(&d.data, x64, yhat),
        (SchemeBlock::Dense32(a), _) if fp32_source => dense_f32_x32(a, x32(), yhat),
        (SchemeBlock::Dense32(a), _) => dense_f32_x64(a, x64, yhat),
        (SchemeBlock::LowRank64, BlockPayload::LowRank(l)) => {
            let z = resized(z64, l.rank);
            w_stage_f64(&l.w, x64, z);
            v_stage_f64(&l.v, z, yhat);
        }
        (SchemeBlock::LowRank32 { v, w }, BlockPayload::LowRank(l)) => {
            let z = resized(z32, l.rank);
            if fp32_source {
                w_stage_f32_x32_z32(w, x32(), z);
            } else {
                w_stage_f32_x64_z32(w, x64, z);
            }
            v_stage_f32_z32(v, z, yhat);
        }
        (SchemeBlock::Scaled64(s), _) => {
            let z = resized(z64, s.rank);
            w_stage_f64(&s.wp, x64, z);
            scale(z, &s.d);
            v_stage_f64(&s.vp, z, yhat);
        }
        (SchemeBlock::Scaled32 { scaled, vp, wp }, _) => {
            let z = resized(z64, scaled.rank);
            if fp32_source {
                w_stage_f32_x32_z64(wp, x32(), z);
            } else {
                w_stage_f32_x64(wp, x64, z);
            }
            scale(z, &scaled.d);
            v_stage_f32_z64(vp, z, yhat);
        }
        (SchemeBlock::Split(s), _) => {
            let z = resized(z64, s.d64.len());
            w_stage_f64(&s.wp64, x64, z);
            scale(z, &s.d64);
            v_stage_f64(&s.vp64, z, yhat);
            if !s.d32.is_empty() {
                let low = resized(yhat_low, rows);
                let z = resized(z64, s.d32.len());
                w_stage_f32_x64(&s.wp32, x64, z);
                scale(z, &s.d32);
                v_stage_f32_z64(&s.vp32, z, low);
                for (y, l) in yhat.iter_mut().zip(low.iter()) {
                    *y += l;
                }
            }
        }
        (b, _) => unreachable!("scheme payload {b:?} does not match its master"),
    }
}

fn run_worker<'a>(
    sh: &SchemeHMatrix<'_>,
    src: &SourceVector,
    blocks: impl Iterator<Item = &'a usize>,
) -> Result<Vec<f64>> {
    let mut y = vec![0.0; sh.n()];
    let mut scratch = Scratch::new();
    let partition = sh.master().partition().blocks();
    for &m in blocks {
        apply_block(sh, m, src, &mut scratch);
        if scratch.yhat.iter().any(|v| !v.is_finite()) {
            return Err(HmxError::NonFinite { block: m });
        }
        for (yi, h) in y[partition[m].rows.clone()].iter_mut().zip(&scratch.yhat) {
            *yi += h;
        }
    }
    Ok(y)
}

/// `ỹ = Ã x` on the calling thread. Input and output use the original
/// (unpermuted) panel ordering.
pub fn matvec(sh: &SchemeHMatrix<'_>, x: &[f64]) -> Result<Vec<f64>> {
    matvec_threaded(sh, x, 1)
}

/// `ỹ = Ã x` with blocks dealt round-robin (largest first) to `threads`
/// workers. Each worker accumulates into a private vector; the private
/// vectors are summed in worker order at the end.
pub fn matvec_threaded(sh: &SchemeHMatrix<'_>, x: &[f64], threads: usize) -> Result<Vec<f64>> {
    let n = sh.n();
    if x.len() != n {
        return Err(HmxError::Dimension {
            expected: n,
            actual: x.len(),
        });
    }
    if threads == 0 {
        return Err(HmxError::InvalidArgument("thread count must be at least 1".into()));
    }
    let perm = sh.master().permutation();
    let src = SourceVector::gather(x, perm, sh.scheme().fp32_source());
    let schedule = sh.schedule();

    let partials: Vec<Result<Vec<f64>>> = if threads == 1 {
        vec![run_worker(sh, &src, schedule.iter())]
    } else {
        thread::scope(|scope| {
            let handles: Vec<_> = (0..threads)
                .map(|w| {
                    let src = &src;
                    scope.spawn(move || run_worker(sh, src, schedule.iter().skip(w).step_by(threads)))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("matvec worker panicked"))
                .collect()
        })
    };

    let mut y_perm = vec![0.0; n];
    for part in partials {
        for (y, p) in y_perm.iter_mut().zip(part?) {
            *y += p;
        }
    }
    let mut y = vec![0.0; n];
    for (k, &p) in perm.iter().enumerate() {
        y[p] = y_perm[k];
    }
    Ok(y)
}
