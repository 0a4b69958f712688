//! Unpreconditioned BiCGSTAB whose three operator applications use the
//! scheme's multiply. Everything else (inner products, vector updates,
//! scalars) runs in FP64.
//!
//! Convergence is declared only when the recurrence residual drops below
//! `tol` *and* the true residual, recomputed with the FP64 H-matrix, agrees.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::compress::HMatrix;
use crate::error::{HmxError, Result};
use crate::matvec::matvec_threaded;
use crate::oracle::norm2;
use crate::precision::{prepare_scheme, PrecisionScheme, SchemeHMatrix};

/// Magnitudes below this count as zero in the breakdown tests.
const BREAKDOWN: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub threads: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-6,
            max_iter: 1000,
            threads: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Breakdown {
    /// `r̂ᵀ r_{i-1} = 0`.
    Rho,
    /// `r̂ᵀ v_i = 0`.
    Alpha,
    /// `ω_i = 0` or `tᵀt = 0`.
    Omega,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub scheme: PrecisionScheme,
    pub converged: bool,
    pub iterations: usize,
    /// `‖r_i‖₂ / ‖b‖₂` for `i = 0..=iterations`.
    pub residual_history: Vec<f64>,
    /// Last FP64 true residual, computed whenever the recurrence residual
    /// met the tolerance.
    pub true_residual: Option<f64>,
    pub wall_time_s: f64,
    pub breakdown: Option<Breakdown>,
}

/// `‖b − Ã₆₄ x‖₂ / ‖b‖₂` using the FP64 masters. For `b = 0` the absolute
/// norm `‖Ã₆₄ x‖₂` is returned instead.
pub fn true_residual(h64: &HMatrix, x: &[f64], b: &[f64]) -> Result<f64> {
    true_residual_threaded(h64, x, b, 1)
}

pub fn true_residual_threaded(h64: &HMatrix, x: &[f64], b: &[f64], threads: usize) -> Result<f64> {
    if b.len() != h64.n() {
        return Err(HmxError::Dimension {
            expected: h64.n(),
            actual: b.len(),
        });
    }
    let baseline = prepare_scheme(h64, PrecisionScheme::BASELINE)?;
    let ax = matvec_threaded(&baseline, x, threads)?;
    let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let bn = norm2(b);
    let rn = norm2(&r);
    Ok(if bn == 0.0 { rn } else { rn / bn })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `Ã x = b` from `x₀ = 0` with shadow residual `r̂ = r₀`.
pub fn bicgstab(
    sh: &SchemeHMatrix<'_>,
    h64: &HMatrix,
    b: &[f64],
    cfg: &SolverConfig,
) -> Result<(Vec<f64>, SolverReport)> {
    let n = sh.n();
    if b.len() != n || h64.n() != n {
        return Err(HmxError::Dimension {
            expected: n,
            actual: if b.len() != n { b.len() } else { h64.n() },
        });
    }
    if !(cfg.tol > 0.0) || cfg.max_iter == 0 || cfg.threads == 0 {
        return Err(HmxError::InvalidArgument(format!("invalid solver configuration {cfg:?}")));
    }
    let start = Instant::now();
    let apply = |v: &[f64]| matvec_threaded(sh, v, cfg.threads);
    let verify = |x: &[f64]| true_residual_threaded(h64, x, b, cfg.threads);

    let mut report = SolverReport {
        scheme: sh.scheme(),
        converged: false,
        iterations: 0,
        residual_history: Vec::new(),
        true_residual: None,
        wall_time_s: 0.0,
        breakdown: None,
    };
    let mut x = vec![0.0; n];
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        report.converged = true;
        report.residual_history.push(0.0);
        report.true_residual = Some(0.0);
        report.wall_time_s = start.elapsed().as_secs_f64();
        return Ok((x, report));
    }

    let ax0 = apply(&x)?;
    let mut r: Vec<f64> = b.iter().zip(&ax0).map(|(bi, ai)| bi - ai).collect();
    let r_hat = r.clone();
    let mut p = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut s = vec![0.0; n];
    let (mut rho_prev, mut alpha, mut omega) = (1.0, 1.0, 1.0);

    let rel0 = norm2(&r) / bnorm;
    report.residual_history.push(rel0);
    if rel0 < cfg.tol {
        let tr = verify(&x)?;
        report.true_residual = Some(tr);
        report.converged = tr < cfg.tol;
    }

    let mut i = 0;
    while !report.converged && i < cfg.max_iter {
        i += 1;
        let rho = dot(&r_hat, &r);
        if rho.abs() < BREAKDOWN {
            report.breakdown = Some(Breakdown::Rho);
            break;
        }
        if i == 1 {
            p.copy_from_slice(&r);
        } else {
            let beta = (rho / rho_prev) * (alpha / omega);
            for k in 0..n {
                p[k] = r[k] + beta * (p[k] - omega * v[k]);
            }
        }
        v = apply(&p)?;
        let rv = dot(&r_hat, &v);
        if rv.abs() < BREAKDOWN {
            report.breakdown = Some(Breakdown::Alpha);
            break;
        }
        alpha = rho / rv;
        for k in 0..n {
            s[k] = r[k] - alpha * v[k];
        }

        let s_rel = norm2(&s) / bnorm;
        if s_rel < cfg.tol {
            let candidate: Vec<f64> = x.iter().zip(&p).map(|(xk, pk)| xk + alpha * pk).collect();
            let tr = verify(&candidate)?;
            report.true_residual = Some(tr);
            if tr < cfg.tol {
                x = candidate;
                report.residual_history.push(s_rel);
                report.iterations = i;
                report.converged = true;
                break;
            }
        }

        let t = apply(&s)?;
        let tt = dot(&t, &t);
        if tt < BREAKDOWN {
            report.breakdown = Some(Breakdown::Omega);
            report.iterations = i - 1;
            break;
        }
        omega = dot(&t, &s) / tt;
        for k in 0..n {
            x[k] += alpha * p[k] + omega * s[k];
            r[k] = s[k] - omega * t[k];
        }
        rho_prev = rho;
        let rel = norm2(&r) / bnorm;
        report.residual_history.push(rel);
        report.iterations = i;
        if rel < cfg.tol {
            let tr = verify(&x)?;
            report.true_residual = Some(tr);
            if tr < cfg.tol {
                report.converged = true;
                break;
            }
        }
        if omega.abs() < BREAKDOWN {
            report.breakdown = Some(Breakdown::Omega);
            break;
        }
    }
    if report.breakdown == Some(Breakdown::Rho) || report.breakdown == Some(Breakdown::Alpha) {
        report.iterations = i - 1;
    }
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok((x, report))
}
