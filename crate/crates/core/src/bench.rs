//! Timing harness: repeated multiplies and full solves across schemes and
//! thread counts, with CSV/JSON reports.
//!
//! Only the multiply/solve loops are timed; mesh generation, compression and
//! scheme preparation happen beforehand. The source vector is drawn uniformly
//! from `[-1, 1]` by a xoshiro256++ generator seeded through splitmix64
//! (`Xoshiro256PlusPlus::seed_from_u64`), so every scheme sees the same input.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::compress::{build_hmatrix, AcaConfig, HMatrix, DEFAULT_ACA_TOL};
use crate::error::{HmxError, Result};
use crate::matvec::matvec_threaded;
use crate::partition::{build_block_partition, build_cluster_tree, DEFAULT_ETA, DEFAULT_LEAF_SIZE};
use crate::precision::{prepare_scheme, PrecisionScheme};
use crate::problem::{build_sphere_mesh, spheres_on_axis, PanelMesh};
use crate::solver::{bicgstab, SolverConfig};

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = HmxError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            _ => Err(HmxError::InvalidArgument(format!("unknown report format `{s}`"))),
        }
    }
}

/// Geometry and compression parameters shared by every command.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemConfig {
    pub spheres: usize,
    pub refine: u32,
    pub spacing: f64,
    pub radius: f64,
    /// One voltage per sphere; empty means all spheres at 1.
    pub voltages: Vec<f64>,
    pub aca_tol: f64,
    pub leaf_size: usize,
    pub eta: f64,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        ProblemConfig {
            spheres: 3,
            refine: 2,
            spacing: 3.0,
            radius: 1.0,
            voltages: Vec::new(),
            aca_tol: DEFAULT_ACA_TOL,
            leaf_size: DEFAULT_LEAF_SIZE,
            eta: DEFAULT_ETA,
        }
    }
}

/// A meshed and compressed test problem.
pub struct Problem {
    pub mesh: PanelMesh,
    pub hmatrix: HMatrix,
}

impl ProblemConfig {
    pub fn build(&self) -> Result<Problem> {
        if self.leaf_size == 0 || !(self.eta > 0.0) || !(self.aca_tol > 0.0) {
            return Err(HmxError::InvalidArgument(format!(
                "leaf size, eta and ACA tolerance must be positive ({}, {}, {})",
                self.leaf_size, self.eta, self.aca_tol
            )));
        }
        let voltages = if self.voltages.is_empty() {
            vec![1.0; self.spheres]
        } else {
            self.voltages.clone()
        };
        let mesh = build_sphere_mesh(
            &spheres_on_axis(self.spheres, self.spacing),
            self.radius,
            self.refine,
            &voltages,
        )?;
        let tree = build_cluster_tree(&mesh, self.leaf_size);
        let partition = build_block_partition(&tree, self.eta);
        let hmatrix = build_hmatrix(
            &mesh,
            &tree,
            &partition,
            &AcaConfig {
                tol: self.aca_tol,
                max_rank: None,
            },
        )?;
        Ok(Problem { mesh, hmatrix })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub problem: ProblemConfig,
    pub schemes: Vec<PrecisionScheme>,
    /// Each value adds a Method 3 scheme with that `c`.
    pub c_list: Vec<i32>,
    pub threads: Vec<usize>,
    pub reps: usize,
    pub sets: usize,
    pub seed: u64,
    pub solver_tol: f64,
    pub max_iter: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            problem: ProblemConfig::default(),
            schemes: PrecisionScheme::fixed().to_vec(),
            c_list: Vec::new(),
            threads: vec![1],
            reps: 1000,
            sets: 10,
            seed: DEFAULT_SEED,
            solver_tol: 1e-6,
            max_iter: 1000,
        }
    }
}

impl BenchConfig {
    fn validate(&self) -> Result<()> {
        if self.reps == 0 || self.sets == 0 {
            return Err(HmxError::InvalidArgument("reps and sets must be at least 1".into()));
        }
        if self.threads.is_empty() || self.threads.contains(&0) {
            return Err(HmxError::InvalidArgument("thread counts must be at least 1".into()));
        }
        Ok(())
    }

    /// Schemes to run: the baseline first, then the configured ones, then one
    /// Method 3 scheme per `c`, without duplicates.
    pub fn expanded_schemes(&self) -> Vec<PrecisionScheme> {
        let mut out = vec![PrecisionScheme::BASELINE];
        let extra = self
            .schemes
            .iter()
            .copied()
            .chain(self.c_list.iter().map(|&c| PrecisionScheme::Method3 { c }));
        for s in extra {
            if !out.contains(&s) {
                out.push(s);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub scheme: PrecisionScheme,
    pub threads: usize,
    pub mean_time_s: f64,
    pub stddev_s: f64,
    pub set_times_s: Vec<f64>,
    pub payload_bytes: u64,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    pub true_residual: Option<f64>,
    pub speedup: f64,
}

/// Seeded uniform source vector on `[-1, 1]`.
pub fn source_vector(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect()
}

fn mean_std(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn fill_speedups(records: &mut [BenchRecord]) {
    let baselines: Vec<(usize, f64)> = records
        .iter()
        .filter(|r| r.scheme == PrecisionScheme::BASELINE)
        .map(|r| (r.threads, r.mean_time_s))
        .collect();
    for r in records.iter_mut() {
        if let Some(&(_, base)) = baselines.iter().find(|(t, _)| *t == r.threads) {
            r.speedup = if r.scheme == PrecisionScheme::BASELINE { 1.0 } else { base / r.mean_time_s };
        }
    }
}

/// Times `sets × reps` multiplies per (scheme, threads). Set time is the mean
/// over its repetitions.
pub fn run_matvec_bench(cfg: &BenchConfig) -> Result<Vec<BenchRecord>> {
    cfg.validate()?;
    let problem = cfg.problem.build()?;
    matvec_bench_on(&problem.hmatrix, cfg)
}

pub fn matvec_bench_on(h: &HMatrix, cfg: &BenchConfig) -> Result<Vec<BenchRecord>> {
    cfg.validate()?;
    let x = source_vector(h.n(), cfg.seed);
    let mut records = Vec::new();
    for &threads in &cfg.threads {
        for scheme in cfg.expanded_schemes() {
            let sh = prepare_scheme(h, scheme)?;
            let mut set_times = Vec::with_capacity(cfg.sets);
            for _ in 0..cfg.sets {
                let start = Instant::now();
                for _ in 0..cfg.reps {
                    std::hint::black_box(matvec_threaded(&sh, std::hint::black_box(&x), threads)?);
                }
                set_times.push(start.elapsed().as_secs_f64() / cfg.reps as f64);
            }
            let (mean, std) = mean_std(&set_times);
            records.push(BenchRecord {
                scheme,
                threads,
                mean_time_s: mean,
                stddev_s: std,
                set_times_s: set_times,
                payload_bytes: sh.payload_bytes(),
                iterations: None,
                converged: None,
                true_residual: None,
                speedup: f64::NAN,
            });
        }
    }
    fill_speedups(&mut records);
    Ok(records)
}

/// One BiCGSTAB solve per set and (scheme, threads). Non-convergence is
/// recorded, not treated as an error.
pub fn run_solver_bench(cfg: &BenchConfig) -> Result<Vec<BenchRecord>> {
    cfg.validate()?;
    let problem = cfg.problem.build()?;
    solver_bench_on(&problem.hmatrix, &problem.mesh.right_hand_side(), cfg)
}

pub fn solver_bench_on(h: &HMatrix, b: &[f64], cfg: &BenchConfig) -> Result<Vec<BenchRecord>> {
    cfg.validate()?;
    let mut records = Vec::new();
    for &threads in &cfg.threads {
        let solver_cfg = SolverConfig {
            tol: cfg.solver_tol,
            max_iter: cfg.max_iter,
            threads,
        };
        for scheme in cfg.expanded_schemes() {
            let sh = prepare_scheme(h, scheme)?;
            let mut set_times = Vec::with_capacity(cfg.sets);
            let mut last = None;
            for _ in 0..cfg.sets {
                let start = Instant::now();
                let (_, report) = bicgstab(&sh, h, b, &solver_cfg)?;
                set_times.push(start.elapsed().as_secs_f64());
                last = Some(report);
            }
            let report = last.expect("sets >= 1");
            let (mean, std) = mean_std(&set_times);
            records.push(BenchRecord {
                scheme,
                threads,
                mean_time_s: mean,
                stddev_s: std,
                set_times_s: set_times,
                payload_bytes: sh.payload_bytes(),
                iterations: Some(report.iterations),
                converged: Some(report.converged),
                true_residual: report.true_residual,
                speedup: f64::NAN,
            });
        }
    }
    fill_speedups(&mut records);
    Ok(records)
}

/// One output row. Floats carry 9 significant digits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub scheme: String,
    pub threads: usize,
    pub mean_time_s: f64,
    pub stddev_s: f64,
    pub payload_bytes: u64,
    pub iterations: Option<usize>,
    pub true_residual: Option<f64>,
    pub speedup: f64,
}

fn sig9(x: f64) -> f64 {
    if !x.is_finite() {
        return x;
    }
    format!("{x:.8e}").parse().expect("formatted float parses")
}

impl From<&BenchRecord> for ReportRow {
    fn from(r: &BenchRecord) -> Self {
        ReportRow {
            scheme: r.scheme.to_string(),
            threads: r.threads,
            mean_time_s: sig9(r.mean_time_s),
            stddev_s: sig9(r.stddev_s),
            payload_bytes: r.payload_bytes,
            iterations: r.iterations,
            true_residual: r.true_residual.map(sig9),
            speedup: sig9(r.speedup),
        }
    }
}

/// Writes the report to any sink.
pub fn write_report<W: Write>(records: &[BenchRecord], format: ReportFormat, out: W) -> Result<()> {
    let rows: Vec<ReportRow> = records.iter().map(ReportRow::from).collect();
    match format {
        ReportFormat::Json => {
            let mut out = out;
            serde_json::to_writer_pretty(&mut out, &rows)?;
            writeln!(out)?;
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(out);
            for row in &rows {
                w.serialize(row)?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

/// Writes the report to `path`. An empty record list is an error and leaves
/// no file behind.
pub fn emit_report(records: &[BenchRecord], format: ReportFormat, path: &Path) -> Result<()> {
    if records.is_empty() {
        return Err(HmxError::InvalidArgument("no records to report".into()));
    }
    let file = BufWriter::new(File::create(path)?);
    write_report(records, format, file)
}

pub fn read_json_report(text: &str) -> Result<Vec<ReportRow>> {
    Ok(serde_json::from_str(text)?)
}

pub fn read_csv_report(text: &str) -> Result<Vec<ReportRow>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    Ok(rdr.deserialize().collect::<std::result::Result<_, _>>()?)
}
