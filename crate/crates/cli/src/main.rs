use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use hmx_core::bench::{
    emit_report, run_matvec_bench, run_solver_bench, write_report, BenchConfig, ProblemConfig, ReportFormat,
};
use hmx_core::{bicgstab, prepare_scheme, PrecisionScheme, SolverConfig};

/// Mixed-precision H-matrix benchmarks on a multi-sphere capacitance problem.
#[derive(Parser)]
#[command(name = "hmx", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Time repeated multiplies or full solves across precision schemes.
    Bench {
        #[command(subcommand)]
        kind: BenchKind,
    },
    /// Print the H-matrix build report as JSON.
    Info {
        #[command(flatten)]
        problem: ProblemArgs,
        /// Write the block partition, one block per line.
        #[arg(long)]
        dump_partition: Option<PathBuf>,
        /// Write panel centroids, areas and sphere ids.
        #[arg(long)]
        dump_mesh: Option<PathBuf>,
    },
    /// Run one BiCGSTAB solve and print its report as JSON.
    Solve {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long, default_value = "m1-double")]
        scheme: PrecisionScheme,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long, default_value_t = 1000)]
        max_iter: usize,
    },
}

#[derive(Subcommand)]
enum BenchKind {
    Matvec(BenchArgs),
    Solve(BenchArgs),
}

#[derive(Args, Clone)]
struct ProblemArgs {
    #[arg(long, default_value_t = 3)]
    spheres: usize,
    /// Icosphere refinement level; each sphere gets 20·4^refine panels.
    #[arg(long, default_value_t = 2)]
    refine: u32,
    /// Center-to-center distance along the x axis.
    #[arg(long, default_value_t = 3.0)]
    spacing: f64,
    #[arg(long, default_value_t = 1.0)]
    radius: f64,
    /// One voltage per sphere; defaults to 1 everywhere.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    voltages: Vec<f64>,
    #[arg(long, default_value_t = 1e-8)]
    aca_tol: f64,
    #[arg(long, default_value_t = 32)]
    leaf: usize,
    #[arg(long, default_value_t = 2.0)]
    eta: f64,
}

impl ProblemArgs {
    fn config(&self) -> ProblemConfig {
        ProblemConfig {
            spheres: self.spheres,
            refine: self.refine,
            spacing: self.spacing,
            radius: self.radius,
            voltages: self.voltages.clone(),
            aca_tol: self.aca_tol,
            leaf_size: self.leaf,
            eta: self.eta,
        }
    }
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Comma-separated scheme names. m1-double is always included.
    #[arg(long, value_delimiter = ',', default_value = "m1-double,m1-single,m1-mixed,m2-double,m2-single,m2-mixed")]
    schemes: Vec<PrecisionScheme>,
    /// Method 3 split parameters; each adds an m3 scheme.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    c_list: Vec<i32>,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    threads: Vec<usize>,
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    #[arg(long, default_value_t = 10)]
    sets: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 1000)]
    max_iter: usize,
    #[arg(long, default_value = "csv")]
    format: ReportFormat,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl BenchArgs {
    fn config(&self) -> BenchConfig {
        BenchConfig {
            problem: self.problem.config(),
            schemes: self.schemes.clone(),
            c_list: self.c_list.clone(),
            threads: self.threads.clone(),
            reps: self.reps,
            sets: self.sets,
            seed: self.seed,
            solver_tol: self.tol,
            max_iter: self.max_iter,
        }
    }
}

fn bench(kind: BenchKind) -> Result<()> {
    let (args, records) = match kind {
        BenchKind::Matvec(args) => {
            let records = run_matvec_bench(&args.config())?;
            (args, records)
        }
        BenchKind::Solve(args) => {
            let records = run_solver_bench(&args.config())?;
            (args, records)
        }
    };
    match &args.out {
        Some(path) => emit_report(&records, args.format, path).with_context(|| format!("writing {}", path.display()))?,
        None => {
            if records.is_empty() {
                bail!("no records to report");
            }
            write_report(&records, args.format, io::stdout().lock())?;
        }
    }
    Ok(())
}

fn info(problem: ProblemArgs, dump_partition: Option<PathBuf>, dump_mesh: Option<PathBuf>) -> Result<()> {
    let p = problem.config().build()?;
    if let Some(path) = dump_partition {
        let mut out = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
        p.hmatrix.partition().write_dump(&mut out)?;
        out.flush()?;
    }
    if let Some(path) = dump_mesh {
        let mut out = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
        p.mesh.write_panels(&mut out)?;
        out.flush()?;
    }
    println!("{}", serde_json::to_string_pretty(&p.hmatrix.report())?);
    Ok(())
}

fn solve(problem: ProblemArgs, scheme: PrecisionScheme, cfg: SolverConfig) -> Result<()> {
    let p = problem.config().build()?;
    let sh = prepare_scheme(&p.hmatrix, scheme)?;
    let (_, report) = bicgstab(&sh, &p.hmatrix, &p.mesh.right_hand_side(), &cfg)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Bench { kind } => bench(kind),
        Command::Info {
            problem,
            dump_partition,
            dump_mesh,
        } => info(problem, dump_partition, dump_mesh),
        Command::Solve {
            problem,
            scheme,
            threads,
            tol,
            max_iter,
        } => solve(problem, scheme, SolverConfig { tol, max_iter, threads }),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
