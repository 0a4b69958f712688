//! Hierarchical matrices (H-matrices) with FP64/FP32 mixed-precision
//! matrix-vector multiplication.
//!
//! The pipeline is:
//!
//! 1. [`problem`] meshes conductive spheres and defines the single-layer
//!    collocation kernel.
//! 2. [`partition`] clusters the panels and splits the index square into
//!    admissible (low-rank) and inadmissible (dense) blocks.
//! 3. [`compress`] fills dense blocks and compresses admissible ones with
//!    adaptive cross approximation, producing an FP64 [`HMatrix`].
//! 4. [`precision`] derives the payloads for a [`PrecisionScheme`]
//!    (plain casts, scaled `V'DW'` factors, or an exponent-distance split).
//! 5. [`matvec`] multiplies, optionally on several threads, and
//!    [`solver`] runs BiCGSTAB on top of it.
//!
//! [`bench`] drives repeatable timing experiments and [`oracle`] holds
//! naive dense reference arithmetic for verification.

// `!(x > 0.0)` is how parameter checks reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod compress;
pub mod error;
pub mod matvec;
pub mod oracle;
pub mod partition;
pub mod precision;
pub mod problem;
pub mod solver;

pub use compress::{build_hmatrix, AcaConfig, BlockPayload, BuildReport, DenseBlock, HMatrix, LowRankBlock};
pub use error::{HmxError, Result};
pub use matvec::{matvec, matvec_threaded};
pub use oracle::DenseMatrix;
pub use partition::{build_block_partition, build_cluster_tree, Block, BlockPartition, ClusterTree};
pub use precision::{prepare_scheme, PrecisionScheme, SchemeHMatrix, Variant};
pub use problem::{build_sphere_mesh, PanelMesh, Point3};
pub use solver::{bicgstab, true_residual, SolverConfig, SolverReport};

/// Largest dimension for which dense oracle matrices are assembled.
pub const ORACLE_CAP: usize = 4096;
