//! Shared fixtures for the criterion benchmarks.

use hmx_core::bench::{Problem, ProblemConfig};

/// Three unit spheres at the given refinement, compressed with the default
/// ACA tolerance.
pub fn fixture(refine: u32) -> Problem {
    ProblemConfig {
        refine,
        ..ProblemConfig::default()
    }
    .build()
    .expect("benchmark problem builds")
}
