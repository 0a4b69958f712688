use hmx_core::bench::{matvec_bench_on, solver_bench_on, source_vector, BenchConfig, Problem, ProblemConfig};
use hmx_core::oracle::{dense_matvec, dense_solve, norm2, norm_inf};
use hmx_core::{bicgstab, matvec, matvec_threaded, prepare_scheme, true_residual, PrecisionScheme, SolverConfig, Variant};

fn problem(refine: u32, leaf: usize) -> Problem {
    ProblemConfig {
        refine,
        leaf_size: leaf,
        ..Default::default()
    }
    .build()
    .unwrap()
}

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm_inf(&d) / norm_inf(b)
}

fn schemes() -> Vec<PrecisionScheme> {
    let mut s = PrecisionScheme::fixed().to_vec();
    s.extend([-1, 0, 2, 7, 400].map(|c| PrecisionScheme::Method3 { c }));
    s
}

#[test]
fn baseline_matches_densified_hmatrix() {
    let p = problem(1, 16);
    let dense = p.hmatrix.densify().unwrap();
    let x = source_vector(p.mesh.len(), 7);
    let sh = prepare_scheme(&p.hmatrix, PrecisionScheme::BASELINE).unwrap();
    let y = matvec(&sh, &x).unwrap();
    assert!(rel_diff(&y, &dense_matvec(&dense, &x).unwrap()) <= 1e-12);
}

#[test]
fn scaled_double_tracks_baseline() {
    let p = problem(2, 32);
    let x = source_vector(p.mesh.len(), 1);
    let base = matvec(&prepare_scheme(&p.hmatrix, PrecisionScheme::BASELINE).unwrap(), &x).unwrap();
    let m2 = matvec(&prepare_scheme(&p.hmatrix, PrecisionScheme::Method2(Variant::Double)).unwrap(), &x).unwrap();
    assert!(rel_diff(&m2, &base) <= 1e-13);
    // every index at FP64 is the same arithmetic as Method 2 Double
    let m3 = matvec(&prepare_scheme(&p.hmatrix, PrecisionScheme::Method3 { c: 400 }).unwrap(), &x).unwrap();
    assert!(rel_diff(&m3, &base) <= 1e-13);
}

#[test]
fn method3_error_shrinks_as_c_grows() {
    let p = problem(2, 32);
    let x = source_vector(p.mesh.len(), 2);
    let base = matvec(&prepare_scheme(&p.hmatrix, PrecisionScheme::BASELINE).unwrap(), &x).unwrap();
    let errs: Vec<f64> = [-1, 1, 3, 5, 7]
        .iter()
        .map(|&c| {
            let sh = prepare_scheme(&p.hmatrix, PrecisionScheme::Method3 { c }).unwrap();
            rel_diff(&matvec(&sh, &x).unwrap(), &base)
        })
        .collect();
    assert!(errs[0] <= 1e-6, "{errs:?}");
    assert!(errs[4] <= 1e-12, "{errs:?}");
    assert!(errs[4] <= errs[0], "{errs:?}");
}

#[test]
fn fp64_schemes_are_linear() {
    let p = problem(1, 16);
    let n = p.mesh.len();
    let (x1, x2) = (source_vector(n, 11), source_vector(n, 12));
    let combo: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| 2.0 * a - 0.5 * b).collect();
    for scheme in [PrecisionScheme::BASELINE, PrecisionScheme::Method2(Variant::Double)] {
        let sh = prepare_scheme(&p.hmatrix, scheme).unwrap();
        let (y1, y2, y) = (matvec(&sh, &x1).unwrap(), matvec(&sh, &x2).unwrap(), matvec(&sh, &combo).unwrap());
        let expect: Vec<f64> = y1.iter().zip(&y2).map(|(a, b)| 2.0 * a - 0.5 * b).collect();
        assert!(rel_diff(&y, &expect) <= 1e-13, "{scheme}");
    }
}

#[test]
fn threaded_results_agree_for_every_scheme() {
    let p = problem(1, 16);
    let x = source_vector(p.mesh.len(), 3);
    for scheme in schemes() {
        let sh = prepare_scheme(&p.hmatrix, scheme).unwrap();
        let one = matvec_threaded(&sh, &x, 1).unwrap();
        for t in [2, 3, 5, 16] {
            let y = matvec_threaded(&sh, &x, t).unwrap();
            assert!(rel_diff(&y, &one) <= 1e-13, "{scheme} with {t} threads");
            assert_eq!(y, matvec_threaded(&sh, &x, t).unwrap(), "{scheme} not repeatable");
        }
    }
}

#[test]
fn dense_solution_sits_at_the_aca_floor() {
    let p = problem(1, 16);
    let a = p.mesh.assemble_dense().unwrap();
    let b = p.mesh.right_hand_side();
    let x = dense_solve(&a, &b).unwrap();
    let ax = dense_matvec(&a, &x).unwrap();
    assert!(rel_diff(&ax, &b) <= 1e-10);
    assert!(true_residual(&p.hmatrix, &x, &b).unwrap() <= 100.0 * 1e-8);
    assert_eq!(true_residual(&p.hmatrix, &vec![0.0; b.len()], &b).unwrap(), 1.0);
}

#[test]
fn baseline_solve_matches_dense_lu() {
    let p = problem(1, 16);
    let a = p.mesh.assemble_dense().unwrap();
    let b = p.mesh.right_hand_side();
    let exact = dense_solve(&a, &b).unwrap();
    let sh = prepare_scheme(&p.hmatrix, PrecisionScheme::BASELINE).unwrap();
    let cfg = SolverConfig { tol: 1e-8, ..Default::default() };
    let (x, report) = bicgstab(&sh, &p.hmatrix, &b, &cfg).unwrap();
    assert!(report.converged);
    let d: Vec<f64> = x.iter().zip(&exact).map(|(a, b)| a - b).collect();
    assert!(norm2(&d) / norm2(&exact) <= 1e-5);
}

#[test]
fn every_scheme_converges_soundly() {
    let p = problem(1, 16);
    let b = p.mesh.right_hand_side();
    let cfg = SolverConfig::default();
    let mut iterations = Vec::new();
    for scheme in schemes() {
        let sh = prepare_scheme(&p.hmatrix, scheme).unwrap();
        let (x, report) = bicgstab(&sh, &p.hmatrix, &b, &cfg).unwrap();
        assert!(report.converged, "{scheme}");
        assert!(*report.residual_history.last().unwrap() < cfg.tol);
        assert_eq!(report.residual_history.len(), report.iterations + 1);
        let tr = true_residual(&p.hmatrix, &x, &b).unwrap();
        assert!(tr < cfg.tol, "{scheme}: {tr}");
        assert_eq!(report.true_residual, Some(tr));
        iterations.push((scheme, report.iterations));
    }
    let it = |s| iterations.iter().find(|(x, _)| *x == s).unwrap().1;
    assert!(it(PrecisionScheme::Method1(Variant::Single)) >= it(PrecisionScheme::BASELINE));
}

#[test]
fn single_thread_solves_are_bit_identical() {
    let p = problem(1, 16);
    let b = p.mesh.right_hand_side();
    let sh = prepare_scheme(&p.hmatrix, PrecisionScheme::Method1(Variant::Mixed)).unwrap();
    let cfg = SolverConfig::default();
    let (x1, mut r1) = bicgstab(&sh, &p.hmatrix, &b, &cfg).unwrap();
    let (x2, mut r2) = bicgstab(&sh, &p.hmatrix, &b, &cfg).unwrap();
    r1.wall_time_s = 0.0;
    r2.wall_time_s = 0.0;
    assert_eq!(x1, x2);
    assert_eq!(r1, r2);
}

#[test]
fn bench_records_reproduce_outside_timing() {
    let p = problem(1, 16);
    let cfg = BenchConfig {
        schemes: vec![PrecisionScheme::Method1(Variant::Single), PrecisionScheme::Method2(Variant::Mixed)],
        c_list: vec![3],
        threads: vec![1, 2],
        reps: 2,
        sets: 2,
        ..Default::default()
    };
    let runs: Vec<_> = (0..2).map(|_| matvec_bench_on(&p.hmatrix, &cfg).unwrap()).collect();
    assert_eq!(runs[0].len(), 8);
    for (a, b) in runs[0].iter().zip(&runs[1]) {
        assert_eq!((a.scheme, a.threads, a.payload_bytes), (b.scheme, b.threads, b.payload_bytes));
        assert_eq!(a.set_times_s.len(), 2);
    }
    let bytes = |s| runs[0].iter().find(|r| r.scheme == s).unwrap().payload_bytes;
    assert_eq!(2 * bytes(PrecisionScheme::Method1(Variant::Single)), bytes(PrecisionScheme::BASELINE));

    let b = p.mesh.right_hand_side();
    let solves: Vec<_> = (0..2).map(|_| solver_bench_on(&p.hmatrix, &b, &cfg).unwrap()).collect();
    for (a, b) in solves[0].iter().zip(&solves[1]) {
        assert_eq!(a.iterations, b.iterations);
        assert_eq!(a.true_residual, b.true_residual);
        assert_eq!(a.converged, Some(true));
    }
}
