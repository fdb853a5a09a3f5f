use manifold_dd::dictionary::{build_all, DictionarySet};
use manifold_dd::elliptic::{BoundaryData, EllipticProblem, Media, NewtonOptions};
use manifold_dd::geometry::{build_layout_1d, build_layout_2d, Grid1D, Grid2D};
use manifold_dd::rte::{FixedPointOpts, RteBoundary, RteProblem};
use manifold_dd::sampler::SamplerConfig;
use manifold_dd::schwarz::{relative_difference, run_classical, run_online, ClassicalOpts, OnlineOpts};
use manifold_dd::{Problem, ProblemKind};
use std::sync::Arc;

fn elliptic(m: usize, boundary: BoundaryData) -> EllipticProblem {
    let grid = Grid2D::new(1.0, 1.0 / 16.0).unwrap();
    let (ov, buf) = if m == 1 { (0.0, 0.0) } else { (1.0 / 16.0, 1.0 / 16.0) };
    let layout = build_layout_2d(&grid, m, m, ov, buf).unwrap();
    EllipticProblem::new(Arc::new(Media::new(0.25)), 0.25, grid, layout, boundary, NewtonOptions::default()).unwrap()
}

fn pool(threads: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap()
}

#[test]
fn classical_matches_global_solve() {
    let p = elliptic(2, BoundaryData::sinusoidal(1.0));
    let out = run_classical(&p, &ClassicalOpts { tol: 1e-10, max_iter: 500 }).unwrap();
    assert!(out.report.converged);
    let reference = p.solve_global().unwrap().values;
    let err = relative_difference(&reference, &out.global, &p.coupling().global_weights);
    assert!(err < 1e-7, "error {err}");
    // update norms shrink monotonically once the interfaces are seeded
    let h = &out.report.update_norms;
    assert!(h.windows(2).skip(1).all(|w| w[1] <= w[0] * 1.0001));
}

#[test]
fn jacobi_result_is_independent_of_thread_count() {
    let p = elliptic(2, BoundaryData::sinusoidal(1.0));
    let opts = ClassicalOpts { tol: 1e-8, max_iter: 500 };
    let a = pool(1).install(|| run_classical(&p, &opts).unwrap());
    let b = pool(4).install(|| run_classical(&p, &opts).unwrap());
    assert_eq!(a.global, b.global);
    assert_eq!(a.report.update_norms, b.report.update_norms);

    let cfg = SamplerConfig::new(20.0, 5, 11).unwrap();
    let d1 = pool(1).install(|| build_all(&p, 6, &cfg).unwrap());
    let d4 = pool(3).install(|| build_all(&p, 6, &cfg).unwrap());
    assert_eq!(d1.to_bytes().unwrap(), d4.to_bytes().unwrap());
    let o = OnlineOpts::for_kind(ProblemKind::Elliptic, 4);
    let x = pool(1).install(|| run_online(&p, &d1, &o).unwrap());
    let y = pool(4).install(|| run_online(&p, &d1, &o).unwrap());
    assert_eq!(x.global, y.global);
}

#[test]
fn zero_data_gives_zero_solution() {
    let p = elliptic(2, BoundaryData::zero());
    let out = run_classical(&p, &ClassicalOpts { tol: 1e-12, max_iter: 10 }).unwrap();
    assert!(out.report.converged);
    assert_eq!(out.report.iterations, 1);
    assert!(out.global.iter().all(|v| v.abs() < 1e-14));

    let r = RteProblem::new(
        0.5,
        Grid1D::new(1.0, 1.0 / 32.0, 8).unwrap(),
        build_layout_1d(&Grid1D::new(1.0, 1.0 / 32.0, 8).unwrap(), 2, 0.125, 0.0).unwrap(),
        RteBoundary::equilibrium(0.0),
        FixedPointOpts::default(),
    )
    .unwrap();
    let out = run_classical(&r, &ClassicalOpts { tol: 1e-10, max_iter: 10 }).unwrap();
    assert!(out.global.iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn infinite_tolerance_stops_after_one_sweep() {
    let p = elliptic(2, BoundaryData::sinusoidal(1.0));
    let out = run_classical(&p, &ClassicalOpts { tol: f64::INFINITY, max_iter: 50 }).unwrap();
    assert_eq!(out.report.iterations, 1);
    assert!(out.report.converged);
    let cfg = SamplerConfig::new(20.0, 5, 2).unwrap();
    let d = build_all(&p, 4, &cfg).unwrap();
    let o = OnlineOpts {
        tol: f64::INFINITY,
        ..OnlineOpts::for_kind(ProblemKind::Elliptic, 3)
    };
    assert_eq!(run_online(&p, &d, &o).unwrap().report.iterations, 1);
}

#[test]
fn single_patch_online_reproduces_a_dictionary_entry() {
    // one patch: the trace is all physical data, so the online answer is
    // the surrogate of that fixed trace
    let p = elliptic(1, BoundaryData::sinusoidal(1.0));
    assert!(!p.coupling().has_interfaces());
    let cfg = SamplerConfig::new(20.0, 5, 3).unwrap();
    let d: DictionarySet = build_all(&p, 5, &cfg).unwrap();
    let dict = d.for_patch(0);
    // every sample shares the pinned trace
    let t0 = dict.trace(0).to_vec();
    assert!((1..dict.len()).all(|i| dict.trace(i) == t0.as_slice()));
    let out = run_online(&p, &d, &OnlineOpts::for_kind(ProblemKind::Elliptic, 3)).unwrap();
    assert!(out.report.converged);
    // one surrogate evaluation and no interface change
    assert_eq!(out.report.update_norms, vec![0.0]);
    let exact = p.solve_global().unwrap().values;
    let err = relative_difference(&exact, &out.global, &p.coupling().global_weights);
    assert!(err < 1e-9, "error {err}");
}

#[test]
fn online_with_full_dictionary_approaches_classical() {
    let p = elliptic(2, BoundaryData::sinusoidal(1.0));
    let cfg = SamplerConfig::new(20.0, 5, 4).unwrap();
    let d = build_all(&p, 40, &cfg).unwrap();
    let online = run_online(&p, &d, &OnlineOpts::for_kind(ProblemKind::Elliptic, 30)).unwrap();
    let exact = p.solve_global().unwrap().values;
    let err = relative_difference(&exact, &online.global, &p.coupling().global_weights);
    assert!(online.report.converged);
    assert!(err < 5e-2, "error {err}");
}

#[test]
fn online_rejects_mismatched_dictionaries() {
    let p = elliptic(2, BoundaryData::sinusoidal(1.0));
    let q = elliptic(1, BoundaryData::sinusoidal(1.0));
    let cfg = SamplerConfig::new(20.0, 5, 4).unwrap();
    let d = build_all(&q, 3, &cfg).unwrap();
    assert!(run_online(&p, &d, &OnlineOpts::for_kind(ProblemKind::Elliptic, 2)).is_err());
    let d = build_all(&p, 3, &cfg).unwrap();
    assert!(run_online(&p, &d, &OnlineOpts::for_kind(ProblemKind::Elliptic, 4)).is_err());
}
