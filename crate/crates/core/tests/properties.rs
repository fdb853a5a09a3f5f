use manifold_dd::dictionary::{Dictionary, DictionaryMeta, DictionarySet};
use manifold_dd::elliptic::{EllipticProblem, NewtonOptions};
use manifold_dd::geometry::{build_layout_1d, build_layout_2d, build_partition_of_unity, Grid1D, Grid2D};
use manifold_dd::linalg::weighted_distance;
use manifold_dd::quadrature::GaussLegendre;
use manifold_dd::rte::{FixedPointOpts, RteBoundary, RteProblem};
use manifold_dd::sampler::{
    rte_trace_weights, sample_rte_boundary, sample_rte_interior, EllipticInteriorSampler, SamplerConfig,
};
use manifold_dd::schwarz::{knn, tangent_interpolate};
use manifold_dd::{Problem, TraceSource};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn dictionary(trace_len: usize, field_len: usize, traces: &[f64], fields: &[f64]) -> Dictionary {
    Dictionary {
        patch: 0,
        trace_len,
        field_len,
        traces: traces.to_vec(),
        fields: fields.to_vec(),
        retries: 0,
    }
}

fn small_elliptic() -> EllipticProblem {
    let grid = Grid2D::new(1.0, 1.0 / 16.0).unwrap();
    let layout = build_layout_2d(&grid, 2, 2, 1.0 / 16.0, 1.0 / 16.0).unwrap();
    EllipticProblem::oscillatory(0.25, grid, layout, NewtonOptions::default()).unwrap()
}

fn small_rte() -> RteProblem {
    let grid = Grid1D::new(1.0, 1.0 / 32.0, 8).unwrap();
    let layout = build_layout_1d(&grid, 3, 0.125, 0.125).unwrap();
    RteProblem::new(0.5, grid, layout, RteBoundary::sinusoidal(), FixedPointOpts::default()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn partition_of_unity_sums_to_one(m1 in 1usize..5, m2 in 1usize..5, ov in 1usize..3, buf in 0usize..3) {
        let h = 1.0 / 32.0;
        let grid = Grid2D::new(1.0, h).unwrap();
        let Ok(layout) = build_layout_2d(&grid, m1, m2, ov as f64 * h, buf as f64 * h) else {
            return Ok(());
        };
        let pou = build_partition_of_unity(&layout);
        let domain = layout.domain();
        let mut total = vec![0.0; domain.node_count()];
        for m in 0..layout.num_patches() {
            let b = layout.patch(m);
            for (k, &w) in pou.weights[m].iter().enumerate() {
                prop_assert!((0.0..=1.0 + 1e-14).contains(&w));
                total[domain.local_index(&b.node_at(k))] += w;
            }
        }
        for t in total {
            prop_assert!((t - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn knn_matches_full_sort(
        dim in 1usize..6,
        n in 1usize..30,
        k in 1usize..30,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        use rand::Rng;
        // coarse values make exact distance ties likely
        let traces: Vec<f64> = (0..n * dim).map(|_| rng.gen_range(0..3) as f64).collect();
        let weights: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.5..2.0)).collect();
        let query: Vec<f64> = (0..dim).map(|_| rng.gen_range(0..3) as f64).collect();
        let d = dictionary(dim, 1, &traces, &vec![0.0; n]);
        let got = knn(&query, &d, &weights, k);
        let mut all: Vec<(usize, f64)> = (0..n).map(|i| (i, weighted_distance(&query, d.trace(i), &weights))).collect();
        all.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
        all.truncate(k.min(n));
        prop_assert_eq!(got.iter().map(|p| p.0).collect::<Vec<_>>(), all.iter().map(|p| p.0).collect::<Vec<_>>());
        for (g, a) in got.iter().zip(&all) {
            prop_assert!((g.1 - a.1).abs() <= 1e-12 * a.1.max(1.0));
        }
    }

    #[test]
    fn tangent_coefficients_solve_normal_equations(
        dim in 4usize..10,
        k in 2usize..5,
        seed in any::<u64>(),
    ) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let flen = 3;
        let traces: Vec<f64> = (0..k * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let fields: Vec<f64> = (0..k * flen).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let weights: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.1..2.0)).collect();
        let query: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let d = dictionary(dim, flen, &traces, &fields);
        let nn: Vec<usize> = (0..k).collect();
        let fit = tangent_interpolate(&query, &d, &nn, &weights, 1e-12);

        let a = DMatrix::from_fn(dim, k - 1, |i, q| d.trace(q + 1)[i] - d.trace(0)[i]);
        let b = DVector::from_fn(dim, |i, _| query[i] - d.trace(0)[i]);
        let w = DMatrix::from_diagonal(&DVector::from_vec(weights.clone()));
        let lhs = a.transpose() * &w * &a;
        let rhs = a.transpose() * &w * &b;
        let Some(chol) = lhs.clone().cholesky() else { return Ok(()); };
        // skip nearly dependent directions where both solvers are ill posed
        let eig = lhs.symmetric_eigenvalues();
        prop_assume!(eig.min() > 1e-6 * eig.max());
        let c = chol.solve(&rhs);
        prop_assert_eq!(fit.rank, k - 1);
        for q in 0..k - 1 {
            prop_assert!((fit.coefficients[q] - c[q]).abs() < 1e-7 * (1.0 + c[q].abs()));
        }
        let r = &b - &a * &c;
        let res = (0..dim).map(|i| weights[i] * r[i] * r[i]).sum::<f64>().sqrt();
        prop_assert!((fit.residual - res).abs() < 1e-8 * (1.0 + res));
        let sum: f64 = fit.coefficients.iter().sum();
        for j in 0..flen {
            let mut expect = (1.0 - sum) * d.field(0)[j];
            for q in 1..k {
                expect += fit.coefficients[q - 1] * d.field(q)[j];
            }
            prop_assert!((fit.field[j] - expect).abs() < 1e-10);
        }
    }

    #[test]
    fn affine_combinations_are_reproduced(k in 2usize..5, seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = 8;
        let traces: Vec<f64> = (0..k * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // fields are a fixed affine image of the traces
        let fields: Vec<f64> = (0..k).flat_map(|i| {
            let t = &traces[i * dim..(i + 1) * dim];
            vec![1.0 + t[0] - 2.0 * t[3], t.iter().sum::<f64>()]
        }).collect();
        let d = dictionary(dim, 2, &traces, &fields);
        let lam: Vec<f64> = (0..k).map(|_| rng.gen_range(-0.5..1.0)).collect();
        let s: f64 = lam.iter().sum();
        prop_assume!(s.abs() > 0.1);
        let lam: Vec<f64> = lam.iter().map(|l| l / s).collect();
        let query: Vec<f64> = (0..dim).map(|i| (0..k).map(|q| lam[q] * d.trace(q)[i]).sum()).collect();
        let fit = tangent_interpolate(&query, &d, &(0..k).collect::<Vec<_>>(), &vec![1.0; dim], 1e-12);
        prop_assert!(fit.residual < 1e-9);
        prop_assert!((fit.field[0] - (1.0 + query[0] - 2.0 * query[3])).abs() < 1e-8);
        prop_assert!((fit.field[1] - query.iter().sum::<f64>()).abs() < 1e-8);
    }

    #[test]
    fn rte_samples_stay_in_ball(seed in any::<u64>(), radius in 0.5f64..30.0, nv in prop::sample::select(vec![4usize, 8, 16])) {
        let quad = GaussLegendre::new(nv).unwrap();
        let cfg = SamplerConfig::new(radius, 2, seed).unwrap();
        let w = rte_trace_weights(&quad);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = sample_rte_interior(&cfg, &quad, &mut rng);
        prop_assert_eq!(x.len(), nv + 2);
        prop_assert!(x.iter().all(|v| *v >= 0.0));
        prop_assert!(manifold_dd::linalg::weighted_norm(&x, &w) <= radius * (1.0 + 1e-12));

        let mut fixed = vec![None; nv + 2];
        fixed[0] = Some(0.1);
        fixed[nv] = Some(0.2);
        let y = sample_rte_boundary(&cfg, &fixed, &quad, &mut rng).unwrap();
        prop_assert_eq!(y[0], 0.1);
        prop_assert_eq!(y[nv], 0.2);
        prop_assert!(y.iter().all(|v| *v >= 0.0));
        prop_assert!(manifold_dd::linalg::weighted_norm(&y, &w) <= radius * (1.0 + 1e-12));
    }

    #[test]
    fn elliptic_samples_stay_in_ellipsoid(seed in any::<u64>(), n in 2usize..12, radius in 1.0f64..30.0) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let w = &b * b.transpose() + DMatrix::identity(n, n) * 0.5;
        let sampler = EllipticInteriorSampler::new(w.clone()).unwrap();
        let cfg = SamplerConfig::new(radius, 5, seed).unwrap();
        for _ in 0..5 {
            let x = DVector::from_vec(sampler.sample(&cfg, &mut rng));
            let q = x.dot(&(&w * &x));
            prop_assert!(q <= radius * radius * (1.0 + 1e-10));
        }
    }

    #[test]
    fn dictionary_bytes_roundtrip(
        n in 0usize..6,
        tl in 1usize..5,
        fl in 1usize..7,
        seed in any::<u64>(),
    ) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = small_rte();
        let traces: Vec<f64> = (0..n * tl).map(|_| rng.gen::<f64>() * 1e3 - 5e2).collect();
        let fields: Vec<f64> = (0..n * fl).map(|_| rng.gen()).collect();
        let set = DictionarySet {
            meta: DictionaryMeta {
                problem: p.describe(),
                sampler: SamplerConfig::new(5.0, 2, seed).unwrap(),
                samples: n,
                created: None,
            },
            alias: vec![0, 1, 1],
            dictionaries: vec![dictionary(tl, fl, &traces, &fields), dictionary(tl, fl, &traces, &fields)],
        };
        let bytes = set.to_bytes().unwrap();
        prop_assert_eq!(&DictionarySet::from_bytes(&bytes).unwrap(), &set);
        let mut bad = bytes.clone();
        let i = rng.gen_range(0..bad.len());
        bad[i] ^= 0x10;
        prop_assert!(DictionarySet::from_bytes(&bad).is_err());
    }

    #[test]
    fn assembly_inverts_localization(seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let problems: [Box<dyn Problem>; 2] = [Box::new(small_elliptic()), Box::new(small_rte())];
        for p in &problems {
            let c = p.coupling();
            let global: Vec<f64> = (0..c.global_weights.len()).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let local: Vec<Vec<f64>> = (0..c.num_patches()).map(|m| c.localize(m, &global)).collect();
            let back = c.assemble(&local);
            for (a, b) in global.iter().zip(&back) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gather_pins_physical_data(seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let problems: [Box<dyn Problem>; 2] = [Box::new(small_elliptic()), Box::new(small_rte())];
        for p in &problems {
            let c = p.coupling();
            let fields: Vec<Vec<f64>> = (0..c.num_patches())
                .map(|m| (0..c.field_len(m)).map(|_| rng.gen_range(-5.0..5.0)).collect())
                .collect();
            for m in 0..c.num_patches() {
                let t = c.gather(m, &fields);
                for (s, v) in c.plans[m].iter().zip(&t) {
                    match *s {
                        TraceSource::Fixed(x) => prop_assert_eq!(*v, x),
                        TraceSource::Field { patch, index } => {
                            prop_assert_ne!(patch, m);
                            prop_assert_eq!(*v, fields[patch][index]);
                        }
                    }
                }
            }
        }
    }
}
