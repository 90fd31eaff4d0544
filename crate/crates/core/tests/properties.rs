use approx::assert_relative_eq;
use ndarray::Array2;
use proptest::prelude::*;

use semkd::evalsuite::harmonic_mean;
use semkd::losses::{distillation_loss, target_entropy, DistillationContext};
use semkd::model::cosine::{cosine_distance, distance_matrix};
use semkd::model::{ModelConfig, ModelState};
use semkd::seeds::derive_seed;
use semkd::semantics::{assign_novel_class, kmeans, lloyd, KMEANS_RESTARTS, ClassId, SemanticSource, SemanticTable, SuperclassMap};
use semkd::sessions::InputShape;

fn nonzero_vec(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, dim).prop_filter("nonzero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-6)
}

fn points(max: usize, dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-10.0f64..10.0, dim), 2..max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cosine_distance_is_bounded_symmetric_and_scale_free(a in nonzero_vec(5), b in nonzero_vec(5), s in 0.1f64..20.0) {
        let d = cosine_distance(&a, &b).unwrap();
        prop_assert!((-1e-12..=2.0 + 1e-12).contains(&d));
        assert_relative_eq!(d, cosine_distance(&b, &a).unwrap(), epsilon = 1e-12);
        let scaled: Vec<f64> = a.iter().map(|x| x * s).collect();
        assert_relative_eq!(d, cosine_distance(&scaled, &b).unwrap(), epsilon = 1e-10);
        assert_relative_eq!(cosine_distance(&a, &a).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn distance_matrix_matches_pairwise(rows in prop::collection::vec(nonzero_vec(4), 1..5), cols in prop::collection::vec(nonzero_vec(4), 1..5)) {
        let y = Array2::from_shape_fn((rows.len(), 4), |(i, j)| rows[i][j]);
        let s = Array2::from_shape_fn((cols.len(), 4), |(i, j)| cols[i][j]);
        let d = distance_matrix(y.view(), s.view());
        for (i, r) in rows.iter().enumerate() {
            for (j, c) in cols.iter().enumerate() {
                assert_relative_eq!(d[[i, j]], cosine_distance(r, c).unwrap(), epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn attention_weights_form_a_distribution(seed in any::<u64>(), g in prop::collection::vec(-3.0f64..3.0, 3 * 6)) {
        let cfg = ModelConfig { feature_dim: 6, num_superclasses: 4, attention_hidden: 5, mapping_hidden: vec![8], ..ModelConfig::default() };
        let model = ModelState::new(&cfg, InputShape::Vector { dim: 3 }, 4, seed).unwrap();
        let g = Array2::from_shape_vec((3, 6), g).unwrap();
        let (_, alpha) = model.attention_fuse(g.view()).unwrap();
        for row in alpha.rows() {
            prop_assert!(row.iter().all(|&a| (0.0..=1.0).contains(&a)));
            assert_relative_eq!(row.sum(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn distillation_never_drops_below_target_entropy(
        old in prop::collection::vec(0.0f64..2.0, 4 * 3),
        new in prop::collection::vec(0.0f64..2.0, 4 * 5),
        tau in 0.5f64..4.0,
    ) {
        let ctx = DistillationContext::new(Array2::from_shape_vec((4, 3), old).unwrap());
        let new = Array2::from_shape_vec((4, 5), new).unwrap();
        let ld = distillation_loss(new.view(), &ctx, tau).unwrap();
        prop_assert!(ld - target_entropy(&ctx, tau).unwrap() >= -1e-12);
        // matching the old scores exactly attains the bound
        let mut same = new.clone();
        same.slice_mut(ndarray::s![.., ..3]).assign(&ctx.old_scores);
        assert_relative_eq!(distillation_loss(same.view(), &ctx, tau).unwrap(), target_entropy(&ctx, tau).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn harmonic_mean_lies_between_min_and_mean(a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let h = harmonic_mean(a, b);
        prop_assert!(h <= 0.5 * (a + b) + 1e-12);
        prop_assert!(h >= a.min(b) - 1e-12);
    }

    #[test]
    fn kmeans_is_deterministic_and_beats_every_restart(pts in points(12, 2), k in 1usize..4, seed in any::<u64>()) {
        prop_assume!(k <= pts.len());
        let a = kmeans(&pts, k, seed, 100, 0.0).unwrap();
        let b = kmeans(&pts, k, seed, 100, 0.0).unwrap();
        prop_assert_eq!(&a, &b);
        for r in 0..KMEANS_RESTARTS {
            let single = lloyd(&pts, k, derive_seed(seed, "kmeans-restart", r), 100, 0.0).unwrap();
            prop_assert!(a.sse() <= single.sse());
        }
        for w in a.sse_trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9, "SSE rose: {:?}", a.sse_trace);
        }
        // every point sits with its nearest center
        for (p, &l) in pts.iter().zip(&a.labels) {
            let d = |c: &Vec<f64>| c.iter().zip(p).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
            prop_assert!(a.centers.iter().all(|c| d(&a.centers[l]) <= d(c) + 1e-9));
        }
    }

    #[test]
    fn novel_assignment_is_the_nearest_center(centers in points(6, 3), v in nonzero_vec(3)) {
        let map = SuperclassMap { centers: centers.clone(), assignment: Default::default(), seed: 0 };
        let table = SemanticTable::from_entries(3, [(ClassId::new("n"), v.clone())], SemanticSource::Synthetic).unwrap();
        let k = assign_novel_class(&map, &table, &ClassId::new("n")).unwrap();
        let d = |c: &Vec<f64>| c.iter().zip(&v).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        for (j, c) in centers.iter().enumerate() {
            prop_assert!(d(&centers[k]) < d(c) || (d(&centers[k]) == d(c) && k <= j));
        }
    }
}
